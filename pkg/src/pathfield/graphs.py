"""Random weighted graphs, shortest-path problem instances, and dataset files.

Graphs are undirected with positive edge weights but stored as paired
directed arcs in CSR form, which is what both the search routines and the
message-passing model consume.
"""

from __future__ import annotations

import json
import math
import struct
import zlib
from dataclasses import dataclass, replace

import numpy as np

# ============================================================
# Errors
# ============================================================


class DatasetError(Exception):
    """Raised when a dataset cannot be built or a dataset file is unusable."""


class ChecksumMismatch(DatasetError):
    """Raised when a dataset file's payload does not match its stored CRC32."""


class NoReachablePair(DatasetError):
    """Raised when a graph has no ordered pair of distinct connected nodes."""


# ============================================================
# Configuration
# ============================================================

FAMILIES = ("sparse", "dense", "very-dense")

TRAIN_NODE_COUNT = 16
TEST_NODE_COUNTS = (16, 32, 64, 96, 128, 160, 192, 224, 256)

TRAIN_COUNT = 1000
VAL_COUNT = 128
TEST_COUNT = 128


def density_for(family: str, node_count: int) -> float:
    """Edge probability used by a graph family at a given size.

    Parameters
    ----------
    family : str
        One of ``"sparse"`` (p = ln(n)/n, just above the connectivity
        threshold), ``"dense"`` (p = 0.35), ``"very-dense"`` (p = 0.5).
    node_count : int
        Number of nodes, at least 2.

    Returns
    -------
    float
        Edge probability in (0, 1].
    """
    if node_count < 2:
        raise ValueError(f"node_count must be at least 2, got {node_count}")
    if family == "sparse":
        return min(1.0, math.log(node_count) / node_count)
    if family == "dense":
        return 0.35
    if family == "very-dense":
        return 0.5
    raise ValueError(f"unknown graph family {family!r}, expected one of {FAMILIES}")


@dataclass(frozen=True)
class DistributionConfig:
    """Parameters of one Erdos-Renyi graph distribution.

    ``seed`` fixes the whole distribution: equal configs generate
    bit-identical graphs.
    """

    node_count: int
    edge_probability: float
    weight_low: float = 0.2
    weight_high: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.node_count < 2:
            raise ValueError(f"node_count must be at least 2, got {self.node_count}")
        if not 0.0 < self.edge_probability <= 1.0:
            raise ValueError(
                f"edge_probability must be in (0, 1], got {self.edge_probability}"
            )
        if not 0.0 < self.weight_low <= self.weight_high:
            raise ValueError(
                "weights must satisfy 0 < weight_low <= weight_high, got "
                f"[{self.weight_low}, {self.weight_high}]"
            )


# ============================================================
# Graph container
# ============================================================


@dataclass
class Graph:
    """Undirected weighted graph stored as paired directed arcs.

    Arcs are sorted by (src, dst); every undirected edge {u, v} appears as
    both u->v and v->u with the same weight. ``arc_ptr`` is the CSR row
    pointer by source, so the out-arcs of node v occupy
    ``arc_ptr[v]:arc_ptr[v + 1]`` and their dst values are ascending.
    """

    node_count: int
    arc_src: np.ndarray
    arc_dst: np.ndarray
    arc_weight: np.ndarray
    arc_ptr: np.ndarray

    @property
    def arc_count(self) -> int:
        return int(self.arc_src.shape[0])

    @property
    def edge_count(self) -> int:
        return self.arc_count // 2

    def out_arcs(self, v: int) -> tuple[np.ndarray, np.ndarray]:
        """Destination nodes and weights of v's out-arcs, dst ascending."""
        lo, hi = self.arc_ptr[v], self.arc_ptr[v + 1]
        return self.arc_dst[lo:hi], self.arc_weight[lo:hi]

    def undirected_edges(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """One row per undirected edge as (u, v, w) with u < v, sorted."""
        keep = self.arc_src < self.arc_dst
        return self.arc_src[keep], self.arc_dst[keep], self.arc_weight[keep]

    def validate(self) -> None:
        """Check structural invariants, raising ValueError on the first failure."""
        n, a = self.node_count, self.arc_count
        if n < 1:
            raise ValueError(f"node_count must be positive, got {n}")
        for name, arr, dtype in (
            ("arc_src", self.arc_src, np.int64),
            ("arc_dst", self.arc_dst, np.int64),
            ("arc_weight", self.arc_weight, np.float64),
        ):
            if arr.shape != (a,) or arr.dtype != dtype:
                raise ValueError(f"{name} must be a ({a},) {dtype.__name__} array")
        if self.arc_ptr.shape != (n + 1,) or self.arc_ptr[0] != 0 or self.arc_ptr[-1] != a:
            raise ValueError("arc_ptr must be a (node_count + 1,) prefix of arc_count")
        if a == 0:
            return
        if self.arc_src.min() < 0 or self.arc_dst.min() < 0:
            raise ValueError("arc endpoints must be non-negative")
        if self.arc_src.max() >= n or self.arc_dst.max() >= n:
            raise ValueError("arc endpoints must be smaller than node_count")
        if np.any(self.arc_src == self.arc_dst):
            raise ValueError("self loops are not allowed")
        if not np.all(self.arc_weight > 0.0):
            raise ValueError("arc weights must be strictly positive")
        order = np.lexsort((self.arc_dst, self.arc_src))
        if not np.array_equal(order, np.arange(a)):
            raise ValueError("arcs must be sorted by (src, dst)")
        pairs = {(int(u), int(v)): float(w)
                 for u, v, w in zip(self.arc_src, self.arc_dst, self.arc_weight)}
        if len(pairs) != a:
            raise ValueError("parallel arcs are not allowed")
        for (u, v), w in pairs.items():
            if pairs.get((v, u)) != w:
                raise ValueError(f"arc {u}->{v} has no mirror with equal weight")


def graph_from_edges(
    node_count: int,
    src: np.ndarray,
    dst: np.ndarray,
    weight: np.ndarray,
) -> Graph:
    """Build a Graph from undirected edges given as parallel arrays.

    Each input row (src[i], dst[i], weight[i]) is one undirected edge; the
    two directed arcs are created here. Endpoint order within a row does
    not matter.
    """
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    weight = np.asarray(weight, dtype=np.float64)
    if not (src.shape == dst.shape == weight.shape) or src.ndim != 1:
        raise ValueError("src, dst and weight must be 1-d arrays of equal length")
    arc_src = np.concatenate([src, dst])
    arc_dst = np.concatenate([dst, src])
    arc_weight = np.concatenate([weight, weight])
    order = np.lexsort((arc_dst, arc_src))
    arc_src, arc_dst, arc_weight = arc_src[order], arc_dst[order], arc_weight[order]
    arc_ptr = np.zeros(node_count + 1, dtype=np.int64)
    np.add.at(arc_ptr, arc_src + 1, 1)
    np.cumsum(arc_ptr, out=arc_ptr)
    graph = Graph(node_count, arc_src, arc_dst, arc_weight, arc_ptr)
    graph.validate()
    return graph


# ============================================================
# Generation and sampling
# ============================================================


def generate_graph(config: DistributionConfig) -> Graph:
    """Draw one Erdos-Renyi graph G(n, p) with uniform edge weights.

    Each of the n(n-1)/2 node pairs becomes an edge independently with
    probability ``config.edge_probability``; weights are drawn uniformly
    from [weight_low, weight_high]. Fully determined by ``config``.
    """
    rng = np.random.default_rng(config.seed)
    n = config.node_count
    iu, ju = np.triu_indices(n, k=1)
    keep = rng.random(iu.shape[0]) < config.edge_probability
    src, dst = iu[keep], ju[keep]
    weight = rng.uniform(config.weight_low, config.weight_high, size=src.shape[0])
    return graph_from_edges(n, src, dst, weight)


def connected_component_labels(graph: Graph) -> np.ndarray:
    """Label of each node's connected component (labels are 0..k-1 by first node)."""
    labels = np.full(graph.node_count, -1, dtype=np.int64)
    next_label = 0
    for start in range(graph.node_count):
        if labels[start] >= 0:
            continue
        labels[start] = next_label
        frontier = [start]
        while frontier:
            v = frontier.pop()
            dsts, _ = graph.out_arcs(v)
            for u in dsts:
                if labels[u] < 0:
                    labels[u] = next_label
                    frontier.append(int(u))
        next_label += 1
    return labels


@dataclass(frozen=True)
class ProblemInstance:
    """A graph with a source and a distinct, connected target node."""

    graph: Graph
    source: int
    target: int

    def __post_init__(self) -> None:
        n = self.graph.node_count
        if not (0 <= self.source < n and 0 <= self.target < n):
            raise ValueError("source and target must be node indices")
        if self.source == self.target:
            raise ValueError("source and target must differ")


def sample_instance(graph: Graph, seed: int) -> ProblemInstance:
    """Pick a source/target pair uniformly over ordered connected pairs.

    Every ordered pair (s, t) with s != t in the same connected component
    has equal probability. Raises NoReachablePair when no component has
    two nodes.
    """
    labels = connected_component_labels(graph)
    sizes = np.bincount(labels)
    pairs_per_node = sizes[labels] - 1
    total = int(pairs_per_node.sum())
    if total == 0:
        raise NoReachablePair(
            f"graph with {graph.node_count} nodes has no connected pair"
        )
    rng = np.random.default_rng(seed)
    j = int(rng.integers(total))
    cum = np.cumsum(pairs_per_node)
    source = int(np.searchsorted(cum, j, side="right"))
    offset = j - (int(cum[source - 1]) if source > 0 else 0)
    members = np.flatnonzero(labels == labels[source])
    members = members[members != source]
    return ProblemInstance(graph, source, int(members[offset]))


def build_dataset(
    configs: list[DistributionConfig],
    counts: list[int] | int,
    max_retries: int = 100,
) -> list[ProblemInstance]:
    """Generate problem instances for each distribution config.

    For config i and instance index k, per-instance seeds derive from
    ``SeedSequence(config.seed, spawn_key=(k, retry))``: the first child
    seeds the graph, the second the source/target draw. A graph with no
    connected pair is redrawn with the retry counter bumped; after
    ``max_retries`` redraws the build fails with DatasetError.

    Returns the concatenated instances in config order.
    """
    if isinstance(counts, int):
        counts = [counts] * len(configs)
    if len(counts) != len(configs):
        raise ValueError(
            f"got {len(configs)} configs but {len(counts)} counts"
        )
    instances: list[ProblemInstance] = []
    for config, count in zip(configs, counts):
        if count < 0:
            raise ValueError(f"instance count must be non-negative, got {count}")
        for index in range(count):
            for retry in range(max_retries):
                graph_seed, pair_seed = np.random.SeedSequence(
                    config.seed, spawn_key=(index, retry)
                ).generate_state(2, dtype=np.uint64)
                graph = generate_graph(replace(config, seed=int(graph_seed)))
                try:
                    instances.append(sample_instance(graph, int(pair_seed)))
                except NoReachablePair:
                    continue
                break
            else:
                raise DatasetError(
                    f"no connected pair after {max_retries} draws from {config}"
                )
    return instances


def split_seed(master_seed: int, family: str, split: str) -> int:
    """Derive the DistributionConfig seed for one (family, split) dataset."""
    if family not in FAMILIES:
        raise ValueError(f"unknown graph family {family!r}, expected one of {FAMILIES}")
    splits = ("train", "val") + tuple(f"test-{n}" for n in TEST_NODE_COUNTS)
    if split not in splits:
        raise ValueError(f"unknown split {split!r}, expected one of {splits}")
    seq = np.random.SeedSequence(
        master_seed, spawn_key=(FAMILIES.index(family), splits.index(split))
    )
    return int(seq.generate_state(1, dtype=np.uint64)[0])


# ============================================================
# Dataset files
# ============================================================

_DATASET_MAGIC = b"PFDS"
_DATASET_VERSION = 1


def _config_to_dict(config: DistributionConfig) -> dict:
    return {
        "node_count": config.node_count,
        "edge_probability": config.edge_probability,
        "weight_low": config.weight_low,
        "weight_high": config.weight_high,
        "seed": config.seed,
    }


def save_dataset(
    path: str,
    instances: list[ProblemInstance],
    config: DistributionConfig,
    extra: dict | None = None,
) -> None:
    """Write instances to a binary dataset file.

    Layout (all integers little-endian): magic ``PFDS``, u32 format
    version, u32 header length, JSON header (config echo, instance count,
    CRC32 of the payload, optional extra metadata), then per instance:
    u32 node count, u32 edge count, u32 source, u32 target, and one
    (u32 u, u32 v, f64 w) record per undirected edge with u < v.
    """
    chunks: list[bytes] = []
    for inst in instances:
        u, v, w = inst.graph.undirected_edges()
        chunks.append(
            struct.pack(
                "<IIII",
                inst.graph.node_count,
                u.shape[0],
                inst.source,
                inst.target,
            )
        )
        record = np.zeros(u.shape[0], dtype=[("u", "<u4"), ("v", "<u4"), ("w", "<f8")])
        record["u"], record["v"], record["w"] = u, v, w
        chunks.append(record.tobytes())
    payload = b"".join(chunks)
    header = {
        "format_version": _DATASET_VERSION,
        "config": _config_to_dict(config),
        "instance_count": len(instances),
        "payload_crc32": zlib.crc32(payload),
    }
    if extra:
        header["extra"] = extra
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_DATASET_MAGIC)
        fh.write(struct.pack("<II", _DATASET_VERSION, len(header_bytes)))
        fh.write(header_bytes)
        fh.write(payload)


def load_dataset(path: str) -> tuple[list[ProblemInstance], dict]:
    """Read a dataset file back into instances plus its JSON header.

    Raises DatasetError on malformed files and ChecksumMismatch when the
    payload CRC32 disagrees with the header.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _DATASET_MAGIC:
        raise DatasetError(f"{path} is not a dataset file (bad magic)")
    version, header_len = struct.unpack_from("<II", blob, 4)
    if version != _DATASET_VERSION:
        raise DatasetError(f"unsupported dataset format version {version}")
    try:
        header = json.loads(blob[12:12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DatasetError(f"unreadable dataset header in {path}: {exc}") from exc
    payload = blob[12 + header_len:]
    if zlib.crc32(payload) != header["payload_crc32"]:
        raise ChecksumMismatch(f"payload checksum mismatch in {path}")
    instances: list[ProblemInstance] = []
    offset = 0
    edge_dtype = np.dtype([("u", "<u4"), ("v", "<u4"), ("w", "<f8")])
    for _ in range(header["instance_count"]):
        node_count, edge_count, source, target = struct.unpack_from(
            "<IIII", payload, offset
        )
        offset += 16
        record = np.frombuffer(payload, dtype=edge_dtype, count=edge_count, offset=offset)
        offset += edge_count * edge_dtype.itemsize
        graph = graph_from_edges(
            node_count,
            record["u"].astype(np.int64),
            record["v"].astype(np.int64),
            record["w"].astype(np.float64),
        )
        instances.append(ProblemInstance(graph, source, target))
    if offset != len(payload):
        raise DatasetError(f"trailing bytes after last instance in {path}")
    return instances, header
