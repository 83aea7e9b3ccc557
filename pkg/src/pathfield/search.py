"""Dijkstra (traced and early-stopped), A* with a potential field, constraints.

A heuristic field assigns every node a score y_v that is high near the
target; the induced remaining-cost estimate for A* is y_target - y_v. The
field is consistent when y_v - y_u <= w_uv holds for every directed arc
u -> v, which makes the induced estimate admissible and A* exact.
"""

from __future__ import annotations

import heapq
import time
from dataclasses import dataclass

import numpy as np

from .graphs import Graph, ProblemInstance

CONSTRAINT_TOLERANCE = 1e-9


class Unreachable(Exception):
    """Raised when the target cannot be reached from the source."""


# ============================================================
# Heuristic fields
# ============================================================


@dataclass
class HeuristicField:
    """Per-node potential scores y, one float per node, all finite."""

    values: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1:
            raise ValueError(f"field must be 1-d, got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")

    @classmethod
    def zero(cls, node_count: int) -> "HeuristicField":
        return cls(np.zeros(node_count))


def check_constraints(
    graph: Graph, heuristic: HeuristicField
) -> tuple[float, list[tuple[int, int, float]]]:
    """Fraction of arcs satisfying y_dst - y_src <= w, plus the violators.

    An arc u -> v counts as violated when y_v - y_u exceeds w_uv by more
    than CONSTRAINT_TOLERANCE. Returns the satisfied fraction (1.0 for a
    graph with no arcs) and a list of (src, dst, excess) for violators,
    where excess = y_dst - y_src - w > 0.
    """
    y = heuristic.values
    if y.shape[0] != graph.node_count:
        raise ValueError(
            f"field has {y.shape[0]} values for a {graph.node_count}-node graph"
        )
    if graph.arc_count == 0:
        return 1.0, []
    excess = y[graph.arc_dst] - y[graph.arc_src] - graph.arc_weight
    violated = excess > CONSTRAINT_TOLERANCE
    violators = [
        (int(graph.arc_src[i]), int(graph.arc_dst[i]), float(excess[i]))
        for i in np.flatnonzero(violated)
    ]
    return 1.0 - float(violated.mean()), violators


# ============================================================
# Traced Dijkstra (supervision signal)
# ============================================================


@dataclass
class TraceStep:
    """Predecessor snapshot taken after one node was finalized and relaxed."""

    predecessors: np.ndarray
    finalized: int


@dataclass
class DijkstraTrace:
    """Execution trace of exhaustive Dijkstra from an instance's source.

    One step per reachable node, in finalization order. Unreached nodes
    keep the self-pointer convention predecessors[v] == v; distances are
    +inf for them.
    """

    steps: list[TraceStep]
    distances: np.ndarray

    @property
    def step_count(self) -> int:
        return len(self.steps)


def dijkstra_trace(instance: ProblemInstance) -> DijkstraTrace:
    """Run Dijkstra to exhaustion, recording a predecessor snapshot per step.

    Ties in the priority queue break toward the smaller node id.
    Predecessors follow the self-pointer convention (predecessors[v] == v
    until v is first reached; predecessors[source] == source throughout)
    and only strict distance improvements move a pointer.
    """
    graph, source = instance.graph, instance.source
    n = graph.node_count
    distances = np.full(n, np.inf)
    distances[source] = 0.0
    predecessors = np.arange(n, dtype=np.int64)
    settled = np.zeros(n, dtype=bool)
    heap: list[tuple[float, int]] = [(0.0, source)]
    steps: list[TraceStep] = []
    while heap:
        dist_u, u = heapq.heappop(heap)
        if settled[u]:
            continue
        settled[u] = True
        dsts, weights = graph.out_arcs(u)
        for v, w in zip(dsts, weights):
            candidate = dist_u + w
            if not settled[v] and candidate < distances[v]:
                distances[v] = candidate
                predecessors[v] = u
                heapq.heappush(heap, (float(candidate), int(v)))
        steps.append(TraceStep(predecessors.copy(), u))
    return DijkstraTrace(steps, distances)


# ============================================================
# Early-stopped search (metrics)
# ============================================================


@dataclass
class SearchOutcome:
    """Result of one early-stopped search run."""

    path: list[int]
    cost: float
    iterations: int
    expanded: int
    wall_time: float


def _reconstruct(predecessors: np.ndarray, source: int, target: int) -> list[int]:
    path = [target]
    while path[-1] != source:
        path.append(int(predecessors[path[-1]]))
    path.reverse()
    return path


def astar(
    instance: ProblemInstance,
    heuristic: HeuristicField,
    pop_log: list[tuple[float, int]] | None = None,
) -> SearchOutcome:
    """A* from source to target with priority g(v) + (y_target - y_v).

    Stops when the target is popped. ``iterations`` counts fresh pops
    including the target; ``expanded`` equals the number of settled nodes.
    Settled nodes are never reopened, so an inconsistent field can return
    a suboptimal path; the cost always equals the weight sum of the
    returned path. Ties break toward the smaller node id. When given,
    ``pop_log`` receives one (priority, node) entry per fresh pop.
    """
    graph, source, target = instance.graph, instance.source, instance.target
    y = heuristic.values
    if y.shape[0] != graph.node_count:
        raise ValueError(
            f"field has {y.shape[0]} values for a {graph.node_count}-node graph"
        )
    start = time.perf_counter()
    estimate = y[target] - y
    n = graph.node_count
    g_score = np.full(n, np.inf)
    g_score[source] = 0.0
    predecessors = np.arange(n, dtype=np.int64)
    settled = np.zeros(n, dtype=bool)
    heap: list[tuple[float, int]] = [(float(estimate[source]), source)]
    iterations = 0
    while heap:
        f_u, u = heapq.heappop(heap)
        if settled[u]:
            continue
        settled[u] = True
        iterations += 1
        if pop_log is not None:
            pop_log.append((f_u, u))
        if u == target:
            path = _reconstruct(predecessors, source, target)
            return SearchOutcome(
                path=path,
                cost=float(g_score[target]),
                iterations=iterations,
                expanded=iterations,
                wall_time=time.perf_counter() - start,
            )
        dist_u = g_score[u]
        dsts, weights = graph.out_arcs(u)
        for v, w in zip(dsts, weights):
            candidate = dist_u + w
            if not settled[v] and candidate < g_score[v]:
                g_score[v] = candidate
                predecessors[v] = u
                heapq.heappush(heap, (float(candidate + estimate[v]), int(v)))
    raise Unreachable(f"target {target} not reachable from source {source}")


def dijkstra(instance: ProblemInstance) -> SearchOutcome:
    """Early-stopped Dijkstra, the uninformed baseline for metrics.

    Independent of :func:`astar`; behaviourally it must match astar with
    a zero field node for node, which the tests pin down.
    """
    graph, source, target = instance.graph, instance.source, instance.target
    start = time.perf_counter()
    n = graph.node_count
    distances = np.full(n, np.inf)
    distances[source] = 0.0
    predecessors = np.arange(n, dtype=np.int64)
    settled = np.zeros(n, dtype=bool)
    heap: list[tuple[float, int]] = [(0.0, source)]
    iterations = 0
    while heap:
        dist_u, u = heapq.heappop(heap)
        if settled[u]:
            continue
        settled[u] = True
        iterations += 1
        if u == target:
            path = _reconstruct(predecessors, source, target)
            return SearchOutcome(
                path=path,
                cost=float(distances[target]),
                iterations=iterations,
                expanded=iterations,
                wall_time=time.perf_counter() - start,
            )
        for v, w in zip(*graph.out_arcs(u)):
            candidate = dist_u + w
            if not settled[v] and candidate < distances[v]:
                distances[v] = candidate
                predecessors[v] = u
                heapq.heappush(heap, (float(candidate), int(v)))
    raise Unreachable(f"target {target} not reachable from source {source}")
