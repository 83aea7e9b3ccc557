"""Named parameter store, Adam with decoupled weight decay, checkpoints."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


class CheckpointError(Exception):
    """Raised when a checkpoint file cannot be read."""


# ============================================================
# Parameter store
# ============================================================


@dataclass
class ParameterStore:
    """Ordered named parameters plus Adam moment state.

    Insertion order is the canonical parameter order everywhere (files,
    iteration, updates).
    """

    params: dict[str, Tensor] = field(default_factory=dict)
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)
    step_count: int = 0

    def add(self, name: str, values: np.ndarray) -> Tensor:
        if name in self.params:
            raise ValueError(f"parameter {name!r} already registered")
        tensor = Tensor(np.asarray(values, dtype=np.float64), requires_grad=True)
        self.params[name] = tensor
        self.first_moment[name] = np.zeros_like(tensor.values)
        self.second_moment[name] = np.zeros_like(tensor.values)
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def items(self):
        return self.params.items()

    def zero_grads(self) -> None:
        for tensor in self.params.values():
            tensor.grad = None

    def value_count(self) -> int:
        return sum(t.values.size for t in self.params.values())

    def snapshot(self) -> dict[str, np.ndarray]:
        """Copies of all parameter values, keyed by name."""
        return {name: t.values.copy() for name, t in self.params.items()}

    def restore(self, values: dict[str, np.ndarray]) -> None:
        """Load values saved by :meth:`snapshot` (names and shapes must match)."""
        if set(values) != set(self.params):
            raise ValueError("parameter names do not match the store")
        for name, tensor in self.params.items():
            if values[name].shape != tensor.values.shape:
                raise ValueError(f"shape mismatch for parameter {name!r}")
            tensor.values = np.array(values[name], dtype=np.float64, copy=True)


# ============================================================
# Adam
# ============================================================


def adam_step(
    store: ParameterStore,
    learning_rate: float,
    weight_decay: float = 0.0,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One Adam update with decoupled weight decay, then clear gradients.

    A parameter whose grad is unset counts as zero gradient: its moments
    decay but with zero moments it only moves through weight decay, by
    the factor (1 - learning_rate * weight_decay) per step.
    """
    store.step_count += 1
    t = store.step_count
    bias1 = 1.0 - beta1**t
    bias2 = 1.0 - beta2**t
    for name, param in store.params.items():
        grad = param.grad if param.grad is not None else np.zeros_like(param.values)
        m = store.first_moment[name]
        v = store.second_moment[name]
        m *= beta1
        m += (1.0 - beta1) * grad
        v *= beta2
        v += (1.0 - beta2) * grad * grad
        update = (m / bias1) / (np.sqrt(v / bias2) + eps)
        param.values = param.values - learning_rate * (
            update + weight_decay * param.values
        )
    store.zero_grads()


# ============================================================
# Checkpoint files
# ============================================================

_CHECKPOINT_MAGIC = b"PFCK"
_CHECKPOINT_VERSION = 1


def save_checkpoint(path: str, store: ParameterStore, config: dict) -> None:
    """Write parameters and a JSON config echo to a binary checkpoint.

    Layout (little-endian): magic ``PFCK``, u32 format version, u32
    header length, JSON header, then per parameter a u16 name length,
    the name, u8 rank, u32 dims, and the float64 payload. Parameters
    appear in store order.
    """
    header = {
        "format_version": _CHECKPOINT_VERSION,
        "config": config,
        "parameter_names": list(store.params),
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", _CHECKPOINT_VERSION, len(header_bytes)))
        fh.write(header_bytes)
        for name, tensor in store.params.items():
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", tensor.values.ndim))
            fh.write(struct.pack(f"<{tensor.values.ndim}I", *tensor.values.shape))
            fh.write(tensor.values.astype("<f8").tobytes())


def load_checkpoint(path: str) -> tuple[dict[str, np.ndarray], dict]:
    """Read back a checkpoint as (values by name, config echo)."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if blob[:4] != _CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint file (bad magic)")
    version, header_len = struct.unpack_from("<II", blob, 4)
    if version != _CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format version {version}")
    try:
        header = json.loads(blob[12:12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable checkpoint header in {path}: {exc}") from exc
    offset = 12 + header_len
    values: dict[str, np.ndarray] = {}
    try:
        for expected in header["parameter_names"]:
            (name_len,) = struct.unpack_from("<H", blob, offset)
            offset += 2
            name = blob[offset:offset + name_len].decode("utf-8")
            offset += name_len
            (rank,) = struct.unpack_from("<B", blob, offset)
            offset += 1
            shape = struct.unpack_from(f"<{rank}I", blob, offset)
            offset += 4 * rank
            count = int(np.prod(shape, dtype=np.int64)) if rank else 1
            array = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
            offset += 8 * count
            if name != expected:
                raise CheckpointError(
                    f"parameter order mismatch in {path}: {name!r} vs {expected!r}"
                )
            values[name] = array.reshape(shape).astype(np.float64)
    except struct.error as exc:
        raise CheckpointError(f"truncated checkpoint {path}: {exc}") from exc
    if offset != len(blob):
        raise CheckpointError(f"trailing bytes in checkpoint {path}")
    return values, header["config"]
