"""Joint training on Dijkstra traces: imitation plus penalized potential.

The loss per instance averages over trace steps t:

    cross-entropy of predecessor pointers (mean over nodes)
  + (y_s - y_t)
  + sum over directed arcs of (y_v - y_u) where y_v - y_u > w_uv
  + norm_weight * ||y||^2

The violation indicator is treated as a constant gate (no gradient flows
through the comparison); ``hinge_penalty`` switches the gated value from
the full difference to the excess over the weight.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .graphs import ProblemInstance
from .model import (
    ArcLayout,
    ModelConfig,
    ModelParameters,
    StepOutputs,
    build_layout,
    infer_heuristic,
    init_parameters,
    node_features,
    pointer_arc_rows,
    rollout_arrays,
)
from .optim import adam_step
from .search import DijkstraTrace, check_constraints, dijkstra_trace
from .tensor import (
    Tensor,
    l2_norm_squared,
    mul,
    no_grad,
    softmax_cross_entropy,
    take_rows,
    tensor_sum,
)


class LengthMismatch(Exception):
    """Raised when rollout outputs and trace steps disagree in length."""


class DivergenceDetected(Exception):
    """Raised when the training loss stops being finite.

    Carries the report of the epochs completed before the blow-up.
    """

    def __init__(self, message: str, report: "TrainReport | None" = None) -> None:
        super().__init__(message)
        self.report = report


# ============================================================
# Loss
# ============================================================


@dataclass
class LossBreakdown:
    """Scalar loss terms (floats) plus the differentiable total."""

    ce_term: float
    objective_term: float
    violation_term: float
    norm_term: float
    total: float
    total_tensor: Tensor = field(repr=False)

    @property
    def finite(self) -> bool:
        return math.isfinite(self.total)


@dataclass
class _Batch:
    """Index arrays for one disjoint-union batch of equal-length traces."""

    layout: ArcLayout
    features: np.ndarray
    steps: int
    true_rows: list[np.ndarray]
    ce_weights: np.ndarray
    arc_src: np.ndarray
    arc_dst: np.ndarray
    arc_weight: np.ndarray
    source_nodes: np.ndarray
    target_nodes: np.ndarray
    size: int


@dataclass
class _Compiled:
    """Per-instance arrays that never change across epochs."""

    instance: ProblemInstance
    features: np.ndarray
    steps: int
    pointer_rows: list[np.ndarray]


def _compile_instance(instance: ProblemInstance, trace: DijkstraTrace) -> _Compiled:
    return _Compiled(
        instance=instance,
        features=node_features(instance),
        steps=trace.step_count,
        pointer_rows=[
            pointer_arc_rows(instance.graph, step.predecessors)
            for step in trace.steps
        ],
    )


def _assemble(compiled: Sequence[_Compiled]) -> _Batch:
    graphs = [c.instance.graph for c in compiled]
    layout = build_layout(graphs)
    steps = compiled[0].steps
    size = len(compiled)
    true_rows = [
        np.concatenate(
            [c.pointer_rows[t] + layout.row_offsets[k] for k, c in enumerate(compiled)]
        )
        for t in range(steps)
    ]
    ce_weights = np.concatenate(
        [np.full(g.node_count, 1.0 / (size * g.node_count)) for g in graphs]
    )
    arc_rows = np.concatenate(
        [
            np.arange(layout.row_offsets[k], layout.row_offsets[k] + g.arc_count)
            for k, g in enumerate(graphs)
        ]
    )
    return _Batch(
        layout=layout,
        features=np.vstack([c.features for c in compiled]),
        steps=steps,
        true_rows=true_rows,
        ce_weights=ce_weights,
        arc_src=layout.src[arc_rows],
        arc_dst=layout.dst[arc_rows],
        arc_weight=layout.edge_features[arc_rows, 0],
        source_nodes=np.array(
            [layout.node_offsets[k] + c.instance.source for k, c in enumerate(compiled)]
        ),
        target_nodes=np.array(
            [layout.node_offsets[k] + c.instance.target for k, c in enumerate(compiled)]
        ),
        size=size,
    )


def _loss_from_batch(
    outputs: Sequence[StepOutputs],
    batch: _Batch,
    norm_weight: float,
    hinge_penalty: bool,
) -> LossBreakdown:
    if len(outputs) != batch.steps:
        raise LengthMismatch(
            f"{len(outputs)} rollout steps for a {batch.steps}-step trace"
        )
    inv_steps = 1.0 / batch.steps
    inv_size = 1.0 / batch.size
    ce_total = None
    objective_total = None
    violation_total = None
    norm_total = None
    for t, step in enumerate(outputs):
        ce = softmax_cross_entropy(
            step.pointer_logits,
            batch.layout.dst,
            batch.true_rows[t],
            batch.layout.node_count,
            weights=batch.ce_weights,
        )
        y = step.heuristic
        endpoint = take_rows(y, batch.source_nodes) - take_rows(y, batch.target_nodes)
        objective = tensor_sum(endpoint) * inv_size
        diff = take_rows(y, batch.arc_dst) - take_rows(y, batch.arc_src)
        gate = (diff.values > batch.arc_weight).astype(np.float64)
        if hinge_penalty:
            gated = mul(diff - Tensor(batch.arc_weight), gate)
        else:
            gated = mul(diff, gate)
        violation = tensor_sum(gated) * inv_size
        norm = l2_norm_squared(y) * (norm_weight * inv_size)
        ce_total = ce if ce_total is None else ce_total + ce
        objective_total = (
            objective if objective_total is None else objective_total + objective
        )
        violation_total = (
            violation if violation_total is None else violation_total + violation
        )
        norm_total = norm if norm_total is None else norm_total + norm
    ce_total = ce_total * inv_steps
    objective_total = objective_total * inv_steps
    violation_total = violation_total * inv_steps
    norm_total = norm_total * inv_steps
    total = ce_total + objective_total + violation_total + norm_total
    return LossBreakdown(
        ce_term=ce_total.item(),
        objective_term=objective_total.item(),
        violation_term=violation_total.item(),
        norm_term=norm_total.item(),
        total=total.item(),
        total_tensor=total,
    )


def joint_loss(
    outputs: Sequence[StepOutputs],
    trace: DijkstraTrace,
    instance: ProblemInstance,
    norm_weight: float,
    hinge_penalty: bool = False,
) -> LossBreakdown:
    """Trace-supervision loss of one instance given its rollout outputs.

    ``outputs`` must hold one step per trace step (LengthMismatch
    otherwise); ``norm_weight`` scales the squared-norm term.
    """
    if len(outputs) != trace.step_count:
        raise LengthMismatch(
            f"{len(outputs)} rollout steps for a {trace.step_count}-step trace"
        )
    batch = _assemble([_compile_instance(instance, trace)])
    return _loss_from_batch(outputs, batch, norm_weight, hinge_penalty)


# ============================================================
# Training loop
# ============================================================


@dataclass(frozen=True)
class TrainSettings:
    """Loop controls, separate from the model hyperparameters."""

    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 10
    hinge_penalty: bool = False

    def __post_init__(self) -> None:
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ValueError("batch_size, max_epochs and patience must be positive")


@dataclass
class EpochRecord:
    epoch: int
    train_total: float
    train_ce: float
    train_objective: float
    train_violation: float
    train_norm: float
    val_total: float
    val_constraint_fraction: float
    val_pointer_accuracy: float
    val_score: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class TrainReport:
    """Per-epoch records plus which epoch's parameters were kept."""

    records: list[EpochRecord]
    best_epoch: int
    best_score: float
    checkpoint_id: str
    config: ModelConfig

    def write_jsonl(self, path: str) -> None:
        """One JSON line per epoch, then one summary line."""
        with open(path, "w", encoding="utf-8") as fh:
            for record in self.records:
                fh.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")
            summary = {
                "best_epoch": self.best_epoch,
                "best_score": self.best_score,
                "checkpoint_id": self.checkpoint_id,
                "config": self.config.to_dict(),
                "epochs_run": len(self.records),
            }
            fh.write(json.dumps(summary, sort_keys=True) + "\n")


def parameter_digest(params: ModelParameters) -> str:
    """Short stable id of a parameter set (config plus value bytes)."""
    digest = hashlib.sha256()
    digest.update(json.dumps(params.config.to_dict(), sort_keys=True).encode())
    for name, tensor in params.store.items():
        digest.update(name.encode())
        digest.update(tensor.values.tobytes())
    return digest.hexdigest()[:16]


def _validation_pass(
    params: ModelParameters,
    compiled: Sequence[_Compiled],
    settings: TrainSettings,
) -> tuple[float, float, float, float]:
    """Validation loss, constraint fraction, pointer accuracy, score.

    The score rewards constraint satisfaction and informative fields:
    score = constraint fraction - mean of p / (1 + p) where
    p = max(0, y_source - y_target) from the one-step field. Fields that
    are consistent and rank the target above the source score highest.
    """
    norm_weight = params.config.norm_weight
    total = 0.0
    correct = 0.0
    nodes_seen = 0.0
    for group in _bucket(compiled, settings.batch_size, order=None):
        batch = _assemble(group)
        with no_grad():
            outputs = rollout_arrays(batch.features, batch.layout, params, batch.steps)
            loss = _loss_from_batch(outputs, batch, norm_weight, settings.hinge_penalty)
        total += loss.total * batch.size
        for t, step in enumerate(outputs):
            peaks = np.full(batch.layout.node_count, -np.inf)
            np.maximum.at(peaks, batch.layout.dst, step.pointer_logits.values)
            hit = (
                step.pointer_logits.values[batch.true_rows[t]] >= peaks - 1e-12
            )
            correct += float(hit.sum()) / batch.steps
            nodes_seen += hit.shape[0] / batch.steps
    constraint_sum = 0.0
    proxy_sum = 0.0
    for item in compiled:
        with no_grad():
            heuristic = infer_heuristic(item.instance, params)
        fraction, _ = check_constraints(item.instance.graph, heuristic)
        constraint_sum += fraction
        gap = heuristic.values[item.instance.source] - heuristic.values[item.instance.target]
        positive = max(0.0, float(gap))
        proxy_sum += positive / (1.0 + positive)
    count = len(compiled)
    constraint_fraction = constraint_sum / count
    score = constraint_fraction - proxy_sum / count
    return total / count, constraint_fraction, correct / nodes_seen, score


def _bucket(
    compiled: Sequence[_Compiled],
    batch_size: int,
    order: np.ndarray | None,
) -> list[list[_Compiled]]:
    """Split into equal-trace-length groups of at most batch_size."""
    indices = order if order is not None else np.arange(len(compiled))
    by_steps: dict[int, list[_Compiled]] = {}
    for i in indices:
        item = compiled[int(i)]
        by_steps.setdefault(item.steps, []).append(item)
    groups: list[list[_Compiled]] = []
    for steps in sorted(by_steps):
        bucket = by_steps[steps]
        for lo in range(0, len(bucket), batch_size):
            groups.append(bucket[lo:lo + batch_size])
    return groups


def train(
    config: ModelConfig,
    train_set: Sequence[ProblemInstance],
    val_set: Sequence[ProblemInstance],
    settings: TrainSettings = TrainSettings(),
    log: "callable | None" = None,
) -> tuple[ModelParameters, TrainReport]:
    """Train from scratch, keeping the best-validation-score parameters.

    Traces are computed once up front; batches group instances with equal
    trace length so every batch rolls out a single step count. Raises
    DivergenceDetected (with the partial report attached) if the loss
    leaves the finite range.
    """
    if not train_set or not val_set:
        raise ValueError("train_set and val_set must be non-empty")
    train_compiled = [_compile_instance(i, dijkstra_trace(i)) for i in train_set]
    val_compiled = [_compile_instance(i, dijkstra_trace(i)) for i in val_set]
    params = init_parameters(config)
    shuffle_rng = np.random.default_rng(
        np.random.SeedSequence(config.seed, spawn_key=(1,))
    )
    records: list[EpochRecord] = []
    best_score = -np.inf
    best_epoch = -1
    best_values = params.store.snapshot()
    stale = 0
    for epoch in range(settings.max_epochs):
        order = shuffle_rng.permutation(len(train_compiled))
        sums = {"total": 0.0, "ce": 0.0, "objective": 0.0, "violation": 0.0, "norm": 0.0}
        for group in _bucket(train_compiled, settings.batch_size, order):
            batch = _assemble(group)
            outputs = rollout_arrays(batch.features, batch.layout, params, batch.steps)
            loss = _loss_from_batch(
                outputs, batch, config.norm_weight, settings.hinge_penalty
            )
            if not loss.finite:
                report = _finish_report(records, best_epoch, best_score, params, config)
                raise DivergenceDetected(
                    f"non-finite loss in epoch {epoch}", report=report
                )
            loss.total_tensor.backward()
            adam_step(
                params.store,
                learning_rate=config.learning_rate,
                weight_decay=config.weight_decay,
            )
            sums["total"] += loss.total * batch.size
            sums["ce"] += loss.ce_term * batch.size
            sums["objective"] += loss.objective_term * batch.size
            sums["violation"] += loss.violation_term * batch.size
            sums["norm"] += loss.norm_term * batch.size
        count = len(train_compiled)
        val_total, val_constraint, val_pointer, val_score = _validation_pass(
            params, val_compiled, settings
        )
        record = EpochRecord(
            epoch=epoch,
            train_total=sums["total"] / count,
            train_ce=sums["ce"] / count,
            train_objective=sums["objective"] / count,
            train_violation=sums["violation"] / count,
            train_norm=sums["norm"] / count,
            val_total=val_total,
            val_constraint_fraction=val_constraint,
            val_pointer_accuracy=val_pointer,
            val_score=val_score,
        )
        records.append(record)
        if log is not None:
            log(record)
        if not math.isfinite(val_total):
            report = _finish_report(records, best_epoch, best_score, params, config)
            raise DivergenceDetected(
                f"non-finite validation loss in epoch {epoch}", report=report
            )
        if val_score > best_score:
            best_score = val_score
            best_epoch = epoch
            best_values = params.store.snapshot()
            stale = 0
        else:
            stale += 1
            if stale >= settings.patience:
                break
    params.store.restore(best_values)
    report = _finish_report(records, best_epoch, best_score, params, config)
    return params, report


def _finish_report(records, best_epoch, best_score, params, config) -> TrainReport:
    return TrainReport(
        records=list(records),
        best_epoch=best_epoch,
        best_score=float(best_score),
        checkpoint_id=parameter_digest(params),
        config=config,
    )


# ============================================================
# Random hyperparameter search
# ============================================================

SEARCH_RANGES = {
    1: {
        "hidden": (16, 512),
        "learning_rate": (1e-4, 1e-2),
        "weight_decay": (1e-5, 1e-1),
        "norm_weight": (1e-3, 1.0),
    },
    2: {
        "hidden": (80, 100),
        "learning_rate": (9e-4, 4e-3),
        "weight_decay": (9e-4, 4e-3),
        "norm_weight": (1e-2, 5e-2),
    },
}


@dataclass
class SweepTrial:
    index: int
    config: ModelConfig
    score: float
    best_epoch: int
    diverged: bool

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "config": self.config.to_dict(),
            "score": self.score,
            "best_epoch": self.best_epoch,
            "diverged": self.diverged,
        }


def sample_search_config(level: int, seed: int, trial: int) -> ModelConfig:
    """Draw one configuration from the level's ranges.

    Hidden units are uniform integers; rates and the norm weight are
    log-uniform. The MLP width is tied to the hidden dimension.
    """
    if level not in SEARCH_RANGES:
        raise ValueError(f"unknown search level {level}, expected 1 or 2")
    ranges = SEARCH_RANGES[level]
    seq = np.random.SeedSequence(seed, spawn_key=(trial,))
    rng = np.random.default_rng(seq)
    hidden = int(rng.integers(ranges["hidden"][0], ranges["hidden"][1] + 1))

    def log_uniform(bounds: tuple[float, float]) -> float:
        lo, hi = bounds
        return float(np.exp(rng.uniform(np.log(lo), np.log(hi))))

    return ModelConfig(
        hidden_dim=hidden,
        mlp_hidden=hidden,
        norm_weight=log_uniform(ranges["norm_weight"]),
        learning_rate=log_uniform(ranges["learning_rate"]),
        weight_decay=log_uniform(ranges["weight_decay"]),
        seed=int(seq.generate_state(1, dtype=np.uint64)[0]),
    )


def random_search(
    level: int,
    budget: int,
    train_set: Sequence[ProblemInstance],
    val_set: Sequence[ProblemInstance],
    seed: int = 0,
    settings: TrainSettings = TrainSettings(max_epochs=12, patience=4),
    log: "callable | None" = None,
) -> list[SweepTrial]:
    """Run ``budget`` independent trials, best validation score first.

    A diverging trial scores -inf instead of aborting the sweep. Ties
    rank by trial index.
    """
    if budget < 1:
        raise ValueError("budget must be positive")
    trials: list[SweepTrial] = []
    for index in range(budget):
        config = sample_search_config(level, seed, index)
        try:
            _, report = train(config, train_set, val_set, settings)
            trial = SweepTrial(
                index=index,
                config=config,
                score=report.best_score,
                best_epoch=report.best_epoch,
                diverged=False,
            )
        except DivergenceDetected:
            trial = SweepTrial(
                index=index, config=config, score=-np.inf, best_epoch=-1, diverged=True
            )
        trials.append(trial)
        if log is not None:
            log(trial)
    return sorted(trials, key=lambda t: (-t.score, t.index))
