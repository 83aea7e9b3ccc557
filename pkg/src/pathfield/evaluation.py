"""Evaluation harness: metrics per split for learnt, zero, and random fields.

Per instance the harness times early-stopped Dijkstra, heuristic
inference, and guided search on a monotonic clock (median of repeated
runs), then aggregates constraint satisfaction, path accuracy, relative
distance, iteration counts, and wall-clock speedup per split. Trials
re-run the whole measurement with fresh random-baseline draws and fresh
timings; everything else is deterministic in the seed.
"""

from __future__ import annotations

import json
import logging
import os
import platform
import time
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .graphs import ProblemInstance
from .model import ModelParameters, infer_heuristic
from .search import (
    HeuristicField,
    SearchOutcome,
    Unreachable,
    astar,
    check_constraints,
    dijkstra,
)

logger = logging.getLogger(__name__)

SOURCES = ("learnt", "zero", "random")

COST_TOLERANCE = 1e-9


class OptimalCostZero(Exception):
    """Raised when a relative distance is requested against cost zero."""


def compute_relative_distance(found: SearchOutcome, optimal: SearchOutcome) -> float:
    """(c - c*) / c*, clamped at zero; found cheaper than optimal is a bug."""
    if optimal.cost <= 0.0:
        raise OptimalCostZero(f"optimal cost {optimal.cost} admits no ratio")
    assert found.cost >= optimal.cost - COST_TOLERANCE, (
        f"found cost {found.cost} beats the optimal {optimal.cost}: "
        "the exhaustive search is wrong"
    )
    return max(0.0, (found.cost - optimal.cost) / optimal.cost)


# ============================================================
# Report containers
# ============================================================


@dataclass
class MetricRow:
    """Aggregated metrics of one (family, size, heuristic source) cell.

    Means and standard errors run across the split's instances, then
    average across trials. ``iterations_dijkstra`` is the early-stopped
    Dijkstra mean on the same instances; ``speedup`` divides total
    Dijkstra time by total inference-plus-search time.
    """

    family: str
    node_count: int
    source: str
    constraint_mean: float
    constraint_stderr: float
    path_accuracy: float
    relative_distance_mean: float
    relative_distance_stderr: float
    iterations_mean: float
    iterations_stderr: float
    iterations_dijkstra: float
    speedup: float
    instance_count: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, data: dict) -> "MetricRow":
        return cls(**data)


@dataclass
class EvalReport:
    rows: list[MetricRow]
    trials: int
    seeds: list[int]
    checkpoint_id: str
    environment: str

    def to_json(self) -> str:
        payload = {
            "rows": [row.to_dict() for row in self.rows],
            "trials": self.trials,
            "seeds": self.seeds,
            "checkpoint_id": self.checkpoint_id,
            "environment": self.environment,
        }
        return json.dumps(payload, sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        payload = json.loads(text)
        return cls(
            rows=[MetricRow.from_dict(row) for row in payload["rows"]],
            trials=payload["trials"],
            seeds=list(payload["seeds"]),
            checkpoint_id=payload["checkpoint_id"],
            environment=payload["environment"],
        )


@dataclass(frozen=True)
class EvalSplit:
    """One test split: a density family at one size with its instances."""

    family: str
    node_count: int
    instances: tuple[ProblemInstance, ...]


def environment_note() -> str:
    return (
        f"{platform.platform()} | {platform.processor() or 'unknown cpu'} | "
        f"python {platform.python_version()} | numpy {np.__version__}"
    )


# ============================================================
# Measurement
# ============================================================


def _median_time(run: Callable[[], object], repetitions: int) -> tuple[float, object]:
    """Median wall time over sequential repetitions, plus the last result."""
    times = []
    result = None
    for _ in range(repetitions):
        start = time.perf_counter()
        result = run()
        times.append(time.perf_counter() - start)
    return float(np.median(times)), result


@dataclass
class _CellStats:
    """Per-trial accumulation for one (split, source) cell."""

    constraints: list[float]
    accuracy: list[float]
    relative: list[float]
    iterations: list[float]
    dijkstra_iterations: list[float]
    dijkstra_time: float = 0.0
    guided_time: float = 0.0

    @classmethod
    def empty(cls) -> "_CellStats":
        return cls([], [], [], [], [])


def _field_for(
    source: str,
    instance: ProblemInstance,
    params: ModelParameters | None,
    rng: np.random.Generator,
    repetitions: int,
) -> tuple[HeuristicField, float]:
    """The heuristic field plus the inference time it cost."""
    n = instance.graph.node_count
    if source == "zero":
        return HeuristicField.zero(n), 0.0
    if source == "random":
        return HeuristicField(rng.uniform(0.0, 1.0, size=n)), 0.0
    if source == "learnt":
        if params is None:
            raise ValueError("the learnt source needs model parameters")
        infer_time, field = _median_time(
            lambda: infer_heuristic(instance, params), repetitions
        )
        return field, infer_time
    raise ValueError(f"unknown heuristic source {source!r}")


def evaluate(
    params: ModelParameters | None,
    splits: Sequence[EvalSplit],
    trials: int = 1,
    seed: int = 0,
    sources: Sequence[str] = SOURCES,
    timing_repetitions: int = 5,
    checkpoint_id: str = "",
    environment: str | None = None,
) -> EvalReport:
    """Measure every requested source on every split, averaged over trials.

    Only the random-baseline draws and the timings differ between
    trials; learnt and zero fields are deterministic. Instances whose
    target turns out unreachable are excluded with a logged warning.
    """
    if trials < 1:
        raise ValueError("trials must be positive")
    if timing_repetitions < 1:
        raise ValueError("timing_repetitions must be positive")
    for source in sources:
        if source not in SOURCES:
            raise ValueError(f"unknown heuristic source {source!r}")
    if "learnt" in sources and params is None:
        raise ValueError("the learnt source needs model parameters")
    per_trial: list[dict[tuple[str, int, str], MetricRow]] = []
    for trial in range(trials):
        cells: dict[tuple[str, int, str], MetricRow] = {}
        for split_index, split in enumerate(splits):
            rng = np.random.default_rng(
                np.random.SeedSequence(seed, spawn_key=(trial, split_index))
            )
            stats = {source: _CellStats.empty() for source in sources}
            for instance in split.instances:
                try:
                    dijkstra_time, optimal = _median_time(
                        lambda: dijkstra(instance), timing_repetitions
                    )
                except Unreachable:
                    logger.warning(
                        "excluding unreachable pair (%s, %d nodes, source %d, target %d)",
                        split.family,
                        split.node_count,
                        instance.source,
                        instance.target,
                    )
                    continue
                for source in sources:
                    field, infer_time = _field_for(
                        source, instance, params, rng, timing_repetitions
                    )
                    guided_time, outcome = _median_time(
                        lambda: astar(instance, field), timing_repetitions
                    )
                    fraction, _ = check_constraints(instance.graph, field)
                    relative = compute_relative_distance(outcome, optimal)
                    cell = stats[source]
                    cell.constraints.append(fraction)
                    cell.accuracy.append(
                        1.0 if abs(outcome.cost - optimal.cost) <= COST_TOLERANCE else 0.0
                    )
                    cell.relative.append(relative)
                    cell.iterations.append(float(outcome.iterations))
                    cell.dijkstra_iterations.append(float(optimal.iterations))
                    cell.dijkstra_time += dijkstra_time
                    cell.guided_time += infer_time + guided_time
            for source in sources:
                cells[(split.family, split.node_count, source)] = _finish_cell(
                    split, source, stats[source]
                )
        per_trial.append(cells)
    rows = [
        _average_rows([trial_cells[key] for trial_cells in per_trial])
        for key in per_trial[0]
    ]
    trial_seeds = [
        int(np.random.SeedSequence(seed, spawn_key=(trial,)).generate_state(1)[0])
        for trial in range(trials)
    ]
    return EvalReport(
        rows=rows,
        trials=trials,
        seeds=trial_seeds,
        checkpoint_id=checkpoint_id,
        environment=environment if environment is not None else environment_note(),
    )


def _mean_stderr(values: list[float]) -> tuple[float, float]:
    if not values:
        return float("nan"), float("nan")
    array = np.asarray(values)
    if array.size == 1:
        return float(array[0]), 0.0
    return float(array.mean()), float(array.std(ddof=1) / np.sqrt(array.size))


def _finish_cell(split: EvalSplit, source: str, cell: _CellStats) -> MetricRow:
    constraint_mean, constraint_stderr = _mean_stderr(cell.constraints)
    relative_mean, relative_stderr = _mean_stderr(cell.relative)
    iter_mean, iter_stderr = _mean_stderr(cell.iterations)
    dijkstra_mean, _ = _mean_stderr(cell.dijkstra_iterations)
    speedup = (
        cell.dijkstra_time / cell.guided_time if cell.guided_time > 0.0 else float("nan")
    )
    return MetricRow(
        family=split.family,
        node_count=split.node_count,
        source=source,
        constraint_mean=constraint_mean,
        constraint_stderr=constraint_stderr,
        path_accuracy=float(np.mean(cell.accuracy)) if cell.accuracy else float("nan"),
        relative_distance_mean=relative_mean,
        relative_distance_stderr=relative_stderr,
        iterations_mean=iter_mean,
        iterations_stderr=iter_stderr,
        iterations_dijkstra=dijkstra_mean,
        speedup=speedup,
        instance_count=len(cell.accuracy),
    )


def _average_rows(rows: list[MetricRow]) -> MetricRow:
    """Mean of every per-trial value; identity fields must agree."""
    first = rows[0]
    if len(rows) == 1:
        return first
    means = {
        name: float(np.mean([getattr(row, name) for row in rows]))
        for name in (
            "constraint_mean",
            "constraint_stderr",
            "path_accuracy",
            "relative_distance_mean",
            "relative_distance_stderr",
            "iterations_mean",
            "iterations_stderr",
            "iterations_dijkstra",
            "speedup",
        )
    }
    return MetricRow(
        family=first.family,
        node_count=first.node_count,
        source=first.source,
        instance_count=first.instance_count,
        **means,
    )


def combine_reports(reports: Sequence[EvalReport]) -> EvalReport:
    """Average per-trial reports covering identical cells into one.

    Used when each trial carries its own freshly trained model, so a
    single evaluate() call cannot span them. Trial counts add, seeds and
    checkpoint ids concatenate.
    """
    if not reports:
        raise ValueError("need at least one report")
    if len(reports) == 1:
        return reports[0]
    keyed = [
        {(row.family, row.node_count, row.source): row for row in report.rows}
        for report in reports
    ]
    first = keyed[0]
    for other in keyed[1:]:
        if other.keys() != first.keys():
            raise ValueError("reports cover different (family, size, source) cells")
    rows = [_average_rows([cells[key] for cells in keyed]) for key in first]
    return EvalReport(
        rows=rows,
        trials=sum(report.trials for report in reports),
        seeds=[seed for report in reports for seed in report.seeds],
        checkpoint_id="+".join(report.checkpoint_id for report in reports),
        environment=reports[0].environment,
    )


# ============================================================
# Emission
# ============================================================

TABLE_COLUMNS = (
    "family",
    "node_count",
    "source",
    "constraint_mean",
    "constraint_stderr",
    "path_accuracy",
    "relative_distance_mean",
    "relative_distance_stderr",
    "iterations_mean",
    "iterations_stderr",
    "iterations_dijkstra",
    "speedup",
    "instance_count",
)

SERIES_COLUMNS = ("family", "source", "metric", "node_count", "value", "stderr")


def _format(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def emit_report(report: EvalReport, out_dir: str) -> list[str]:
    """Write report.json, table.csv, and series.csv; returns the paths.

    The table mirrors one row per (family, size, source); the series file
    lists (node_count, value, stderr) triples per family, source, and
    metric — including a Dijkstra iteration series — for curve plots.
    Re-emitting the same report writes byte-identical files.
    """
    os.makedirs(out_dir, exist_ok=True)
    paths = []

    path = os.path.join(out_dir, "report.json")
    _write_text(path, report.to_json() + "\n")
    paths.append(path)

    lines = [",".join(TABLE_COLUMNS)]
    for row in _sorted_rows(report.rows):
        lines.append(",".join(_format(getattr(row, name)) for name in TABLE_COLUMNS))
    path = os.path.join(out_dir, "table.csv")
    _write_text(path, "\n".join(lines) + "\n")
    paths.append(path)

    series_lines = [",".join(SERIES_COLUMNS)]
    seen_dijkstra: set[tuple[str, int]] = set()
    for row in _sorted_rows(report.rows):
        for metric, value, err in (
            ("path_accuracy", row.path_accuracy, 0.0),
            ("relative_distance", row.relative_distance_mean, row.relative_distance_stderr),
            ("iterations", row.iterations_mean, row.iterations_stderr),
        ):
            series_lines.append(
                ",".join(
                    _format(v)
                    for v in (row.family, row.source, metric, row.node_count, value, err)
                )
            )
        key = (row.family, row.node_count)
        if key not in seen_dijkstra:
            seen_dijkstra.add(key)
            series_lines.append(
                ",".join(
                    _format(v)
                    for v in (
                        row.family,
                        "dijkstra",
                        "iterations",
                        row.node_count,
                        row.iterations_dijkstra,
                        0.0,
                    )
                )
            )
    path = os.path.join(out_dir, "series.csv")
    _write_text(path, "\n".join(series_lines) + "\n")
    paths.append(path)
    return paths


def _sorted_rows(rows: Sequence[MetricRow]) -> list[MetricRow]:
    family_order: Mapping[str, int] = {"sparse": 0, "dense": 1, "very-dense": 2}
    source_order: Mapping[str, int] = {s: i for i, s in enumerate(SOURCES)}
    return sorted(
        rows,
        key=lambda row: (
            family_order.get(row.family, len(family_order)),
            row.family,
            row.node_count,
            source_order.get(row.source, len(source_order)),
        ),
    )


def _write_text(path: str, text: str) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write report file {path}: {exc}") from exc
