"""Learns consistent A* heuristics by imitating Dijkstra with a message-passing network.

The package is organised as a pipeline:

- :mod:`pathfield.graphs` samples Erdos-Renyi shortest-path instances and
  persists datasets.
- :mod:`pathfield.search` provides Dijkstra (plain, early-stopped, and
  trace-recording variants) and heuristic-guided A*.
- :mod:`pathfield.tensor` is a small reverse-mode autodiff core on NumPy
  arrays; :mod:`pathfield.optim` adds Adam and checkpointing.
- :mod:`pathfield.model` defines the encode-process-decode network over
  directed arcs and the one-step heuristic inference used at test time.
- :mod:`pathfield.training` couples pointer imitation with the penalized
  potential objective and runs the optimisation and random search.
- :mod:`pathfield.evaluation` measures constraint satisfaction, path
  quality, search effort, and wall-clock speedup against baselines.

The most common entry points are re-exported here; ``pathfield.cli``
exposes the same pipeline as a command-line tool.
"""

from __future__ import annotations

from .evaluation import (
    EvalReport,
    EvalSplit,
    MetricRow,
    combine_reports,
    compute_relative_distance,
    emit_report,
    evaluate,
)
from .graphs import (
    FAMILIES,
    TEST_NODE_COUNTS,
    DatasetError,
    DistributionConfig,
    Graph,
    ProblemInstance,
    build_dataset,
    density_for,
    generate_graph,
    load_dataset,
    sample_instance,
    save_dataset,
    split_seed,
)
from .model import (
    ModelConfig,
    ModelParameters,
    StepOutputs,
    infer_heuristic,
    init_parameters,
    load_model,
    rollout,
    save_model,
)
from .search import (
    DijkstraTrace,
    HeuristicField,
    SearchOutcome,
    Unreachable,
    astar,
    check_constraints,
    dijkstra,
    dijkstra_trace,
)
from .training import (
    DivergenceDetected,
    EpochRecord,
    LossBreakdown,
    SweepTrial,
    TrainReport,
    TrainSettings,
    joint_loss,
    parameter_digest,
    random_search,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "FAMILIES",
    "TEST_NODE_COUNTS",
    "DatasetError",
    "DijkstraTrace",
    "DistributionConfig",
    "DivergenceDetected",
    "EpochRecord",
    "EvalReport",
    "EvalSplit",
    "Graph",
    "HeuristicField",
    "LossBreakdown",
    "MetricRow",
    "ModelConfig",
    "ModelParameters",
    "ProblemInstance",
    "SearchOutcome",
    "StepOutputs",
    "SweepTrial",
    "TrainReport",
    "TrainSettings",
    "Unreachable",
    "astar",
    "build_dataset",
    "check_constraints",
    "combine_reports",
    "compute_relative_distance",
    "density_for",
    "dijkstra",
    "dijkstra_trace",
    "emit_report",
    "evaluate",
    "generate_graph",
    "infer_heuristic",
    "init_parameters",
    "joint_loss",
    "load_dataset",
    "load_model",
    "parameter_digest",
    "random_search",
    "rollout",
    "sample_instance",
    "save_dataset",
    "save_model",
    "split_seed",
    "train",
    "__version__",
]
