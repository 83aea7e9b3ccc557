"""Train the heuristic network on a small dataset and watch the loss.

The model is an encode-process-decode network over directed arcs with
max aggregation. Each training step replays one Dijkstra execution
trace: at every trace step the network must (a) point each node at its
current shortest-path predecessor (cross-entropy over incoming arcs)
and (b) emit a heuristic field scored by an unsupervised objective

    (y_source - y_target)                 pull the target's score up,
    + sum over violated arcs (y_v - y_u)  penalize inconsistency,
    + norm_weight * ||y||^2               keep the field small.

Early stopping tracks a validation score that rewards constraint
satisfaction. This demo uses a reduced dataset so it finishes in about
a minute; the command-line tool runs the full-size version.
"""

from __future__ import annotations

from pathfield import (
    DistributionConfig,
    ModelConfig,
    TrainSettings,
    build_dataset,
    check_constraints,
    density_for,
    infer_heuristic,
    joint_loss,
    rollout,
    dijkstra_trace,
    train,
)


def main() -> None:
    make = lambda seed: DistributionConfig(
        node_count=16, edge_probability=density_for("dense", 16), seed=seed
    )
    train_set = build_dataset([make(100)], 120)
    val_set = build_dataset([make(200)], 32)

    config = ModelConfig(hidden_dim=24, mlp_hidden=24, seed=0)
    settings = TrainSettings(batch_size=16, max_epochs=8, patience=8)

    def log(record):
        print(f"epoch {record.epoch:2d}  train {record.train_total:7.4f} "
              f"(ce {record.train_ce:6.4f}, objective {record.train_objective:+7.4f}, "
              f"violation {record.train_violation:6.4f}, norm {record.train_norm:6.4f})  "
              f"val constraint fraction {record.val_constraint_fraction:.4f}")

    print(f"training on {len(train_set)} instances, validating on {len(val_set)}\n")
    params, report = train(config, train_set, val_set, settings, log=log)
    print(f"\nbest epoch {report.best_epoch} with selection score {report.best_score:+.4f}"
          f"  (checkpoint id {report.checkpoint_id})")

    # The per-instance loss decomposes into named parts; here is one
    # instance replayed through the trained parameters.
    instance = val_set[0]
    trace = dijkstra_trace(instance)
    outputs = rollout(instance, params, steps=trace.step_count)
    breakdown = joint_loss(outputs, trace, instance, norm_weight=config.norm_weight)
    print(f"\none validation instance, trace of {trace.step_count} steps:")
    print(f"  cross-entropy {breakdown.ce_term:.4f}  objective {breakdown.objective_term:+.4f}  "
          f"violation {breakdown.violation_term:.4f}  norm {breakdown.norm_term:.4f}")

    # At test time the heuristic comes from a single message-passing step.
    fraction_sum = 0.0
    for inst in val_set:
        field = infer_heuristic(inst, params)
        fraction, _ = check_constraints(inst.graph, field)
        fraction_sum += fraction
    print(f"\nmean constraint satisfaction of the inferred fields: "
          f"{fraction_sum / len(val_set):.4f}")


if __name__ == "__main__":
    main()
