"""Dijkstra, execution traces, and heuristic-guided A* on one instance.

A heuristic field assigns a scalar y_v to every node; A* then uses
h(v) = y_target - y_v as the heuristic. The field is *consistent* when

    y_v - y_u <= w(u, v)   for every directed arc (u, v),

which guarantees A* returns optimal paths. Two reference fields bracket
the design space:

  * the zero field (h = 0 everywhere) makes A* behave exactly like
    early-stopped Dijkstra, and
  * y_v = -d(v, target) is the perfect potential: A* walks almost
    straight to the target.

This script runs both, checks consistency, and shows the execution trace
that the training pipeline imitates.
"""

from __future__ import annotations

import numpy as np

from pathfield import (
    DistributionConfig,
    HeuristicField,
    ProblemInstance,
    astar,
    build_dataset,
    check_constraints,
    density_for,
    dijkstra,
    dijkstra_trace,
)


def main() -> None:
    config = DistributionConfig(node_count=64, edge_probability=density_for("dense", 64), seed=11)
    instance = build_dataset([config], 1)[0]
    graph = instance.graph
    print(f"instance: n={graph.node_count}, edges={graph.edge_count}, "
          f"source={instance.source}, target={instance.target}\n")

    optimal = dijkstra(instance)
    print(f"early-stopped Dijkstra: cost={optimal.cost:.4f}  "
          f"iterations={optimal.iterations:3d}  path={optimal.path}")

    # The zero field reproduces Dijkstra exactly: same cost, same number
    # of priority-queue pops.
    zero = HeuristicField.zero(graph.node_count)
    guided = astar(instance, zero)
    print(f"A* with zero field:     cost={guided.cost:.4f}  "
          f"iterations={guided.iterations:3d}  (matches Dijkstra: "
          f"{guided.cost == optimal.cost and guided.iterations == optimal.iterations})")

    # The perfect potential y_v = -d(v, target). The graph is undirected,
    # so distances *to* the target equal distances *from* it: one
    # exhaustive Dijkstra from the target yields the whole field.
    from_target = ProblemInstance(graph, instance.target, instance.source)
    reverse_distance = dijkstra_trace(from_target).distances
    potential = HeuristicField(values=-reverse_distance)
    fraction, violators = check_constraints(graph, potential)
    guided = astar(instance, potential)
    print(f"A* with -d(v, target):  cost={guided.cost:.4f}  "
          f"iterations={guided.iterations:3d}  "
          f"consistent fraction={fraction:.3f}, violations={len(violators)}")

    # An inconsistent field can misguide A* into a suboptimal path.
    rng = np.random.default_rng(0)
    noisy = HeuristicField(values=rng.uniform(0.0, 3.0, graph.node_count))
    fraction, violators = check_constraints(graph, noisy)
    guided = astar(instance, noisy)
    print(f"A* with random field:   cost={guided.cost:.4f}  "
          f"iterations={guided.iterations:3d}  "
          f"consistent fraction={fraction:.3f}  "
          f"(suboptimal by {100 * (guided.cost - optimal.cost) / optimal.cost:.1f}%)\n")

    # The training signal: Dijkstra run to exhaustion, one step per
    # settled node, each step snapshotting every node's current
    # shortest-path predecessor pointer.
    trace = dijkstra_trace(instance)
    print(f"execution trace: {trace.step_count} steps (one per settled node)")
    for index in (0, 1, len(trace.steps) - 1):
        step = trace.steps[index]
        moved = int(np.sum(step.predecessors != np.arange(graph.node_count)))
        print(f"  step {index:2d}: settled node {step.finalized:2d}, "
              f"{moved:2d} pointers moved off self")
    print(f"  final distances match the pairwise search: "
          f"{np.isclose(trace.distances[instance.target], optimal.cost)}")


if __name__ == "__main__":
    main()
