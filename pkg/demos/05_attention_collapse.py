#!/usr/bin/env python3
"""Squeezing the truncation error flattens the gate into uselessness.

Adding lam * mean(|error|) to the loss seems harmless, even principled: a
smaller error estimate means a more trustworthy smooth flow.  But the gate
IS sigmoid(error), so driving the error to zero drives every gate value to
sigmoid(0) = 0.5.  The gate stops telling shocked cells apart from calm
ones; its spread, not its mean, is what carries information.
"""

from odegate.data import (ShockScenario, build_dataset, default_graph,
                          generate_shock_series)
from odegate.model import ModelConfig
from odegate.training import TrainConfig, mask_report, train


def main():
    scenario = ShockScenario(n_nodes=8, total_t=400, shock_rate=1.5, seed=0)
    graph = default_graph(scenario.n_nodes, seed=scenario.seed)
    series, events = generate_shock_series(scenario, graph)
    dataset = build_dataset(series, events, graph, window=8, horizon=6)
    cfg = ModelConfig(n_nodes=8, window=8, horizon=6,
                      proj_dim=8, embed_dim=4, steps=2)

    rows = []
    result = train(dataset, cfg, TrainConfig(epochs=12, batch_size=32))
    rows.append(("full (lam=0)", result))
    for lam in (0.01, 0.1, 1.0):
        result = train(dataset, cfg,
                       TrainConfig(variant="manifold_penalty", lam=lam,
                                   epochs=12, batch_size=32))
        rows.append((f"penalty lam={lam}", result))

    print(f"{'run':<18} {'gate_mean':>10} {'gate_std':>10} {'gate_p95':>10} "
          f"{'shock-calm gap':>15}")
    for label, result in rows:
        masks = mask_report(result.params, cfg, dataset, split="test")
        gap = masks.shock_mean - masks.nonshock_mean
        print(f"{label:<18} {masks.mean:>10.5f} {masks.std:>10.5f} "
              f"{masks.p95:>10.5f} {gap:>+15.6f}")

    print("\nthe mean is parked near 0.5 everywhere; what the penalty eats")
    print("is the spread: std and p95 squeeze toward 0.5 as lam grows, so")
    print("the gate's dynamic range, the thing compensation keys on, is gone")


if __name__ == "__main__":
    main()
