"""Compare the two non-learning baselines on the reference network.

greedy-drift minimises each device's share of the slot objective over a value
grid; random-feasible draws uniform raw actions. Both go through the same
projection, so both are always feasible.

    python demos/02_baselines.py
"""
from dtoffload import reference_config
from dtoffload.harness import run_baseline, service_capacity

cfg = reference_config()
cap = service_capacity(cfg, draws=500)
print(f"service capacity: {cap.sum():.3g} bits/slot in total, "
      f"mean arrivals {cfg.arrivals.mean_rate * cfg.network.n_devices:.3g} bits/slot")

for scheme in ("random-feasible", "greedy-drift"):
    rec, art = run_baseline(cfg, scheme, seed=0, episodes=1, slots=200)
    last = art.slot_rows[-1]
    print(f"{scheme:16s} cost {rec.final_cost:10.4g}  EE {rec.final_ee:.3g} J/bit  "
          f"backlog at end {last['Q_local'] + last['Q_edge']:.3g} bits  ({rec.wall_clock:.1f} s)")
