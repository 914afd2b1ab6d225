"""Train the actor-critic agent briefly and write the metrics bundle.

A short run (30 episodes of 200 slots) on the reference network. The cost curve
should trend downward; the output directory gets slots.csv, episodes.csv,
summary.json and checkpoint.npz.

    python demos/03_train_and_export.py [out_dir]
"""
import sys

import numpy as np

from dtoffload import reference_config
from dtoffload.harness import export_metrics, run_training

out = sys.argv[1] if len(sys.argv) > 1 else "runs/demo"
cfg = reference_config().replace(training={"episodes": 30, "episode_len": 200})
rec, art = run_training(cfg, seed=0, record_slots=True)

costs = np.array(rec.episode_costs)
for k in range(0, len(costs), 5):
    print(f"episodes {k:3d}-{k + 4:3d}: mean cost {costs[k:k + 5].mean():.4g}")
print(f"final cost {rec.final_cost:.4g}, EE {rec.final_ee:.3g} J/bit, {rec.updates} updates, "
      f"{rec.wall_clock:.0f} s")
files = export_metrics(rec, art, out)
print("wrote", ", ".join(str(p) for p in files.values()))
