"""Walk through a single slot of the simulator.

Builds the reference network, projects a mid-range raw action onto the feasible
set, steps once and prints where the bits and the joules went.

    python demos/01_one_slot.py
"""
import numpy as np

from dtoffload import reference_config
from dtoffload.env import OffloadEnv

cfg = reference_config()
env = OffloadEnv(cfg, seed=0)
topo = env.topology

print(f"{env.n} devices, {env.s - 1} small cells plus the macro cell")
print("association counts per station:", np.bincount(topo.association, minlength=env.s))
print(f"state dim {env.state_dim}, action dim {env.action_dim}")

# warm the queues up with a few idle slots so the flows have something to serve
idle = np.zeros(env.action_dim)
for _ in range(3):
    env.step(env.project(idle))
print(f"backlog after 3 idle slots: {env.queues.local.sum():.3g} bits on devices")

action = env.project(np.full(env.action_dim, 0.5))
obs, reward, m = env.step(action)
f = m.flows
print(f"\nlocally executed  {f.d_local.sum():12.4g} bits")
print(f"offloaded         {f.d_offload.sum():12.4g} bits")
print(f"edge departures   {f.psi_edge.sum():12.4g} bits")
print(f"local energy      {m.energy.local.sum():12.4g} J")
print(f"edge energy       {m.energy.edge.sum():12.4g} J")
print(f"slot EE           {m.slot_ee:12.4g} J/bit")
print(f"beta (per device) {m.beta[0]:12.4g} bits")
print(f"objective {m.objective:.4g}, reward {reward:.4g}")
print(f"drift bound: lhs {m.lhs:.4g} <= rhs {m.rhs:.4g}")
