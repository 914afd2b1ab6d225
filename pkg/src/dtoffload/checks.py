"""Fast self-checks behind ``python -m dtoffload check``.

Each check returns ``(passed, detail)``. They are smaller versions of the
properties the test suite verifies in full, meant for a quick sanity pass on
a given config.
"""
from __future__ import annotations

import time

import numpy as np

from . import env as envmod
from . import rl_agent as rl
from .config import SimConfig
from .harness import LEARNED_SCHEMES, apply_scheme_mask, run_training


def check_feasibility(cfg: SimConfig, draws: int = 10_000, seed: int = 0) -> tuple[bool, str]:
    env = envmod.OffloadEnv(cfg, seed=seed)
    rng = np.random.default_rng(seed)
    bad = 0
    for k in range(draws):
        scheme = LEARNED_SCHEMES[k % len(LEARNED_SCHEMES)]
        u = apply_scheme_mask(scheme, rng.uniform(size=env.action_dim), env.topology)
        if env.violations(env.project(u)):
            bad += 1
    return bad == 0, f"{bad} infeasible of {draws}"


def check_slot_identities(cfg: SimConfig, slots: int = 2000, seed: int = 0) -> tuple[bool, str]:
    """Reward = -objective, drift bound and bit conservation on random feasible slots."""
    env = envmod.OffloadEnv(cfg, seed=seed)
    rng = np.random.default_rng(seed + 1)
    worst_rel, drift_bad, leak = 0.0, 0, 0.0
    for _ in range(slots):
        _, reward, m = env.step(env.project(rng.uniform(size=env.action_dim)))
        worst_rel = max(worst_rel, abs(reward + m.objective) / max(abs(m.objective), 1.0))
        drift_bad += m.lhs > m.rhs + 1e-9 * max(abs(m.lhs), abs(m.rhs), 1.0)
        f = m.flows
        leak = max(leak, float(np.max(np.abs(f.psi_device - (f.d_local + f.d_offload.sum(axis=1))))))
    ok = worst_rel <= 1e-9 and drift_bad == 0 and leak == 0.0
    return ok, f"max |r+obj|/|obj|={worst_rel:.2e}, drift violations={drift_bad}, conservation gap={leak}"


def check_gradients(seed: int = 0, eps: float = 1e-6, rtol: float = 1e-4) -> tuple[bool, str]:
    """Central differences on a tiny network, every coordinate."""
    rng = np.random.default_rng(seed)
    sd, ad, hidden = 5, 4, (2, 2, 2)
    actor = rl.init_actor(sd, ad, hidden, rng, 0.3)
    critic = rl.init_critic(sd, hidden, rng)
    states = rng.normal(size=(3, sd))
    zs = rng.normal(size=(3, ad))
    adv = rng.normal(size=3)
    ret = rng.normal(size=3)
    worst = 0.0
    pairs = [(actor, rl.actor_grad(actor, states, zs, adv, 0.01),
              lambda p: rl.actor_objective(p, states, zs, adv, 0.01)),
             (critic, rl.critic_grad(critic, states, ret), lambda p: rl.critic_loss(p, states, ret))]
    for params, grads, fn in pairs:
        for k, block in params.items():
            for idx in np.ndindex(block.shape):
                old = block[idx]
                block[idx] = old + eps
                up = fn(params)
                block[idx] = old - eps
                down = fn(params)
                block[idx] = old
                fd = (up - down) / (2 * eps)
                err = abs(fd - grads[k][idx]) / max(abs(fd), abs(grads[k][idx]), 1e-6)
                worst = max(worst, err)
    return worst <= rtol, f"worst relative error {worst:.2e}"


def check_async_replay(cfg: SimConfig, seed: int = 0) -> tuple[bool, str]:
    small = cfg.replace(training={"episodes": 2, "episode_len": 20, "workers": 1})
    a, art_a = run_training(small, seed=seed, workers=1)
    b, art_b = run_training(small, seed=seed, workers=1, sync=True)
    same = (a.episode_costs == b.episode_costs
            and all(np.array_equal(art_a.actor[k], art_b.actor[k]) for k in art_a.actor)
            and all(np.array_equal(art_a.critic[k], art_b.critic[k]) for k in art_a.critic))
    return same, f"{a.updates} async updates vs {b.updates} sync"


def run_checks(cfg: SimConfig, seed: int = 0) -> dict[str, dict]:
    results = {}
    for name, fn in [("feasibility", lambda: check_feasibility(cfg, seed=seed)),
                     ("slot_identities", lambda: check_slot_identities(cfg, seed=seed)),
                     ("gradients", lambda: check_gradients(seed)),
                     ("async_replay", lambda: check_async_replay(cfg, seed))]:
        t0 = time.perf_counter()
        ok, detail = fn()
        results[name] = {"passed": bool(ok), "detail": detail,
                         "seconds": round(time.perf_counter() - t0, 3)}
    return results
