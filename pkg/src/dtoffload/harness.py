"""Experiment orchestration: schemes, training/baseline runs, sweeps and metric export."""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from . import env as envmod
from . import net_model as nm
from . import rl_agent as rl
from .config import SCHEMES, SimConfig

log = logging.getLogger(__name__)

LEARNED_SCHEMES = ("joint", "no-compute-alloc", "no-radio-alloc")
SUMMARY_FRACTION = 0.2

SLOT_COLUMNS = ["episode", "slot", "E_local", "E_edge", "E_total", "eta_ee", "ee_flag", "bits",
                "objective", "reward", "lhs", "rhs", "Q_local", "Q_edge"]
EPISODE_COLUMNS = ["episode", "cost"]
QUEUE_COLUMNS = ["episode", "slot", "kind", "id", "backlog"]
SWEEP_COLUMNS = ["axis", "value", "scheme", "seed", "final_cost", "final_ee", "slope", "wall_clock"]


# ---------------------------------------------------------------------------
# schemes

@dataclass(frozen=True)
class SchemeSpec:
    tag: str
    pinned: tuple[str, ...]  # action blocks replaced by fixed values
    description: str


SCHEME_SPECS = {
    "joint": SchemeSpec("joint", (), "learns every block"),
    "no-compute-alloc": SchemeSpec(
        "no-compute-alloc", ("f_local", "psi_edge", "f_edge"),
        "edge CPU split equally among associated devices, local CPU and edge departure at full rate"),
    "no-radio-alloc": SchemeSpec(
        "no-radio-alloc", ("power", "bandwidth"),
        "transmit power at p_max, bandwidth split equally among associated devices"),
    "random-feasible": SchemeSpec("random-feasible", (), "uniform raw action, then projection"),
    "greedy-drift": SchemeSpec("greedy-drift", (), "per-slot coordinate descent on the objective"),
}


def free_dims(scheme: str, n_devices: int, n_stations: int) -> np.ndarray:
    """Boolean mask of the raw-action coordinates the policy controls under ``scheme``."""
    free = np.ones(envmod.action_dim(n_devices, n_stations), dtype=bool)
    sl = envmod.action_slices(n_devices, n_stations)
    for block in SCHEME_SPECS[scheme].pinned:
        free[sl[block]] = False
    return free


def _equal_split(topology: nm.Topology) -> np.ndarray:
    mask = topology.assoc_mask()
    counts = mask.sum(axis=0)
    return np.where(mask, 1.0 / np.maximum(counts, 1)[None, :], 0.0).ravel()


def apply_scheme_mask(scheme: str, u, topology: nm.Topology) -> np.ndarray:
    """Overwrite the scheme's pinned blocks of a raw action; ``joint`` is the identity."""
    if scheme not in SCHEME_SPECS:
        raise ValueError(f"unknown scheme {scheme!r}")
    u = np.array(u, dtype=float)
    sl = envmod.action_slices(topology.n_devices, topology.n_stations)
    pinned = SCHEME_SPECS[scheme].pinned
    if "f_local" in pinned:
        u[sl["f_local"]] = 1.0
    if "psi_edge" in pinned:
        u[sl["psi_edge"]] = 1.0
    if "f_edge" in pinned:
        u[sl["f_edge"]] = _equal_split(topology)
    if "power" in pinned:
        u[sl["power"]] = 1.0
    if "bandwidth" in pinned:
        u[sl["bandwidth"]] = _equal_split(topology)
    return u


# ---------------------------------------------------------------------------
# greedy drift-plus-penalty baseline

_GRID = np.array([0.0, 0.25, 0.5, 0.75, 1.0])


def device_contributions(env: envmod.OffloadEnv, out: envmod.SlotOutcome) -> np.ndarray:
    """Per-device share of the slot objective (the station-only departure term excluded)."""
    cfg = env.cfg
    f = out.flows
    assoc = env.topology.association
    rows = np.arange(env.n)
    e_dev = out.energy.local + out.energy.edge.sum(axis=1)
    bits = f.d_local + f.d_offload.sum(axis=1)
    penalty = cfg.lyapunov.v_weight * (e_dev - out.eta * bits)
    edge = env.queues.edge[assoc] * f.d_offload[rows, assoc]
    local = -(env.queues.local - out.beta) * (f.psi_device - f.arrivals)
    return penalty + edge + local


def greedy_action(env: envmod.OffloadEnv, sweeps: int = 1, start: float = 0.5) -> np.ndarray:
    """Jacobi coordinate descent over per-device blocks on a value grid.

    Each block is set to every grid value for all devices at once; each device then
    keeps the value that minimised its own contribution. Edge departures are always
    maximal because they only lower the objective.
    """
    n, s = env.n, env.s
    sl = envmod.action_slices(n, s)
    assoc = env.topology.association
    rows = np.arange(n)
    u = np.full(env.action_dim, start)
    u[sl["psi_edge"]] = 1.0
    blocks = ["power", "f_local", "bandwidth", "f_edge"]
    for _ in range(sweeps):
        for block in blocks:
            scores = np.empty((len(_GRID), n))
            for g, val in enumerate(_GRID):
                cand = u.copy()
                if block in ("bandwidth", "f_edge"):
                    mat = cand[sl[block]].reshape(n, s)
                    mat[rows, assoc] = val
                    cand[sl[block]] = mat.ravel()
                else:
                    cand[sl[block]] = val
                scores[g] = device_contributions(env, env.evaluate(env.project(cand)))
            best = _GRID[np.argmin(scores, axis=0)]
            if block in ("bandwidth", "f_edge"):
                mat = u[sl[block]].reshape(n, s)
                mat[rows, assoc] = best
                u[sl[block]] = mat.ravel()
            else:
                u[sl[block]] = best
    return u


def service_capacity(cfg: SimConfig, seed: int = 0, draws: int = 2000) -> np.ndarray:
    """Mean bits per slot each device can clear at full power, full local CPU and an
    equal bandwidth split, interference included, averaged over fading draws."""
    env = envmod.OffloadEnv(cfg, seed=seed)
    topo = env.topology
    e, net = cfg.energy, cfg.network
    bw = _equal_split(topo).reshape(env.n, env.s) * topo.bandwidth()[None, :]
    rng = np.random.default_rng([seed, 11])
    total = np.zeros(env.n)
    for _ in range(draws):
        ch = nm.sample_channel(topo, rng, net.path_loss_exp, net.noise_power, net.min_distance)
        total += nm.link_rates(bw, topo.p_max(), ch, topo)
    local = e.slot_len * topo.f_local() / e.cycles_per_bit
    return total / draws * e.slot_len + local


# ---------------------------------------------------------------------------
# runs

@dataclass
class RunRecord:
    config_hash: str
    seed: int
    scheme: str
    episode_costs: list[float]
    final_cost: float
    final_ee: float
    slope: float
    wall_clock: float
    updates: int = 0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunRecord":
        return cls(**data)


@dataclass
class RunArtifacts:
    slot_rows: list[dict] = field(default_factory=list)
    queue_rows: list[dict] = field(default_factory=list)
    actor: rl.Params | None = None
    critic: rl.Params | None = None
    checks: dict = field(default_factory=dict)


def summary_cost(costs: list[float]) -> float:
    """Mean over the final 20% of episodes (at least one)."""
    if not costs:
        return float("nan")
    k = max(1, int(round(len(costs) * SUMMARY_FRACTION)))
    return float(np.mean(costs[-k:]))


def default_reward_scale(cfg: SimConfig) -> float:
    """100 * N * lambda^2, so discounted returns of the scaled reward stay O(1-10)."""
    if cfg.training.reward_scale is not None:
        return cfg.training.reward_scale
    q = max(cfg.arrivals.mean_rate, 1.0)
    return 100.0 * q * q * cfg.network.n_devices


def agent_config(cfg: SimConfig) -> rl.AgentConfig:
    tr = cfg.training
    return rl.AgentConfig(discount=tr.discount, lr_actor=tr.lr_actor, lr_critic=tr.lr_critic,
                          t_max=tr.t_max, total_steps=tr.episodes * tr.episode_len,
                          entropy_coeff=tr.entropy_coeff, grad_clip=tr.grad_clip,
                          episode_len=tr.episode_len, reward_scale=default_reward_scale(cfg))


class _SlotRecorder:
    """Collects slot rows (optional) and, always, light totals of the latest episode."""

    def __init__(self, enabled: bool, queues: bool = False):
        self.enabled = enabled
        self.queues = queues
        self.rows: list[dict] = []
        self.queue_rows: list[dict] = []
        self.episode = -1
        self.energy = 0.0
        self.bits = 0.0
        self.q_local: list[float] = []
        self.q_edge: list[float] = []
        self.done = None  # (energy, bits, q_local, q_edge) of the last finished episode

    def __call__(self, worker_id: int, episode: int, slot: int, metrics: envmod.SlotMetrics) -> None:
        if episode != self.episode:
            if self.q_local:
                self.done = (self.energy, self.bits, self.q_local, self.q_edge)
            self.episode, self.energy, self.bits, self.q_local, self.q_edge = episode, 0.0, 0.0, [], []
        self.energy += metrics.energy.total
        self.bits += metrics.bits
        self.q_local.append(float(metrics.queues_after.local.sum()))
        self.q_edge.append(float(metrics.queues_after.edge.sum()))
        if not self.enabled:
            return
        row = metrics.row()
        row["slot"] = slot
        self.rows.append({"episode": episode, **row})
        if self.queues:
            q = metrics.queues_after
            for i, b in enumerate(q.local):
                self.queue_rows.append({"episode": episode, "slot": slot, "kind": "local", "id": i, "backlog": b})
            for j, b in enumerate(q.edge):
                self.queue_rows.append({"episode": episode, "slot": slot, "kind": "edge", "id": j, "backlog": b})

    def tail(self):
        """Totals of the last complete episode, else of the one in progress."""
        if self.done is not None:
            return self.done
        return self.energy, self.bits, self.q_local, self.q_edge


def _seeds(seed: int, n_workers: int):
    ss = np.random.SeedSequence(seed)
    init_ss, *worker_ss = ss.spawn(n_workers + 1)
    return init_ss, worker_ss


def make_worker(cfg: SimConfig, seed: int, worker_id: int, worker_ss, scheme: str,
                on_slot=None) -> tuple[rl.Worker, envmod.OffloadEnv]:
    env_seed, pol_seed = worker_ss.spawn(2)
    env = envmod.OffloadEnv(cfg, seed=int(env_seed.generate_state(1)[0]), topology_seed=seed)

    def env_reset():
        return env.reset()

    def env_step(u):
        return env.step(env.project(apply_scheme_mask(scheme, u, env.topology)))

    worker = rl.Worker(worker_id, env_reset, env_step, agent_config(cfg),
                       np.random.default_rng(pol_seed), free_dims(scheme, env.n, env.s), on_slot)
    return worker, env


def init_params(cfg: SimConfig, seed: int):
    init_ss, _ = _seeds(seed, max(1, cfg.training.workers))
    probe = envmod.OffloadEnv(cfg, seed=0, topology_seed=seed)
    rng = np.random.default_rng(init_ss)
    tr = cfg.training
    actor = rl.init_actor(probe.state_dim, probe.action_dim, tr.hidden, rng, tr.init_log_std)
    critic = rl.init_critic(probe.state_dim, tr.hidden, rng)
    return actor, critic


def run_training(cfg: SimConfig, seed: int | None = None, scheme: str | None = None,
                 workers: int | None = None, sync: bool = False, record_slots: bool = False,
                 record_queues: bool = False) -> tuple[RunRecord, RunArtifacts]:
    """Train the actor-critic agent (K workers + global agent, or the synchronous reference)."""
    seed = cfg.seeds[0] if seed is None else seed
    scheme = scheme or cfg.scheme
    if scheme not in LEARNED_SCHEMES:
        raise ValueError(f"scheme {scheme!r} is not a learned scheme; use run_baseline")
    k = workers or cfg.training.workers
    t0 = time.perf_counter()
    actor, critic = init_params(cfg, seed)
    _, worker_ss = _seeds(seed, k)
    recorder = _SlotRecorder(record_slots, record_queues)
    pairs = [make_worker(cfg, seed, w, worker_ss[w], scheme, recorder if w == 0 else None) for w in range(k)]
    agents = [p[0] for p in pairs]
    acfg = agent_config(cfg)
    if sync:
        if k != 1:
            raise ValueError("the synchronous reference runs a single worker")
        actor, critic, updates = rl.train_sync(actor, critic, agents[0], acfg)
    else:
        actor, critic, agent, errors = rl.train_async(actor, critic, agents, acfg)
        updates = agent.updates_applied
        if errors:
            wid, exc = errors[0]
            raise RuntimeError(f"worker {wid} failed: {exc!r}") from exc
    costs = [c for w in agents for c in w.episode_costs] if k > 1 else agents[0].episode_costs
    ee, slope = _tail_stats(recorder)
    record = RunRecord(cfg.digest(), seed, scheme, [float(c) for c in costs], summary_cost(costs),
                       ee, slope, time.perf_counter() - t0, updates)
    return record, RunArtifacts(recorder.rows, recorder.queue_rows, actor, critic)


def _tail_stats(recorder: _SlotRecorder) -> tuple[float, float]:
    """Long-term EE and backlog slope of the last training episode of worker 0."""
    from .task_queue import stability_metric
    energy, bits, q_local, q_edge = recorder.tail()
    if not q_local:
        return float("nan"), float("nan")
    ee = energy / bits if bits > 0 else 0.0
    rep = stability_metric(np.array(q_local), np.array(q_edge))
    return float(ee), rep.slope


def policy_fn(scheme: str, actor: rl.Params | None = None, rng: np.random.Generator | None = None,
              deterministic: bool = True) -> Callable[[envmod.OffloadEnv, np.ndarray], np.ndarray]:
    """Raw-action policy for evaluation runs."""
    if scheme == "random-feasible":
        return lambda env, obs: rng.uniform(0.0, 1.0, env.action_dim)
    if scheme == "greedy-drift":
        return lambda env, obs: greedy_action(env)
    if actor is None:
        raise ValueError(f"scheme {scheme!r} needs trained actor parameters")

    def act(env, obs):
        logits, log_std = rl.actor_logits(obs, actor)
        u, _, _ = rl.sample_from_logits(logits, log_std, rng, deterministic)
        return u
    return act


def rollout_episodes(cfg: SimConfig, seed: int, scheme: str, policy, episodes: int, slots: int,
                     record_slots: bool = True) -> tuple[list[float], list[dict], envmod.OffloadEnv]:
    env = envmod.OffloadEnv(cfg, seed=seed + 10_000, topology_seed=seed)
    costs, rows = [], []
    for ep in range(episodes):
        obs = env.reset()
        total = 0.0
        for t in range(slots):
            u = apply_scheme_mask(scheme if scheme in LEARNED_SCHEMES else "joint", policy(env, obs), env.topology)
            obs, reward, m = env.step(env.project(u))
            total += reward
            if record_slots:
                row = m.row()
                rows.append({"episode": ep, **row})
        costs.append(-total)
    return costs, rows, env


def run_baseline(cfg: SimConfig, scheme: str, seed: int | None = None, episodes: int | None = None,
                 slots: int | None = None, actor: rl.Params | None = None) -> tuple[RunRecord, RunArtifacts]:
    """Evaluate a scheme without learning (random-feasible, greedy-drift, or a fixed actor)."""
    from .task_queue import stability_metric
    seed = cfg.seeds[0] if seed is None else seed
    episodes = episodes or 1
    slots = slots or cfg.training.episode_len
    t0 = time.perf_counter()
    rng = np.random.default_rng([seed, 7])
    pol = policy_fn(scheme, actor, rng)
    costs, rows, env = rollout_episodes(cfg, seed, scheme, pol, episodes, slots)
    last = [r for r in rows if r["episode"] == episodes - 1]
    rep = stability_metric(np.array([r["Q_local"] for r in last]), np.array([r["Q_edge"] for r in last]))
    record = RunRecord(cfg.digest(), seed, scheme, costs, summary_cost(costs),
                       float(env.tracker.ee_estimate), rep.slope, time.perf_counter() - t0)
    return record, RunArtifacts(rows)


# ---------------------------------------------------------------------------
# sweeps

_AXES = {
    "N": lambda cfg, v: cfg.replace(network={"n_devices": int(v)}),
    "M": lambda cfg, v: cfg.replace(network={"n_sbs": int(v)}),
    "learning_rate": lambda cfg, v: cfg.replace(training={"lr_actor": float(v), "lr_critic": float(v)}),
    "V": lambda cfg, v: cfg.replace(lyapunov={"v_weight": float(v)}),
}


def sweep(cfg: SimConfig, axis: str, values: Iterable, seeds: Iterable[int],
          schemes: Iterable[str] = LEARNED_SCHEMES, runner: Callable | None = None,
          out_dir: str | Path | None = None) -> list[dict]:
    """Full cross-product values x seeds x schemes; one row per run."""
    if axis not in _AXES:
        raise ValueError(f"unknown sweep axis {axis!r}; choose from {sorted(_AXES)}")
    values, seeds, schemes = list(values), list(seeds), list(schemes)
    runner = runner or _default_runner
    rows = []
    for v in values:
        cell_cfg = _AXES[axis](cfg, v)
        for scheme in schemes:
            for seed in seeds:
                rec = runner(cell_cfg, scheme, seed)
                rows.append({"axis": axis, "value": v, "scheme": scheme, "seed": seed,
                             "final_cost": rec.final_cost, "final_ee": rec.final_ee,
                             "slope": rec.slope, "wall_clock": rec.wall_clock})
                log.info("sweep %s=%s %s seed=%d cost=%.4g", axis, v, scheme, seed, rec.final_cost)
    expected = len(values) * len(seeds) * len(schemes)
    if len(rows) != expected:
        raise RuntimeError(f"sweep produced {len(rows)} rows, expected {expected}")
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / f"sweep_{axis}.csv", SWEEP_COLUMNS, rows)
        write_csv(out / f"plot_{axis}.csv", ["x", "y", "series"], plot_data(rows))
    return rows


def _default_runner(cfg: SimConfig, scheme: str, seed: int) -> RunRecord:
    if scheme in LEARNED_SCHEMES:
        return run_training(cfg, seed=seed, scheme=scheme)[0]
    return run_baseline(cfg, scheme, seed=seed)[0]


def plot_data(rows: list[dict]) -> list[dict]:
    """Seed-averaged (x, y, series) points, one series per scheme."""
    out = []
    keys = sorted({(r["scheme"], r["value"]) for r in rows}, key=lambda k: (k[0], float(k[1])))
    for scheme, value in keys:
        ys = [r["final_cost"] for r in rows if r["scheme"] == scheme and r["value"] == value]
        out.append({"x": value, "y": float(np.mean(ys)), "series": scheme})
    return out


# ---------------------------------------------------------------------------
# export

def write_csv(path, columns: list[str], rows: list[dict]) -> None:
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
            writer.writeheader()
            for row in rows:
                writer.writerow({k: _fmt(row.get(k)) for k in columns})
    except OSError as exc:
        raise OSError(f"cannot write metrics to {path}: {exc.strerror}") from exc


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def export_metrics(record: RunRecord | None, artifacts: RunArtifacts | None, path,
                   checks: dict | None = None) -> dict[str, Path]:
    """Write slots.csv, episodes.csv, queues.csv and summary.json under ``path``."""
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc.strerror}") from exc
    artifacts = artifacts or RunArtifacts()
    files = {
        "slots": out / "slots.csv",
        "episodes": out / "episodes.csv",
        "queues": out / "queues.csv",
        "summary": out / "summary.json",
    }
    write_csv(files["slots"], SLOT_COLUMNS, artifacts.slot_rows)
    episodes = [] if record is None else [{"episode": i, "cost": c} for i, c in enumerate(record.episode_costs)]
    write_csv(files["episodes"], EPISODE_COLUMNS, episodes)
    write_csv(files["queues"], QUEUE_COLUMNS, artifacts.queue_rows)
    if artifacts.actor is not None and artifacts.critic is not None:
        files["checkpoint"] = out / "checkpoint.npz"
        seeds = () if record is None else (record.seed,)
        rl.save_checkpoint(files["checkpoint"], artifacts.actor, artifacts.critic, seeds,
                           {"config_hash": None if record is None else record.config_hash})
    summary = {"record": None if record is None else record.to_dict(),
               "checks": checks if checks is not None else artifacts.checks}
    with files["summary"].open("w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True, default=_json_default)
    return files


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serialisable: {type(o)}")


def load_summary(path) -> tuple[RunRecord | None, dict]:
    with open(path) as fh:
        data = json.load(fh)
    rec = data.get("record")
    return (None if rec is None else RunRecord.from_dict(rec)), data.get("checks", {})


def csv_bytes(columns: list[str], rows: list[dict]) -> bytes:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _fmt(row.get(k)) for k in columns})
    return buf.getvalue().encode()
