"""Asynchronous actor-critic with hand-written numpy MLPs.

Parameters are plain ``dict[str, np.ndarray]`` (float64). The actor is a ReLU
trunk, a linear head producing pre-squash logits and a state-independent
log-std vector; actions are ``sigmoid(logit + std * noise)`` in (0, 1). The
critic is a ReLU trunk with one linear output.

Concurrency: one :class:`GlobalAgent` thread owns the canonical parameters and
serves a single FIFO message queue. Workers put snapshot requests and gradient
messages on that queue; because both go through the same queue, a worker's
snapshot always reflects every update it submitted earlier.
"""
from __future__ import annotations

import logging
import queue
import threading
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

log = logging.getLogger(__name__)

LOG_STD_MIN, LOG_STD_MAX = -5.0, 1.0
_LOG_2PI = np.log(2.0 * np.pi)

Params = dict[str, np.ndarray]


# ---------------------------------------------------------------------------
# networks

def _init_layer(rng: np.random.Generator, fan_in: int, fan_out: int):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=(fan_in, fan_out)), rng.uniform(-bound, bound, size=fan_out)


def init_actor(state_dim: int, action_dim: int, hidden=(128, 128, 128), rng=None,
               init_log_std: float = 0.5) -> Params:
    rng = np.random.default_rng(0) if rng is None else rng
    params: Params = {}
    dims = (state_dim, *hidden)
    for k in range(len(hidden)):
        params[f"W{k}"], params[f"b{k}"] = _init_layer(rng, dims[k], dims[k + 1])
    params["W_mu"], params["b_mu"] = _init_layer(rng, dims[-1], action_dim)
    params["log_std"] = np.full(action_dim, float(init_log_std))
    return params


def init_critic(state_dim: int, hidden=(128, 128, 128), rng=None) -> Params:
    rng = np.random.default_rng(0) if rng is None else rng
    params: Params = {}
    dims = (state_dim, *hidden)
    for k in range(len(hidden)):
        params[f"W{k}"], params[f"b{k}"] = _init_layer(rng, dims[k], dims[k + 1])
    params["W_v"], params["b_v"] = _init_layer(rng, dims[-1], 1)
    return params


def n_hidden(params: Params) -> int:
    return sum(1 for k in params if k.startswith("W") and k[1:].isdigit())


def _trunk_forward(params: Params, x: np.ndarray):
    acts = [x]
    pre = []
    h = x
    for k in range(n_hidden(params)):
        z = h @ params[f"W{k}"] + params[f"b{k}"]
        h = np.maximum(z, 0.0)
        pre.append(z)
        acts.append(h)
    return h, (acts, pre)


def _trunk_backward(params: Params, cache, dh: np.ndarray, grads: Params) -> None:
    acts, pre = cache
    for k in reversed(range(n_hidden(params))):
        dz = dh * (pre[k] > 0)
        grads[f"W{k}"] = acts[k].T @ dz
        grads[f"b{k}"] = dz.sum(axis=0)
        dh = dz @ params[f"W{k}"].T


def _check_input(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite network input")
    return x


def actor_logits(state, params: Params):
    """Pre-squash means (logits) and clipped log-stds; batched if ``state`` is 2-D."""
    x = _check_input(state)
    h, _ = _trunk_forward(params, np.atleast_2d(x))
    logits = h @ params["W_mu"] + params["b_mu"]
    log_std = np.clip(params["log_std"], LOG_STD_MIN, LOG_STD_MAX)
    return (logits if x.ndim == 2 else logits[0]), log_std


def actor_forward(state, params: Params):
    """Per-dimension action means in (0, 1) and log-stds."""
    logits, log_std = actor_logits(state, params)
    return sigmoid(logits), log_std


def critic_forward(state, params: Params):
    x = _check_input(state)
    h, _ = _trunk_forward(params, np.atleast_2d(x))
    v = (h @ params["W_v"] + params["b_v"])[:, 0]
    return v if x.ndim == 2 else float(v[0])


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x)))


def _softplus(x):
    return np.logaddexp(0.0, x)


# ---------------------------------------------------------------------------
# policy distribution

def log_prob(z, logits, log_std, free=None):
    """Log-density of the squashed action ``sigmoid(z)`` (change of variables included).

    ``free`` restricts the sum to the dimensions the policy actually controls.
    """
    z = np.asarray(z, dtype=float)
    std = np.exp(log_std)
    gauss = -0.5 * ((z - logits) / std) ** 2 - log_std - 0.5 * _LOG_2PI
    # d sigmoid/dz = sigmoid(z) * (1 - sigmoid(z)); log of it = -softplus(-z) - softplus(z)
    squash = _softplus(-z) + _softplus(z)
    terms = gauss + squash
    if free is not None:
        terms = np.where(free, terms, 0.0)
    return terms.sum(axis=-1)


def sample_action(means, log_stds, rng: np.random.Generator, deterministic: bool = False, free=None):
    """Draw ``u = sigmoid(logit(mean) + std * eps)``; returns (u, z, log_prob).

    With ``deterministic`` the mean is returned (z is its logit).
    """
    means = np.asarray(means, dtype=float)
    logits = np.log(means) - np.log1p(-means)
    u, z, logp = sample_from_logits(logits, log_stds, rng, deterministic, free)
    if deterministic:
        u = means.copy()
    return u, z, logp


def sample_from_logits(logits, log_stds, rng: np.random.Generator, deterministic: bool = False, free=None):
    if deterministic:
        z = np.array(logits, dtype=float)
    else:
        z = logits + np.exp(log_stds) * rng.standard_normal(np.shape(logits))
    return sigmoid(z), z, float(log_prob(z, logits, log_stds, free))


def advantage(r_imm: float, v_next: float, v_now: float, discount: float) -> float:
    if not 0.0 <= discount <= 1.0:
        raise ValueError("discount must lie in [0, 1]")
    return r_imm + discount * v_next - v_now


# ---------------------------------------------------------------------------
# gradients

@dataclass
class Trajectory:
    states: list = field(default_factory=list)
    raw_actions: list = field(default_factory=list)  # pre-squash z
    log_probs: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    next_state: np.ndarray | None = None  # bootstrap state s(t_start + len)

    def __len__(self) -> int:
        return len(self.rewards)

    def append(self, state, z, logp, reward) -> None:
        self.states.append(np.asarray(state, dtype=float))
        self.raw_actions.append(np.asarray(z, dtype=float))
        self.log_probs.append(float(logp))
        self.rewards.append(float(reward))


@dataclass
class GradAccum:
    d_actor: Params
    d_critic: Params
    steps: int = 0

    @classmethod
    def zeros_like(cls, actor: Params, critic: Params) -> "GradAccum":
        return cls({k: np.zeros_like(v) for k, v in actor.items()},
                   {k: np.zeros_like(v) for k, v in critic.items()}, 0)

    def __add__(self, other: "GradAccum") -> "GradAccum":
        return GradAccum({k: v + other.d_actor[k] for k, v in self.d_actor.items()},
                         {k: v + other.d_critic[k] for k, v in self.d_critic.items()},
                         self.steps + other.steps)


def n_step_returns(rewards, bootstrap: float, discount: float) -> np.ndarray:
    """G_t = r_t + discount * G_{t+1}, seeded with the critic's value of the tail state."""
    out = np.empty(len(rewards))
    running = bootstrap
    for t in reversed(range(len(rewards))):
        running = rewards[t] + discount * running
        out[t] = running
    return out


def actor_objective(actor: Params, states, zs, advantages, entropy_coeff: float = 0.0, free=None) -> float:
    """Surrogate maximised by the actor: sum_t log pi(z_t|s_t) A_t + c * entropy."""
    logits, log_std = actor_logits(np.atleast_2d(states), actor)
    lp = log_prob(np.atleast_2d(zs), logits, log_std, free)
    ent_dims = log_std if free is None else np.where(free, log_std, 0.0)
    n = len(advantages)
    return float(np.dot(lp, advantages) + entropy_coeff * n * ent_dims.sum())


def critic_loss(critic: Params, states, returns) -> float:
    """sum_t (G_t - v(s_t))^2 with G_t held fixed."""
    v = critic_forward(np.atleast_2d(states), critic)
    return float(np.sum((np.asarray(returns) - v) ** 2))


def actor_grad(actor: Params, states, zs, advantages, entropy_coeff: float = 0.0, free=None) -> Params:
    x = np.atleast_2d(np.asarray(states, dtype=float))
    zs = np.atleast_2d(zs)
    A = np.asarray(advantages, dtype=float)
    h, cache = _trunk_forward(actor, x)
    logits = h @ actor["W_mu"] + actor["b_mu"]
    raw = actor["log_std"]
    log_std = np.clip(raw, LOG_STD_MIN, LOG_STD_MAX)
    var = np.exp(2.0 * log_std)
    diff = zs - logits
    f = np.ones_like(log_std, dtype=bool) if free is None else np.asarray(free, dtype=bool)
    d_logits = A[:, None] * diff / var * f  # (T, A)
    d_log_std = (A[:, None] * (diff ** 2 / var - 1.0)).sum(axis=0) + entropy_coeff * len(A)
    d_log_std = d_log_std * f * ((raw >= LOG_STD_MIN) & (raw <= LOG_STD_MAX))
    grads: Params = {"W_mu": h.T @ d_logits, "b_mu": d_logits.sum(axis=0), "log_std": d_log_std}
    _trunk_backward(actor, cache, d_logits @ actor["W_mu"].T, grads)
    return grads


def critic_grad(critic: Params, states, returns) -> Params:
    x = np.atleast_2d(np.asarray(states, dtype=float))
    h, cache = _trunk_forward(critic, x)
    v = (h @ critic["W_v"] + critic["b_v"])[:, 0]
    dv = (-2.0 * (np.asarray(returns) - v))[:, None]
    grads: Params = {"W_v": h.T @ dv, "b_v": dv.sum(axis=0)}
    _trunk_backward(critic, cache, dv @ critic["W_v"].T, grads)
    return grads


def accumulate_gradients(traj: Trajectory, actor: Params, critic: Params, discount: float,
                         entropy_coeff: float = 0.0, free=None) -> GradAccum:
    """n-step actor-critic gradients for one trajectory.

    ``d_actor`` is the ascent direction of the policy surrogate; ``d_critic`` is
    the gradient of the squared-advantage loss (to be descended).
    """
    if len(traj) == 0:
        raise ValueError("empty trajectory")
    states = np.stack(traj.states)
    # overflow is reported below with context rather than as a numpy warning
    with np.errstate(invalid="ignore", over="ignore"):
        values = critic_forward(np.vstack([states, traj.next_state[None, :]]), critic)
        returns = n_step_returns(traj.rewards, values[-1], discount)
        adv = returns - values[:-1]
        d_actor = actor_grad(actor, states, np.stack(traj.raw_actions), adv, entropy_coeff, free)
        d_critic = critic_grad(critic, states, returns)
    for name, grads in (("actor", d_actor), ("critic", d_critic)):
        for k, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(
                    f"non-finite {name} gradient in {k}: rewards range "
                    f"[{min(traj.rewards):.3g}, {max(traj.rewards):.3g}], values range "
                    f"[{values.min():.3g}, {values.max():.3g}]")
    return GradAccum(d_actor, d_critic, len(traj))


def _clip(grads: Params, max_norm: float | None) -> Params:
    if max_norm is None:
        return grads
    norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm <= max_norm:
        return grads
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}


def apply_update(actor: Params, critic: Params, accum: GradAccum, lr_actor: float, lr_critic: float,
                 max_norm: float | None = None) -> tuple[Params, Params]:
    """Ascend the actor surrogate and descend the critic loss; returns new parameter dicts."""
    if actor.keys() != accum.d_actor.keys() or critic.keys() != accum.d_critic.keys():
        raise ValueError("gradient blocks do not match parameter blocks")
    for k in actor:
        if actor[k].shape != accum.d_actor[k].shape:
            raise ValueError(f"shape mismatch for actor block {k}")
    for k in critic:
        if critic[k].shape != accum.d_critic[k].shape:
            raise ValueError(f"shape mismatch for critic block {k}")
    da = _clip(accum.d_actor, max_norm)
    dc = _clip(accum.d_critic, max_norm)
    new_actor = {k: v + lr_actor * da[k] for k, v in actor.items()}
    new_actor["log_std"] = np.clip(new_actor["log_std"], LOG_STD_MIN, LOG_STD_MAX)
    new_critic = {k: v - lr_critic * dc[k] for k, v in critic.items()}
    return new_actor, new_critic


def copy_params(p: Params) -> Params:
    return {k: v.copy() for k, v in p.items()}


# ---------------------------------------------------------------------------
# checkpoints

CHECKPOINT_VERSION = 1


def save_checkpoint(path, actor: Params, critic: Params, seeds=(), meta: dict | None = None) -> None:
    arrays = {"version": np.array(CHECKPOINT_VERSION), "seeds": np.asarray(list(seeds), dtype=np.int64)}
    arrays.update({f"actor/{k}": v for k, v in actor.items()})
    arrays.update({f"critic/{k}": v for k, v in critic.items()})
    hidden = [actor[f"W{k}"].shape[1] for k in range(n_hidden(actor))]
    arrays["arch"] = np.array([actor["W0"].shape[0], actor["W_mu"].shape[1], *hidden], dtype=np.int64)
    if meta:
        import json
        arrays["meta"] = np.array(json.dumps(meta, sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> tuple[Params, Params, dict]:
    import json
    with np.load(path, allow_pickle=False) as data:
        version = int(data["version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        actor = {k.split("/", 1)[1]: data[k].copy() for k in data.files if k.startswith("actor/")}
        critic = {k.split("/", 1)[1]: data[k].copy() for k in data.files if k.startswith("critic/")}
        info = {"seeds": data["seeds"].tolist(), "arch": data["arch"].tolist()}
        if "meta" in data.files:
            info["meta"] = json.loads(str(data["meta"]))
    return actor, critic, info


# ---------------------------------------------------------------------------
# workers and global agent

@dataclass
class AgentConfig:
    discount: float = 0.99
    lr_actor: float = 1e-3
    lr_critic: float = 1e-3
    t_max: int = 20
    total_steps: int = 4000  # T_max, counted in environment steps
    entropy_coeff: float = 0.01
    grad_clip: float | None = 40.0
    episode_len: int = 200
    reward_scale: float = 1.0


class StepCounter:
    """Shared step counter T (thread-safe)."""

    def __init__(self) -> None:
        self._value = 0
        self._lock = threading.Lock()

    def increment(self, by: int = 1) -> int:
        with self._lock:
            self._value += by
            return self._value

    @property
    def value(self) -> int:
        with self._lock:
            return self._value


class Worker:
    """A learning agent with a private environment replica.

    ``env_step(u)`` must advance the replica with raw action ``u`` and return
    ``(next_obs, reward, metrics)``; ``env_reset()`` returns the first observation.
    """

    def __init__(self, worker_id: int, env_reset: Callable, env_step: Callable, cfg: AgentConfig,
                 rng: np.random.Generator, free=None, on_slot: Callable | None = None):
        self.id = worker_id
        self.env_reset = env_reset
        self.env_step = env_step
        self.cfg = cfg
        self.rng = rng
        self.free = free
        self.on_slot = on_slot
        self.obs = env_reset()
        self.episode_slot = 0
        self.episode_reward = 0.0
        self.episode_costs: list[float] = []

    def rollout(self, actor: Params, counter: StepCounter | None = None) -> Trajectory:
        traj = Trajectory()
        for _ in range(self.cfg.t_max):
            logits, log_std = actor_logits(self.obs, actor)
            u, z, logp = sample_from_logits(logits, log_std, self.rng, free=self.free)
            next_obs, reward, metrics = self.env_step(u)
            if self.on_slot is not None:
                self.on_slot(self.id, len(self.episode_costs), self.episode_slot, metrics)
            traj.append(self.obs, z, logp, reward / self.cfg.reward_scale)
            self.episode_reward += reward
            self.episode_slot += 1
            if counter is not None:
                counter.increment()
            self.obs = next_obs
            if self.episode_slot >= self.cfg.episode_len:
                # time-limit truncation: bootstrap from the last observed state
                traj.next_state = next_obs
                self.episode_costs.append(-self.episode_reward)
                self.obs = self.env_reset()
                self.episode_slot = 0
                self.episode_reward = 0.0
                return traj
        traj.next_state = self.obs
        return traj

    def gradients(self, actor: Params, critic: Params, counter: StepCounter | None = None) -> GradAccum:
        traj = self.rollout(actor, counter)
        return accumulate_gradients(traj, actor, critic, self.cfg.discount, self.cfg.entropy_coeff, self.free)


@dataclass
class _Update:
    worker_id: int
    accum: GradAccum


@dataclass
class _Snapshot:
    reply: queue.Queue


@dataclass
class _Done:
    worker_id: int


class GlobalAgent:
    """Owns the canonical parameters; applies updates one at a time in arrival order."""

    def __init__(self, actor: Params, critic: Params, cfg: AgentConfig):
        self.actor = copy_params(actor)
        self.critic = copy_params(critic)
        self.cfg = cfg
        self.inbox: queue.Queue = queue.Queue()
        self.counter = StepCounter()
        self.updates_applied = 0
        self.update_log: list[int] = []  # worker id per applied update

    # worker-side handle
    def snapshot(self) -> tuple[Params, Params]:
        reply: queue.Queue = queue.Queue(maxsize=1)
        self.inbox.put(_Snapshot(reply))
        return reply.get()

    def submit(self, worker_id: int, accum: GradAccum) -> None:
        self.inbox.put(_Update(worker_id, accum))

    def done(self, worker_id: int) -> None:
        self.inbox.put(_Done(worker_id))

    def close(self) -> None:
        self.inbox.put(None)

    def apply(self, accum: GradAccum) -> None:
        self.actor, self.critic = apply_update(self.actor, self.critic, accum, self.cfg.lr_actor,
                                               self.cfg.lr_critic, self.cfg.grad_clip)
        self.updates_applied += 1


def global_loop(agent: GlobalAgent, n_workers: int) -> tuple[Params, Params]:
    """Serve snapshots and apply updates until every worker is done or the queue is closed."""
    active = n_workers
    while active > 0:
        msg = agent.inbox.get()
        if msg is None:
            break
        if isinstance(msg, _Snapshot):
            msg.reply.put((copy_params(agent.actor), copy_params(agent.critic)))
        elif isinstance(msg, _Update):
            agent.apply(msg.accum)
            agent.update_log.append(msg.worker_id)
        elif isinstance(msg, _Done):
            active -= 1
    return agent.actor, agent.critic


def worker_loop(worker: Worker, agent: GlobalAgent, errors: list | None = None) -> None:
    """Snapshot, roll out up to t_max steps, submit gradients; stop once T >= T_max."""
    try:
        while agent.counter.value < agent.cfg.total_steps:
            actor, critic = agent.snapshot()
            accum = worker.gradients(actor, critic, agent.counter)
            agent.submit(worker.id, accum)
    except Exception as exc:  # a failing replica must not take the others down
        log.exception("worker %d aborted", worker.id)
        if errors is not None:
            errors.append((worker.id, exc))
    finally:
        agent.done(worker.id)


def train_async(actor: Params, critic: Params, workers: list[Worker], cfg: AgentConfig):
    """Run K worker threads against one global agent; returns (actor, critic, agent, errors)."""
    agent = GlobalAgent(actor, critic, cfg)
    errors: list = []
    threads = [threading.Thread(target=worker_loop, args=(w, agent, errors), daemon=True) for w in workers]
    for th in threads:
        th.start()
    global_loop(agent, len(workers))
    for th in threads:
        th.join()
    return agent.actor, agent.critic, agent, errors


def train_sync(actor: Params, critic: Params, worker: Worker, cfg: AgentConfig):
    """Single-threaded reference: roll out, compute, apply, repeat."""
    actor, critic = copy_params(actor), copy_params(critic)
    counter = StepCounter()
    updates = 0
    while counter.value < cfg.total_steps:
        accum = worker.gradients(actor, critic, counter)
        actor, critic = apply_update(actor, critic, accum, cfg.lr_actor, cfg.lr_critic, cfg.grad_clip)
        updates += 1
    return actor, critic, updates
