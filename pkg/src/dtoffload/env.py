"""Slotted MDP environment: state construction, feasible-action projection and the slot step.

Raw action layout (length N + N + (M+1) + 2*N*(M+1), every entry in [0, 1]):

    [ power (N) | local CPU (N) | edge departure (M+1) | bandwidth (N*(M+1)) | edge CPU (N*(M+1)) ]

State layout (see :func:`state_schema`):

    [ rates (N*(M+1)) | capacities F (N+M+1) | p_max (N) | bandwidth w (M+1) | queues (N+M+1) ]
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import energy as en
from . import lyapunov as ly
from . import net_model as nm
from . import task_queue as tq
from .config import SimConfig


@dataclass(frozen=True)
class Action:
    bandwidth: np.ndarray  # (N, M+1) Hz
    power: np.ndarray  # (N,) W
    psi_edge: np.ndarray  # (M+1,) bits
    f_local: np.ndarray  # (N,) cycles/s
    f_edge: np.ndarray  # (N, M+1) cycles/s


@dataclass(frozen=True)
class StateVector:
    rates: np.ndarray  # (N, M+1)
    capacities: np.ndarray  # (N+M+1,)
    p_max: np.ndarray  # (N,)
    bandwidth: np.ndarray  # (M+1,)
    queues: np.ndarray  # (N+M+1,)

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.rates.ravel(), self.capacities, self.p_max,
                               self.bandwidth, self.queues])

    @classmethod
    def unflatten(cls, vec, n_devices: int, n_stations: int) -> "StateVector":
        n, s = n_devices, n_stations
        sizes = [n * s, n + s, n, s, n + s]
        if len(vec) != sum(sizes):
            raise ValueError(f"state length {len(vec)} != {sum(sizes)} for N={n}, M+1={s}")
        parts = np.split(np.asarray(vec, dtype=float), np.cumsum(sizes)[:-1])
        return cls(parts[0].reshape(n, s), parts[1], parts[2], parts[3], parts[4])


def action_dim(n_devices: int, n_stations: int) -> int:
    return 2 * n_devices + n_stations + 2 * n_devices * n_stations


def state_dim(n_devices: int, n_stations: int) -> int:
    return n_devices * n_stations + 2 * (n_devices + n_stations) + n_devices + n_stations


def action_slices(n_devices: int, n_stations: int) -> dict[str, slice]:
    n, s = n_devices, n_stations
    edges = np.cumsum([0, n, n, s, n * s, n * s])
    names = ["power", "f_local", "psi_edge", "bandwidth", "f_edge"]
    return {k: slice(int(edges[i]), int(edges[i + 1])) for i, k in enumerate(names)}


def state_schema(n_devices: int, n_stations: int) -> dict:
    """Block order, offsets and units of the flattened state (written next to rollouts)."""
    n, s = n_devices, n_stations
    blocks = [("rates", [n, s], "bit/s"), ("capacities", [n + s], "cycles/s"),
              ("p_max", [n], "W"), ("bandwidth", [s], "Hz"), ("queues", [n + s], "bits")]
    out, off = [], 0
    for name, shape, unit in blocks:
        size = int(np.prod(shape))
        out.append({"name": name, "shape": shape, "offset": off, "size": size, "unit": unit})
        off += size
    return {"version": 1, "n_devices": n, "n_stations": s, "dim": off, "blocks": out,
            "notes": "rates are full-power/full-bandwidth nominal rates, zero off the association"}


def write_state_schema(path, n_devices: int, n_stations: int) -> None:
    with open(path, "w") as fh:
        json.dump(state_schema(n_devices, n_stations), fh, indent=2)


# ---------------------------------------------------------------------------
# projection and feasibility

def _shares(raw: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Column-wise shares of associated devices; normalised only when oversubscribed."""
    w = np.where(mask, raw, 0.0)
    tot = w.sum(axis=0)
    scale = np.where(tot > 1.0, 1.0 / np.where(tot > 0, tot, 1.0), 1.0)
    return w * scale[None, :]


def project_action(u, topology: nm.Topology, edge_backlog, slot_len: float,
                   cycles_per_bit: float) -> Action:
    """Map a raw vector in [0,1]^A to an allocation meeting every per-slot constraint."""
    n, s = topology.n_devices, topology.n_stations
    u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
    if u.shape != (action_dim(n, s),):
        raise ValueError(f"raw action has shape {u.shape}, expected ({action_dim(n, s)},)")
    sl = action_slices(n, s)
    mask = topology.assoc_mask()
    f_edge_cap = topology.f_edge()
    power = u[sl["power"]] * topology.p_max()
    f_local = u[sl["f_local"]] * topology.f_local()
    psi = np.minimum(u[sl["psi_edge"]] * (f_edge_cap * slot_len / cycles_per_bit),
                     np.asarray(edge_backlog, dtype=float))
    bw = _shares(u[sl["bandwidth"]].reshape(n, s), mask) * topology.bandwidth()[None, :]
    fe = _shares(u[sl["f_edge"]].reshape(n, s), mask) * f_edge_cap[None, :]
    return Action(bw, power, psi, f_local, fe)


def constraint_violations(action: Action, topology: nm.Topology, slot_len: float,
                          cycles_per_bit: float, tol: float = 1e-9) -> list[str]:
    """Names of violated constraints (bandwidth, power, local CPU, edge CPU, departure, mask)."""
    bad = []
    mask = topology.assoc_mask()
    w_cap = topology.bandwidth()
    f_cap = topology.f_edge()
    if np.any(action.bandwidth < 0) or np.any(action.bandwidth.sum(axis=0) / w_cap > 1 + tol):
        bad.append("bandwidth")
    if np.any(action.power < 0) or np.any(action.power > topology.p_max() * (1 + tol)):
        bad.append("power")
    if np.any(action.f_local < 0) or np.any(action.f_local > topology.f_local() * (1 + tol)):
        bad.append("local_cpu")
    if np.any(action.f_edge < 0) or np.any(action.f_edge.sum(axis=0) > f_cap * (1 + tol)):
        bad.append("edge_cpu")
    if np.any(action.psi_edge < 0) or np.any(action.psi_edge * cycles_per_bit > f_cap * slot_len * (1 + tol)):
        bad.append("edge_departure")
    if np.any(action.bandwidth[~mask] != 0) or np.any(action.f_edge[~mask] != 0):
        bad.append("association")
    return bad


def zero_action(n_devices: int, n_stations: int) -> Action:
    n, s = n_devices, n_stations
    return Action(np.zeros((n, s)), np.zeros(n), np.zeros(s), np.zeros(n), np.zeros((n, s)))


# ---------------------------------------------------------------------------
# slot evaluation

@dataclass(frozen=True)
class SlotOutcome:
    rates: np.ndarray  # (N,) on the associated link
    flows: tq.SlotFlows
    energy: en.SlotEnergy
    objective: float
    beta: np.ndarray
    eta: float


@dataclass(frozen=True)
class SlotMetrics:
    slot: int
    rates: np.ndarray
    flows: tq.SlotFlows
    energy: en.SlotEnergy
    bits: float
    slot_ee: float
    ee_flag: bool
    objective: float
    reward: float
    feasible: bool
    beta: np.ndarray
    drift_const: float
    lhs: float
    rhs: float
    queues_before: tq.QueueState
    queues_after: tq.QueueState

    def row(self) -> dict:
        return {
            "slot": self.slot,
            "E_local": float(self.energy.local.sum()),
            "E_edge": float(self.energy.edge.sum()),
            "E_total": self.energy.total,
            "eta_ee": self.slot_ee,
            "ee_flag": int(self.ee_flag),
            "bits": self.bits,
            "objective": self.objective,
            "reward": self.reward,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "Q_local": float(self.queues_after.local.sum()),
            "Q_edge": float(self.queues_after.edge.sum()),
        }


def compute_flows(action: Action, rates, queues: tq.QueueState, arrivals, assoc,
                  slot_len: float, cycles_per_bit: float) -> tq.SlotFlows:
    """Local service first, then offload, both capped by the device backlog.

    A device with no edge CPU reserved at its station cannot offload this slot.
    """
    n = len(queues.local)
    rows = np.arange(n)
    d_local = tq.local_exec_amount(action.f_local, slot_len, cycles_per_bit, queues.local)
    remaining = queues.local - d_local
    sendable = np.where(action.f_edge[rows, assoc] > 0, rates, 0.0)
    d_off = tq.offload_amount(sendable, slot_len, remaining)
    d_offload = np.zeros((n, len(queues.edge)))
    d_offload[rows, assoc] = d_off
    psi_edge = np.minimum(action.psi_edge, queues.edge)
    return tq.SlotFlows.build(d_local, d_offload, psi_edge, arrivals)


class OffloadEnv:
    """One digital-twin replica of the network: topology, channel, queues, EE tracker.

    The topology is drawn once from ``topology_seed`` (default: ``seed``), so replicas
    with different ``seed`` share one network. :meth:`reset` clears queues and the
    tracker and redraws the channel and arrivals from the replica's own stream.
    """

    def __init__(self, config: SimConfig, seed: int = 0, topology_seed: int | None = None):
        self.cfg = config
        self.seed = seed
        topo_rng = np.random.default_rng(seed if topology_seed is None else topology_seed)
        self.initial_topology = nm.build_topology(config.network, topo_rng)
        self.rng = np.random.default_rng(seed)
        self.n = self.initial_topology.n_devices
        self.s = self.initial_topology.n_stations
        lam = config.arrivals.mean_rate
        self.queue_scale = max(10.0 * lam, 1.0)
        self.reset()

    # -- bookkeeping -------------------------------------------------------
    @property
    def action_dim(self) -> int:
        return action_dim(self.n, self.s)

    @property
    def state_dim(self) -> int:
        return state_dim(self.n, self.s)

    def _sample_channel(self) -> nm.ChannelRealization:
        net = self.cfg.network
        return nm.sample_channel(self.topology, self.rng, net.path_loss_exp, net.noise_power,
                                 net.min_distance)

    def reset(self, seed: int | None = None) -> np.ndarray:
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        self.topology = self.initial_topology
        self.t = 0
        self.queues = tq.QueueState.empty(self.n, self.s)
        self.tracker = en.EnergyTracker()
        self.channel = self._sample_channel()
        self.arrivals = tq.sample_arrivals(self.cfg.arrivals, self.n, self.rng)
        self._refresh_slot()
        return self.observe()

    def _refresh_slot(self) -> None:
        """Slot-start twin prediction: nominal rates, departure caps and beta."""
        e = self.cfg.energy
        self.nominal = nm.nominal_rates(self.channel, self.topology)
        rows = np.arange(self.n)
        nominal_link = self.nominal[rows, self.topology.association]
        self.psi_device_cap = (e.slot_len * self.topology.f_local() / e.cycles_per_bit
                               + nominal_link * e.slot_len)
        self.psi_max = float(self.psi_device_cap.max())
        self.beta = ly.predict_perturbation(self.cfg.lyapunov.v_weight, self.tracker.ee_estimate,
                                            self.psi_max, self.n)

    def drift_bounds(self) -> ly.DriftBounds:
        e = self.cfg.energy
        rows = np.arange(self.n)
        nominal_link = self.nominal[rows, self.topology.association]
        inflow = np.bincount(self.topology.association, weights=nominal_link * e.slot_len,
                             minlength=self.s)
        return ly.DriftBounds(
            psi_device=self.psi_device_cap,
            arrivals=np.full(self.n, tq.arrival_cap(self.cfg.arrivals)),
            psi_edge=self.topology.f_edge() * e.slot_len / e.cycles_per_bit,
            inflow_edge=inflow,
        )

    def state(self) -> StateVector:
        return build_state(self.topology, self.nominal, self.queues)

    def observe(self) -> np.ndarray:
        """Normalised flat state fed to the networks."""
        return normalize_state(self.state(), self.topology, self.queue_scale)

    # -- actions -----------------------------------------------------------
    def project(self, u) -> Action:
        e = self.cfg.energy
        return project_action(u, self.topology, self.queues.edge, e.slot_len, e.cycles_per_bit)

    def violations(self, action: Action) -> list[str]:
        e = self.cfg.energy
        # departures beyond the edge backlog are truncated in compute_flows, not rejected
        return constraint_violations(action, self.topology, e.slot_len, e.cycles_per_bit)

    def evaluate(self, action: Action) -> SlotOutcome:
        """Outcome of ``action`` in the current slot without advancing the world."""
        e = self.cfg.energy
        rates = nm.link_rates(action.bandwidth, action.power, self.channel, self.topology)
        flows = compute_flows(action, rates, self.queues, self.arrivals, self.topology.association,
                              e.slot_len, e.cycles_per_bit)
        energy = en.total_energy(flows.d_offload, action.f_local, action.power, action.f_edge,
                                 self.topology.assoc_mask(), e)
        eta = self.tracker.ee_estimate
        obj = ly.p2_objective(flows, energy.total, self.queues, self.beta,
                              self.cfg.lyapunov.v_weight, eta)
        return SlotOutcome(rates, flows, energy, obj, self.beta, eta)

    def step(self, action: Action) -> tuple[np.ndarray, float, SlotMetrics]:
        bad = self.violations(action)
        if bad:
            raise ValueError(f"infeasible action, violated: {', '.join(bad)}")
        lyc = self.cfg.lyapunov
        out = self.evaluate(action)
        flows = out.flows
        q_now = self.queues
        local_next = tq.step_device_queue(q_now.local, flows.psi_device, flows.arrivals)
        edge_next = tq.step_edge_queue(q_now.edge, flows.psi_edge, flows.d_offload.sum(axis=0))
        q_next = tq.QueueState(local_next, edge_next)

        bits = flows.accomplished()
        ee, flag = en.slot_ee(out.energy.total, bits)
        reward = ly.immediate_reward(out.objective, True, lyc.penalty)
        c_const = ly.drift_bound_constant(self.drift_bounds())
        lhs, rhs, _ = ly.drift_plus_penalty_check(q_now, q_next, flows, self.beta, lyc.v_weight,
                                                  ee, c_const)
        metrics = SlotMetrics(self.t, out.rates, flows, out.energy, bits, ee, flag, out.objective,
                              reward, True, self.beta, c_const, lhs, rhs, q_now, q_next)

        # advance the world
        self.queues = q_next
        self.tracker.update(out.energy.total, bits)
        self.t += 1
        net = self.cfg.network
        self.topology = nm.move_devices(self.topology, net.mobility_step, net.region, self.rng)
        self.arrivals = tq.sample_arrivals(self.cfg.arrivals, self.n, self.rng)
        self.channel = self._sample_channel()
        self._refresh_slot()
        return self.observe(), reward, metrics


def build_state(topology: nm.Topology, nominal_rates, queues: tq.QueueState) -> StateVector:
    if nominal_rates.shape != (topology.n_devices, topology.n_stations):
        raise ValueError("rate matrix does not match topology dimensions")
    if queues.local.shape != (topology.n_devices,) or queues.edge.shape != (topology.n_stations,):
        raise ValueError("queue state does not match topology dimensions")
    rates = np.where(topology.assoc_mask(), nominal_rates, 0.0)
    caps = np.concatenate([topology.f_local(), topology.f_edge()])
    return StateVector(rates, caps, topology.p_max(), topology.bandwidth(),
                       np.concatenate([queues.local, queues.edge]))


def normalize_state(state: StateVector, topology: nm.Topology, queue_scale: float) -> np.ndarray:
    """Divide each block by a fixed scale so features are O(1).

    Rates are divided by 10x the station bandwidth (spectral efficiency / 10).
    """
    bw = topology.bandwidth()
    caps = np.concatenate([topology.f_local(), topology.f_edge()])
    return np.concatenate([
        (state.rates / (10.0 * bw[None, :])).ravel(),
        state.capacities / caps,
        state.p_max / topology.p_max(),
        state.bandwidth / bw,
        state.queues / queue_scale,
    ])
