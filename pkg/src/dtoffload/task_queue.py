"""Task arrivals, per-slot flow accounting and device/edge queue recursions.

All quantities are in bits. Buffers are unbounded.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ArrivalConfig


@dataclass(frozen=True)
class QueueState:
    local: np.ndarray  # (N,)
    edge: np.ndarray  # (M+1,)

    @classmethod
    def empty(cls, n_devices: int, n_stations: int) -> "QueueState":
        return cls(np.zeros(n_devices), np.zeros(n_stations))

    def total(self) -> float:
        return float(self.local.sum() + self.edge.sum())


@dataclass(frozen=True)
class SlotFlows:
    d_local: np.ndarray  # (N,)
    d_offload: np.ndarray  # (N, M+1)
    psi_device: np.ndarray  # (N,)
    psi_edge: np.ndarray  # (M+1,)
    arrivals: np.ndarray  # (N,)

    @classmethod
    def build(cls, d_local, d_offload, psi_edge, arrivals) -> "SlotFlows":
        d_local = np.asarray(d_local, dtype=float)
        d_offload = np.asarray(d_offload, dtype=float)
        return cls(d_local, d_offload, d_local + d_offload.sum(axis=1),
                   np.asarray(psi_edge, dtype=float), np.asarray(arrivals, dtype=float))

    def accomplished(self) -> float:
        return float(self.d_local.sum() + self.d_offload.sum())


def sample_arrivals(process: ArrivalConfig, n_devices: int, rng: np.random.Generator) -> np.ndarray:
    """Independent per-device arrivals with mean ``process.mean_rate`` bits.

    ``poisson`` draws a Poisson number of ``unit_bits``-sized tasks; ``uniform``
    draws an integer bit count from [0, 2*mean].
    """
    lam = process.mean_rate
    if lam == 0:
        return np.zeros(n_devices)
    if process.distribution == "poisson":
        unit = process.unit_bits
        return rng.poisson(lam / unit, size=n_devices) * unit
    if process.distribution == "uniform":
        return rng.integers(0, int(round(2 * lam)) + 1, size=n_devices).astype(float)
    raise ValueError(f"unknown arrival distribution {process.distribution!r}")


def arrival_cap(process: ArrivalConfig) -> float:
    """Upper bound on a single draw, used only for the drift audit (8 sigma for Poisson)."""
    lam = process.mean_rate
    if process.distribution == "uniform":
        return float(round(2 * lam))
    k = lam / process.unit_bits
    return (k + 8.0 * np.sqrt(k)) * process.unit_bits


def local_exec_amount(f_local_alloc, slot_len: float, cycles_per_bit: float, backlog=np.inf):
    """Bits executed locally: tau*f/c, never more than the backlog."""
    f = np.asarray(f_local_alloc, dtype=float)
    if np.any(f < 0):
        raise ValueError("local CPU allocation must be non-negative")
    return np.minimum(slot_len * f / cycles_per_bit, backlog)


def offload_amount(rate, slot_len: float, backlog=np.inf):
    """Bits transmitted in a slot: rate*tau, never more than what is left to send."""
    rate = np.asarray(rate, dtype=float)
    if np.any(rate < 0):
        raise ValueError("rate must be non-negative")
    return np.minimum(rate * slot_len, backlog)


def step_device_queue(q, psi, arrival):
    return np.maximum(np.asarray(q, dtype=float) - psi, 0.0) + arrival


def step_edge_queue(q, psi, inflow, f_edge=None, slot_len=None, cycles_per_bit=None, tol=1e-9):
    """Edge buffer update. If capacities are given the departure cap is enforced."""
    psi = np.asarray(psi, dtype=float)
    if f_edge is not None:
        cap = np.asarray(f_edge) * slot_len
        if np.any(psi * cycles_per_bit > cap * (1 + tol)):
            raise ValueError("edge departure exceeds edge CPU capacity (psi*c > f*tau)")
    if np.any(psi < 0):
        raise ValueError("edge departure must be non-negative")
    return np.maximum(np.asarray(q, dtype=float) - psi, 0.0) + inflow


@dataclass(frozen=True)
class StabilityReport:
    mean_local: float
    mean_edge: float
    slope: float
    slope_ci: tuple[float, float]


def stability_metric(local_history, edge_history, maxlags: int | None = None) -> StabilityReport:
    """Time-averaged backlogs and the second-half least-squares slope of total backlog.

    Histories are arrays of shape (T, N) and (T, M+1); 1-D arrays are taken as
    per-slot totals. Backlog traces are strongly autocorrelated, so the 95%
    interval on the slope uses Newey-West (HAC) standard errors.
    """
    import statsmodels.api as sm

    loc = np.asarray(local_history, dtype=float)
    edg = np.asarray(edge_history, dtype=float)
    if loc.shape[0] == 0:
        raise ValueError("empty queue history")
    loc_tot = loc.reshape(loc.shape[0], -1).sum(axis=1)
    edg_tot = edg.reshape(edg.shape[0], -1).sum(axis=1)
    total = loc_tot + edg_tot
    half = total[len(total) // 2:]
    if len(half) < 3:
        return StabilityReport(float(loc_tot.mean()), float(edg_tot.mean()), 0.0, (0.0, 0.0))
    t = np.arange(len(half), dtype=float)
    X = sm.add_constant(t)
    if np.ptp(half) == 0:
        return StabilityReport(float(loc_tot.mean()), float(edg_tot.mean()), 0.0, (0.0, 0.0))
    if maxlags is None:
        maxlags = max(1, int(np.ceil(len(half) ** 0.5)))
    fit = sm.OLS(half, X).fit(cov_type="HAC", cov_kwds={"maxlags": maxlags})
    slope = float(fit.params[1])
    lo, hi = fit.conf_int(alpha=0.05)[1]
    return StabilityReport(float(loc_tot.mean()), float(edg_tot.mean()), slope, (float(lo), float(hi)))
