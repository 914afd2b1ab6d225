"""Perturbed quadratic Lyapunov function, drift-plus-penalty objective and reward.

The per-slot objective to minimise is

    V * (E_tot - eta * bits)
    + sum_j Qe_j * (inflow_j - Psi_j)
    - sum_i (Ql_i - beta_i) * (Psi_i - lambda_i)

and the reward handed to the learner is its negation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .task_queue import QueueState, SlotFlows


@dataclass(frozen=True)
class DriftBounds:
    """Per-device / per-station upper bounds entering the drift constant C."""

    psi_device: np.ndarray  # (N,)
    arrivals: np.ndarray  # (N,)
    psi_edge: np.ndarray  # (M+1,)
    inflow_edge: np.ndarray  # (M+1,) bound on sum_i D_ij


def predict_perturbation(v_weight: float, ee_estimate: float, psi_max: float, n_devices: int) -> np.ndarray:
    """beta_i = V * eta' + Psi_max, identical for every device."""
    if v_weight < 0 or ee_estimate < 0 or psi_max < 0:
        raise ValueError("perturbation inputs must be non-negative")
    return np.full(n_devices, v_weight * ee_estimate + psi_max)


def lyapunov_value(queues: QueueState, beta) -> float:
    beta = np.asarray(beta, dtype=float)
    if beta.shape != queues.local.shape:
        raise ValueError(f"beta shape {beta.shape} != local queue shape {queues.local.shape}")
    return 0.5 * (float(np.sum((queues.local - beta) ** 2)) + float(np.sum(queues.edge ** 2)))


def drift_bound_constant(bounds: DriftBounds) -> float:
    return 0.5 * (float(np.sum(bounds.psi_device ** 2 + bounds.arrivals ** 2))
                  + float(np.sum(bounds.psi_edge ** 2 + bounds.inflow_edge ** 2)))


def objective_terms(flows: SlotFlows, total_energy: float, queues: QueueState, beta,
                    v_weight: float, eta: float) -> tuple[float, float, float]:
    """The three summands of the per-slot objective: (penalty, edge drift, local drift)."""
    penalty = v_weight * (total_energy - eta * flows.accomplished())
    inflow = flows.d_offload.sum(axis=0)
    edge = float(np.dot(queues.edge, inflow - flows.psi_edge))
    local = -float(np.dot(queues.local - np.asarray(beta), flows.psi_device - flows.arrivals))
    return penalty, edge, local


def p2_objective(flows: SlotFlows, total_energy: float, queues: QueueState, beta,
                 v_weight: float, eta: float) -> float:
    penalty, edge, local = objective_terms(flows, total_energy, queues, beta, v_weight, eta)
    return penalty + edge + local


def immediate_reward(objective: float, feasible: bool = True, penalty: float = -1e6) -> float:
    """Negated objective, or the constant penalty for an infeasible slot."""
    if not feasible:
        return float(penalty)
    return -float(objective)


def drift_plus_penalty_check(q_now: QueueState, q_next: QueueState, flows: SlotFlows, beta,
                             v_weight: float, slot_ee: float, c_const: float,
                             tol: float = 1e-9) -> tuple[float, float, bool]:
    """Sample-path drift bound audit; returns (lhs, rhs, holds)."""
    beta = np.asarray(beta, dtype=float)
    lhs = lyapunov_value(q_next, beta) - lyapunov_value(q_now, beta) + v_weight * slot_ee
    inflow = flows.d_offload.sum(axis=0)
    rhs = (c_const
           - float(np.dot(q_now.local - beta, flows.psi_device - flows.arrivals))
           - float(np.dot(q_now.edge, flows.psi_edge - inflow))
           + v_weight * slot_ee)
    scale = max(abs(lhs), abs(rhs), 1.0)
    return lhs, rhs, lhs <= rhs + tol * scale
