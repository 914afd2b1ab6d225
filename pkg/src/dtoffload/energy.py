"""Local/edge energy, total slot energy and the energy-efficiency ratio (J/bit)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import EnergyConfig


@dataclass(frozen=True)
class SlotEnergy:
    local: np.ndarray  # (N,)
    edge: np.ndarray  # (N, M+1)
    total: float


def local_energy(f_alloc, cfg: EnergyConfig):
    """Cubic CPU model: switched_cap * tau * f^3."""
    f = np.asarray(f_alloc, dtype=float)
    return cfg.switched_cap * cfg.slot_len * f ** 3


def edge_energy(p, d_offload, f_edge_alloc, cfg: EnergyConfig):
    """Uplink energy p*tau plus edge execution time d*c/f times the edge power coefficient.

    Raises if bits are offloaded to a zero edge-CPU share (execution time undefined).
    """
    p = np.asarray(p, dtype=float)
    d = np.asarray(d_offload, dtype=float)
    f = np.asarray(f_edge_alloc, dtype=float)
    if np.any((d > 0) & (f <= 0)):
        raise ValueError("offloaded bits with zero edge CPU allocation")
    with np.errstate(divide="ignore", invalid="ignore"):
        exec_time = np.where(d > 0, d * cfg.cycles_per_bit / np.where(f > 0, f, 1.0), 0.0)
    return p * cfg.slot_len + exec_time * cfg.edge_energy_coeff


def total_energy(d_offload, f_local, power, f_edge, assoc_mask, cfg: EnergyConfig) -> SlotEnergy:
    """Energy of one slot. Edge terms only exist on associated (device, station) links."""
    e_local = local_energy(f_local, cfg)
    mask = np.asarray(assoc_mask, dtype=bool)
    p = np.where(mask, np.asarray(power, dtype=float)[:, None], 0.0)
    d = np.where(mask, d_offload, 0.0)
    f = np.where(mask, f_edge, 0.0)
    e_edge = np.where(mask, edge_energy(p, d, f, cfg), 0.0)
    return SlotEnergy(e_local, e_edge, float(e_local.sum() + e_edge.sum()))


def slot_ee(total: float, bits: float) -> tuple[float, bool]:
    """Per-slot J/bit. A zero-throughput slot returns (0.0, True)."""
    if bits <= 0:
        return 0.0, True
    return total / bits, False


@dataclass
class EnergyTracker:
    """Running long-term efficiency: ratio of cumulative energy to cumulative bits."""

    cum_energy: float = 0.0
    cum_bits: float = 0.0
    ee_estimate: float = 0.0
    flagged_slots: int = 0

    def update(self, energy: float, bits: float) -> "EnergyTracker":
        # energy spent in a zero-throughput slot still counts; the slot is flagged
        self.cum_energy += energy
        if bits <= 0:
            self.flagged_slots += 1
        else:
            self.cum_bits += bits
        if self.cum_bits > 0:
            self.ee_estimate = self.cum_energy / self.cum_bits
        return self

    def copy(self) -> "EnergyTracker":
        return EnergyTracker(self.cum_energy, self.cum_bits, self.ee_estimate, self.flagged_slots)


def update_tracker(tracker: EnergyTracker, energy: float, bits: float) -> EnergyTracker:
    return tracker.copy().update(energy, bits)
