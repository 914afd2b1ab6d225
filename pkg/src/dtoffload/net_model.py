"""Network topology, digital-twin snapshots, association and uplink rates."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .config import ConfigError, NetConfig


@dataclass(frozen=True)
class DeviceTwin:
    id: int
    p_max: float
    location: np.ndarray
    f_local: float


@dataclass(frozen=True)
class StationTwin:
    id: int
    location: np.ndarray
    bandwidth: float
    f_edge: float
    coverage_radius: float  # np.inf for the macro cell


@dataclass(frozen=True)
class Topology:
    devices: tuple[DeviceTwin, ...]
    stations: tuple[StationTwin, ...]
    association: np.ndarray  # (N,) station index per device

    @property
    def n_devices(self) -> int:
        return len(self.devices)

    @property
    def n_stations(self) -> int:
        return len(self.stations)

    def device_xy(self) -> np.ndarray:
        return np.array([d.location for d in self.devices], dtype=float)

    def station_xy(self) -> np.ndarray:
        return np.array([s.location for s in self.stations], dtype=float)

    def p_max(self) -> np.ndarray:
        return np.array([d.p_max for d in self.devices])

    def f_local(self) -> np.ndarray:
        return np.array([d.f_local for d in self.devices])

    def bandwidth(self) -> np.ndarray:
        return np.array([s.bandwidth for s in self.stations])

    def f_edge(self) -> np.ndarray:
        return np.array([s.f_edge for s in self.stations])

    def assoc_mask(self) -> np.ndarray:
        """(N, M+1) boolean matrix, True where device i is served by station j."""
        mask = np.zeros((self.n_devices, self.n_stations), dtype=bool)
        mask[np.arange(self.n_devices), self.association] = True
        return mask


@dataclass(frozen=True)
class ChannelRealization:
    gains: np.ndarray  # (N, M+1), exponential(1)
    distances: np.ndarray  # (N, M+1), metres
    path_loss_exp: float
    noise_power: float

    def attenuation(self) -> np.ndarray:
        """h * r^-alpha for every device/station pair."""
        return self.gains * self.distances ** (-self.path_loss_exp)


def _sbs_positions(cfg: NetConfig, rng: np.random.Generator) -> np.ndarray:
    w, h = cfg.region
    center = np.array([w / 2.0, h / 2.0])
    m = cfg.n_sbs
    if m == 0:
        return np.zeros((0, 2))
    if cfg.sbs_layout == "explicit":
        return np.asarray(cfg.sbs_positions, dtype=float).reshape(m, 2)
    if cfg.sbs_layout == "random":
        return rng.uniform([0.0, 0.0], [w, h], size=(m, 2))
    angles = 2.0 * np.pi * np.arange(m) / m
    ring = center + cfg.ring_radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    return np.clip(ring, [0.0, 0.0], [w, h])


def build_topology(cfg: NetConfig, rng: np.random.Generator) -> Topology:
    """Place the macro cell at the region centre, small cells per layout, devices uniformly."""
    if int(cfg.n_devices) < 1:
        raise ConfigError("network.n_devices: must be >= 1")
    if int(cfg.n_sbs) < 0:
        raise ConfigError("network.n_sbs: must be >= 0")
    if len(cfg.region) != 2 or min(cfg.region) <= 0:
        raise ConfigError("network.region: both sides must be positive")
    w, h = cfg.region
    sbs_xy = _sbs_positions(cfg, rng)
    dev_xy = rng.uniform([0.0, 0.0], [w, h], size=(cfg.n_devices, 2))

    stations = [StationTwin(0, np.array([w / 2.0, h / 2.0]), cfg.bw_mbs, cfg.f_mbs, np.inf)]
    for j, xy in enumerate(sbs_xy, start=1):
        stations.append(StationTwin(j, xy, cfg.bw_sbs, cfg.f_sbs, cfg.sbs_radius))
    devices = [DeviceTwin(i, cfg.p_max, xy, cfg.f_local) for i, xy in enumerate(dev_xy)]
    return Topology(tuple(devices), tuple(stations), associate(devices, stations))


def associate(devices, stations) -> np.ndarray:
    """Nearest small cell whose coverage holds the device, else the macro cell.

    Ties between equidistant in-range cells go to the lowest station index.
    """
    dev_xy = np.array([d.location for d in devices], dtype=float).reshape(-1, 2)
    assoc = np.zeros(len(dev_xy), dtype=np.int64)
    if len(stations) <= 1:
        return assoc
    sbs_xy = np.array([s.location for s in stations[1:]], dtype=float)
    radii = np.array([s.coverage_radius for s in stations[1:]])
    dist = np.linalg.norm(dev_xy[:, None, :] - sbs_xy[None, :, :], axis=2)
    in_range = dist < radii[None, :]
    masked = np.where(in_range, dist, np.inf)
    # argmin returns the first minimum: lowest index on ties
    nearest = np.argmin(masked, axis=1)
    covered = in_range.any(axis=1)
    assoc[covered] = nearest[covered] + 1
    return assoc


def distances(topology: Topology, min_distance: float = 1.0) -> np.ndarray:
    d = np.linalg.norm(topology.device_xy()[:, None, :] - topology.station_xy()[None, :, :], axis=2)
    return np.maximum(d, min_distance)


def sample_channel(topology: Topology, rng: np.random.Generator, path_loss_exp: float = 3.0,
                   noise_power: float = 1e-14, min_distance: float = 1.0) -> ChannelRealization:
    """Rayleigh block fading: |h|^2 ~ Exp(1), independent per pair and slot."""
    shape = (topology.n_devices, topology.n_stations)
    gains = rng.exponential(1.0, size=shape)
    return ChannelRealization(gains, distances(topology, min_distance), path_loss_exp, noise_power)


def move_devices(topology: Topology, step: float, region, rng: np.random.Generator) -> Topology:
    """Bounded random walk with reflecting walls, followed by re-association."""
    if step <= 0:
        return topology
    w, h = region
    xy = topology.device_xy() + rng.uniform(-step, step, size=(topology.n_devices, 2))
    bounds = np.array([w, h])
    xy = np.abs(xy)
    xy = np.where(xy > bounds, 2 * bounds - xy, xy)
    devices = tuple(dataclasses.replace(d, location=xy[k]) for k, d in enumerate(topology.devices))
    return Topology(devices, topology.stations, associate(devices, topology.stations))


def interference(i: int, j: int, powers, channel: ChannelRealization, topology: Topology) -> float:
    """Co-channel interference received at small cell j on device i's uplink.

    Sums p_k * h_kj * r_kj^-alpha over devices k != i that are associated to a
    small cell other than j. Macro links see none (orthogonal spectrum).
    """
    if j == 0:
        return 0.0
    p = np.asarray(powers, dtype=float)
    assoc = topology.association
    others = (np.arange(topology.n_devices) != i) & (assoc >= 1) & (assoc != j)
    att = channel.attenuation()[:, j]
    return float(np.sum(p[others] * att[others]))


def interference_vector(powers, channel: ChannelRealization, topology: Topology) -> np.ndarray:
    """Interference on every device's associated link, shape (N,)."""
    p = np.asarray(powers, dtype=float)
    assoc = topology.association
    att = channel.attenuation()  # (N, M+1)
    on_sbs = assoc >= 1
    # rx[k, j]: power of small-cell device k received at station j
    rx = np.where(on_sbs[:, None], p[:, None] * att, 0.0)
    same = assoc[:, None] == assoc[None, :]  # k shares i's station (includes k == i)
    # interference at i = sum over k not on i's station of rx[k, a(i)]
    contrib = rx[:, assoc].T  # (i, k) -> rx[k, a(i)]
    interf = np.where(same, 0.0, contrib).sum(axis=1)
    return np.where(on_sbs, interf, 0.0)


def uplink_rate(bandwidth, power, gain, distance, path_loss_exp, noise_power, interference=0.0):
    """Shannon rate w * log2(1 + p h r^-alpha / (sigma^2 + I)) in bit/s."""
    snr = power * gain * np.power(distance, -path_loss_exp) / (noise_power + interference)
    return bandwidth * np.log2(1.0 + snr)


def link_rates(bandwidth_alloc, powers, channel: ChannelRealization, topology: Topology) -> np.ndarray:
    """Rate of each device on its associated link, shape (N,)."""
    rows = np.arange(topology.n_devices)
    assoc = topology.association
    interf = interference_vector(powers, channel, topology)
    w = np.asarray(bandwidth_alloc)[rows, assoc]
    return uplink_rate(w, np.asarray(powers, dtype=float), channel.gains[rows, assoc],
                       channel.distances[rows, assoc], channel.path_loss_exp,
                       channel.noise_power, interf)


def nominal_rates(channel: ChannelRealization, topology: Topology) -> np.ndarray:
    """Full-power, full-bandwidth, interference-free rate matrix, masked to associations.

    An upper bound on any achievable rate of the slot; used for the state and for
    the departure caps of the drift bound.
    """
    mask = topology.assoc_mask()
    w = np.broadcast_to(topology.bandwidth()[None, :], mask.shape)
    p = topology.p_max()[:, None]
    rates = uplink_rate(w, p, channel.gains, channel.distances, channel.path_loss_exp, channel.noise_power)
    return np.where(mask, rates, 0.0)
