from decimal import Decimal, getcontext

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dtoffload import net_model as nm
from dtoffload.config import ConfigError, NetConfig


def _topology(dev_xy, sbs_xy, radius=100.0):
    devices = [nm.DeviceTwin(i, 0.1, np.array(xy, float), 0.5e9) for i, xy in enumerate(dev_xy)]
    stations = [nm.StationTwin(0, np.array([500.0, 500.0]), 10e6, 50e9, np.inf)]
    stations += [nm.StationTwin(j + 1, np.array(xy, float), 5e6, 10e9, radius) for j, xy in enumerate(sbs_xy)]
    return nm.Topology(tuple(devices), tuple(stations), nm.associate(devices, stations))


def _channel(gains, dists, alpha=3.0, noise=1e-14):
    return nm.ChannelRealization(np.asarray(gains, float), np.asarray(dists, float), alpha, noise)


# -- topology -----------------------------------------------------------------

def test_reference_topology_has_twenty_devices_and_four_stations(rng):
    topo = nm.build_topology(NetConfig(n_devices=20, n_sbs=3), rng)
    assert topo.n_devices == 20
    assert topo.n_stations == 4
    assert topo.stations[0].coverage_radius == np.inf
    assert np.allclose(topo.stations[0].location, [500.0, 500.0])


def test_single_device_without_small_cells_uses_macro(rng):
    topo = nm.build_topology(NetConfig(n_devices=1, n_sbs=0), rng)
    assert topo.n_stations == 1
    assert topo.association.tolist() == [0]


def test_topology_is_deterministic_per_seed():
    a = nm.build_topology(NetConfig(), np.random.default_rng(7))
    b = nm.build_topology(NetConfig(), np.random.default_rng(7))
    assert np.array_equal(a.device_xy(), b.device_xy())
    assert np.array_equal(a.association, b.association)


@pytest.mark.parametrize("kwargs", [{"n_devices": 0}, {"region": (0.0, 100.0)}, {"region": (100.0, -1.0)}])
def test_invalid_network_rejected(kwargs, rng):
    with pytest.raises(ConfigError):
        nm.build_topology(NetConfig(**kwargs), rng)


def test_random_layout_places_cells_inside_region(rng):
    topo = nm.build_topology(NetConfig(n_sbs=6, sbs_layout="random"), rng)
    xy = topo.station_xy()
    assert np.all((xy >= 0) & (xy <= 1000))


# -- association --------------------------------------------------------------

def test_nearest_in_range_small_cell_wins():
    topo = _topology([(0, 0)], [(50, 0), (200, 0)])
    assert topo.association[0] == 1


def test_out_of_range_device_falls_back_to_macro():
    topo = _topology([(500, 500)], [(50, 0), (200, 0)])
    assert topo.association[0] == 0


def test_equidistant_tie_goes_to_lowest_index():
    topo = _topology([(0, 0)], [(50, 0), (-50, 0)])
    assert topo.association[0] == 1


def test_boundary_distance_is_out_of_range():
    # coverage requires strictly smaller distance than the radius
    topo = _topology([(0, 0)], [(100, 0)], radius=100.0)
    assert topo.association[0] == 0


@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 40), m=st.integers(0, 6),
       radius=st.floats(10.0, 600.0), layout=st.sampled_from(["ring", "random"]))
def test_association_is_feasible(seed, n, m, radius, layout):
    topo = nm.build_topology(NetConfig(n_devices=n, n_sbs=m, sbs_radius=radius, sbs_layout=layout),
                             np.random.default_rng(seed))
    d = np.linalg.norm(topo.device_xy()[:, None] - topo.station_xy()[None], axis=2)
    for i, j in enumerate(topo.association):
        if j >= 1:
            assert d[i, j] < radius
            # nearest among the in-range small cells
            in_range = [k for k in range(1, m + 1) if d[i, k] < radius]
            assert d[i, j] == min(d[i, k] for k in in_range)
        else:
            assert all(d[i, k] >= radius for k in range(1, m + 1))


def test_random_walk_stays_in_region_and_reassociates(rng):
    cfg = NetConfig(n_devices=30, mobility_step=200.0)
    topo = nm.build_topology(cfg, rng)
    for _ in range(50):
        topo = nm.move_devices(topo, cfg.mobility_step, cfg.region, rng)
        xy = topo.device_xy()
        assert np.all((xy >= 0) & (xy <= 1000))
        assert np.array_equal(topo.association, nm.associate(topo.devices, topo.stations))


def test_zero_step_keeps_devices_still(rng):
    topo = nm.build_topology(NetConfig(), rng)
    assert nm.move_devices(topo, 0.0, (1000, 1000), rng) is topo


# -- channel ------------------------------------------------------------------

def test_fading_gain_mean_is_one():
    topo = nm.build_topology(NetConfig(n_devices=250, n_sbs=3), np.random.default_rng(0))
    rng = np.random.default_rng(1)
    gains = np.concatenate([nm.sample_channel(topo, rng).gains.ravel() for _ in range(1000)])
    assert gains.size == 10**6
    assert abs(gains.mean() - 1.0) <= 0.01


def test_fading_gains_nonnegative_and_deterministic():
    topo = nm.build_topology(NetConfig(n_devices=25, n_sbs=3), np.random.default_rng(0))
    a = nm.sample_channel(topo, np.random.default_rng(5))
    b = nm.sample_channel(topo, np.random.default_rng(5))
    assert np.array_equal(a.gains, b.gains)
    big = np.concatenate([nm.sample_channel(topo, np.random.default_rng(s)).gains.ravel() for s in range(1000)])
    assert big.size == 10**5
    assert np.all(big >= 0)


def test_distances_are_floored():
    topo = _topology([(50, 0)], [(50, 0)])
    assert nm.distances(topo, min_distance=1.0)[0, 1] == 1.0


# -- interference -------------------------------------------------------------

def test_single_transmitter_sees_no_interference():
    topo = _topology([(0, 0)], [(50, 0)])
    ch = _channel(np.ones((1, 2)), np.full((1, 2), 100.0))
    assert nm.interference(0, 1, [0.1], ch, topo) == 0.0


def test_two_devices_on_different_cells():
    # device 0 on cell 1, device 1 on cell 2; device 1 is 100 m from cell 1 with h = 1
    topo = _topology([(0, 0), (300, 0)], [(50, 0), (300, 50)])
    assert topo.association.tolist() == [1, 2]
    ch = _channel(np.ones((2, 3)), np.full((2, 3), 100.0))
    assert nm.interference(0, 1, [0.1, 0.1], ch, topo) == pytest.approx(0.1 * 100.0 ** -3, rel=1e-15)
    assert nm.interference_vector([0.1, 0.1], ch, topo)[0] == pytest.approx(1.0e-7, rel=1e-15)


def test_same_cell_and_macro_devices_do_not_interfere():
    topo = _topology([(0, 0), (10, 0), (900, 900)], [(50, 0)])
    assert topo.association.tolist() == [1, 1, 0]
    ch = _channel(np.ones((3, 2)), np.full((3, 2), 100.0))
    assert np.all(nm.interference_vector([0.1] * 3, ch, topo) == 0.0)


def test_zero_power_means_zero_interference():
    topo = _topology([(0, 0), (300, 0)], [(50, 0), (300, 50)])
    ch = _channel(np.ones((2, 3)), np.full((2, 3), 100.0))
    assert nm.interference(0, 1, [0.0, 0.0], ch, topo) == 0.0


@given(seed=st.integers(0, 2**32 - 1))
def test_vector_interference_matches_per_link_sum(seed):
    rng = np.random.default_rng(seed)
    topo = nm.build_topology(NetConfig(n_devices=15, n_sbs=4, sbs_radius=300.0), rng)
    ch = nm.sample_channel(topo, rng)
    p = rng.uniform(0, 0.1, topo.n_devices)
    vec = nm.interference_vector(p, ch, topo)
    for i, j in enumerate(topo.association):
        assert vec[i] == pytest.approx(nm.interference(i, int(j), p, ch, topo), rel=1e-12, abs=0.0)


# -- rates --------------------------------------------------------------------

def test_zero_power_gives_zero_rate():
    assert nm.uplink_rate(5e6, 0.0, 1.0, 100.0, 3.0, 1e-14) == 0.0


def test_reference_rate_against_high_precision_evaluation():
    getcontext().prec = 50
    snr = Decimal("0.1") * Decimal(100) ** -3 / Decimal("1e-14")
    expected = Decimal(5_000_000) * (1 + snr).ln() / Decimal(2).ln()
    got = nm.uplink_rate(5e6, 0.1, 1.0, 100.0, 3.0, 1e-14)
    assert got == pytest.approx(float(expected), rel=1e-13)
    assert got == pytest.approx(1.1627e8, rel=1e-4)


def test_rate_is_linear_in_bandwidth():
    r1 = nm.uplink_rate(5e6, 0.1, 1.0, 100.0, 3.0, 1e-14)
    assert nm.uplink_rate(10e6, 0.1, 1.0, 100.0, 3.0, 1e-14) == 2 * r1



@given(w=st.floats(0, 1e7), p=st.floats(0, 0.1), dp=st.floats(0, 0.1), h=st.floats(0, 10),
       r=st.floats(1, 1000), interf=st.floats(0, 1e-9))
def test_rate_monotone_in_power_and_bandwidth(w, p, dp, h, r, interf):
    base = nm.uplink_rate(w, p, h, r, 3.0, 1e-14, interf)
    assert nm.uplink_rate(w, p + dp, h, r, 3.0, 1e-14, interf) >= base
    assert nm.uplink_rate(w * 1.5, p, h, r, 3.0, 1e-14, interf) >= base


@given(w=st.floats(0, 1e7), p=st.floats(0, 0.1), h=st.floats(0, 10), r=st.floats(1, 1000),
       dr=st.floats(0, 1000), interf=st.floats(0, 1e-9), di=st.floats(0, 1e-9))
def test_rate_antitone_in_interference_and_distance(w, p, h, r, dr, interf, di):
    base = nm.uplink_rate(w, p, h, r, 3.0, 1e-14, interf)
    assert nm.uplink_rate(w, p, h, r, 3.0, 1e-14, interf + di) <= base
    assert nm.uplink_rate(w, p, h, r + dr, 3.0, 1e-14, interf) <= base


@given(seed=st.integers(0, 2**32 - 1))
def test_macro_link_rate_is_interference_free_formula(seed):
    rng = np.random.default_rng(seed)
    topo = nm.build_topology(NetConfig(n_devices=12, n_sbs=3), rng)
    ch = nm.sample_channel(topo, rng)
    p = rng.uniform(0, 0.1, topo.n_devices)
    bw = rng.uniform(0, 1e6, (topo.n_devices, topo.n_stations))
    rates = nm.link_rates(bw, p, ch, topo)
    for i in np.flatnonzero(topo.association == 0):
        ref = nm.uplink_rate(bw[i, 0], p[i], ch.gains[i, 0], ch.distances[i, 0], 3.0, 1e-14, 0.0)
        assert rates[i] == pytest.approx(ref, rel=1e-12, abs=0.0)


def test_nominal_rates_masked_to_association(rng):
    topo = nm.build_topology(NetConfig(sbs_radius=300.0), rng)
    ch = nm.sample_channel(topo, rng)
    nom = nm.nominal_rates(ch, topo)
    mask = topo.assoc_mask()
    assert np.all(nom[~mask] == 0)
    assert np.all(nom[mask] > 0)
    # nominal rate bounds any achievable rate on the link
    rates = nm.link_rates(nom * 0 + topo.bandwidth()[None, :], topo.p_max(), ch, topo)
    assert np.all(rates <= nom[mask] * (1 + 1e-12))
