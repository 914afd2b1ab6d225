import numpy as np
import pytest
from hypothesis import given, strategies as st

from dtoffload import task_queue as tq
from dtoffload.config import ArrivalConfig

nonneg = st.floats(0, 1e9)


# -- arrivals -----------------------------------------------------------------

def test_zero_rate_gives_no_arrivals(rng):
    assert np.all(tq.sample_arrivals(ArrivalConfig(mean_rate=0.0), 10, rng) == 0)


@pytest.mark.parametrize("dist", ["poisson", "uniform"])
def test_arrival_mean(dist):
    draws = tq.sample_arrivals(ArrivalConfig(mean_rate=1e6, distribution=dist), 10**5,
                               np.random.default_rng(3))
    assert abs(draws.mean() - 1e6) <= 0.01 * 1e6
    assert np.all(draws >= 0)
    assert np.array_equal(draws, np.round(draws))


def test_arrivals_deterministic():
    proc = ArrivalConfig()
    a = tq.sample_arrivals(proc, 20, np.random.default_rng(9))
    b = tq.sample_arrivals(proc, 20, np.random.default_rng(9))
    assert np.array_equal(a, b)


def test_poisson_cap_is_eight_sigma():
    proc = ArrivalConfig(mean_rate=1e6, unit_bits=1e4)
    assert tq.arrival_cap(proc) == pytest.approx((100 + 8 * 10) * 1e4)
    assert tq.arrival_cap(ArrivalConfig(mean_rate=1e6, distribution="uniform")) == 2e6


# -- flows ---------------------------------------------------------------------

def test_local_execution_amount():
    assert tq.local_exec_amount(0.5e9, 0.1, 100) == pytest.approx(5e5, rel=1e-15)
    assert tq.local_exec_amount(0.0, 0.1, 100) == 0
    assert tq.local_exec_amount(0.5e9, 0.1, 100, backlog=100.0) == 100.0
    with pytest.raises(ValueError):
        tq.local_exec_amount(-1.0, 0.1, 100)


def test_offload_amount():
    assert tq.offload_amount(1.1627e8, 0.1) == pytest.approx(1.1627e7, rel=1e-15)
    assert tq.offload_amount(0.0, 0.1) == 0
    assert tq.offload_amount(1e8, 0.1, backlog=1e3) == 1e3
    with pytest.raises(ValueError):
        tq.offload_amount(-1.0, 0.1)


# -- queue updates -------------------------------------------------------------

@pytest.mark.parametrize("q,psi,lam,out", [(10, 15, 3, 3), (10, 4, 0, 6), (0, 0, 7, 7)])
def test_device_queue_examples(q, psi, lam, out):
    assert tq.step_device_queue(q, psi, lam) == out


@pytest.mark.parametrize("q,psi,inflow,out", [(5, 2, 1, 4), (0, 9, 0, 0)])
def test_edge_queue_examples(q, psi, inflow, out):
    assert tq.step_edge_queue(q, psi, inflow) == out


def test_edge_departure_above_cpu_capacity_rejected():
    # 10 GHz for 0.1 s at 100 cycles/bit clears at most 1e7 bits
    assert tq.step_edge_queue(2e7, 1e7, 0, f_edge=10e9, slot_len=0.1, cycles_per_bit=100) == 1e7
    with pytest.raises(ValueError):
        tq.step_edge_queue(2e7, 1.1e7, 0, f_edge=10e9, slot_len=0.1, cycles_per_bit=100)


def _device_oracle(q, psi, lam):
    out = []
    for a, b, c in zip(q, psi, lam):
        left = a - b
        if left < 0:
            left = 0.0
        out.append(left + c)
    return out


def test_queue_recursions_bit_exact_against_loop_oracle():
    rng = np.random.default_rng(11)
    n, s = 7, 3
    ql, qe = np.zeros(n), np.zeros(s)
    ql_ref, qe_ref = [0.0] * n, [0.0] * s
    for _ in range(1000):
        psi = rng.uniform(0, 3e6, n)
        lam = rng.poisson(100, n) * 1e4
        psi_e = rng.uniform(0, 3e6, s)
        inflow = rng.uniform(0, 2e6, s)
        ql = tq.step_device_queue(ql, psi, lam)
        qe = tq.step_edge_queue(qe, psi_e, inflow)
        ql_ref = _device_oracle(ql_ref, psi.tolist(), lam.tolist())
        qe_ref = _device_oracle(qe_ref, psi_e.tolist(), inflow.tolist())
        assert ql.tolist() == ql_ref
        assert qe.tolist() == qe_ref


@given(q=nonneg, psi=nonneg, lam=nonneg)
def test_updates_preserve_nonnegativity(q, psi, lam):
    assert tq.step_device_queue(q, psi, lam) >= 0
    assert tq.step_edge_queue(q, psi, lam) >= 0


@given(q=nonneg, f=st.floats(0, 1e9), rate=st.floats(0, 1e9))
def test_served_work_never_exceeds_backlog(q, f, rate):
    d_local = tq.local_exec_amount(f, 0.1, 100, q)
    d_off = tq.offload_amount(rate, 0.1, q - d_local)
    assert d_local >= 0 and d_off >= 0
    assert d_local + d_off <= q * (1 + 1e-15)


def test_slot_flows_sum_exactly():
    f = tq.SlotFlows.build([1.5, 2.0], [[0, 3.25], [0.5, 0]], [1.0, 2.0], [4.0, 4.0])
    assert f.psi_device.tolist() == [4.75, 2.5]
    assert f.accomplished() == 7.25


# -- stability -----------------------------------------------------------------

def test_constant_queue_has_zero_slope():
    rep = tq.stability_metric(np.full((40, 2), 2.5), np.zeros((40, 1)))
    assert rep.mean_local == 5.0
    assert rep.mean_edge == 0.0
    assert rep.slope == 0.0


def test_linear_growth_has_unit_slope():
    t = np.arange(100, dtype=float)
    rep = tq.stability_metric(t, np.zeros(100))
    assert rep.slope == pytest.approx(1.0, rel=1e-12)
    assert rep.mean_local == pytest.approx(49.5)


def test_empty_history_rejected():
    with pytest.raises(ValueError):
        tq.stability_metric(np.zeros((0, 3)), np.zeros((0, 2)))


def test_stable_toy_queue_slope_ci_contains_zero():
    # deterministic service of 1.0 per slot, Poisson(0.8) arrivals: utilisation 0.8
    rng = np.random.default_rng(5)
    q, trace = 0.0, []
    for _ in range(20_000):
        q = max(q - 1.0, 0.0) + rng.poisson(0.8)
        trace.append(q)
    rep = tq.stability_metric(np.array(trace), np.zeros(len(trace)))
    lo, hi = rep.slope_ci
    assert lo <= 0.0 <= hi
    assert abs(rep.slope) < 1e-3


def test_growing_queue_is_flagged():
    rng = np.random.default_rng(5)
    q, trace = 0.0, []
    for _ in range(5000):
        q = max(q - 1.0, 0.0) + rng.poisson(1.2)
        trace.append(q)
    lo, _ = tq.stability_metric(np.array(trace), np.zeros(len(trace))).slope_ci
    assert lo > 0
