import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from taskfft.cost import (
    CommCostParams,
    ComputeModel,
    PhaseEstimate,
    PhaseTimings,
    comm_cost,
    effective_lower_bound,
    phase_estimate,
    placement_cost,
    steal_cost,
    steal_worthwhile,
)

nonneg = st.floats(0, 1e3, allow_nan=False, allow_infinity=False)
pos = st.floats(1e-3, 1e12, allow_nan=False, allow_infinity=False)
frac = st.floats(0, 1)


def P(**kw):
    return CommCostParams(**kw)


def test_comm_cost_examples():
    assert comm_cost(P(alpha=2e-6, beta=1e-9), 4, 10**6) == pytest.approx(1.008e-3, rel=1e-12)
    assert comm_cost(P(), 0, 0) == 0
    assert comm_cost(P(alpha=0, beta=1), 9, 5) == 5


def test_lower_bound_examples():
    assert effective_lower_bound(PhaseTimings(1, 2, 3)) == 3
    assert effective_lower_bound(PhaseTimings(5, 5, 5)) == 5
    assert effective_lower_bound(PhaseTimings(0, 0, 0)) == 0


def test_placement_cost_examples():
    assert placement_cost(1e-3, P(), 0) == 1e-3
    assert placement_cost(0, P(latency=1e-6, bandwidth=1e9), 10**6) == pytest.approx(1.001e-3, rel=1e-12)
    assert placement_cost(2, P(latency=1, bandwidth=5.0), 5.0) == 4


def test_steal_cost_examples():
    p = P(latency=1e-3, bandwidth=1e9, steal_overhead=5e-4)
    assert steal_cost(p, 2e6) == pytest.approx(3.5e-3, rel=1e-12)
    assert steal_cost(P(latency=0, steal_overhead=0), 0) == 0
    assert steal_cost(P(latency=0, steal_overhead=7), 0) == 7


def test_steal_worthwhile_examples():
    p = P(latency=1e-3, bandwidth=1e9, steal_overhead=5e-4)
    assert steal_worthwhile(10e-3, p, 2e6)
    assert not steal_worthwhile(steal_cost(p, 2e6), p, 2e6)
    assert not steal_worthwhile(0, P(latency=0, steal_overhead=0), 0)


def test_phase_estimate_examples():
    assert phase_estimate(PhaseEstimate(4, 3, 10, 0.1, 1)) == 4
    assert phase_estimate(PhaseEstimate(4, 3, 10, 0.1, 0)) == 5
    assert phase_estimate(PhaseEstimate(0, 0, 6, 0.25, 0.5)) == 0.5 * 6 * 0.25


def test_param_validation():
    with pytest.raises(ValueError):
        P(alpha=-1)
    with pytest.raises(ValueError):
        P(bandwidth=0)
    with pytest.raises(ValueError):
        PhaseTimings(-1, 0, 0)
    with pytest.raises(ValueError):
        PhaseEstimate(0, 0, 1, 0, 1.5)
    with pytest.raises(ValueError):
        PhaseEstimate(0, 0, -1, 0, 0.5)


@settings(max_examples=1000)
@given(nonneg, nonneg, st.integers(0, 1000), st.integers(0, 1000), st.integers(0, 10**9), st.integers(0, 10**9))
def test_comm_cost_additive(alpha, beta, s1, s2, m1, m2):
    p = P(alpha=alpha, beta=beta)
    both = comm_cost(p, s1 + s2, m1 + m2)
    split = comm_cost(p, s1, m1) + comm_cost(p, s2, m2)
    assert both == pytest.approx(split, rel=1e-12, abs=1e-300)


@settings(max_examples=1000)
@given(nonneg, nonneg, st.floats(0, 1e3), nonneg, frac, st.floats(0, 10), st.floats(0, 10))
def test_phase_estimate_monotone(tc, tm, k, tau, rho, dk, dt):
    base = phase_estimate(PhaseEstimate(tc, tm, k, tau, rho))
    assert phase_estimate(PhaseEstimate(tc, tm, k + dk, tau, rho)) >= base
    assert phase_estimate(PhaseEstimate(tc, tm, k, tau + dt, rho)) >= base
    assert phase_estimate(PhaseEstimate(tc + dt, tm, k, tau, rho)) >= base
    assert phase_estimate(PhaseEstimate(tc, tm + dt, k, tau, rho)) >= base
    assert phase_estimate(PhaseEstimate(tc, tm, k, tau, min(1.0, rho + dt / 10))) <= base


@settings(max_examples=1000)
@given(nonneg, nonneg, st.floats(0, 1e9), pos, nonneg, st.floats(0, 1e3))
def test_steal_worthwhile_monotone(i_q, lat, v, bw, sigma, di):
    p = P(latency=lat, bandwidth=bw, steal_overhead=sigma)
    if steal_worthwhile(i_q, p, v):
        assert steal_worthwhile(i_q + di, p, v)
    assert steal_worthwhile(math.inf, p, v)


@settings(max_examples=1000)
@given(nonneg, nonneg, pos, st.floats(0, 1e9), st.floats(0, 1e9))
def test_steal_cost_monotone_in_bytes(lat, sigma, bw, v1, v2):
    p = P(latency=lat, bandwidth=bw, steal_overhead=sigma)
    lo, hi = sorted((v1, v2))
    assert steal_cost(p, lo) <= steal_cost(p, hi)


def test_compute_model_fit():
    m = ComputeModel()
    m.fit(2.0, 1000.0)
    assert m.coeff == 2e-3
    assert m.estimate(8, 10) == pytest.approx(2e-3 * 8 * 3 * 10)


@settings(max_examples=1000)
@given(nonneg, nonneg, st.integers(0, 1000), st.integers(0, 10**9), st.integers(0, 100), st.integers(0, 10**6))
def test_comm_cost_monotone(alpha, beta, s, m, ds, dm):
    p = P(alpha=alpha, beta=beta)
    base = comm_cost(p, s, m)
    assert comm_cost(p, s + ds, m) >= base
    assert comm_cost(p, s, m + dm) >= base
