import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flowcache.cache import (ABMode, CacheKind, CachePolicy, CacheState, ab_binomial_weights,
                             forecast_ab, forecast_taylor, memory_footprint, refresh, schedule,
                             taylor_coefficients)
from flowcache.errors import CacheUsageError, DomainError


def filled(policy, fn, steps):
    cs = CacheState(policy)
    for s in steps:
        cs.refresh(fn(s), s)
    return cs


class TestSchedule:
    @pytest.mark.parametrize("D,count", [(2, 51), (3, 34), (4, 26)])
    def test_counts_for_hundred_steps(self, D, count):
        sched = schedule(100, CachePolicy.taylor(D))
        assert len(sched) == count
        assert sched[0] == 0 and sched[-1] == 99

    def test_interval_one_and_none(self):
        assert schedule(10, CachePolicy.naive(1)) == tuple(range(10))
        assert schedule(10, CachePolicy.none()) == tuple(range(10))

    def test_last_step_always_included(self):
        assert schedule(7, CachePolicy.naive(3)) == (0, 3, 6)
        assert schedule(8, CachePolicy.naive(3)) == (0, 3, 6, 7)
        assert schedule(1, CachePolicy.naive(5)) == (0,)

    def test_invalid(self):
        with pytest.raises(DomainError):
            schedule(0, CachePolicy.none())
        with pytest.raises(DomainError):
            CachePolicy.naive(0)
        with pytest.raises(DomainError):
            CachePolicy.taylor(2, -1)
        with pytest.raises(DomainError):
            CachePolicy.adams_bashforth(2, 0)


class TestRefresh:
    def test_differences(self):
        cs = CacheState(CachePolicy.taylor(2, 2))
        refresh(cs, 1.0, 0)
        assert cs.differences == [1.0]
        refresh(cs, 3.0, 2)
        assert cs.differences == [3.0, 2.0]
        refresh(cs, 7.0, 4)
        assert cs.differences == [7.0, 4.0, 2.0]
        assert cs.nfe == 3

    def test_order_caps_differences(self):
        cs = filled(CachePolicy.taylor(2, 1), float, [0, 2, 4, 6])
        assert cs.differences == [6.0, 2.0]
        assert cs.checkpoints == 2

    def test_non_monotone_steps(self):
        cs = filled(CachePolicy.taylor(2, 1), float, [0, 2])
        with pytest.raises(CacheUsageError):
            cs.refresh(1.0, 2)
        with pytest.raises(CacheUsageError):
            cs.refresh(1.0, 1)

    def test_reconstruct_from_history(self, rng):
        cs = CacheState(CachePolicy.taylor(2, 3))
        for step in range(0, 20, 2):
            cs.refresh(rng.standard_normal(5), step)
            for a, b in zip(cs.recompute_differences(), cs.differences):
                assert np.allclose(a, b, rtol=0, atol=1e-12)


class TestTaylor:
    def test_linear_example(self):
        cs = filled(CachePolicy.taylor(2, 1), lambda s: 5.0 + 2.0 * s, [0, 2, 4, 6, 8, 10])
        assert cs.differences == [25.0, 4.0]
        assert forecast_taylor(cs, 1) == 27.0

    def test_quadratic_example(self):
        cs = filled(CachePolicy.taylor(2, 2), lambda s: float(s * s), [0, 2, 4, 6, 8])
        assert forecast_taylor(cs, 1) == 81.0

    def test_order_zero_is_latest(self):
        cs = filled(CachePolicy.taylor(3, 0), lambda s: np.array([s, -s], float), [0, 3])
        assert forecast_taylor(cs, 2) is cs.latest

    def test_warm_up_ramp(self):
        cs = filled(CachePolicy.taylor(2, 3), lambda s: float(s) ** 3, [0])
        assert forecast_taylor(cs, 1) == 0.0
        cs.refresh(8.0, 2)
        assert forecast_taylor(cs, 1) == 8.0 + 8.0 * 0.5

    def test_coefficients(self):
        assert taylor_coefficients(0, 0.3) == [1.0]
        assert taylor_coefficients(1, 0.25) == [1.0, 0.25]
        assert np.allclose(taylor_coefficients(3, 0.5), [1.0, 0.5, 0.375, 0.3125])

    def test_empty_cache(self):
        with pytest.raises(CacheUsageError):
            forecast_taylor(CacheState(CachePolicy.taylor(2)), 1)

    def test_offset_must_be_positive(self):
        cs = filled(CachePolicy.taylor(2), float, [0])
        with pytest.raises(DomainError):
            cs.forecast(0)

    def test_counters(self):
        cs = filled(CachePolicy.taylor(4), float, [0, 4])
        for k in (1, 2, 3):
            cs.forecast(k)
        assert (cs.nfe, cs.forecasts) == (2, 3)


class TestAdamsBashforth:
    def test_binomial_weights(self):
        assert ab_binomial_weights(1) == [1.0]
        assert ab_binomial_weights(2) == [2.0, -1.0]
        assert ab_binomial_weights(3) == [3.0, -3.0, 1.0]

    def test_two_step_example(self):
        cs = CacheState(CachePolicy.adams_bashforth(2, 2, "paper_exact"))
        cs.refresh(np.array([0.0, 0.0]), 0)
        cs.refresh(np.array([1.0, 2.0]), 2)
        assert forecast_ab(cs, 1).tolist() == [2.0, 4.0]

    def test_mode_offsets(self):
        fn = lambda s: 3.0 * s
        exact = filled(CachePolicy.adams_bashforth(2, 2, "offset_aware"), fn, [0, 2, 4, 6])
        fixed = filled(CachePolicy.adams_bashforth(2, 2, "paper_exact"), fn, [0, 2, 4, 6])
        assert forecast_ab(exact, 1) == 21.0
        assert forecast_ab(fixed, 1) == 24.0

    def test_single_step_is_latest(self):
        cs = filled(CachePolicy.adams_bashforth(3, 1), lambda s: np.full(3, s, float), [0, 3])
        assert forecast_ab(cs, 2) is cs.latest

    def test_fallback_with_short_history(self):
        cs = filled(CachePolicy.adams_bashforth(2, 3), lambda s: 3.0 * s, [0, 2])
        assert forecast_ab(cs, 1) == 9.0
        assert memory_footprint(cs) == 2

    def test_empty_cache(self):
        with pytest.raises(CacheUsageError):
            forecast_ab(CacheState(CachePolicy.adams_bashforth(2)), 1)


class TestMemory:
    def test_examples(self):
        assert memory_footprint(CacheState(CachePolicy.none())) == 0
        f = lambda s: np.full(300, float(s))
        assert memory_footprint(filled(CachePolicy.taylor(2, 2), f, [0, 2, 4])) == 900
        assert memory_footprint(filled(CachePolicy.adams_bashforth(2, 3), f, [0, 2, 4])) == 900
        assert memory_footprint(filled(CachePolicy.naive(2), f, [0, 2, 4])) == 300
        assert memory_footprint(filled(CachePolicy.none(), f, [0, 1])) == 0

    def test_warm_up_counts_effective_order(self):
        f = lambda s: np.zeros(10)
        cs = filled(CachePolicy.taylor(2, 2), f, [0])
        assert memory_footprint(cs) == 10
        cs.refresh(f(2), 2)
        assert memory_footprint(cs) == 20


def test_policy_labels_and_history():
    assert CachePolicy.none().label == "none"
    assert CachePolicy.naive(3).label == "naive_D3"
    assert CachePolicy.taylor(2, 1).label == "taylor_D2_m1"
    assert CachePolicy.adams_bashforth(3, 3, "paper_exact").label == "ab_D3_j3_paper_exact"
    assert CachePolicy.taylor(2, 2).history_size == 3
    assert CachePolicy.adams_bashforth(2, 3).history_size == 3
    assert CachePolicy("taylor", 2, 1).kind is CacheKind.TAYLOR
    assert CachePolicy.adams_bashforth(2).ab_mode is ABMode.OFFSET_AWARE


def test_none_never_forecasts():
    cs = filled(CachePolicy.none(), float, [0])
    with pytest.raises(CacheUsageError):
        cs.forecast(1)


# -- properties -------------------------------------------------------------

polys = st.lists(st.floats(-5, 5, allow_nan=False), min_size=1, max_size=4)


def poly(coeffs):
    return lambda s: sum(c * float(s) ** p for p, c in enumerate(coeffs))


def rel_close(a, b, tol=1e-9):
    return abs(a - b) <= tol * max(1.0, abs(b))


@settings(max_examples=150, deadline=None)
@given(coeffs=polys, D=st.integers(2, 5), n_ckpt=st.integers(4, 8), data=st.data())
def test_taylor_exact_on_polynomials(coeffs, D, n_ckpt, data):
    m = data.draw(st.integers(len(coeffs) - 1, 3))
    f = poly(coeffs)
    steps = [D * i for i in range(n_ckpt)]
    cs = filled(CachePolicy.taylor(D, m), f, steps)
    for k in range(1, D):
        assert rel_close(forecast_taylor(cs, k), f(steps[-1] + k))


@settings(max_examples=150, deadline=None)
@given(coeffs=polys, D=st.integers(2, 5), n_ckpt=st.integers(4, 8), data=st.data())
def test_offset_aware_ab_exact_on_polynomials(coeffs, D, n_ckpt, data):
    j = data.draw(st.integers(len(coeffs), 4))
    f = poly(coeffs)
    steps = [D * i for i in range(n_ckpt)]
    cs = filled(CachePolicy.adams_bashforth(D, j), f, steps)
    for k in range(1, D):
        assert rel_close(forecast_ab(cs, k), f(steps[-1] + k))


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), D=st.integers(1, 5), j=st.integers(1, 4))
def test_ab_modes_agree_one_interval_ahead(seed, D, j):
    rng = np.random.default_rng(seed)
    vals = rng.standard_normal((6, 4))
    steps = [D * i for i in range(6)]
    a = filled(CachePolicy.adams_bashforth(D, j, "paper_exact"), lambda s: vals[s // D], steps)
    b = filled(CachePolicy.adams_bashforth(D, j, "offset_aware"), lambda s: vals[s // D], steps)
    assert np.allclose(forecast_ab(a, D), forecast_ab(b, D), rtol=0, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), D=st.integers(2, 4), order=st.integers(0, 3),
       alpha=st.floats(-2, 2), beta=st.floats(-2, 2))
def test_forecasters_linear_in_history(seed, D, order, alpha, beta):
    rng = np.random.default_rng(seed)
    u, w = rng.standard_normal((2, 5, 3))
    steps = [D * i for i in range(5)]
    policies = [CachePolicy.taylor(D, order), CachePolicy.adams_bashforth(D, order + 1),
                CachePolicy.adams_bashforth(D, order + 1, "paper_exact")]
    for p in policies:
        cu = filled(p, lambda s: u[s // D], steps)
        cw = filled(p, lambda s: w[s // D], steps)
        cm = filled(p, lambda s: alpha * u[s // D] + beta * w[s // D], steps)
        for k in range(1, D):
            lhs = cm.forecast(k)
            rhs = alpha * cu.forecast(k) + beta * cw.forecast(k)
            assert np.allclose(lhs, rhs, rtol=0, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), D=st.integers(2, 5))
def test_degenerate_forecasters_identical(seed, D):
    vals = np.random.default_rng(seed).standard_normal((5, 7))
    steps = [D * i for i in range(5)]
    caches = [filled(p, lambda s: vals[s // D], steps) for p in
              (CachePolicy.taylor(D, 0), CachePolicy.adams_bashforth(D, 1), CachePolicy.naive(D))]
    for k in range(1, D):
        outs = [c.forecast(k) for c in caches]
        assert all(np.array_equal(outs[0], o) for o in outs[1:])
