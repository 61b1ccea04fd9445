import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flowcache.backbone import MixtureField, PositionMLPField, random_point_mixture
from flowcache.cache import CachePolicy
from flowcache.core import GroupElement, make_uniform_grid, random_group_element
from flowcache.errors import DomainError, ShapeError
from flowcache.metrics import (centered_points, energy_distance, equivariance_error,
                               linear_predictability_error, pca_project, trajectory_deviation)
from flowcache.sampler import StateLayout, integrate, sample_base, sample_layout

# 2 E|X-Y| - E|X-X'| - E|Y-Y'| for X ~ N(0,1), Y ~ N(2,1), from nested adaptive
# quadrature of the defining integrals (E|X-X'| = 2/sqrt(pi) as a cross-check).
ENERGY_N01_N21 = 1.944259832449025


def batched_energy(a, b, batches=20):
    """Full-sample estimate and a batch-means standard error."""
    parts = [energy_distance(x, y) for x, y in
             zip(np.array_split(a, batches), np.array_split(b, batches))]
    return energy_distance(a, b), np.std(parts, ddof=1) / np.sqrt(batches)


class TestEnergyDistance:
    def test_identical_sets(self, rng):
        a = rng.standard_normal((300, 6))
        assert energy_distance(a, a) == 0.0
        x = rng.standard_normal(1000)
        assert energy_distance(x, x.copy()) == 0.0

    def test_matches_quadrature(self):
        rng = np.random.default_rng(5)
        a = rng.standard_normal(100_000)
        b = 2.0 + rng.standard_normal(100_000)
        est, se = batched_energy(a, b)
        assert abs(est - ENERGY_N01_N21) <= 3 * se

    def test_same_distribution_near_zero(self):
        rng = np.random.default_rng(6)
        a, b = rng.standard_normal((2, 100_000))
        est, se = batched_energy(a, b)
        assert 0.0 <= est <= 3 * se

    def test_one_dimensional_path_matches_pairwise(self, rng):
        a, b = rng.standard_normal(200), rng.standard_normal(150) + 0.5
        brute = (2 * np.abs(a[:, None] - b[None]).mean() - np.abs(a[:, None] - a[None]).mean()
                 - np.abs(b[:, None] - b[None]).mean())
        assert np.isclose(energy_distance(a, b), brute, rtol=1e-12, atol=1e-14)
        # Multidimensional code path on the same data.
        assert np.isclose(energy_distance(np.c_[a, 0 * a], np.c_[b, 0 * b]), brute, rtol=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 40), m=st.integers(1, 40),
           d=st.integers(1, 4))
    def test_symmetric_and_non_negative(self, seed, n, m, d):
        rng = np.random.default_rng(seed)
        a = rng.standard_normal((n, d))
        b = rng.standard_normal((m, d)) * 2 + 1
        e = energy_distance(a, b)
        assert e >= -1e-12
        assert abs(e - energy_distance(b, a)) <= 1e-12

    def test_errors(self):
        with pytest.raises(ShapeError):
            energy_distance(np.zeros((3, 2)), np.zeros((3, 3)))
        with pytest.raises(DomainError):
            energy_distance(np.zeros((0, 2)), np.zeros((3, 2)))

    def test_centered_points(self, rng):
        states = [sample_base(4, "none", seed=s, center=False) for s in range(3)]
        flat = centered_points(states)
        assert flat.shape == (3, 12)
        assert np.allclose(flat.reshape(3, 4, 3).mean(axis=1), 0.0, atol=1e-15)
        arr = rng.standard_normal((5, 4, 3))
        assert np.allclose(centered_points(arr), centered_points(arr + 7.0))


class TestPredictability:
    def test_constant_and_linear(self, rng):
        c = rng.standard_normal(4)
        assert np.all(linear_predictability_error([c] * 6).values == 0.0)
        slope = rng.standard_normal(4)
        lin = [c + k * slope for k in range(6)]
        assert np.all(linear_predictability_error(lin).values <= 1e-12)

    def test_quadratic_closed_form(self):
        e = linear_predictability_error([float(k * k) for k in range(10)])
        assert e.steps.tolist() == list(range(2, 10))
        assert np.allclose(e.values, [2.0 / k ** 2 for k in range(2, 10)], rtol=1e-14)

    def test_zero_norm_guard(self):
        e = linear_predictability_error([1.0, 0.5, 0.0])
        assert e.values[0] == 0.0
        e = linear_predictability_error([0.0, 1.0, 0.0])
        assert e.values[0] == 2.0 / 1e-12

    def test_too_short(self):
        with pytest.raises(DomainError):
            linear_predictability_error([1.0, 2.0])

    @settings(max_examples=50, deadline=None)
    @given(a=st.floats(-100, 100), b=st.floats(-100, 100), n=st.integers(3, 30))
    def test_linear_series_property(self, a, b, n):
        series = [np.array([a + b * k, b - a * k]) for k in range(n)]
        assert np.all(linear_predictability_error(series).values <= 1e-12)

    def test_accepts_states(self, backbone, x0, grid20):
        _, _, traj = integrate(backbone, CachePolicy.none(), grid20, x0, record_trajectory=True)
        assert len(linear_predictability_error(traj.velocities)) == 18
        assert len(linear_predictability_error(traj.states)) == 19


class TestDeviation:
    def test_identical_policies(self, backbone, x0, grid20):
        p = CachePolicy.taylor(2)
        a = integrate(backbone, p, grid20, x0, record_trajectory=True)[2]
        b = integrate(backbone, p, grid20, x0, record_trajectory=True)[2]
        assert np.all(trajectory_deviation(a, b).values == 0.0)

    def test_constant_velocity_field(self):
        spec = random_point_mixture(1, 4, seed=0)
        x0 = sample_base(4, "none", seed=1)
        grid = make_uniform_grid(30)
        base = integrate(MixtureField(spec), CachePolicy.none(), grid, x0, record_trajectory=True)[2]
        for D in (2, 3, 5):
            c = integrate(MixtureField(spec), CachePolicy.taylor(D, 1), grid, x0,
                          record_trajectory=True)[2]
            assert np.all(trajectory_deviation(base, c).values <= 1e-12)

    def test_grid_mismatch(self, backbone, x0):
        a = integrate(backbone, CachePolicy.none(), make_uniform_grid(4), x0, record_trajectory=True)[2]
        b = integrate(backbone, CachePolicy.none(), make_uniform_grid(5), x0, record_trajectory=True)[2]
        with pytest.raises(DomainError):
            trajectory_deviation(a, b)


class TestEquivarianceError:
    def test_identity_is_zero(self, backbone, x0, grid20):
        g = GroupElement.identity(x0.n_nodes)
        assert equivariance_error(backbone, CachePolicy.taylor(2), grid20, g, x0) == 0.0

    def test_backbone_small_control_large(self, backbone, x0, grid20):
        g = random_group_element(x0.n_nodes, np.random.default_rng(3), translation_scale=2.0)
        assert equivariance_error(backbone, CachePolicy.taylor(2), grid20, g, x0) <= 1e-6
        control = PositionMLPField.build(5, seed=1)
        y0 = sample_layout(StateLayout(5, "none"), seed=0)
        g = random_group_element(5, np.random.default_rng(4))
        assert equivariance_error(control, CachePolicy.taylor(2), grid20, g, y0) > 1e-2


class TestPCA:
    def test_single_axis(self, rng):
        direction = rng.standard_normal(9)
        X = [np.sin(0.3 * k) * direction + 1.0 for k in range(20)]
        proj = pca_project(X)
        assert proj.variances[1] <= 1e-9 * proj.variances[0]
        assert np.isclose(proj.variances[0], proj.total_variance, rtol=1e-9)

    def test_rotation_covariant(self, rng):
        X = np.cumsum(rng.standard_normal((30, 12)) * np.linspace(3, 0.5, 12), axis=0)
        Q, _ = np.linalg.qr(rng.standard_normal((12, 12)))
        p1 = pca_project(list(X)).points
        p2 = pca_project(list(X @ Q.T)).points
        assert np.allclose(np.linalg.svd(p1, compute_uv=False),
                           np.linalg.svd(p2, compute_uv=False), rtol=1e-8)
        # Coordinates agree up to a 2x2 orthogonal map (signs here).
        M = np.linalg.lstsq(p1, p2, rcond=None)[0]
        assert np.allclose(M @ M.T, np.eye(2), atol=1e-6)

    def test_matches_svd(self, rng):
        X = rng.standard_normal((40, 6)) @ np.diag([5, 3, 1, 0.5, 0.2, 0.1])
        proj = pca_project(list(X), dims=2)
        sv = np.linalg.svd(X - X.mean(0), compute_uv=False)
        assert np.allclose(proj.variances, sv[:2] ** 2 / 40, rtol=1e-6)

    def test_reconstruction_monotone(self, rng):
        X = rng.standard_normal((15, 30))
        errs = [pca_project(list(X), dims=d).reconstruction_error(X) for d in (1, 2, 3)]
        full = float(np.sum((X - X.mean(0)) ** 2))
        assert full >= errs[0] >= errs[1] >= errs[2] >= 0.0

    def test_backbone_trajectory(self, backbone, x0, grid20):
        traj = integrate(backbone, CachePolicy.none(), grid20, x0, record_trajectory=True)[2]
        proj = pca_project(traj.states)
        assert proj.points.shape == (21, 2)

    def test_errors(self, rng):
        with pytest.raises(DomainError):
            pca_project([np.ones(3)] * 5)
        with pytest.raises(DomainError):
            pca_project([rng.standard_normal(3)] * 2)
