"""Quality, smoothness and agreement measurements over sampled data."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .backbone import VectorField
from .cache import CachePolicy
from .core import GroupElement, State, TimeGrid, apply_group
from .errors import DomainError, ShapeError
from .sampler import TrajectoryRecord, integrate

logger = logging.getLogger(__name__)

EPS_NORM = 1e-12


@dataclass(frozen=True)
class StepSeries:
    """One real value per recorded solver step."""

    steps: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        steps = np.asarray(self.steps, dtype=np.int64)
        values = np.asarray(self.values, dtype=np.float64)
        if steps.shape != values.shape:
            raise ShapeError("one value per step")
        object.__setattr__(self, "steps", steps)
        object.__setattr__(self, "values", values)

    def __len__(self):
        return self.steps.size

    def as_dict(self) -> dict[int, float]:
        return dict(zip(self.steps.tolist(), self.values.tolist()))


# ---------------------------------------------------------------------------
# Energy distance

def _as_samples(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return x[:, None]
    return x.reshape(x.shape[0], int(np.prod(x.shape[1:])))


def _mean_abs_diff_1d(x: np.ndarray, y: np.ndarray) -> float:
    """``mean |x_i - y_j|`` over all pairs in O((n + m) log m)."""
    y = np.sort(y)
    csum = np.concatenate([[0.0], np.cumsum(y)])
    idx = np.searchsorted(y, x, side="right")
    m = y.size
    below = x * idx - csum[idx]
    above = (csum[m] - csum[idx]) - x * (m - idx)
    return float(np.sum(below + above) / (x.size * m))


def _mean_pair_distance(a: np.ndarray, b: np.ndarray, chunk: int = 2048) -> float:
    if a.shape[1] == 1:
        return _mean_abs_diff_1d(a[:, 0], b[:, 0])
    total = 0.0
    for i in range(0, a.shape[0], chunk):
        total += cdist(a[i:i + chunk], b).sum()
    return total / (a.shape[0] * b.shape[0])


def energy_distance(a, b) -> float:
    """V-statistic energy distance ``2 E|A-B| - E|A-A'| - E|B-B'|``.

    Inputs are sample sets of shape ``(n, ...)``; trailing dimensions are
    flattened. Non-negative by construction and exactly zero for identical
    sample sets.
    """
    a, b = _as_samples(a), _as_samples(b)
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise DomainError("energy distance needs non-empty sample sets")
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    ab = _mean_pair_distance(a, b)
    aa = _mean_pair_distance(a, a)
    bb = _mean_pair_distance(b, b)
    return 2.0 * ab - aa - bb


def centered_points(samples: Sequence[State] | np.ndarray) -> np.ndarray:
    """Flattened point coordinates with the centre of mass removed, shape (n, 3N)."""
    if isinstance(samples, np.ndarray):
        pts = np.asarray(samples, dtype=np.float64)
    else:
        pts = np.stack([s.points for s in samples]).astype(np.float64)
    pts = pts - pts.mean(axis=1, keepdims=True)
    return pts.reshape(pts.shape[0], -1)


# ---------------------------------------------------------------------------
# Smoothness and agreement

def _flatten(v) -> np.ndarray:
    if hasattr(v, "flat") and callable(v.flat):
        return v.flat().astype(np.float64)
    return np.asarray(v, dtype=np.float64).ravel()


def linear_predictability_error(series: Sequence, steps: Sequence[int] | None = None) -> StepSeries:
    """Relative residual of two-point linear extrapolation.

    ``e_k = |F_k - (2 F_{k-1} - F_{k-2})| / max(|F_k|, 1e-12)`` for ``k >= 2``.
    Entries of ``series`` may be scalars, arrays, states or tangents.
    """
    if len(series) < 3:
        raise DomainError(f"need at least 3 recorded steps, got {len(series)}")
    F = np.stack([_flatten(v) for v in series])
    resid = F[2:] - (2.0 * F[1:-1] - F[:-2])
    num = np.linalg.norm(resid, axis=1)
    den = np.maximum(np.linalg.norm(F[2:], axis=1), EPS_NORM)
    steps = np.arange(len(series)) if steps is None else np.asarray(steps)
    return StepSeries(steps[2:], num / den)


def trajectory_deviation(base: TrajectoryRecord, cached: TrajectoryRecord) -> StepSeries:
    """Per-step distance between raw point coordinates of two recorded runs."""
    if not np.array_equal(base.times, cached.times):
        raise DomainError("trajectories were integrated on different grids")
    if not base.states or not cached.states:
        raise DomainError("trajectories must record states")
    if len(base.states) != len(cached.states):
        raise DomainError("trajectories have different lengths")
    d = [float(np.linalg.norm(a.points - b.points)) for a, b in zip(base.states, cached.states)]
    return StepSeries(np.arange(len(d)), d)


def _state_distance(a: State, b: State) -> float:
    if not a.same_layout(b):
        raise ShapeError("states have different layouts")
    return float(np.sqrt(sum(np.sum((x - y) ** 2) for x, y in zip(a.arrays(), b.arrays()))))


def equivariance_error(field: VectorField, policy: CachePolicy, grid: TimeGrid,
                       g: GroupElement, x0: State) -> float:
    """Relative gap between integrating a transformed start and transforming the result."""
    xk = integrate(field, policy, grid, x0)[0]
    xk_g = integrate(field, policy, grid, apply_group(g, x0))[0]
    ref = apply_group(g, xk)
    return _state_distance(xk_g, ref) / max(ref.norm(), EPS_NORM)


# ---------------------------------------------------------------------------
# PCA by power iteration

@dataclass(frozen=True)
class Projection:
    points: np.ndarray        # (n_steps, dims)
    components: np.ndarray    # (dims, n_features)
    variances: np.ndarray     # (dims,)
    total_variance: float

    def reconstruction_error(self, X: np.ndarray) -> float:
        """Squared error of rebuilding centred ``X`` from the projection."""
        Xc = X - X.mean(axis=0)
        return float(np.sum((Xc - self.points @ self.components) ** 2))


def _power_iteration(A: np.ndarray, tol: float, max_iter: int, rng) -> tuple[float, np.ndarray]:
    v = rng.standard_normal(A.shape[0])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = A @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0, v
        w /= nw
        lam = float(w @ A @ w)
        # Eigenvectors are defined up to sign.
        if min(np.linalg.norm(w - v), np.linalg.norm(w + v)) < tol:
            return lam, w
        v = w
    logger.warning("power iteration stopped after %d iterations", max_iter)
    return lam, v


def pca_project(states: Sequence, dims: int = 2, *, tol: float = 1e-9,
                max_iter: int = 10_000, seed: int = 0) -> Projection:
    """Project flattened per-step vectors onto their top principal directions.

    Directions come from power iteration with deflation on the covariance
    (or, when there are fewer steps than features, on the Gram matrix).
    """
    X = np.stack([_flatten(s) for s in states])
    n, d = X.shape
    if n < dims + 1:
        raise DomainError(f"need at least {dims + 1} steps for {dims} components, got {n}")
    Xc = X - X.mean(axis=0)
    total = float(np.sum(Xc * Xc))
    if total <= EPS_NORM * max(1.0, float(np.sum(X * X))):
        raise DomainError("trajectory has zero variance; principal directions undefined")

    gram = n <= d
    A = Xc @ Xc.T if gram else Xc.T @ Xc
    rng = np.random.default_rng(seed)
    comps, lams = [], []
    for _ in range(dims):
        lam, u = _power_iteration(A, tol, max_iter, rng)
        lam = max(lam, 0.0)
        if lam <= tol * total:
            lam = 0.0
        lams.append(lam)
        comps.append(u)
        A = A - lam * np.outer(u, u)

    if gram:
        # u_i are left singular vectors; map to feature-space directions.
        directions = []
        for lam, u in zip(lams, comps):
            if lam > 0:
                directions.append(Xc.T @ u / np.sqrt(lam))
            else:
                directions.append(np.zeros(d))
        W = np.stack(directions)
    else:
        W = np.stack(comps)
        W = np.where(np.array(lams)[:, None] > 0, W, 0.0)
    points = Xc @ W.T
    return Projection(points, W, np.array(lams) / n, total / n)
