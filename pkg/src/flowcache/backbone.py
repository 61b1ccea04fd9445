"""Time-dependent vector fields ``v(x, t)`` over joint states.

Three fields live here:

* :class:`EquivariantBackbone` -- a randomly seeded EGNN-style block stack.
  Untrained; it exists to measure equivariance, feature smoothness and
  cost, and can be padded with dummy dense work so that backbone time
  dominates a sampling run.
* :class:`MixtureField` -- the exact marginal velocity of the linear
  interpolant path from a standard normal to an isotropic Gaussian (or
  point-mass) mixture. This is the optimal flow-matching regression target,
  so samples from it have a known distribution.
* :class:`PositionMLPField` -- a deliberately non-equivariant control that
  feeds absolute coordinates through a perceptron.
"""

from __future__ import annotations

import abc
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import Role, State, Tangent
from .errors import DomainError, NumericError, ShapeError

logger = logging.getLogger(__name__)

DEFAULT_EPSILON = 1e-4


class VectorField(abc.ABC):
    """A field evaluable on states at times ``0 <= t < 1``."""

    def evaluate(self, s: State, t: float) -> Tangent:
        t = float(t)
        if not np.isfinite(t):
            raise NumericError(f"non-finite time {t}")
        if not 0.0 <= t < 1.0:
            raise DomainError(f"fields are evaluated on [0, 1), got t={t}")
        for a in s.arrays():
            if not np.all(np.isfinite(a)):
                raise NumericError("non-finite input state")
        return self._evaluate(s, t)

    @abc.abstractmethod
    def _evaluate(self, s: State, t: float) -> Tangent: ...

    def block_count(self) -> int:
        return 1

    def to_config(self) -> dict:
        raise NotImplementedError


def evaluate(field: VectorField, s: State, t: float) -> Tangent:
    return field.evaluate(s, t)


# ---------------------------------------------------------------------------
# Equivariant backbone

def _dense(rng, fan_in, fan_out, scale, dtype):
    W = rng.standard_normal((fan_in, fan_out)) * (scale / np.sqrt(max(fan_in, 1)))
    b = rng.standard_normal(fan_out) * (0.1 * scale)
    return W.astype(dtype), b.astype(dtype)


@dataclass(frozen=True)
class _MLP:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    squash: bool = False

    @classmethod
    def init(cls, rng, fan_in, hidden, fan_out, scale, dtype, squash=False):
        W1, b1 = _dense(rng, fan_in, hidden, scale, dtype)
        W2, b2 = _dense(rng, hidden, fan_out, scale, dtype)
        return cls(W1, b1, W2, b2, squash)

    def __call__(self, z):
        y = np.tanh(z @ self.W1 + self.b1) @ self.W2 + self.b2
        return np.tanh(y) if self.squash else y


@dataclass(frozen=True)
class _Block:
    phi: _MLP   # message
    psi: _MLP   # scalar coordinate weight
    rho: _MLP   # node update
    chi: _MLP   # edge update


@dataclass(frozen=True, eq=False)
class EquivariantBackbone(VectorField):
    """EGNN-style stack of ``L`` blocks with hidden width ``H``.

    Per block and per edge ``(i, j)``::

        m_ij = phi(h_i, h_j, |x_i - x_j|^2, e_ij, t)
        x_i += 1/(N-1) * sum_j (x_i - x_j) * psi(m_ij)
        h_i += rho(h_i, sum_j m_ij, t)
        e_ij += chi(m_ij)

    The point velocity is the accumulated coordinate update; node and edge
    velocities are linear read-outs of the final hidden features. Coordinate
    updates are built from differences only, so the output is invariant to
    translation and equivariant to rotations, reflections and relabelling.
    """

    n_blocks: int
    hidden: int
    seed: int
    node_dim: int
    edge_dim: int
    blocks: tuple
    node_embed: tuple
    edge_embed: tuple
    node_out: np.ndarray
    edge_out: np.ndarray
    padding: int = 0
    pad_width: int = 128
    init_scale: float = 1.0
    pad_matrix: np.ndarray | None = field(default=None, repr=False)

    @property
    def dtype(self):
        return self.node_out.dtype

    def block_count(self) -> int:
        return self.n_blocks

    def to_config(self) -> dict:
        return {
            "kind": "backbone", "blocks": self.n_blocks, "hidden": self.hidden,
            "seed": self.seed, "node_dim": self.node_dim, "edge_dim": self.edge_dim,
            "padding": self.padding, "pad_width": self.pad_width,
            "init_scale": self.init_scale,
        }

    def weights(self) -> list[np.ndarray]:
        out = list(self.node_embed) + list(self.edge_embed) + [self.node_out, self.edge_out]
        for blk in self.blocks:
            for mlp in (blk.phi, blk.psi, blk.rho, blk.chi):
                out += [mlp.W1, mlp.b1, mlp.W2, mlp.b2]
        return out

    def _split_inputs(self, s: State):
        nodes = [c.data for c in s.channels if c.role is Role.NODE]
        edges = [c.data for c in s.channels if c.role is Role.EDGE]
        dt = self.dtype
        a = np.concatenate(nodes, axis=1) if nodes else np.zeros((s.n_nodes, 0), dt)
        b = np.concatenate(edges, axis=1) if edges else np.zeros((len(s.edges), 0), dt)
        if a.shape[1] != self.node_dim or b.shape[1] != self.edge_dim:
            raise ShapeError(
                f"backbone expects node/edge widths {self.node_dim}/{self.edge_dim}, "
                f"state has {a.shape[1]}/{b.shape[1]}"
            )
        return a.astype(dt, copy=False), b.astype(dt, copy=False)

    def _burn(self):
        if not self.padding:
            return
        buf = self.pad_matrix
        for _ in range(self.padding):
            buf = np.tanh(buf @ self.pad_matrix)

    def _evaluate(self, s: State, t: float) -> Tangent:
        dt = self.dtype
        a, b = self._split_inputs(s)
        x = s.points.astype(dt, copy=False)
        n = s.n_nodes
        src, dst = s.edges[:, 0], s.edges[:, 1]
        n_edges = src.size

        h = a @ self.node_embed[0] + self.node_embed[1]
        e = b @ self.edge_embed[0] + self.edge_embed[1]
        t_node = np.full((n, 1), t, dtype=dt)
        t_edge = np.full((n_edges, 1), t, dtype=dt)
        incidence = np.zeros((n, n_edges), dtype=dt)
        incidence[src, np.arange(n_edges)] = 1.0
        norm = dt.type(1.0 / max(n - 1, 1))

        vel = np.zeros_like(x)
        for blk in self.blocks:
            diff = x[src] - x[dst]
            d2 = np.sum(diff * diff, axis=1, keepdims=True)
            m = blk.phi(np.concatenate([h[src], h[dst], d2, e, t_edge], axis=1))
            dx = (incidence @ (diff * blk.psi(m))) * norm
            x = x + dx
            vel = vel + dx
            h = h + blk.rho(np.concatenate([h, incidence @ m, t_node], axis=1))
            e = e + blk.chi(m)
            self._burn()

        v_node = h @ self.node_out
        v_edge = e @ self.edge_out
        arrays, i_node, i_edge = [], 0, 0
        for c in s.channels:
            w = c.data.shape[1]
            if c.role is Role.POINTS:
                arrays.append(vel)
            elif c.role is Role.NODE:
                arrays.append(v_node[:, i_node:i_node + w])
                i_node += w
            else:
                arrays.append(v_edge[:, i_edge:i_edge + w])
                i_edge += w
        return Tangent._from_layout(s, [np.ascontiguousarray(v, dtype=dt) for v in arrays])


def build_equivariant_backbone(L: int, H: int, seed: int, *, node_dim: int = 0,
                               edge_dim: int = 0, padding: int = 0, pad_width: int = 128,
                               init_scale: float = 1.0, dtype=np.float64) -> EquivariantBackbone:
    """Seeded EGNN-style backbone.

    ``init_scale=0`` gives an all-zero network. ``padding`` adds that many
    ``pad_width x pad_width`` matrix products per block whose results are
    discarded; it only changes cost.
    """
    if L < 1 or H < 1:
        raise DomainError(f"need L >= 1 and H >= 1, got L={L}, H={H}")
    if node_dim < 0 or edge_dim < 0 or padding < 0 or pad_width < 1:
        raise DomainError("widths and padding must be non-negative")
    dtype = np.dtype(dtype)
    rng = np.random.default_rng(seed)
    node_embed = _dense(rng, node_dim, H, init_scale, dtype)
    edge_embed = _dense(rng, edge_dim, H, init_scale, dtype)
    blocks = []
    for _ in range(L):
        blocks.append(_Block(
            phi=_MLP.init(rng, 3 * H + 2, H, H, init_scale, dtype, squash=True),
            psi=_MLP.init(rng, H, H, 1, init_scale, dtype),
            rho=_MLP.init(rng, 2 * H + 1, H, H, init_scale, dtype),
            chi=_MLP.init(rng, H, H, H, init_scale, dtype),
        ))
    node_out = (rng.standard_normal((H, node_dim)) * init_scale / np.sqrt(H)).astype(dtype)
    edge_out = (rng.standard_normal((H, edge_dim)) * init_scale / np.sqrt(H)).astype(dtype)
    pad = None
    if padding:
        pad = (np.random.default_rng(seed + 1).standard_normal((pad_width, pad_width))
               / np.sqrt(pad_width)).astype(dtype)
    return EquivariantBackbone(
        n_blocks=L, hidden=H, seed=seed, node_dim=node_dim, edge_dim=edge_dim,
        blocks=tuple(blocks), node_embed=node_embed, edge_embed=edge_embed,
        node_out=node_out, edge_out=edge_out, padding=padding, pad_width=pad_width,
        init_scale=init_scale, pad_matrix=pad,
    )


# ---------------------------------------------------------------------------
# Gaussian-mixture target with closed-form velocity

@dataclass(frozen=True, eq=False)
class MixtureSpec:
    """Isotropic Gaussian mixture over ``(N, 3)`` coordinates.

    ``sigmas[j] == 0`` makes component ``j`` a point mass at ``means[j]``.
    """

    weights: np.ndarray
    means: np.ndarray
    sigmas: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64).ravel()
        mu = np.array(self.means, dtype=np.float64)
        sig = np.array(self.sigmas, dtype=np.float64).ravel()
        if w.size == 0:
            raise DomainError("mixture needs at least one component")
        if mu.ndim == 2:
            mu = mu[None]
        if mu.ndim != 3 or mu.shape[0] != w.size or mu.shape[2] != 3:
            raise ShapeError(f"means must be (J, N, 3) with J={w.size}, got {mu.shape}")
        if sig.size == 1 and w.size > 1:
            sig = np.full(w.size, sig[0])
        if sig.size != w.size:
            raise ShapeError("one sigma per component")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
            raise DomainError("weights must be positive and sum to 1")
        if np.any(sig < 0):
            raise DomainError("sigmas must be non-negative")
        for name, v in (("weights", w), ("means", mu), ("sigmas", sig)):
            v.setflags(write=False)
            object.__setattr__(self, name, v)
        # Flattened copies for the velocity hot path.
        object.__setattr__(self, "_mu_flat", mu.reshape(mu.shape[0], -1))
        object.__setattr__(self, "_log_w", np.log(w))
        object.__setattr__(self, "_sig2", sig ** 2)

    @classmethod
    def from_components(cls, components: Sequence[tuple]) -> "MixtureSpec":
        if not components:
            raise DomainError("mixture needs at least one component")
        w, mu, sig = zip(*components)
        return cls(np.array(w), np.stack([np.asarray(m, dtype=float) for m in mu]), np.array(sig))

    @property
    def n_nodes(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return self.weights.size

    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        """``count`` exact draws, shape ``(count, N, 3)``."""
        j = rng.choice(self.n_components, size=count, p=self.weights)
        x = self.means[j].copy()
        if np.any(self.sigmas > 0):
            x += self.sigmas[j][:, None, None] * rng.standard_normal(x.shape)
        return x

    def log_density(self, x: np.ndarray) -> np.ndarray:
        """Log density at points ``x`` of shape (..., N, 3); needs all sigmas > 0."""
        if np.any(self.sigmas <= 0):
            raise DomainError("density undefined for point-mass components")
        d = self.means[0].size
        x = np.asarray(x)[..., None, :, :]
        sq = np.sum((x - self.means) ** 2, axis=(-2, -1))
        s2 = self.sigmas ** 2
        logp = np.log(self.weights) - 0.5 * d * np.log(2 * np.pi * s2) - sq / (2 * s2)
        return np.logaddexp.reduce(logp, axis=-1)

    def to_config(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "sigmas": self.sigmas.tolist(),
        }


def random_point_mixture(n_components: int, n_nodes: int, seed: int, *,
                         scale: float = 2.0, sigma: float = 0.0,
                         center: bool = True) -> MixtureSpec:
    """Equal-weight mixture with means drawn from ``N(0, scale^2)``.

    With ``center`` the means are shifted to zero centre of mass so they lie
    in the same subspace as the centred base distribution.
    """
    rng = np.random.default_rng(seed)
    means = scale * rng.standard_normal((n_components, n_nodes, 3))
    if center:
        means -= means.mean(axis=1, keepdims=True)
    w = np.full(n_components, 1.0 / n_components)
    w[-1] = 1.0 - w[:-1].sum()
    return MixtureSpec(w, means, np.full(n_components, sigma))


def mixture_velocity(spec: MixtureSpec, x: np.ndarray, t: float,
                     eps: float = DEFAULT_EPSILON) -> np.ndarray:
    """Marginal velocity ``E[x1 - x0 | x_t = x]`` of the path ``x_t = (1-t) x0 + t x1``.

    ``x0 ~ N(0, I)`` and ``x1 ~ spec``. Given component ``j``, ``x_t`` is
    Gaussian with mean ``t mu_j`` and variance ``s_j^2 = (1-t)^2 + t^2 sigma_j^2``,
    which gives per-component velocities

        v_j = mu_j + (t sigma_j^2 - (1 - t)) / s_j^2 * (x - t mu_j)

    weighted by posterior responsibilities. For point masses this is
    ``(mu_j - x) / (1 - t)``. Times within ``eps`` of 1 are clamped.
    """
    if spec.n_components == 0:
        raise DomainError("empty mixture")
    x = np.asarray(x)
    if x.shape != spec.means.shape[1:]:
        raise ShapeError(f"expected coordinates of shape {spec.means.shape[1:]}, got {x.shape}")
    t = float(t)
    if not 0.0 <= t <= 1.0:
        raise DomainError(f"t must lie in [0, 1], got {t}")
    if t > 1.0 - eps:
        logger.debug("mixture_velocity: clamping t=%r to %r", t, 1.0 - eps)
        t = 1.0 - eps

    xd = x.astype(np.float64, copy=False).reshape(-1)
    mu = spec._mu_flat
    s2 = (1.0 - t) ** 2 + (t * t) * spec._sig2
    r = xd - t * mu
    sq = np.einsum("jd,jd->j", r, r)
    logits = spec._log_w - 0.5 * xd.size * np.log(s2) - sq / (2.0 * s2)
    gamma = np.exp(logits - logits.max())
    gamma /= gamma.sum()
    coef = (t * spec._sig2 - (1.0 - t)) / s2
    v = (gamma @ mu + (gamma * coef) @ r).reshape(x.shape)
    return v.astype(x.dtype, copy=False)


@dataclass(frozen=True, eq=False)
class MixtureField(VectorField):
    """Analytic field on the points channel; invariant channels get zero velocity."""

    spec: MixtureSpec
    eps: float = DEFAULT_EPSILON

    def evaluate(self, s: State, t: float) -> Tangent:
        t = float(t)
        if t >= 1.0 - self.eps and t < 1.0:
            logger.info("MixtureField: t=%r within eps of 1, clamped", t)
        return super().evaluate(s, t)

    def _evaluate(self, s: State, t: float) -> Tangent:
        arrays = []
        for c in s.channels:
            if c.role is Role.POINTS:
                arrays.append(mixture_velocity(self.spec, c.data, t, self.eps))
            else:
                arrays.append(np.zeros_like(c.data))
        return Tangent._from_layout(s, arrays)

    def sample_target(self, count: int, rng: np.random.Generator) -> np.ndarray:
        return self.spec.sample(count, rng)

    def to_config(self) -> dict:
        return {"kind": "mixture", "epsilon": self.eps, **self.spec.to_config()}


# ---------------------------------------------------------------------------
# Non-equivariant control

@dataclass(frozen=True, eq=False)
class PositionMLPField(VectorField):
    """Point velocity ``tanh([x, t] W1) W2`` on absolute, flattened coordinates.

    Breaks rotation, translation and permutation symmetry; used to check that
    equivariance tests can fail.
    """

    n_nodes: int
    W1: np.ndarray
    W2: np.ndarray
    seed: int = 0

    @classmethod
    def build(cls, n_nodes: int, hidden: int = 32, seed: int = 0) -> "PositionMLPField":
        rng = np.random.default_rng(seed)
        d = 3 * n_nodes
        W1 = rng.standard_normal((d + 1, hidden)) / np.sqrt(d + 1)
        W2 = rng.standard_normal((hidden, d)) / np.sqrt(hidden)
        return cls(n_nodes, W1, W2, seed)

    def _evaluate(self, s: State, t: float) -> Tangent:
        if s.n_nodes != self.n_nodes:
            raise ShapeError(f"control field built for {self.n_nodes} nodes, got {s.n_nodes}")
        z = np.append(s.points.ravel(), t)
        v = (np.tanh(z @ self.W1) @ self.W2).reshape(s.points.shape)
        arrays = [v.astype(c.data.dtype) if c.role is Role.POINTS else np.zeros_like(c.data)
                  for c in s.channels]
        return Tangent._from_layout(s, arrays)

    def to_config(self) -> dict:
        return {"kind": "control", "hidden": self.W1.shape[1], "seed": self.seed}
