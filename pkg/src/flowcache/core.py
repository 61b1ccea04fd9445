"""Joint point-set states, tangents, time grids and the E(3) x S_N action.

A :class:`State` bundles equivariant coordinates with invariant per-node and
per-edge channels. Categorical channels (atom types, bond orders) are kept as
relaxed real vectors so the whole sample is one homogeneous ODE state.

Edges are ordered node pairs stored in lexicographic order; constructing a
state with unsorted edges reorders the edge rows accordingly. This makes the
group action well defined on the edge channels: relabelling endpoints and
re-sorting gives a unique result.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError, NumericError, ShapeError


class Role(str, enum.Enum):
    POINTS = "equivariant-points"
    NODE = "invariant-node"
    EDGE = "invariant-edge"


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Channel:
    """One named block of state data.

    ``data`` has shape (N, 3) for points, (N, A) for node channels and (E, B)
    for edge channels. The array is copied and made read-only.
    """

    name: str
    role: Role
    data: np.ndarray

    def __post_init__(self):
        role = Role(self.role)
        data = np.asarray(self.data)
        if not np.issubdtype(data.dtype, np.floating):
            data = data.astype(np.float64)
        data = np.array(data)
        if data.ndim != 2:
            raise ShapeError(f"channel {self.name!r}: expected 2-D data, got {data.shape}")
        if role is Role.POINTS and data.shape[1] != 3:
            raise ShapeError(f"channel {self.name!r}: points need 3 columns, got {data.shape[1]}")
        if not np.all(np.isfinite(data)):
            raise NumericError(f"channel {self.name!r} contains non-finite entries")
        object.__setattr__(self, "role", role)
        object.__setattr__(self, "data", _frozen(data))

    def _replace(self, data: np.ndarray) -> "Channel":
        # Trusted fast path: caller guarantees shape and dtype.
        new = object.__new__(Channel)
        data.flags.writeable = False
        new.__dict__.update(name=self.name, role=self.role, data=data)
        return new


def complete_edges(n_nodes: int) -> np.ndarray:
    """All ordered pairs (i, j) with i != j, lexicographically sorted."""
    i, j = np.meshgrid(np.arange(n_nodes), np.arange(n_nodes), indexing="ij")
    mask = i != j
    return np.stack([i[mask], j[mask]], axis=1).astype(np.int64)


def _canonical_edges(edges) -> tuple[np.ndarray, np.ndarray]:
    """Sorted edge array plus the row order that produced it."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    order = np.lexsort((edges[:, 1], edges[:, 0]))
    return edges[order], order


class _PointSet:
    """Shared layout logic for :class:`State` and :class:`Tangent`."""

    __slots__ = ("n_nodes", "edges", "channels", "_index")
    # Make numpy scalars defer to our reflected operators.
    __array_ufunc__ = None

    def __init__(self, n_nodes: int, edges, channels: Iterable[Channel]):
        n_nodes = int(n_nodes)
        if n_nodes < 1:
            raise ShapeError(f"n_nodes must be positive, got {n_nodes}")
        edges, order = _canonical_edges(edges)
        if edges.size and (edges.min() < 0 or edges.max() >= n_nodes):
            raise ShapeError("edge references a node index outside [0, n_nodes)")
        if len(edges) > 1 and np.any(np.all(edges[1:] == edges[:-1], axis=1)):
            raise ShapeError("duplicate edges")

        chans = []
        for ch in channels:
            if ch.role is Role.EDGE:
                if ch.data.shape[0] != len(edges):
                    raise ShapeError(
                        f"channel {ch.name!r}: {ch.data.shape[0]} rows for {len(edges)} edges"
                    )
                ch = ch._replace(np.ascontiguousarray(ch.data[order]))
            elif ch.data.shape[0] != n_nodes:
                raise ShapeError(
                    f"channel {ch.name!r}: {ch.data.shape[0]} rows for {n_nodes} nodes"
                )
            chans.append(ch)

        names = [c.name for c in chans]
        if len(set(names)) != len(names):
            raise ShapeError(f"channel names must be unique, got {names}")
        n_points = sum(c.role is Role.POINTS for c in chans)
        if n_points != 1:
            raise ShapeError(f"exactly one points channel required, found {n_points}")
        self._init(n_nodes, _frozen(edges), tuple(chans))

    def _init(self, n_nodes, edges, channels):
        self.n_nodes = n_nodes
        self.edges = edges
        self.channels = channels
        self._index = {c.name: i for i, c in enumerate(channels)}

    @classmethod
    def _from_layout(cls, like: "_PointSet", arrays: Sequence[np.ndarray]):
        # Skips validation; used on hot paths where the layout is inherited.
        new = object.__new__(cls)
        new._init(like.n_nodes, like.edges,
                  tuple(c._replace(a) for c, a in zip(like.channels, arrays)))
        return new

    # -- access -----------------------------------------------------------
    def channel(self, name: str) -> Channel:
        return self.channels[self._index[name]]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.channel(name).data

    @property
    def points(self) -> np.ndarray:
        for c in self.channels:
            if c.role is Role.POINTS:
                return c.data
        raise AssertionError("unreachable")

    def arrays(self) -> tuple[np.ndarray, ...]:
        return tuple(c.data for c in self.channels)

    @property
    def size(self) -> int:
        return sum(c.data.size for c in self.channels)

    @property
    def dtype(self):
        return self.points.dtype

    def flat(self) -> np.ndarray:
        return np.concatenate([c.data.ravel() for c in self.channels])

    def norm(self) -> float:
        return float(np.sqrt(sum(np.vdot(a, a) for a in self.arrays())))

    def astype(self, dtype):
        return type(self)._from_layout(self, [a.astype(dtype) for a in self.arrays()])

    # -- layout checks ----------------------------------------------------
    def same_layout(self, other: "_PointSet") -> bool:
        if self.n_nodes != other.n_nodes or len(self.channels) != len(other.channels):
            return False
        if self.edges is not other.edges and not np.array_equal(self.edges, other.edges):
            return False
        return all(
            a.name == b.name and a.role is b.role and a.data.shape == b.data.shape
            for a, b in zip(self.channels, other.channels)
        )

    def _check(self, other):
        if not self.same_layout(other):
            raise ShapeError("operands have different layouts")

    def allclose(self, other: "_PointSet", atol: float = 0.0, rtol: float = 0.0) -> bool:
        return self.same_layout(other) and all(
            np.allclose(a, b, atol=atol, rtol=rtol) for a, b in zip(self.arrays(), other.arrays())
        )

    def equals(self, other: "_PointSet") -> bool:
        """Exact equality of layout and every entry."""
        return self.same_layout(other) and all(
            np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays())
        )

    def __repr__(self):
        chans = ", ".join(f"{c.name}{c.data.shape}" for c in self.channels)
        return f"{type(self).__name__}(n_nodes={self.n_nodes}, edges={len(self.edges)}, {chans})"


class State(_PointSet):
    """Joint sample: coordinates plus invariant node and edge channels."""

    __slots__ = ()

    def __add__(self, v: "Tangent") -> "State":
        if not isinstance(v, Tangent):
            return NotImplemented
        self._check(v)
        return State._from_layout(self, [a + b for a, b in zip(self.arrays(), v.arrays())])

    def __sub__(self, other: "State") -> "Tangent":
        if not isinstance(other, State):
            return NotImplemented
        self._check(other)
        return Tangent._from_layout(self, [a - b for a, b in zip(self.arrays(), other.arrays())])


class Tangent(_PointSet):
    """Velocity with the same channel layout as a :class:`State`.

    Supports the vector-space operations needed by Euler steps and cache
    forecasts: addition, subtraction, negation and scalar multiplication.
    """

    __slots__ = ()

    @classmethod
    def zeros_like(cls, s: _PointSet) -> "Tangent":
        return cls._from_layout(s, [np.zeros_like(a) for a in s.arrays()])

    @classmethod
    def from_arrays(cls, like: _PointSet, arrays: Sequence[np.ndarray]) -> "Tangent":
        arrays = [np.asarray(a) for a in arrays]
        if len(arrays) != len(like.channels) or any(
            a.shape != c.data.shape for a, c in zip(arrays, like.channels)
        ):
            raise ShapeError("arrays do not match the channel layout")
        return cls._from_layout(like, [np.array(a, dtype=like.dtype) for a in arrays])

    def __add__(self, other: "Tangent") -> "Tangent":
        if not isinstance(other, Tangent):
            return NotImplemented
        self._check(other)
        return Tangent._from_layout(self, [a + b for a, b in zip(self.arrays(), other.arrays())])

    def __sub__(self, other: "Tangent") -> "Tangent":
        if not isinstance(other, Tangent):
            return NotImplemented
        self._check(other)
        return Tangent._from_layout(self, [a - b for a, b in zip(self.arrays(), other.arrays())])

    def __mul__(self, c) -> "Tangent":
        if isinstance(c, _PointSet):
            return NotImplemented
        return Tangent._from_layout(self, [a * c for a in self.arrays()])

    __rmul__ = __mul__

    def __neg__(self) -> "Tangent":
        return Tangent._from_layout(self, [-a for a in self.arrays()])


def make_state(points, node=None, edge=None, edges=None, *, names=("coords", "atom_types", "bond_orders")) -> State:
    """Convenience constructor for the common three-channel layout.

    ``edges`` defaults to the complete graph when ``edge`` data is given and
    to no edges otherwise.
    """
    points = np.asarray(points, dtype=float)
    n = points.shape[0]
    if edges is None:
        edges = complete_edges(n) if edge is not None else np.zeros((0, 2), dtype=np.int64)
    channels = [Channel(names[0], Role.POINTS, points)]
    if node is not None:
        channels.append(Channel(names[1], Role.NODE, node))
    if edge is not None:
        channels.append(Channel(names[2], Role.EDGE, edge))
    return State(n, edges, channels)


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Strictly increasing times from exactly 0 to exactly 1."""

    times: np.ndarray

    def __post_init__(self):
        t = np.array(self.times, dtype=np.float64).ravel()
        if t.size < 2:
            raise DomainError("a time grid needs at least two points")
        if t[0] != 0.0 or t[-1] != 1.0:
            raise DomainError(f"grid must start at 0 and end at 1, got {t[0]} .. {t[-1]}")
        if np.any(np.diff(t) <= 0):
            raise DomainError("grid times must be strictly increasing")
        object.__setattr__(self, "times", _frozen(t))

    @property
    def K(self) -> int:
        return self.times.size - 1

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.times)

    def __len__(self):
        return self.times.size

    def __eq__(self, other):
        return isinstance(other, TimeGrid) and np.array_equal(self.times, other.times)

    def __hash__(self):
        return hash(self.times.tobytes())


def make_uniform_grid(K: int) -> TimeGrid:
    if int(K) != K or K < 1:
        raise DomainError(f"K must be a positive integer, got {K}")
    K = int(K)
    times = np.arange(K + 1, dtype=np.float64) / K
    return TimeGrid(times)


@dataclass(frozen=True, eq=False)
class GroupElement:
    """Element of E(3) x S_N acting as ``x -> R x + b`` followed by relabelling.

    ``permutation[i]`` is the new label of node ``i``. Reflections
    (det R = -1) are allowed.
    """

    rotation: np.ndarray
    translation: np.ndarray
    permutation: np.ndarray

    def __post_init__(self):
        R = np.array(self.rotation, dtype=np.float64)
        b = np.array(self.translation, dtype=np.float64).ravel()
        p = np.array(self.permutation, dtype=np.int64).ravel()
        if R.shape != (3, 3) or b.shape != (3,):
            raise ShapeError("rotation must be 3x3 and translation a 3-vector")
        if np.linalg.norm(R.T @ R - np.eye(3)) > 1e-12:
            raise DomainError("rotation is not orthogonal to 1e-12")
        if not np.array_equal(np.sort(p), np.arange(p.size)):
            raise DomainError("permutation is not a bijection on {0..N-1}")
        object.__setattr__(self, "rotation", _frozen(R))
        object.__setattr__(self, "translation", _frozen(b))
        object.__setattr__(self, "permutation", _frozen(p))

    @property
    def n_nodes(self) -> int:
        return self.permutation.size

    @classmethod
    def identity(cls, n_nodes: int) -> "GroupElement":
        return cls(np.eye(3), np.zeros(3), np.arange(n_nodes))

    def compose(self, other: "GroupElement") -> "GroupElement":
        """``self o other``: apply ``other`` first."""
        if self.n_nodes != other.n_nodes:
            raise ShapeError("cannot compose elements acting on different node counts")
        R = self.rotation @ other.rotation
        b = self.rotation @ other.translation + self.translation
        return GroupElement(_reorthogonalize(R), b, self.permutation[other.permutation])

    __matmul__ = compose

    def inverse(self) -> "GroupElement":
        Rt = self.rotation.T
        return GroupElement(Rt, -Rt @ self.translation, np.argsort(self.permutation))


def _reorthogonalize(R):
    # Products of orthogonal matrices drift by ~1e-16 per factor; snap back.
    u, _, vt = np.linalg.svd(R)
    return u @ vt


def random_rotation(rng: np.random.Generator, reflections: bool = True) -> np.ndarray:
    """Haar-distributed element of O(3) (or SO(3) when ``reflections`` is False)."""
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q * np.sign(np.diag(r))
    if reflections:
        if rng.random() < 0.5:
            q = q @ np.diag([1.0, 1.0, -1.0])
    elif np.linalg.det(q) < 0:
        q = q @ np.diag([1.0, 1.0, -1.0])
    return q


def random_group_element(n_nodes: int, rng: np.random.Generator, *,
                         reflections: bool = True, translation_scale: float = 1.0,
                         permute: bool = True) -> GroupElement:
    R = random_rotation(rng, reflections)
    b = translation_scale * rng.standard_normal(3)
    p = rng.permutation(n_nodes) if permute else np.arange(n_nodes)
    return GroupElement(R, b, p)


def _act(g: GroupElement, s: _PointSet, translate: bool):
    if g.n_nodes != s.n_nodes:
        raise ShapeError(f"group element acts on {g.n_nodes} nodes, state has {s.n_nodes}")
    inv = np.argsort(g.permutation)
    edges = g.permutation[s.edges]
    edges, order = _canonical_edges(edges)
    arrays = []
    for c in s.channels:
        a = c.data
        if c.role is Role.POINTS:
            a = a @ g.rotation.T.astype(a.dtype, copy=False)
            if translate:
                a = a + g.translation.astype(a.dtype, copy=False)
            a = a[inv]
        elif c.role is Role.NODE:
            a = a[inv]
        else:
            a = a[order]
        arrays.append(np.ascontiguousarray(a))
    out = object.__new__(type(s))
    out._init(s.n_nodes, _frozen(edges),
              tuple(c._replace(a) for c, a in zip(s.channels, arrays)))
    return out


def apply_group(g: GroupElement, s: State) -> State:
    """Rotate, translate and relabel a state."""
    return _act(g, s, translate=True)


def push_tangent(g: GroupElement, v: Tangent) -> Tangent:
    """Pushforward of the action on velocities: like :func:`apply_group` without translation."""
    return _act(g, v, translate=False)
