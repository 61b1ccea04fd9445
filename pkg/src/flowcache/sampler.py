"""Explicit Euler integration with cache hooks, base sampling and batching."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .backbone import VectorField
from .cache import CachePolicy, CacheState, schedule
from .core import Channel, Role, State, Tangent, TimeGrid, complete_edges
from .errors import DomainError, NumericDivergenceError

logger = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e6


@dataclass(frozen=True)
class StateLayout:
    """Shape of the states a run works on."""

    n_nodes: int
    edges: str | np.ndarray = "complete"
    node_dim: int = 0
    edge_dim: int = 0

    def edge_array(self) -> np.ndarray:
        return _resolve_edges(self.n_nodes, self.edges)


def _resolve_edges(n_nodes, edges) -> np.ndarray:
    if isinstance(edges, str):
        if edges == "complete":
            return complete_edges(n_nodes)
        if edges == "none":
            return np.zeros((0, 2), dtype=np.int64)
        raise DomainError(f"unknown edge topology {edges!r}")
    return np.asarray(edges, dtype=np.int64).reshape(-1, 2)


def sample_base(n_nodes: int, edge_spec="complete", seed: int = 0, *, node_dim: int = 0,
                edge_dim: int = 0, center: bool = True, dtype=np.float64) -> State:
    """Draw ``x0``: isotropic coordinates (centre of mass removed) and standard
    normal invariant channels. Channels with zero width are omitted."""
    if n_nodes < 1:
        raise DomainError(f"n_nodes must be >= 1, got {n_nodes}")
    edges = _resolve_edges(n_nodes, edge_spec)
    rng = np.random.default_rng(seed)
    coords = rng.standard_normal((n_nodes, 3))
    if center:
        coords -= coords.mean(axis=0)
    channels = [Channel("coords", Role.POINTS, coords.astype(dtype))]
    if node_dim:
        channels.append(Channel("atom_types", Role.NODE,
                                rng.standard_normal((n_nodes, node_dim)).astype(dtype)))
    if edge_dim:
        channels.append(Channel("bond_orders", Role.EDGE,
                                rng.standard_normal((len(edges), edge_dim)).astype(dtype)))
    return State(n_nodes, edges, channels)


def sample_layout(layout: StateLayout, seed: int, dtype=np.float64) -> State:
    return sample_base(layout.n_nodes, layout.edges, seed, node_dim=layout.node_dim,
                       edge_dim=layout.edge_dim, dtype=dtype)


@dataclass
class TrajectoryRecord:
    """Per-step record of one integration.

    ``velocities[k]`` and ``computed[k]`` describe the velocity used on step
    ``k``; ``states`` holds ``x_0 .. x_K``.
    """

    times: np.ndarray
    steps: list[int] = field(default_factory=list)
    computed: list[bool] = field(default_factory=list)
    velocities: list[Tangent] = field(default_factory=list)
    states: list[State] = field(default_factory=list)
    step_seconds: list[float] = field(default_factory=list)


@dataclass
class RunRecord:
    nfe: int
    forecasts: int
    wall_seconds: float
    peak_cache_elements: int
    samples: list
    seed: int | None
    policy: CachePolicy
    K: int


def _check_finite(s: State, step: int):
    for a in s.arrays():
        m = np.max(np.abs(a)) if a.size else 0.0
        if not m <= DIVERGENCE_LIMIT:     # also catches NaN
            raise NumericDivergenceError(step, f"state diverged at step {step} (max |x| = {m})")


def integrate(field: VectorField, policy: CachePolicy, grid: TimeGrid, x0: State,
              record_trajectory: bool = False, seed: int | None = None):
    """Euler-integrate ``x0`` over ``grid``, forecasting off-schedule velocities.

    Returns ``(x_K, RunRecord, TrajectoryRecord | None)``.
    """
    K = grid.K
    full = set(schedule(K, policy))
    cache = CacheState(policy)
    times = grid.times
    dts = grid.steps
    traj = TrajectoryRecord(times=times) if record_trajectory else None
    if traj is not None:
        traj.states.append(x0)

    x = x0
    start = time.perf_counter()
    for k in range(K):
        t0 = time.perf_counter()
        if k in full:
            v = field.evaluate(x, times[k])
            cache.refresh(v, k)
            computed = True
        else:
            v = cache.forecast(k - cache.last_step)
            computed = False
        if v.dtype != x.dtype:
            v = v.astype(x.dtype)
        x = x + dts[k].astype(x.dtype) * v
        _check_finite(x, k)
        if traj is not None:
            traj.steps.append(k)
            traj.computed.append(computed)
            traj.velocities.append(v)
            traj.states.append(x)
            traj.step_seconds.append(time.perf_counter() - t0)
    wall = time.perf_counter() - start

    record = RunRecord(
        nfe=cache.nfe, forecasts=cache.forecasts, wall_seconds=wall,
        peak_cache_elements=cache.peak_elements, samples=[x], seed=seed,
        policy=policy, K=K,
    )
    return x, record, traj


@dataclass
class BatchResult:
    records: list[RunRecord]
    wall_seconds: float
    policy: CachePolicy
    K: int

    @property
    def count(self) -> int:
        return len(self.records)

    @property
    def throughput(self) -> float:
        """Samples per second of wall time for the whole batch."""
        return self.count / self.wall_seconds if self.wall_seconds > 0 else float("inf")

    @property
    def mean_nfe(self) -> float:
        return float(np.mean([r.nfe for r in self.records]))

    @property
    def samples(self) -> list[State]:
        return [r.samples[-1] for r in self.records]

    @property
    def peak_cache_elements(self) -> int:
        return max(r.peak_cache_elements for r in self.records)


def batch_sample(field: VectorField, policy: CachePolicy, grid: TimeGrid, count: int,
                 base_seed: int, threads: int = 1, *, layout: StateLayout,
                 dtype=np.float64) -> BatchResult:
    """Run ``count`` independent trajectories seeded ``base_seed + i``.

    Trajectories share only the read-only field, so the outcome does not
    depend on ``threads``.
    """
    if count < 1:
        raise DomainError(f"count must be >= 1, got {count}")
    if threads < 1:
        raise DomainError(f"threads must be >= 1, got {threads}")

    def one(i):
        seed = base_seed + i
        x0 = sample_layout(layout, seed, dtype)
        try:
            return integrate(field, policy, grid, x0, seed=seed)[1]
        except NumericDivergenceError as exc:
            raise NumericDivergenceError(exc.step, trajectory=i) from exc

    start = time.perf_counter()
    if threads == 1:
        records = [one(i) for i in range(count)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(one, range(count)))
    wall = time.perf_counter() - start
    logger.debug("batch %s: %d samples in %.3fs", policy.label, count, wall)
    return BatchResult(records=records, wall_seconds=wall, policy=policy, K=grid.K)
