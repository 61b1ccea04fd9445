"""Checkpoint schedules and forecasting caches for the sampler.

Every ``D`` solver steps the backbone runs in full and its output is pushed
into a :class:`CacheState`. Steps in between are served by a forecast built
from the stored checkpoints:

* ``naive`` -- reuse the latest output.
* ``taylor`` -- order-``m`` expansion in backward differences of the
  checkpoint outputs, ``sum_i C(s + i - 1, i) * Delta^i F`` with
  ``s = k / D``. For ``m <= 1`` this is exactly ``F + Delta F * k / D``; for
  higher orders the rising-factorial coefficients make the forecast exact on
  polynomial checkpoint sequences (Newton's backward formula).
* ``adams_bashforth`` -- order-``j`` linear multistep extrapolation from the
  last ``j`` outputs, either with fixed binomial weights (``paper_exact``,
  one full interval ahead regardless of ``k``) or with the interpolating
  polynomial evaluated at the actual offset (``offset_aware``).

Cached values can be anything closed under ``+``, ``-`` and scalar ``*``:
floats, numpy arrays or :class:`~flowcache.core.Tangent`.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass
from math import comb

import numpy as np

from .errors import CacheUsageError, DomainError


class CacheKind(str, enum.Enum):
    NONE = "none"
    NAIVE = "naive"
    TAYLOR = "taylor"
    ADAMS_BASHFORTH = "adams_bashforth"


class ABMode(str, enum.Enum):
    PAPER_EXACT = "paper_exact"
    OFFSET_AWARE = "offset_aware"


@dataclass(frozen=True)
class CachePolicy:
    """Forecasting configuration.

    ``order`` is the Taylor order ``m`` (>= 0) or the Adams-Bashforth step
    count ``j`` (>= 1); it is ignored for ``none`` and ``naive``.
    """

    kind: CacheKind = CacheKind.NONE
    interval: int = 1
    order: int = 0
    ab_mode: ABMode = ABMode.OFFSET_AWARE

    def __post_init__(self):
        object.__setattr__(self, "kind", CacheKind(self.kind))
        object.__setattr__(self, "ab_mode", ABMode(self.ab_mode))
        if int(self.interval) != self.interval or self.interval < 1:
            raise DomainError(f"cache interval must be a positive integer, got {self.interval}")
        if self.kind is CacheKind.TAYLOR and self.order < 0:
            raise DomainError(f"taylor order must be >= 0, got {self.order}")
        if self.kind is CacheKind.ADAMS_BASHFORTH and self.order < 1:
            raise DomainError(f"adams_bashforth needs j >= 1, got {self.order}")

    @classmethod
    def none(cls) -> "CachePolicy":
        return cls(CacheKind.NONE)

    @classmethod
    def naive(cls, D: int) -> "CachePolicy":
        return cls(CacheKind.NAIVE, D, 0)

    @classmethod
    def taylor(cls, D: int, m: int = 1) -> "CachePolicy":
        return cls(CacheKind.TAYLOR, D, m)

    @classmethod
    def adams_bashforth(cls, D: int, j: int = 2, mode="offset_aware") -> "CachePolicy":
        return cls(CacheKind.ADAMS_BASHFORTH, D, j, ABMode(mode))

    @property
    def history_size(self) -> int:
        """Checkpoints that must be retained."""
        if self.kind is CacheKind.NONE:
            return 0
        if self.kind is CacheKind.NAIVE:
            return 1
        if self.kind is CacheKind.TAYLOR:
            return self.order + 1
        return self.order

    @property
    def label(self) -> str:
        if self.kind is CacheKind.NONE:
            return "none"
        if self.kind is CacheKind.NAIVE:
            return f"naive_D{self.interval}"
        if self.kind is CacheKind.TAYLOR:
            return f"taylor_D{self.interval}_m{self.order}"
        return f"ab_D{self.interval}_j{self.order}_{self.ab_mode.value}"


def schedule(K: int, policy: CachePolicy) -> tuple[int, ...]:
    """Sorted full-compute step indices: every ``D``-th step plus the last one."""
    if K < 1:
        raise DomainError(f"K must be >= 1, got {K}")
    if policy.kind is CacheKind.NONE:
        return tuple(range(K))
    return tuple(sorted(set(range(0, K, policy.interval)) | {K - 1}))


def _size(v) -> int:
    return int(v.size) if hasattr(v, "size") else int(np.size(v))


def _combine(coeffs, values):
    # Start from the first term so a single unit weight reproduces the value bit for bit.
    out = values[0] if coeffs[0] == 1.0 else values[0] * coeffs[0]
    for c, v in zip(coeffs[1:], values[1:]):
        out = out + v * c
    return out


class CacheState:
    """Per-trajectory checkpoint history, backward differences and counters."""

    def __init__(self, policy: CachePolicy):
        self.policy = policy
        self.history: deque = deque(maxlen=max(policy.history_size, 1))
        self.differences: list = []
        self.nfe = 0
        self.forecasts = 0
        self.peak_elements = 0

    @property
    def checkpoints(self) -> int:
        return len(self.history)

    @property
    def last_step(self) -> int | None:
        return self.history[-1][0] if self.history else None

    @property
    def latest(self):
        if not self.history:
            raise CacheUsageError("cache is empty")
        return self.history[-1][1]

    def refresh(self, value, step: int) -> "CacheState":
        """Store a freshly computed output and update the differences."""
        step = int(step)
        if self.history and step <= self.history[-1][0]:
            raise CacheUsageError(
                f"refresh steps must increase: got {step} after {self.history[-1][0]}"
            )
        self.nfe += 1
        if self.policy.kind is CacheKind.NONE:
            # Keep the step for ordering checks only.
            self.history.clear()
            self.history.append((step, None))
            return self

        if self.policy.kind is CacheKind.TAYLOR:
            m = self.policy.order
            old = self.differences
            new = [value]
            for i in range(1, min(m, len(old)) + 1):
                new.append(new[i - 1] - old[i - 1])
            self.differences = new
        else:
            self.differences = [value]
        self.history.append((step, value))
        self.peak_elements = max(self.peak_elements, memory_footprint(self))
        return self

    def recompute_differences(self) -> list:
        """Backward differences rebuilt from the raw history (for consistency checks)."""
        values = [v for _, v in self.history]
        diffs = [values[-1]]
        level = values
        for _ in range(len(self.differences) - 1):
            level = [b - a for a, b in zip(level[:-1], level[1:])]
            diffs.append(level[-1])
        return diffs

    def forecast(self, k: int):
        """Predict the output ``k`` steps after the latest checkpoint."""
        kind = self.policy.kind
        if kind is CacheKind.TAYLOR:
            return forecast_taylor(self, k)
        if kind is CacheKind.ADAMS_BASHFORTH:
            return forecast_ab(self, k)
        if kind is CacheKind.NAIVE:
            _check_forecast(self, k)
            self.forecasts += 1
            return self.latest
        raise CacheUsageError("policy 'none' never forecasts")


def refresh(cs: CacheState, value, step: int) -> CacheState:
    return cs.refresh(value, step)


def _check_forecast(cs: CacheState, k: int):
    if not cs.history:
        raise CacheUsageError("cannot forecast from an empty cache")
    if k < 1:
        raise DomainError(f"forecast offset must be >= 1, got {k}")


def taylor_coefficients(order: int, s: float) -> list[float]:
    """Weights ``C(s + i - 1, i)`` of the backward differences, ``i = 0..order``."""
    coeffs = [1.0]
    c = 1.0
    for i in range(1, order + 1):
        c *= (s + i - 1) / i
        coeffs.append(c)
    return coeffs


def forecast_taylor(cs: CacheState, k: int, policy: CachePolicy | None = None):
    """Order-``m`` finite-difference forecast ``k`` steps past the latest checkpoint.

    The effective order is limited by the checkpoints seen so far. Exact for
    polynomial checkpoint sequences of degree up to the effective order.
    """
    policy = policy or cs.policy
    _check_forecast(cs, k)
    diffs = cs.differences[: policy.order + 1]
    cs.forecasts += 1
    if len(diffs) == 1:
        return diffs[0]
    return _combine(taylor_coefficients(len(diffs) - 1, k / policy.interval), diffs)


def ab_binomial_weights(j: int) -> list[float]:
    """Binomial weights ``(-1)^(i+1) C(j, i)``, newest value first."""
    return [float((-1) ** (i + 1) * comb(j, i)) for i in range(1, j + 1)]


def lagrange_weights(nodes, target: float) -> list[float]:
    nodes = [float(n) for n in nodes]
    out = []
    for i, xi in enumerate(nodes):
        w = 1.0
        for r, xr in enumerate(nodes):
            if r != i:
                w *= (target - xr) / (xi - xr)
        out.append(w)
    return out


def forecast_ab(cs: CacheState, k: int, policy: CachePolicy | None = None):
    """``j``-step Adams-Bashforth style forecast from the latest checkpoints.

    Falls back to the largest ``j`` the history supports.
    """
    policy = policy or cs.policy
    _check_forecast(cs, k)
    j = min(policy.order, len(cs.history))
    recent = list(cs.history)[-j:][::-1]          # newest first
    values = [v for _, v in recent]
    cs.forecasts += 1
    if j == 1:
        return values[0]
    if policy.ab_mode is ABMode.PAPER_EXACT:
        return _combine(ab_binomial_weights(j), values)
    steps = [s for s, _ in recent]
    return _combine(lagrange_weights(steps, steps[0] + k), values)


def memory_footprint(cs: CacheState) -> int:
    """Stored element count under the policy's accounting.

    ``(m_eff + 1) |F|`` for Taylor, ``j_eff |F|`` for Adams-Bashforth,
    ``|F|`` for naive and 0 for none.
    """
    kind = cs.policy.kind
    if kind is CacheKind.NONE or not cs.history:
        return 0
    n = _size(cs.latest)
    if kind is CacheKind.NAIVE:
        return n
    if kind is CacheKind.TAYLOR:
        return len(cs.differences) * n
    return min(cs.policy.order, len(cs.history)) * n
