"""Experiment configuration: a TOML file validated against a strict schema.

Unknown keys are rejected. Validation failures raise :class:`ConfigError`
with the offending field path and, where it can be found, the line number.
See ``README.md`` for the full schema.
"""

from __future__ import annotations

import re
import sys
from pathlib import Path
from typing import Annotated, Literal, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .backbone import (DEFAULT_EPSILON, MixtureField, MixtureSpec, PositionMLPField,
                       VectorField, build_equivariant_backbone, random_point_mixture)
from .cache import CachePolicy
from .errors import ConfigError
from .sampler import StateLayout


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class BackboneConfig(_Strict):
    kind: Literal["backbone"] = "backbone"
    blocks: int = Field(3, ge=1)
    hidden: int = Field(16, ge=1)
    seed: int = 0
    padding: int = Field(0, ge=0)
    pad_width: int = Field(128, ge=1)
    init_scale: float = 1.0


class MixtureConfig(_Strict):
    kind: Literal["mixture"] = "mixture"
    # Either random point masses ...
    components: int = Field(4, ge=1)
    mean_seed: int = 0
    mean_scale: float = Field(2.0, gt=0)
    sigma: float = Field(0.0, ge=0)
    # ... or explicit parameters.
    weights: list[float] | None = None
    means: list[list[list[float]]] | None = None
    sigmas: list[float] | None = None
    epsilon: float = Field(DEFAULT_EPSILON, gt=0, lt=1)

    @model_validator(mode="after")
    def _explicit_complete(self):
        given = [self.weights is not None, self.means is not None]
        if any(given) and not all(given):
            raise ValueError("explicit mixtures need both 'weights' and 'means'")
        return self


class ControlConfig(_Strict):
    kind: Literal["control"] = "control"
    hidden: int = Field(32, ge=1)
    seed: int = 0


FieldConfig = Annotated[Union[BackboneConfig, MixtureConfig, ControlConfig],
                        Field(discriminator="kind")]


class StateConfig(_Strict):
    n_nodes: int = Field(8, ge=1)
    edges: Literal["complete", "none"] = "complete"
    node_dim: int = Field(4, ge=0)
    edge_dim: int = Field(2, ge=0)


class PolicyConfig(_Strict):
    kind: Literal["none", "naive", "taylor", "adams_bashforth"]
    interval: int = Field(1, ge=1)
    order: int | None = None
    ab_mode: Literal["paper_exact", "offset_aware"] = "offset_aware"

    def to_policy(self) -> CachePolicy:
        order = self.order
        if order is None:
            order = {"taylor": 1, "adams_bashforth": 2}.get(self.kind, 0)
        return CachePolicy(self.kind, self.interval, order, self.ab_mode)

    @model_validator(mode="after")
    def _valid(self):
        try:
            self.to_policy()
        except ValueError as exc:
            raise ValueError(str(exc)) from None
        return self


class RunConfig(_Strict):
    steps: int = Field(100, ge=1)
    batch: int = Field(16, ge=1)
    seeds: list[int] = Field(default_factory=lambda: [0], min_length=1)
    threads: int = Field(1, ge=1)
    precision: Literal["single", "double"] = "double"
    record_trajectories: bool = False
    equivariance_probes: int = Field(2, ge=0)


class OutputConfig(_Strict):
    dir: str = "results"
    sweep_csv: str = "sweep.csv"
    trajectories_jsonl: str = "trajectories.jsonl"
    equiv_csv: str = "equiv.csv"
    manifest: str = "manifest.json"


class ExperimentConfig(_Strict):
    field: FieldConfig = Field(default_factory=BackboneConfig)
    state: StateConfig = Field(default_factory=StateConfig)
    run: RunConfig = Field(default_factory=RunConfig)
    policies: list[PolicyConfig] = Field(
        default_factory=lambda: [PolicyConfig(kind="none")], min_length=1)
    output: OutputConfig = Field(default_factory=OutputConfig)

    @model_validator(mode="after")
    def _consistent(self):
        f = self.field
        if isinstance(f, MixtureConfig) and f.means is not None:
            n = np.asarray(f.means).shape[1]
            if n != self.state.n_nodes:
                raise ValueError(f"mixture means have {n} nodes, state.n_nodes is {self.state.n_nodes}")
        return self

    # -- derived objects --------------------------------------------------
    @property
    def dtype(self):
        return np.float32 if self.run.precision == "single" else np.float64

    @property
    def layout(self) -> StateLayout:
        f = self.field
        if isinstance(f, BackboneConfig):
            return StateLayout(self.state.n_nodes, self.state.edges,
                               self.state.node_dim, self.state.edge_dim)
        return StateLayout(self.state.n_nodes, self.state.edges, 0, 0)

    def build_field(self) -> VectorField:
        f = self.field
        if isinstance(f, BackboneConfig):
            return build_equivariant_backbone(
                f.blocks, f.hidden, f.seed, node_dim=self.state.node_dim,
                edge_dim=self.state.edge_dim, padding=f.padding, pad_width=f.pad_width,
                init_scale=f.init_scale, dtype=self.dtype)
        if isinstance(f, MixtureConfig):
            if f.weights is not None:
                sig = f.sigmas if f.sigmas is not None else [f.sigma] * len(f.weights)
                spec = MixtureSpec(np.array(f.weights), np.array(f.means), np.array(sig))
            else:
                spec = random_point_mixture(f.components, self.state.n_nodes, f.mean_seed,
                                            scale=f.mean_scale, sigma=f.sigma)
            return MixtureField(spec, f.epsilon)
        return PositionMLPField.build(self.state.n_nodes, f.hidden, f.seed)

    def cache_policies(self) -> list[CachePolicy]:
        return [p.to_policy() for p in self.policies]

    def with_overrides(self, *, seed=None, threads=None, precision=None, out=None) -> "ExperimentConfig":
        run = self.run.model_copy(update={
            k: v for k, v in (("seeds", None if seed is None else [seed]),
                              ("threads", threads), ("precision", precision)) if v is not None})
        output = self.output if out is None else self.output.model_copy(update={"dir": str(out)})
        return self.model_copy(update={"run": run, "output": output})


def _locate(text: str, loc: tuple) -> int | None:
    """Best-effort line number of the key named last in ``loc``."""
    keys = [k for k in loc if isinstance(k, str)]
    if not keys:
        return None
    pat = re.compile(rf"^\s*{re.escape(keys[-1])}\s*=")
    for i, line in enumerate(text.splitlines(), start=1):
        if pat.match(line):
            return i
    return None


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        lines = []
        for err in exc.errors():
            loc = tuple(err["loc"])
            path = ".".join(str(p) for p in loc) or "<root>"
            line = _locate(text, loc)
            where = f"{source}:{line}: " if line else f"{source}: "
            lines.append(f"{where}{path}: {err['msg']}")
        raise ConfigError("invalid config\n  " + "\n  ".join(lines)) from None


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, str(path))
