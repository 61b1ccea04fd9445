"""Command-line experiment runner.

Subcommands::

    flowcache sweep --config exp.toml [--out DIR]   # one CSV row per (policy, seed)
    flowcache traj  --config exp.toml               # per-step trajectory analysis
    flowcache equiv --config exp.toml               # equivariance commutation errors

Exit codes: 0 success, 1 config error, 2 numeric divergence, 3 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import platform
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .backbone import MixtureField
from .cache import CacheKind, CachePolicy
from .config import ExperimentConfig, load_config
from .core import make_uniform_grid, random_group_element
from .errors import ConfigError, DomainError, NumericDivergenceError
from .metrics import (centered_points, energy_distance, equivariance_error,
                      linear_predictability_error, pca_project, trajectory_deviation)
from .sampler import batch_sample, integrate, sample_layout

logger = logging.getLogger("flowcache")

SWEEP_COLUMNS = [
    "policy_kind", "D", "order", "ab_mode", "K", "nfe", "forecasts", "wall_seconds",
    "throughput_samples_per_s", "peak_cache_elements", "energy_distance",
    "mean_equivariance_error",
]
TRAJ_COLUMNS = [
    "step", "t", "is_full_compute", "predictability_error", "deviation_vs_base",
    "pca_x", "pca_y", "coord_predictability_error",
]
EQUIV_COLUMNS = [
    "policy_kind", "D", "order", "ab_mode", "K", "seed", "probe", "reflection",
    "equivariance_error",
]
# Trajectory i of seed s starts from base seed s * SEED_STRIDE + i.
SEED_STRIDE = 1_000_000
NONDETERMINISTIC_COLUMNS = ("wall_seconds", "throughput_samples_per_s")


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _policy_cells(policy: CachePolicy) -> list:
    has_order = policy.kind in (CacheKind.TAYLOR, CacheKind.ADAMS_BASHFORTH)
    ab = policy.ab_mode.value if policy.kind is CacheKind.ADAMS_BASHFORTH else ""
    return [policy.kind.value, policy.interval, policy.order if has_order else "", ab]


class _CsvWriter:
    """Single writer per output file; rows are flushed as they arrive."""

    def __init__(self, path: Path, columns: list[str]):
        self.path = path
        self._fh = open(path, "w", newline="", encoding="utf-8")
        self._w = csv.writer(self._fh, quoting=csv.QUOTE_MINIMAL)
        self._w.writerow(columns)

    def write(self, row):
        self._w.writerow([_fmt(v) for v in row])
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _out_dir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_manifest(out: Path, cfg: ExperimentConfig, command: str, started: float,
                   files: list[Path]) -> Path:
    finished = time.time()
    manifest = {
        "command": command,
        "artifact_version": __version__,
        "config": cfg.model_dump(mode="json"),
        "started_utc": datetime.fromtimestamp(started, timezone.utc).isoformat(),
        "finished_utc": datetime.fromtimestamp(finished, timezone.utc).isoformat(),
        "elapsed_seconds": finished - started,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "platform": platform.platform(),
        "outputs": [p.name for p in files],
    }
    path = out / cfg.output.manifest
    path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return path


def _trajectory_json(policy, seed, traj) -> str:
    rec = {
        "policy": policy.label, "seed": seed,
        "t": traj.times.tolist(),
        "is_full_compute": traj.computed,
        "points": [s.points.tolist() for s in traj.states],
    }
    return json.dumps(rec, separators=(",", ":"))


def run_sweep(cfg: ExperimentConfig) -> list[Path]:
    """One row per (policy, seed) cell; see ``SWEEP_COLUMNS``."""
    started = time.time()
    out = _out_dir(cfg)
    field = cfg.build_field()
    grid = make_uniform_grid(cfg.run.steps)
    layout = cfg.layout
    dtype = cfg.dtype
    files = [out / cfg.output.sweep_csv]
    jsonl = None
    if cfg.run.record_trajectories:
        files.append(out / cfg.output.trajectories_jsonl)
        jsonl = open(files[-1], "w", encoding="utf-8")

    try:
        with _CsvWriter(files[0], SWEEP_COLUMNS) as writer:
            for policy in cfg.cache_policies():
                for seed in cfg.run.seeds:
                    base = seed * SEED_STRIDE
                    res = batch_sample(field, policy, grid, cfg.run.batch, base,
                                       cfg.run.threads, layout=layout, dtype=dtype)
                    nfe = {r.nfe for r in res.records}
                    forecasts = {r.forecasts for r in res.records}
                    assert len(nfe) == 1 and len(forecasts) == 1

                    ed = None
                    if isinstance(field, MixtureField):
                        target = field.sample_target(res.count, np.random.default_rng([seed, 1]))
                        ed = energy_distance(centered_points(res.samples), centered_points(target))

                    eq = None
                    if cfg.run.equivariance_probes:
                        errs = []
                        for p in range(cfg.run.equivariance_probes):
                            rng = np.random.default_rng([seed, 2, p])
                            g = random_group_element(layout.n_nodes, rng)
                            x0 = sample_layout(layout, base + p, dtype)
                            errs.append(equivariance_error(field, policy, grid, g, x0))
                        eq = float(np.mean(errs))

                    writer.write(_policy_cells(policy) + [
                        grid.K, nfe.pop(), forecasts.pop(), res.wall_seconds, res.throughput,
                        res.peak_cache_elements, ed, eq,
                    ])
                    logger.info("%s seed=%d: %.1f samples/s", policy.label, seed, res.throughput)

                    if jsonl is not None:
                        x0 = sample_layout(layout, base, dtype)
                        _, _, traj = integrate(field, policy, grid, x0, record_trajectory=True, seed=base)
                        jsonl.write(_trajectory_json(policy, base, traj) + "\n")
    finally:
        if jsonl is not None:
            jsonl.close()
    files.append(write_manifest(out, cfg, "sweep", started, files))
    return files


def run_traj(cfg: ExperimentConfig) -> list[Path]:
    """Per-step CSV for each (policy, seed): smoothness, deviation and PCA."""
    if not cfg.run.record_trajectories:
        raise ConfigError("traj needs run.record_trajectories = true")
    started = time.time()
    out = _out_dir(cfg)
    field = cfg.build_field()
    grid = make_uniform_grid(cfg.run.steps)
    layout = cfg.layout
    files = []
    for seed in cfg.run.seeds:
        base_seed = seed * SEED_STRIDE
        x0 = sample_layout(layout, base_seed, cfg.dtype)
        _, _, base = integrate(field, CachePolicy.none(), grid, x0, record_trajectory=True)
        for policy in cfg.cache_policies():
            _, _, traj = integrate(field, policy, grid, x0, record_trajectory=True)
            K = grid.K
            pred = linear_predictability_error(traj.velocities).as_dict() if K >= 3 else {}
            coord_pred = linear_predictability_error(traj.states).as_dict()
            dev = trajectory_deviation(base, traj).values
            try:
                pca = pca_project(traj.states, 2).points
            except DomainError as exc:
                logger.warning("%s seed=%d: no PCA (%s)", policy.label, seed, exc)
                pca = None
            path = out / f"traj_{policy.label}_seed{seed}.csv"
            with _CsvWriter(path, TRAJ_COLUMNS) as writer:
                for k in range(K + 1):
                    writer.write([
                        k, float(grid.times[k]),
                        traj.computed[k] if k < K else None,
                        pred.get(k),
                        dev[k],
                        None if pca is None else pca[k, 0],
                        None if pca is None else pca[k, 1],
                        coord_pred.get(k),
                    ])
            files.append(path)
    files.append(write_manifest(out, cfg, "traj", started, files))
    return files


def run_equiv(cfg: ExperimentConfig) -> list[Path]:
    """Equivariance commutation error per (policy, seed, random group element)."""
    started = time.time()
    out = _out_dir(cfg)
    field = cfg.build_field()
    grid = make_uniform_grid(cfg.run.steps)
    layout = cfg.layout
    probes = max(cfg.run.equivariance_probes, 1)
    path = out / cfg.output.equiv_csv
    with _CsvWriter(path, EQUIV_COLUMNS) as writer:
        for policy in cfg.cache_policies():
            for seed in cfg.run.seeds:
                for p in range(probes):
                    g = random_group_element(layout.n_nodes, np.random.default_rng([seed, 2, p]))
                    x0 = sample_layout(layout, seed * SEED_STRIDE + p, cfg.dtype)
                    err = equivariance_error(field, policy, grid, g, x0)
                    writer.write(_policy_cells(policy) + [
                        grid.K, seed, p, bool(np.linalg.det(g.rotation) < 0), err])
    return [path, write_manifest(out, cfg, "equiv", started, [path])]


COMMANDS = {"sweep": run_sweep, "traj": run_traj, "equiv": run_equiv}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flowcache", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=COMMANDS[name].__doc__.splitlines()[0])
        p.add_argument("--config", required=True, type=Path)
        p.add_argument("--out", type=Path, help="output directory (overrides output.dir)")
        p.add_argument("--threads", type=int, help="worker threads per batch")
        p.add_argument("--seed", type=int, help="run a single seed instead of run.seeds")
        p.add_argument("--precision", choices=["single", "double"])
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = load_config(args.config)
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        cfg = cfg.with_overrides(seed=args.seed, threads=args.threads,
                                 precision=args.precision, out=args.out)
        files = COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except NumericDivergenceError as exc:
        print(f"numeric divergence: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 3
    for f in files:
        print(f)
    return 0


if __name__ == "__main__":
    sys.exit(main())
