"""Experiment configuration, seeding, replica scheduling and persistence."""

from __future__ import annotations

import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .errors import LabError, ParameterError
from .report import StatReport, Statistic, _clean

log = logging.getLogger(__name__)

OUT_DIR_ENV = "LAB_OUT_DIR"
DEFAULT_OUT_DIR = "lab_out"


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything that determines an experiment; the seed fixes all randomness.

    Unset numeric fields (None) fall back to the experiment's defaults.
    ``params`` carries experiment-specific extras.
    """

    experiment: str
    K: int | None = None
    dt: float | None = None
    T: float | None = None
    replicas: int | None = None
    seed: int = 1
    mollifier_inner: float = 0.5
    mollifier_outer: float = 1.0
    levels: tuple | None = None
    L_levels: tuple | None = None
    out: str | None = None
    workers: int = 1
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.replicas is not None and self.replicas < 1:
            raise ParameterError(f"replicas must be positive, got {self.replicas}")
        if self.seed < 0:
            raise ParameterError("seed must be a nonnegative integer")
        for name in ("dt", "T"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ParameterError(f"{name} must be positive")
        if self.K is not None and self.K < 1:
            raise ParameterError("K must be positive")
        if self.workers < 1:
            raise ParameterError("workers must be >= 1")
        for name in ("levels", "L_levels"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, tuple(v))

    def with_defaults(self, defaults: dict) -> "ExperimentConfig":
        """Fill unset fields (and missing params) from a defaults mapping."""
        known = {f.name for f in fields(self)}
        updates = {k: v for k, v in defaults.items() if k in known and getattr(self, k) is None}
        params = {k: v for k, v in defaults.items() if k not in known}
        params.update(self.params)
        return replace(self, **updates, params=params)

    def param(self, name, default=None):
        return self.params.get(name, default)

    def output_dir(self) -> Path:
        return Path(self.out or os.environ.get(OUT_DIR_ENV) or DEFAULT_OUT_DIR)

    def to_dict(self) -> dict:
        return _clean(asdict(self))


def _parse_scalar(text: str):
    text = text.strip()
    if "," in text:
        return tuple(_parse_scalar(t) for t in text.split(",") if t.strip())
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    if low in ("none", "null", ""):
        return None
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def parse_config_text(text: str, fmt: str | None = None) -> dict:
    """JSON object, or ``key = value`` lines (``#`` comments, comma lists)."""
    stripped = text.strip()
    if fmt == "json" or (fmt is None and stripped.startswith("{")):
        return json.loads(stripped)
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParameterError(f"config line {lineno}: expected key = value")
        key, value = line.split("=", 1)
        out[key.strip()] = _parse_scalar(value)
    return out


def config_from_mapping(data: dict, experiment: str | None = None) -> ExperimentConfig:
    data = dict(data)
    name = experiment or data.pop("experiment", None)
    data.pop("experiment", None)
    if not name:
        raise ParameterError("config names no experiment")
    known = {f.name for f in fields(ExperimentConfig)} - {"experiment", "params"}
    params = dict(data.pop("params", {}) or {})
    kwargs = {}
    for k, v in data.items():
        (kwargs if k in known else params)[k] = v
    return ExperimentConfig(name, **kwargs, params=params)


def load_config(path, experiment: str | None = None) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParameterError(f"cannot read config {path}: {exc}") from exc
    fmt = "json" if path.suffix == ".json" else None
    return config_from_mapping(parse_config_text(text, fmt), experiment)


# ----------------------------------------------------------------------------
# seeding and replica scheduling
# ----------------------------------------------------------------------------

def replica_generator(seed: int, replica: int, stream: int = 0) -> np.random.Generator:
    """Generator for one replica: Philox with key (replica, seed + 2^32 stream).

    The counter-based construction makes replica r's random numbers a pure
    function of (seed, r, stream), whatever the batch or worker layout.
    """
    key = np.array([replica, seed + (stream << 32)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def replica_generators(seed: int, indices, stream: int = 0) -> list:
    return [replica_generator(seed, int(r), stream) for r in indices]


class ReplicaError(LabError):
    def __init__(self, message, replica=None):
        super().__init__(message)
        self.replica = replica


def _run_block(task, config, indices):
    try:
        return task(config, np.asarray(indices))
    except Exception as exc:                      # surface the failing block
        raise ReplicaError(f"replicas {indices[0]}..{indices[-1]} failed: {exc!r}",
                           replica=int(indices[0])) from exc


def replica_blocks(replicas: int, block_size: int | None = None) -> list:
    block_size = block_size or replicas
    return [list(range(s, min(s + block_size, replicas))) for s in range(0, replicas, block_size)]


def replica_map(config: ExperimentConfig, task, reducer=None, block_size: int | None = None,
                workers: int | None = None):
    """Apply ``task(config, indices)`` to fixed replica blocks and reduce in order.

    The block layout depends only on ``block_size`` (never on ``workers``), and
    results are reduced in block order, so the aggregate is identical for
    serial and parallel execution.  Without a reducer the list of block
    results is returned.
    """
    if not config.replicas or config.replicas < 1:
        raise ParameterError("replica_map needs replicas >= 1")
    blocks = replica_blocks(config.replicas, block_size)
    workers = workers or config.workers
    if workers > 1 and len(blocks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_block, task, config, b) for b in blocks]
            results = [f.result() for f in futures]
    else:
        results = [_run_block(task, config, b) for b in blocks]
    return reducer(results) if reducer is not None else results


# ----------------------------------------------------------------------------
# running and persistence
# ----------------------------------------------------------------------------

def write_series_csv(path, columns: dict) -> Path:
    """Columns of equal length as a CSV table (header = column names)."""
    path = Path(path)
    names = list(columns)
    data = np.column_stack([np.asarray(columns[n], float).ravel() for n in names])
    np.savetxt(path, data, delimiter=",", header=",".join(names), comments="", fmt="%.10g")
    return path


def run_experiment(config: ExperimentConfig, write: bool = True, plots: bool = True) -> StatReport:
    """Dispatch to the named experiment and persist its report, series and figures."""
    from . import experiments, plotting
    from .spde import dump_trajectory
    from .torus_field import save_field

    if config.experiment not in experiments.REGISTRY:
        raise ParameterError(f"unknown experiment {config.experiment!r}; "
                             f"choose from {', '.join(sorted(experiments.REGISTRY))}")
    spec = experiments.REGISTRY[config.experiment]
    config = config.with_defaults(spec.defaults)
    start = time.perf_counter()
    result = spec.run(config)
    elapsed = time.perf_counter() - start
    report = result.report
    report.config = config.to_dict()
    report.metadata.setdefault("claim", spec.claim)
    report.metadata.setdefault("anchor", spec.anchor)
    log.info("%s finished in %.1f s", config.experiment, elapsed)
    if write:
        out = config.output_dir()
        try:
            out.mkdir(parents=True, exist_ok=True)
            stem = config.experiment.replace("-", "_")
            report.to_json(out / f"{stem}_report.json")
            report.to_csv(out / f"{stem}_report.csv")
            for name, series in result.series.items():
                write_series_csv(out / f"{stem}_{name}.csv", series.columns)
            for name, f in result.fields.items():
                save_field(out / f"{stem}_{name}.json", f)
            if result.trajectory is not None:
                dump_trajectory(out / f"{stem}_trajectory.csv", result.trajectory, {"config": config.to_dict()})
            (out / f"{stem}_timing.json").write_text(json.dumps({"seconds": round(elapsed, 3)}) + "\n")
        except OSError as exc:
            raise LabError(f"cannot write reports to {out}: {exc}") from exc
        if plots and result.series:
            plotting.render(result.series, out, stem)
    return report


__all__ = [
    "ExperimentConfig", "StatReport", "Statistic", "ReplicaError", "load_config", "parse_config_text",
    "config_from_mapping", "replica_generator", "replica_generators", "replica_map", "replica_blocks",
    "run_experiment", "write_series_csv", "OUT_DIR_ENV",
]
