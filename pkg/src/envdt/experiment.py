"""Experiment matrices: every fixture under every distribution, repeated.

Each run is identified by ``<device>-<distribution>-<rep>`` and leaves two
files under ``<out>/traces``: the trace itself and a ``.meta.json`` sidecar
written after it.  A run counts as done when both exist, which is what makes
an interrupted matrix resumable.

Plan files are YAML::

    fixtures: [karie.envdt, medido.envdt, pilly.envdt]
    distributions: [normal, uniform, "exponential(lambda=4)"]
    repetitions: 30
    seed: 2024
    onceOnly: true
    maxSteps: 10000
    params: {N: 4}
    out: runs

Fixture paths and ``out`` are relative to the plan file; without ``out``
results go to ``runs`` in the working directory.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable

import yaml

from .analytics import AggregateTable, aggregate, coverage, diversity
from .dsl import load_model
from .engine import SimulationConfig, load_trace, run
from .instantiator import instantiate
from .model import EnvironmentModel
from .stochastic import DistributionSpec, InvalidParameters, parse_dist

DEFAULT_PARAMS = {"N": 4}
DEFAULT_SEED = 2024
TRACE_SUFFIX = ".jsonl"
META_SUFFIX = ".meta.json"


class PlanError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentPlan:
    fixtures: tuple[Path, ...]
    distributions: tuple[DistributionSpec, ...]
    repetitions: int = 30
    seed: int = DEFAULT_SEED
    once_only: bool = True
    max_steps: int = 10_000
    params: dict[str, Any] = field(default_factory=lambda: dict(DEFAULT_PARAMS))
    out: Path = Path("runs")

    def __post_init__(self) -> None:
        if self.repetitions < 1:
            raise PlanError("repetitions must be positive")
        if not self.fixtures or not self.distributions:
            raise PlanError("a plan needs at least one fixture and one distribution")
        kinds = [d.kind for d in self.distributions]
        if len(set(kinds)) != len(kinds):
            raise PlanError("each distribution kind may appear once per plan")
        devices = [device_name(p) for p in self.fixtures]
        if len(set(devices)) != len(devices):
            raise PlanError("fixture file names must be distinct")

    @property
    def devices(self) -> list[str]:
        return [device_name(p) for p in self.fixtures]

    def runs(self) -> list[RunSpec]:
        out = []
        for path in self.fixtures:
            device = device_name(path)
            for dist in self.distributions:
                for rep in range(self.repetitions):
                    out.append(RunSpec(
                        run_id=f"{device}-{dist.kind}-{rep}",
                        fixture=path,
                        device=device,
                        distribution=dist,
                        rep=rep,
                        seed=run_seed(self.seed, device, dist.kind, rep),
                        once_only=self.once_only,
                        max_steps=self.max_steps,
                        params=dict(self.params),
                    ))
        return out


@dataclass(frozen=True)
class RunSpec:
    run_id: str
    fixture: Path
    device: str
    distribution: DistributionSpec
    rep: int
    seed: int
    once_only: bool
    max_steps: int
    params: dict[str, Any]


@dataclass
class ExperimentResult:
    executed: list[str]
    skipped: list[str]
    tables: dict[str, AggregateTable]


def device_name(path: Path) -> str:
    return Path(path).stem.lower()


def run_seed(base: int, device: str, distribution: str, rep: int) -> int:
    digest = hashlib.blake2b(f"{base}|{device}|{distribution}|{rep}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big") >> 1


def load_plan(path: str | Path, seed: int | None = None, out: str | Path | None = None) -> ExperimentPlan:
    """Read a YAML plan; ``seed`` and ``out`` override the file when given."""
    path = Path(path)
    data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    if not isinstance(data, dict):
        raise PlanError(f"{path}: expected a mapping at the top level")
    unknown = set(data) - {"fixtures", "distributions", "repetitions", "seed", "onceOnly", "maxSteps", "params", "out"}
    if unknown:
        raise PlanError(f"{path}: unknown keys {sorted(unknown)}")
    try:
        dists = tuple(parse_dist(str(d)) for d in data.get("distributions", []))
    except InvalidParameters as exc:
        raise PlanError(f"{path}: {exc}") from exc
    base = path.parent
    fixtures = tuple((base / f).resolve() for f in data.get("fixtures", []))
    if seed is None:
        seed = int(data.get("seed", DEFAULT_SEED))
    if out is None:
        out = base / data["out"] if "out" in data else Path("runs")
    return ExperimentPlan(
        fixtures=fixtures,
        distributions=dists,
        repetitions=int(data.get("repetitions", 30)),
        seed=seed,
        once_only=bool(data.get("onceOnly", True)),
        max_steps=int(data.get("maxSteps", 10_000)),
        params={**DEFAULT_PARAMS, **(data.get("params") or {})},
        out=Path(out),
    )


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def trace_dir(out: Path) -> Path:
    return Path(out) / "traces"


def is_done(out: Path, run_id: str) -> bool:
    d = trace_dir(out)
    return (d / f"{run_id}{TRACE_SUFFIX}").exists() and (d / f"{run_id}{META_SUFFIX}").exists()


_MODELS: dict[Path, EnvironmentModel] = {}


def _model(path: Path) -> EnvironmentModel:
    if path not in _MODELS:
        _MODELS[path] = load_model(path)
    return _MODELS[path]


def execute_run(spec: RunSpec, out: Path) -> dict[str, Any]:
    """Run one cell of the matrix and write its trace and sidecar."""
    model = _model(spec.fixture)
    inst = instantiate(model, spec.seed, spec.params)
    config = SimulationConfig(
        seed=spec.seed, distribution=spec.distribution, once_only=spec.once_only, max_steps=spec.max_steps
    )
    trace = run(model, inst, config)
    cov = coverage(trace.records, model, spec.run_id)
    div = diversity(trace.records, spec.run_id)
    d = trace_dir(out)
    write_atomic(d / f"{spec.run_id}{TRACE_SUFFIX}", trace.to_jsonl())
    meta = {
        "runId": spec.run_id,
        "device": spec.device,
        "model": str(spec.fixture),
        "distribution": spec.distribution.kind,
        "distributionSpec": str(spec.distribution),
        "rep": spec.rep,
        "seed": spec.seed,
        "onceOnly": spec.once_only,
        "maxSteps": spec.max_steps,
        "steps": trace.steps,
        "reason": trace.reason,
        "events": len(trace.events),
        "coverage": cov.percent,
        "diversity": div.simpson,
        "coreMs": trace.core_ms,
    }
    write_atomic(d / f"{spec.run_id}{META_SUFFIX}", json.dumps(meta, indent=1) + "\n")
    return meta


def _execute(args: tuple[RunSpec, Path]) -> str:
    spec, out = args
    execute_run(spec, out)
    return spec.run_id


def run_plan(
    plan: ExperimentPlan,
    workers: int = 1,
    limit: int | None = None,
    progress: Callable[[str], None] | None = None,
) -> ExperimentResult:
    """Execute every run not already on disk, then write the tables.

    ``limit`` caps how many runs execute in this call, which leaves the
    matrix partially done; tables are written only once it is complete.
    """
    pending: list[RunSpec] = []
    skipped: list[str] = []
    for spec in plan.runs():
        if is_done(plan.out, spec.run_id):
            skipped.append(spec.run_id)
        else:
            pending.append(spec)
    if limit is not None:
        pending = pending[:limit]
    executed: list[str] = []
    jobs = [(spec, plan.out) for spec in pending]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for run_id in pool.map(_execute, jobs, chunksize=8):
                executed.append(run_id)
                if progress:
                    progress(run_id)
    else:
        for job in jobs:
            executed.append(_execute(job))
            if progress:
                progress(job[0].run_id)
    tables: dict[str, AggregateTable] = {}
    if all(is_done(plan.out, spec.run_id) for spec in plan.runs()):
        tables = report(trace_dir(plan.out), Path(plan.out) / "tables", plan.devices, [d.kind for d in plan.distributions])
    return ExperimentResult(executed, skipped, tables)


# -- report -------------------------------------------------------------------


def read_metas(in_dir: Path) -> list[dict[str, Any]]:
    metas = []
    for path in sorted(Path(in_dir).glob(f"*{META_SUFFIX}")):
        metas.append(json.loads(path.read_text(encoding="utf-8")))
    return metas


def report(
    in_dir: str | Path,
    out_dir: str | Path,
    devices: Iterable[str] | None = None,
    distributions: Iterable[str] | None = None,
) -> dict[str, AggregateTable]:
    """Recompute coverage and diversity from the traces in ``in_dir`` and
    write ``coverage.csv``, ``diversity.csv`` and ``simtime.csv``."""
    in_dir, out_dir = Path(in_dir), Path(out_dir)
    metas = read_metas(in_dir)
    if not metas:
        raise FileNotFoundError(f"no run metadata under {in_dir}")
    cov: dict[tuple[str, str, int], float] = {}
    div: dict[tuple[str, str, int], float] = {}
    sim: dict[tuple[str, str, int], float] = {}
    for meta in metas:
        key = (meta["device"], meta["distribution"], meta["rep"])
        records = load_trace((in_dir / f"{meta['runId']}{TRACE_SUFFIX}").read_text(encoding="utf-8"))
        cov[key] = coverage(records, _model(Path(meta["model"])), meta["runId"]).percent
        div[key] = diversity(records, meta["runId"]).simpson
        sim[key] = meta["coreMs"]
    devices = list(devices) if devices is not None else None
    distributions = list(distributions) if distributions is not None else None
    tables = {
        "coverage": aggregate(cov, "coverage", devices, distributions),
        "diversity": aggregate(div, "diversity", devices, distributions),
        "simtime": aggregate(sim, "simtime", devices, distributions),
    }
    for name, table in tables.items():
        write_atomic(out_dir / f"{name}.csv", table.to_csv())
    return tables
