"""Trajectory sweeps: integrate many seeded runs and classify where they land."""
from __future__ import annotations

import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Iterator

from attnflow.dynamics import SYSTEMS, IntegrationOptions, integrate
from attnflow.errors import AttnflowError, ContractViolation
from attnflow.geometry import sample_uniform_sphere
from attnflow.harness.instances import random_instance
from attnflow.rng import derive_seed
from attnflow.stability import Tolerances, classify_equilibrium

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
EXHAUSTIVE_MAX_N = 20


@dataclass(frozen=True)
class ExperimentSpec:
    system: str = "self_attention"
    d: int = 3
    n: int = 10
    beta: float = 1.0
    instances: int = 1
    runs_per_instance: int = 1
    seed: int = 0
    integration: IntegrationOptions = field(default_factory=IntegrationOptions)
    scan: str | None = None           # None | "exhaustive" | "sample:<count>"
    out: str | None = None
    svg: str | None = None
    workers: int = 1

    def __post_init__(self):
        if self.system not in SYSTEMS:
            raise ContractViolation(f"system must be one of {SYSTEMS}, got {self.system!r}")
        if self.instances < 1 or self.runs_per_instance < 1:
            raise ContractViolation("instances and runs_per_instance must be >= 1")
        if self.d < 2 or self.n < 1:
            raise ContractViolation(f"need d >= 2 and n >= 1, got d={self.d}, n={self.n}")
        if self.scan == "exhaustive" and self.n > EXHAUSTIVE_MAX_N:
            raise ContractViolation(f"exhaustive scan requires n <= {EXHAUSTIVE_MAX_N}")
        if self.scan is not None and self.scan != "exhaustive" and not self.scan.startswith("sample:"):
            raise ContractViolation(f"scan must be 'exhaustive' or 'sample:<count>', got {self.scan!r}")

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentSpec":
        doc = dict(doc)
        integ = doc.pop("integration", None) or {}
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ContractViolation(f"unknown spec fields: {sorted(unknown)}")
        return cls(integration=IntegrationOptions(**integ), **doc)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class CensusRecord:
    instance: int
    run: int
    seed: int
    termination: str
    cls: str | None = None
    k: int | None = None
    n1: int | None = None
    n2: int | None = None
    m: int | None = None
    attention_rank: int | None = None
    spectral_abscissa: float | None = None
    verdict: str | None = None
    residual: float | None = None
    steps: int = 0
    wall_ms: float = 0.0
    error: str | None = None
    schema: int = SCHEMA_VERSION

    # JSON uses "class" for the classification label.
    def to_json_dict(self) -> dict:
        d = asdict(self)
        d["class"] = d.pop("cls")
        order = ["schema", "instance", "run", "seed", "class", "k", "n1", "n2", "m",
                 "attention_rank", "spectral_abscissa", "verdict", "residual", "steps",
                 "wall_ms", "termination", "error"]
        return {key: d[key] for key in order}

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), allow_nan=False)

    @classmethod
    def from_json(cls, line: str | dict) -> "CensusRecord":
        d = json.loads(line) if isinstance(line, str) else dict(line)
        d["cls"] = d.pop("class")
        if d.get("schema") != SCHEMA_VERSION:
            raise ContractViolation(f"unsupported record schema {d.get('schema')!r}")
        return cls(**d)

    @property
    def converged(self) -> bool:
        return self.termination == "converged" and self.error is None

    def label(self) -> str:
        """Summary label: ``consensus``, ``bipartite``, ``<m>-clustering``, ..."""
        if self.cls == "m_clustering":
            return f"{self.m}-clustering"
        return self.cls or self.termination


def _finite_or_none(x: float) -> float | None:
    return float(x) if x is not None and math.isfinite(x) else None


def run_one(spec: ExperimentSpec, instance: int, run: int, tols: Tolerances = Tolerances()) -> CensusRecord:
    """Integrate and classify one (instance, run) pair; failures become records."""
    run_seed = derive_seed(spec.seed, instance, run)
    t0 = time.perf_counter()
    try:
        params = random_instance(spec.d, spec.n, spec.beta, derive_seed(spec.seed, instance))
        X0 = sample_uniform_sphere(spec.d, spec.n, run_seed)
        traj = integrate(X0, spec.system, params, spec.integration)
        base = dict(instance=instance, run=run, seed=run_seed, termination=traj.termination,
                    steps=traj.steps, residual=traj.residual)
        if traj.termination != "converged":
            return CensusRecord(wall_ms=1e3 * (time.perf_counter() - t0), **base)
        rep = classify_equilibrium(traj.states[-1], params, tols=tols, system=spec.system)
        return CensusRecord(cls=rep.cls, k=rep.k, n1=rep.n1, n2=rep.n2, m=rep.m,
                            attention_rank=rep.attention_rank,
                            spectral_abscissa=_finite_or_none(rep.spectral_abscissa),
                            verdict=rep.verdict, wall_ms=1e3 * (time.perf_counter() - t0), **base)
    except AttnflowError as exc:
        log.warning("instance %d run %d failed: %s", instance, run, exc)
        termination = "degenerate" if type(exc).__name__ == "DegenerateState" else "failed"
        return CensusRecord(instance=instance, run=run, seed=run_seed, termination=termination,
                            error=f"{type(exc).__name__}: {exc}",
                            wall_ms=1e3 * (time.perf_counter() - t0))


def _run_pair(args):
    return run_one(*args)


def run_census(spec: ExperimentSpec, tols: Tolerances = Tolerances()) -> Iterator[CensusRecord]:
    """Yield one record per (instance, run), ordered by (instance, run).

    With ``spec.workers > 1`` runs execute in a process pool; the output order
    and content do not depend on the worker count.
    """
    jobs = [(spec, i, r, tols) for i in range(spec.instances) for r in range(spec.runs_per_instance)]
    if spec.workers <= 1:
        for job in jobs:
            yield _run_pair(job)
        return
    with ProcessPoolExecutor(max_workers=spec.workers) as pool:
        # map preserves submission order, which is already (instance, run)
        yield from pool.map(_run_pair, jobs, chunksize=1)
