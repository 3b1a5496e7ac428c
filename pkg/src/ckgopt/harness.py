"""Sequential BO loop, replicated benchmarks and result files."""
from __future__ import annotations

import csv
import io
import json
import logging
import os
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import yaml

from . import __version__
from .baselines import NoisyEI, PenalisedKG, cei_many, cts_next, observed_incumbent
from .ckg import CkgConfig, ConstrainedKG
from .design import OptimizerConfig, as_rng, lhs_sample, maximize_bounded
from .feasibility import recommend
from .gp import FitConfig, GpModel, NumericalError, gp_fit
from .problems import ProblemSpec, get_problem, observe, opportunity_cost

logger = logging.getLogger(__name__)

ACQUISITIONS = ("cKG", "cEI", "NEI", "pKG", "cTS", "random")
WORKERS_ENV = "CKGOPT_WORKERS"
DETERMINISTIC_NOISE = 1e-6


@dataclass
class RunConfig:
    problem: str = "mystery"
    acquisition: str = "cKG"
    budget_B: int = 40
    init_count: int = 10
    noise_std: float = 0.0
    replications: int = 1
    base_seed: int = 0
    ckg: CkgConfig = field(default_factory=CkgConfig)
    output_path: str = "results"
    nei_samples: int = 32
    cts_candidates: int = 500
    refit_every: int = 1
    fit_starts: int = 8
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)

    def __post_init__(self):
        if isinstance(self.ckg, dict):
            self.ckg = CkgConfig(**self.ckg)
        if isinstance(self.optimizer, dict):
            self.optimizer = OptimizerConfig(**self.optimizer)
        if self.acquisition not in ACQUISITIONS:
            raise ValueError(f"acquisition must be one of {ACQUISITIONS}")
        if self.budget_B < 1 or self.replications < 1 or self.init_count < 1:
            raise ValueError("budget_B, replications and init_count must be >= 1")
        if self.noise_std < 0:
            raise ValueError("noise_std must be nonnegative")
        if self.refit_every < 1 or self.fit_starts < 1:
            raise ValueError("refit_every and fit_starts must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def label(self) -> str:
        return f"{self.problem}_{self.acquisition}_noise{self.noise_std:g}"


def parse_config(data: dict, allow_lists: bool = False) -> List[RunConfig]:
    """Validate a key-value mapping; list-valued ``problem``/``acquisition`` expand to a matrix."""
    if not isinstance(data, dict):
        raise ValueError("config must be a key-value mapping")
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ValueError(f"unknown config keys: {unknown}")
    problems = data.get("problem", RunConfig.problem)
    acqs = data.get("acquisition", RunConfig.acquisition)
    noises = data.get("noise_std", RunConfig.noise_std)
    if not allow_lists and any(isinstance(v, list) for v in (problems, acqs, noises)):
        raise ValueError("list values are only allowed in benchmark configs")
    as_list = lambda v: v if isinstance(v, list) else [v]
    out = []
    for p in as_list(problems):
        for a in as_list(acqs):
            for s in as_list(noises):
                out.append(RunConfig(**{**data, "problem": p, "acquisition": a, "noise_std": s}))
    return out


def load_config(path, allow_lists: bool = False) -> List[RunConfig]:
    with open(path) as fh:
        data = yaml.safe_load(fh)
    return parse_config(data or {}, allow_lists)


@dataclass
class IterationRecord:
    iteration: int
    x: np.ndarray
    y: float
    c: np.ndarray
    x_r: np.ndarray
    oc: float
    seconds: float = 0.0


@dataclass
class ExperimentRecord:
    config: RunConfig
    replication: int
    seed: int
    initial_x_r: Optional[np.ndarray] = None
    initial_oc: Optional[float] = None
    iterations: List[IterationRecord] = field(default_factory=list)
    failed: bool = False
    error: Optional[str] = None
    n_observations: int = 0

    @property
    def oc_trace(self) -> np.ndarray:
        return np.array([it.oc for it in self.iterations])


# -- loop --------------------------------------------------------------------

def _seed(seed: int, *key: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, *key])


class _Models:
    """Objective + constraint GPs for one replication, with warm-started refits."""

    def __init__(self, spec: ProblemSpec, config: RunConfig):
        self.spec = spec
        self.config = config
        obj_noise = DETERMINISTIC_NOISE if config.noise_std == 0 else None
        self.obj_cfg = FitConfig(noise_variance=obj_noise, offset="min",
                                 n_starts=config.fit_starts)
        self.con_cfg = FitConfig(noise_variance=DETERMINISTIC_NOISE, offset="zero",
                                 n_starts=config.fit_starts)
        self.objective: Optional[GpModel] = None
        self.constraints: List[GpModel] = []

    def _fit(self, X, y, cfg, prev, seed):
        try:
            return gp_fit(X, y, self.spec.domain, cfg, seed, prev.params if prev else None)
        except NumericalError:
            logger.warning("GP fit failed; retrying with inflated noise")
            floor = max(cfg.noise_variance or 0.0, 1e-4)
            cfg = FitConfig(**{**asdict(cfg), "noise_variance": floor})
            return gp_fit(X, y, self.spec.domain, cfg, seed)

    def fit(self, X, y, C, seed, full=True):
        if not full and self.objective is not None:
            keep = lambda m, t: GpModel(m.params, X, m.to_model(t), self.spec.domain,
                                        m.prior_mean, m.output_offset, m.output_scale)
            self.objective = keep(self.objective, y)
            self.constraints = [keep(m, C[:, k]) for k, m in enumerate(self.constraints)]
            return
        ss = seed.spawn(1 + self.spec.n_constraints)
        self.objective = self._fit(X, y, self.obj_cfg, self.objective, ss[0])
        prev = self.constraints or [None] * self.spec.n_constraints
        self.constraints = [self._fit(X, C[:, k], self.con_cfg, prev[k], ss[k + 1])
                            for k in range(self.spec.n_constraints)]


def _next_point(config: RunConfig, spec: ProblemSpec, models: _Models, x_r, seed):
    acq, dom = config.acquisition, spec.domain
    om, cms = models.objective, models.constraints
    if acq == "cKG":
        return ConstrainedKG(om, cms, dom, config.ckg, x_r, seed).maximize(seed)[0]
    if acq == "pKG":
        return PenalisedKG(om, cms, dom, config.ckg, rng_seed=seed).maximize(seed)[0]
    if acq == "cEI":
        inc = observed_incumbent(om, cms)
        fn = lambda X: cei_many(om, cms, X, inc)
    elif acq == "NEI":
        fn = NoisyEI(om, cms, config.nei_samples, seed).values
    elif acq == "cTS":
        return cts_next(om, cms, dom, config.cts_candidates, seed)
    else:
        return dom.from_unit(as_rng(seed).random(dom.dim))
    return maximize_bounded(fn, dom, config.optimizer, seed, vectorized=True)[0]


def bo_run(config: RunConfig, seed: Optional[int] = None, replication: int = 0) -> ExperimentRecord:
    """One replication: LHS design, then ``budget_B`` acquisitions with refits.

    ``seed`` defaults to ``base_seed + replication``. The OC of the running
    recommendation is stored after every iteration.
    """
    seed = config.base_seed + replication if seed is None else seed
    if config.acquisition == "cEI" and config.noise_std > 0:
        warnings.warn("cEI assumes noise-free observations; NEI is the noisy-setting variant",
                      stacklevel=2)
    spec = get_problem(config.problem, config.noise_std)
    record = ExperimentRecord(config, replication, seed)
    X = lhs_sample(spec.domain, config.init_count, _seed(seed, 0))
    obs = [observe(spec, x, _seed(seed, 1, i)) for i, x in enumerate(X)]
    y = np.array([o.y for o in obs])
    C = np.array([o.c for o in obs]).reshape(len(obs), spec.n_constraints)
    models = _Models(spec, config)
    try:
        models.fit(X, y, C, _seed(seed, 2, 0))
        x_r = recommend(models.objective, models.constraints, spec.domain, config.optimizer,
                        _seed(seed, 3, 0))
        record.initial_x_r = x_r
        record.initial_oc = opportunity_cost(spec, x_r)
        for b in range(1, config.budget_B + 1):
            t0 = time.perf_counter()
            x_new = spec.domain.clip(_next_point(config, spec, models, x_r, _seed(seed, 4, b)))
            o = observe(spec, x_new, _seed(seed, 1, config.init_count + b - 1))
            X = np.vstack([X, o.x])
            y = np.append(y, o.y)
            C = np.vstack([C, o.c.reshape(1, -1)]) if spec.n_constraints else C.reshape(len(y), 0)
            models.fit(X, y, C, _seed(seed, 2, b), full=(b % config.refit_every == 0))
            x_r = recommend(models.objective, models.constraints, spec.domain, config.optimizer,
                            _seed(seed, 3, b))
            record.iterations.append(IterationRecord(
                b, o.x, o.y, o.c, x_r, opportunity_cost(spec, x_r), time.perf_counter() - t0))
    except (NumericalError, np.linalg.LinAlgError, ValueError) as exc:
        logger.error("replication %d failed: %s", replication, exc)
        record.failed = True
        record.error = f"{type(exc).__name__}: {exc}"
    record.n_observations = len(y)
    return record


# -- benchmark ---------------------------------------------------------------

@dataclass
class AggregateResult:
    config: RunConfig
    iterations: np.ndarray  # 0..B, row 0 is the initial design
    mean_oc: np.ndarray
    ci95_halfwidth: np.ndarray
    n_replications: int
    n_failed: int
    single_replication: bool


def aggregate(records: Sequence[ExperimentRecord]) -> AggregateResult:
    """Mean OC and normal-approximation 95% half-width per iteration, failed runs excluded."""
    if not records:
        raise ValueError("no records to aggregate")
    ok = [r for r in records if not r.failed]
    config = records[0].config
    B = config.budget_B
    if ok:
        traces = np.array([[r.initial_oc, *r.oc_trace] for r in ok], dtype=float)
        mean = traces.mean(axis=0)
        if len(ok) > 1:
            ci = 1.96 * traces.std(axis=0, ddof=1) / np.sqrt(len(ok))
        else:
            ci = np.zeros(B + 1)
    else:
        mean = np.full(B + 1, np.nan)
        ci = np.full(B + 1, np.nan)
    single = len(ok) == 1
    if single:
        warnings.warn("one replication only: 95% CI half-width reported as 0", stacklevel=2)
    return AggregateResult(config, np.arange(B + 1), mean, ci, len(ok), len(records) - len(ok), single)


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV)
    if raw:
        return max(1, int(raw))
    return os.cpu_count() or 1


def _cell(args):
    config, rep = args
    return bo_run(config, replication=rep)


def run_replications(config: RunConfig, workers: Optional[int] = None) -> List[ExperimentRecord]:
    return benchmark([config], workers)[0][0]


def benchmark(configs: Sequence[RunConfig], workers: Optional[int] = None):
    """Run every (config, replication) cell; returns ``[(records, aggregate), ...]``."""
    cells = [(c, r) for c in configs for r in range(c.replications)]
    workers = worker_count() if workers is None else workers
    if workers > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_cell, cells))
    else:
        results = [_cell(c) for c in cells]
    out, i = [], 0
    for c in configs:
        recs = results[i:i + c.replications]
        i += c.replications
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            out.append((recs, aggregate(recs)))
    return out


# -- output --------------------------------------------------------------------

def fmt(v) -> str:
    return format(float(v), ".17g")


def trace_csv(records: Sequence[ExperimentRecord]) -> str:
    spec = get_problem(records[0].config.problem)
    d, K = spec.domain.dim, spec.n_constraints
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["replication", "seed", "iteration"] + [f"x_{i}" for i in range(d)] + ["y"]
               + [f"c_{k}" for k in range(K)] + [f"xr_{i}" for i in range(d)] + ["oc"])
    for r in records:
        for it in r.iterations:
            w.writerow([r.replication, r.seed, it.iteration] + [fmt(v) for v in it.x]
                       + [fmt(it.y)] + [fmt(v) for v in it.c] + [fmt(v) for v in it.x_r]
                       + [fmt(it.oc)])
    return buf.getvalue()


def aggregate_csv(agg: AggregateResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iteration", "mean_oc", "ci95_halfwidth", "n_replications"])
    for i, m, c in zip(agg.iterations, agg.mean_oc, agg.ci95_halfwidth):
        w.writerow([int(i), fmt(m), fmt(c), agg.n_replications])
    return buf.getvalue()


def metadata(records: Sequence[ExperimentRecord], agg: AggregateResult) -> dict:
    return {
        "version": __version__,
        "created": datetime.now(timezone.utc).isoformat(),
        "config": records[0].config.to_dict(),
        "n_failed": agg.n_failed,
        "single_replication_ci_warning": agg.single_replication,
        "replications": [
            {
                "replication": r.replication,
                "seed": r.seed,
                "failed": r.failed,
                "error": r.error,
                "initial_oc": r.initial_oc,
                "initial_x_r": None if r.initial_x_r is None else list(map(float, r.initial_x_r)),
                "n_observations": r.n_observations,
                "seconds": [it.seconds for it in r.iterations],
            }
            for r in records
        ],
    }


def emit_results(records: Sequence[ExperimentRecord], output_path, agg: AggregateResult | None = None,
                 stem: Optional[str] = None) -> Dict[str, Path]:
    """Write ``<stem>_trace.csv``, ``<stem>_aggregate.csv`` and ``<stem>_metadata.json``."""
    if not records:
        raise ValueError("no records to emit")
    agg = agg or aggregate(records)
    stem = stem or records[0].config.label
    docs = {
        "trace": (f"{stem}_trace.csv", trace_csv(records)),
        "aggregate": (f"{stem}_aggregate.csv", aggregate_csv(agg)),
        "metadata": (f"{stem}_metadata.json", json.dumps(metadata(records, agg), indent=2)),
    }
    out = Path(output_path)
    written = {}
    try:
        out.mkdir(parents=True, exist_ok=True)
        for key, (name, text) in docs.items():
            (out / name).write_text(text)
            written[key] = out / name
    except OSError:
        for name, text in docs.values():
            sys.stdout.write(f"# {name}\n{text}\n")
        raise
    return written


def read_aggregate_csv(path) -> Dict[str, np.ndarray]:
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    return {k: np.array([float(r[k]) for r in rows]) for k in rows[0]}
