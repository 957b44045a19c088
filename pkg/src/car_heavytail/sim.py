"""Monte Carlo harness: outcome models, replications and summary tables."""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import _rng
from .designs import MINIMIZATION, DesignConfig, assign
from .errors import CarError, EstimationError, ValidationError
from .estimators import EstimatorConfig, TrialData
from .inference import EstimateReport
from .pipeline import DEFAULT_ESTIMATORS, EstimatorSpec, analyze_trial, parse_specs

log = logging.getLogger(__name__)

NORMAL = "normal"
LAPLACE = "laplace"
CAUCHY = "cauchy"
TAILS = (NORMAL, LAPLACE, CAUCHY)

X2_LEVELS = np.array([-1.0, -1.0 / 3.0, 1.0 / 3.0, 1.0])
MAX_RETRIES = 5


@dataclass(frozen=True)
class OutcomeModelSpec:
    model_id: int = 1
    tail: str = CAUCHY
    tau: float = 0.0
    n: int = 1000
    pi: float = 0.5

    def __post_init__(self):
        if self.model_id not in (1, 2, 3):
            raise ValidationError(f"model_id must be 1, 2 or 3, got {self.model_id}")
        tail = str(self.tail).lower()
        if tail not in TAILS:
            raise ValidationError(f"tail must be one of {TAILS}, got {self.tail!r}")
        object.__setattr__(self, "tail", tail)
        if self.n < 4 * len(X2_LEVELS):
            raise ValidationError(f"n must be at least {4 * len(X2_LEVELS)}, got {self.n}")
        if not 0.0 < self.pi < 1.0:
            raise ValidationError(f"pi must lie in (0, 1), got {self.pi}")


@dataclass
class PotentialOutcomes:
    y0: np.ndarray
    y1: np.ndarray
    strata: np.ndarray
    x1: np.ndarray
    x2: np.ndarray
    model_id: int

    def observe(self, a) -> np.ndarray:
        a = np.asarray(a)
        return np.where(a == 1, self.y1, self.y0)

    def min_factors(self) -> np.ndarray:
        """Dichotomized (x1, x2) used as minimization factors, as 0/1 columns."""
        cut = 1.0 if self.model_id == 3 else 0.0
        return np.column_stack([(self.x1 > cut).astype(np.int64), (self.x2 > 0).astype(np.int64)])


def draw_errors(tail: str, size: int, rng: np.random.Generator) -> np.ndarray:
    """Standard error draws; Laplace and Cauchy by inverse CDF."""
    if tail == NORMAL:
        return rng.standard_normal(size)
    u = rng.random(size)
    if tail == LAPLACE:
        c = u - 0.5
        return -np.sign(c) * np.log1p(-2.0 * np.abs(c))
    if tail == CAUCHY:
        return np.tan(np.pi * (u - 0.5))
    raise ValidationError(f"unknown tail {tail!r}")


def generate(spec: OutcomeModelSpec, rng: np.random.Generator) -> PotentialOutcomes:
    """Draw covariates, the stratum (index of ``x2``) and both potential outcomes."""
    n = spec.n
    idx = rng.integers(0, X2_LEVELS.size, size=n)
    x2 = X2_LEVELS[idx]
    u = rng.uniform(-1.0, 1.0, size=n)
    eps = draw_errors(spec.tail, n, rng)
    if spec.model_id == 1:
        x1 = u
        y0 = 0.75 * x1 + x2 + eps
    elif spec.model_id == 2:
        x1 = u
        z = 0.75 * x1 + x2
        y0 = 0.5 * (np.exp(z) + np.exp(z / 2.0)) + eps
    else:
        x1 = np.exp(u)
        z = x1 + x1 * x2
        assert np.all(z >= 0.0), "model 3 index must be non-negative"
        y0 = 0.5 * (z + np.sqrt(z)) + eps
    return PotentialOutcomes(y0=y0, y1=y0 + spec.tau, strata=idx.astype(np.int64), x1=x1, x2=x2,
                             model_id=spec.model_id)


@dataclass(frozen=True)
class SimConfig:
    outcome: OutcomeModelSpec = OutcomeModelSpec()
    design: DesignConfig = DesignConfig()
    estimators: tuple = DEFAULT_ESTIMATORS
    estimator_config: EstimatorConfig | None = None
    reps: int = 500
    alpha: float = 0.05
    master_seed: int = 0

    def __post_init__(self):
        if self.reps < 1:
            raise ValidationError(f"reps must be at least 1, got {self.reps}")
        if not 0.0 < self.alpha < 1.0:
            raise ValidationError(f"alpha must lie in (0, 1), got {self.alpha}")
        object.__setattr__(self, "estimators", tuple(parse_specs(self.estimators)))
        if abs(self.design.pi - self.outcome.pi) > 1e-12:
            raise ValidationError("design.pi and outcome.pi disagree")

    @property
    def resolved_estimator_config(self) -> EstimatorConfig:
        if self.estimator_config is not None:
            return self.estimator_config
        return EstimatorConfig(pi=self.design.pi)


@dataclass
class Replication:
    index: int
    reports: list[EstimateReport]
    retries: int = 0


def _trial(config: SimConfig, seed) -> TrialData:
    po = generate(config.outcome, _rng.stream(seed, _rng.SIM))
    if config.design.scheme == MINIMIZATION:
        factors = po.min_factors()
        a = assign(config.design, covariates=factors, seed=_rng.child_seed(seed, _rng.DESIGN))
        # estimator strata are the joint cells of the minimization factors
        strata = factors[:, 0] * 2 + factors[:, 1]
    else:
        strata = po.strata
        a = assign(config.design, strata=strata, seed=_rng.child_seed(seed, _rng.DESIGN))
    return TrialData(po.observe(a), a, strata, covariates=np.column_stack([po.x1, po.x2]))


def run_replication(config: SimConfig, rep_index: int) -> Replication:
    """One full generate, assign, estimate pass; deterministic in ``(master_seed, rep_index)``.

    A draw where some estimator fails (for example an empty stratum arm) is
    redrawn from a derived seed, at most ``MAX_RETRIES`` times.
    """
    est_config = config.resolved_estimator_config
    last = None
    for attempt in range(MAX_RETRIES + 1):
        seed = _rng.child_seed(config.master_seed, _rng.SIM, int(rep_index), attempt)
        try:
            data = _trial(config, seed)
            data.require_cells(2)
        except CarError as exc:
            last = str(exc)
            log.info("replication %d attempt %d redrawn: %s", rep_index, attempt, exc)
            continue
        reports = analyze_trial(data, config.estimators, est_config, config.design, config.alpha,
                                seed=_rng.child_seed(seed, _rng.SPLIT))
        failed = [r for r in reports if r.method == "failed"]
        if failed and attempt < MAX_RETRIES:
            last = failed[0].error
            log.info("replication %d attempt %d redrawn: %s", rep_index, attempt, last)
            continue
        return Replication(rep_index, reports, attempt)
    raise EstimationError(f"replication {rep_index} failed after {MAX_RETRIES} retries: {last}")


@dataclass
class EstimatorSummary:
    estimator: str
    bias: float
    sd: float
    rmse: float
    se: float | None
    cp: float | None
    length: float | None
    reps: int
    note: str | None = None


@dataclass
class SimResult:
    summaries: list[EstimatorSummary]
    failures: int = 0
    retries: int = 0
    reps: int = 0
    estimates: dict = field(default_factory=dict, repr=False)
    variances: dict = field(default_factory=dict, repr=False)

    def __getitem__(self, name: str) -> EstimatorSummary:
        for s in self.summaries:
            if s.estimator == name:
                return s
        raise KeyError(name)

    def rows(self) -> list[dict]:
        return [s.__dict__.copy() for s in self.summaries]


def aggregate(replications: Sequence[Replication], true_tau: float, alpha: float = 0.05) -> SimResult:
    """Bias, SD, RMSE of the point estimates; mean SE, coverage and mean length of the intervals.

    Replications are sorted by index first, so the result does not depend on
    completion order.
    """
    reps = sorted(replications, key=lambda r: r.index)
    if not reps:
        return SimResult([], reps=0)
    names = [r.estimator for r in reps[0].reports]
    summaries, estimates, variances = [], {}, {}
    for j, name in enumerate(names):
        rows = [r.reports[j] for r in reps]
        tau = np.array([r.tau_hat for r in rows], dtype=float)
        ok = np.isfinite(tau)
        tau = tau[ok]
        rows = [r for r, keep in zip(rows, ok) if keep]
        estimates[name] = tau
        count = tau.size
        bias = float(tau.mean() - true_tau) if count else math.nan
        sd = float(tau.std(ddof=1)) if count >= 2 else math.nan
        rmse = math.sqrt(bias ** 2 + sd ** 2 * (count - 1) / count) if count >= 2 else math.nan
        with_ci = [r for r in rows if r.ci_lo is not None]
        se = cp = length = None
        note = None
        if with_ci and len(with_ci) == len(rows):
            variances[name] = np.array([r.sigma2 for r in with_ci])
            se = float(np.mean([r.se for r in with_ci]))
            cp = float(np.mean([r.covers(true_tau) for r in with_ci]))
            length = float(np.mean([r.length for r in with_ci]))
        else:
            errors = {r.error for r in rows if r.error}
            note = "; ".join(sorted(errors)) or None
        summaries.append(EstimatorSummary(name, bias, sd, rmse, se, cp, length, count, note))
    return SimResult(summaries, failures=0, retries=sum(r.retries for r in reps), reps=len(reps),
                     estimates=estimates, variances=variances)


def _run_chunk(args):
    """Replications for ``indices``; a replication that cannot be completed becomes its error message."""
    config, indices = args
    out = []
    for i in indices:
        try:
            out.append(run_replication(config, i))
        except EstimationError as exc:
            out.append(str(exc))
    return out


def resolve_threads(threads: int | None = None) -> int:
    env = os.environ.get("CAR_THREADS")
    if env:
        try:
            threads = int(env)
        except ValueError:
            raise ValidationError(f"CAR_THREADS must be an integer, got {env!r}") from None
    threads = 1 if threads is None else int(threads)
    if threads < 1:
        raise ValidationError(f"threads must be at least 1, got {threads}")
    return threads


def simulate(config: SimConfig, threads: int | None = None) -> SimResult:
    """Run ``config.reps`` replications and aggregate them.

    Replication ``r`` always uses the seed derived from ``(master_seed, r)``, so
    the result is identical for any thread count.
    """
    threads = resolve_threads(threads)
    indices = list(range(config.reps))
    failures = 0
    out: list[Replication] = []
    if threads == 1:
        parts = [_run_chunk((config, indices))]
    else:
        chunks = [indices[k::threads] for k in range(threads)]
        with ProcessPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(_run_chunk, [(config, c) for c in chunks]))
    for part in parts:
        for item in part:
            if isinstance(item, str):
                failures += 1
                log.warning("%s", item)
            else:
                out.append(item)
    result = aggregate(out, config.outcome.tau, config.alpha)
    result.failures = failures
    return result


def synthetic_resample(real_data: TrialData, tau_assumed: float, design: DesignConfig, reps: int = 200,
                       seed=None, estimators: Sequence = DEFAULT_ESTIMATORS,
                       estimator_config: EstimatorConfig | None = None, alpha: float = 0.05) -> SimResult:
    """Resample units with replacement, impute the missing potential outcome with
    ``Y(1) = Y(0) + tau_assumed`` and re-randomize with ``design``.

    Under minimization the stratum label is the single balancing factor.
    """
    if real_data.n == 0:
        raise ValidationError("cannot resample an empty dataset")
    if reps < 1:
        raise ValidationError(f"reps must be at least 1, got {reps}")
    specs = parse_specs(estimators)
    est_config = estimator_config or EstimatorConfig(pi=design.pi)
    y0_all = real_data.y - real_data.a * tau_assumed
    out = []
    failures = 0
    for r in range(reps):
        for attempt in range(MAX_RETRIES + 1):
            seed_r = _rng.child_seed(seed, _rng.RESAMPLE, r, attempt)
            pick = _rng.stream(seed_r, _rng.RESAMPLE).integers(0, real_data.n, size=real_data.n)
            s = real_data.s[pick]
            a = assign(design, strata=s, seed=_rng.child_seed(seed_r, _rng.DESIGN))
            y0 = y0_all[pick]
            try:
                data = TrialData(y0 + a * tau_assumed, a, s, stratum_names=real_data.stratum_names)
                data.require_cells(2)
                reports = analyze_trial(data, specs, est_config, design, alpha,
                                        seed=_rng.child_seed(seed_r, _rng.SPLIT))
            except CarError:
                continue
            if any(rep.method == "failed" for rep in reports) and attempt < MAX_RETRIES:
                continue
            out.append(Replication(r, reports, attempt))
            break
        else:
            failures += 1
    result = aggregate(out, tau_assumed, alpha)
    result.failures = failures
    return result


def with_reps(config: SimConfig, reps: int) -> SimConfig:
    return replace(config, reps=int(reps))
