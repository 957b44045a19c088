"""Point estimators of a constant treatment effect.

The main estimators are cross-fitted one-step updates of a robust initial
estimate ``tau_tilde``:

* ``tdim``: ``tau_tilde + mean(A Z / pi - (1 - A) Z / (1 - pi))``
* ``stratified_tdim``: the same update averaged within strata with the realized
  stratum treated fractions, weighted by stratum shares,

where ``Z_i = -g(Y_i - A_i * tau_tilde) / I_hat`` and ``g`` is the truncated
kernel score of the control outcomes fitted on the fold not containing ``i``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import _rng
from .errors import EstimationError, ScoreWarning, ValidationError
from .score import (
    GAUSSIAN,
    TRIWEIGHT,
    ScoreModel,
    TruncationThresholds,
    delta_n,
    fisher_info_alt,
    fisher_info_hat,
    fit_score,
    validate_rates,
)

CAR_SPLIT = "car"
SR_SPLIT = "sr"

MD = "md"
WT_MD = "wt-md"
STR_MD = "str-md"
INITIAL_ESTIMATORS = (MD, WT_MD, STR_MD)

# The one-step update is more sensitive to score noise than to smoothing bias,
# so the estimators smooth more than the density-oriented default bandwidth.
ESTIMATOR_BANDWIDTH_SCALE = 1.5

SQUARED_SCORE = "squared"
ALT_SECOND_DERIV = "alt"


@dataclass
class TrialData:
    """Observed trial: outcome ``y``, treatment ``a`` (0/1), stratum ``s``.

    Stratum labels are non-negative integers; ``stratum_names`` optionally maps
    them back to the labels used in a data file.
    """

    y: np.ndarray
    a: np.ndarray
    s: np.ndarray
    covariates: np.ndarray | None = None
    stratum_names: tuple | None = None

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float).ravel()
        self.a = np.asarray(self.a).ravel()
        self.s = np.asarray(self.s).ravel()
        n = self.y.size
        if self.a.size != n or self.s.size != n:
            raise ValidationError(f"y, a and s must have equal length (got {n}, {self.a.size}, {self.s.size})")
        if not np.all(np.isin(self.a, (0, 1))):
            raise ValidationError("treatment indicators must be 0 or 1")
        self.a = self.a.astype(np.int8)
        if not np.issubdtype(self.s.dtype, np.integer):
            raise ValidationError("stratum labels must be integers; map string labels with load_dataset")
        if np.any(self.s < 0):
            raise ValidationError("stratum labels must be non-negative")
        if not np.all(np.isfinite(self.y)):
            raise ValidationError("outcomes must be finite")
        if self.covariates is not None:
            self.covariates = np.asarray(self.covariates)
            if self.covariates.shape[0] != n:
                raise ValidationError("covariates must have one row per unit")

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def labels(self) -> np.ndarray:
        return np.unique(self.s)

    def cell(self, k, arm: int) -> np.ndarray:
        return np.flatnonzero((self.s == k) & (self.a == arm))

    def stratum_shares(self) -> np.ndarray:
        """``p_n[k] = n_[k] / n`` in the order of :attr:`labels`."""
        return np.array([np.mean(self.s == k) for k in self.labels])

    def stratum_treated_fractions(self) -> np.ndarray:
        """``pi_n[k] = n_[k]1 / n_[k]`` in the order of :attr:`labels`."""
        return np.array([self.a[self.s == k].mean() for k in self.labels])

    def require_cells(self, minimum: int = 1) -> None:
        for k in self.labels:
            for arm in (1, 0):
                size = self.cell(k, arm).size
                if size < minimum:
                    raise EstimationError(
                        f"stratum {self._name(k)} arm {arm} has {size} unit(s); at least {minimum} required"
                    )

    def _name(self, k):
        if self.stratum_names is not None and 0 <= int(k) < len(self.stratum_names):
            return repr(self.stratum_names[int(k)])
        return str(int(k))


@dataclass
class FoldSplit:
    """Fold id (1 or 2) for every unit."""

    fold: np.ndarray
    mode: str = CAR_SPLIT

    def members(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.fold == j)


def split_samples(data: TrialData, mode: str = CAR_SPLIT, seed=None,
                  stream_keys: Mapping | None = None) -> FoldSplit:
    """Two-fold split.

    ``"car"``: within each (stratum, arm) cell a uniformly random subset of size
    ``floor(n_cell / 2)`` goes to fold 1, each cell drawing from its own stream.
    ``"sr"``: ``floor(n / 2)`` units chosen uniformly at random go to fold 1.
    """
    mode = str(mode).lower()
    root = _rng.root_seed(seed)
    fold = np.full(data.n, 2, dtype=np.int8)
    if mode == CAR_SPLIT:
        for k in data.labels:
            key = int(k) if stream_keys is None else int(stream_keys[k])
            for arm in (0, 1):
                idx = data.cell(k, arm)
                if idx.size == 0:
                    continue
                picked = _rng.stream(root, _rng.SPLIT, key, arm).permutation(idx)[: idx.size // 2]
                fold[picked] = 1
    elif mode == SR_SPLIT:
        picked = _rng.stream(root, _rng.SPLIT).permutation(data.n)[: data.n // 2]
        fold[picked] = 1
    else:
        raise ValidationError(f"unknown splitting mode {mode!r}; expected 'car' or 'sr'")
    return FoldSplit(fold=fold, mode=mode)


def median(values) -> float:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise EstimationError("median of an empty group")
    return float(np.median(v))


def weighted_median(values, weights) -> float:
    """Smallest value whose cumulative weight reaches half the total.

    When the cumulative weight equals exactly half, the midpoint with the next
    order statistic is returned, so equal weights reproduce the ordinary median.
    """
    v = np.asarray(values, dtype=float)
    w = np.asarray(weights, dtype=float)
    if v.size == 0:
        raise EstimationError("weighted median of an empty group")
    if w.shape != v.shape or np.any(w < 0) or w.sum() <= 0:
        raise ValidationError("weights must be non-negative, not all zero, and match the values")
    order = np.argsort(v, kind="stable")
    v, w = v[order], w[order]
    cum = np.cumsum(w)
    half = 0.5 * cum[-1]
    tol = 1e-12 * cum[-1]
    i = int(np.searchsorted(cum, half - tol))
    if abs(cum[i] - half) <= tol and i + 1 < v.size:
        return float(0.5 * (v[i] + v[i + 1]))
    return float(v[i])


def diff_in_medians(data: TrialData) -> float:
    return median(data.y[data.a == 1]) - median(data.y[data.a == 0])


def diff_in_weighted_medians(data: TrialData, pi_nk: Mapping | np.ndarray | None = None) -> float:
    """Treated weighted by ``1 / pi_n[S_i]``, controls by ``1 / (1 - pi_n[S_i])``.

    ``pi_nk`` defaults to the realized treated fraction of each stratum and is
    indexed in the order of ``data.labels`` when given as an array.
    """
    labels = data.labels
    if pi_nk is None:
        pi_nk = data.stratum_treated_fractions()
    if isinstance(pi_nk, Mapping):
        frac = np.array([pi_nk[k] for k in labels], dtype=float)
    else:
        frac = np.asarray(pi_nk, dtype=float)
    if np.any(frac <= 0) or np.any(frac >= 1):
        raise EstimationError("every stratum needs both treated and control units (pi_n[k] in (0, 1))")
    per_unit = frac[np.searchsorted(labels, data.s)]
    t, c = data.a == 1, data.a == 0
    return weighted_median(data.y[t], 1.0 / per_unit[t]) - weighted_median(data.y[c], 1.0 / (1.0 - per_unit[c]))


def stratified_diff_in_medians(data: TrialData) -> float:
    data.require_cells(1)
    total = 0.0
    for k, p in zip(data.labels, data.stratum_shares()):
        total += p * (median(data.y[data.cell(k, 1)]) - median(data.y[data.cell(k, 0)]))
    return float(total)


def naive_dim(data: TrialData) -> float:
    t, c = data.y[data.a == 1], data.y[data.a == 0]
    if t.size == 0 or c.size == 0:
        raise EstimationError("difference in means needs both arms")
    return float(t.mean() - c.mean())


def stratified_dim(data: TrialData) -> float:
    data.require_cells(1)
    total = 0.0
    for k, p in zip(data.labels, data.stratum_shares()):
        total += p * (data.y[data.cell(k, 1)].mean() - data.y[data.cell(k, 0)].mean())
    return float(total)


INITIAL_FUNCS = {
    MD: diff_in_medians,
    WT_MD: diff_in_weighted_medians,
    STR_MD: stratified_diff_in_medians,
}


def initial_estimate(data: TrialData, kind: str) -> float:
    try:
        fn = INITIAL_FUNCS[kind]
    except KeyError:
        raise ValidationError(f"unknown initial estimator {kind!r}; expected one of {INITIAL_ESTIMATORS}") from None
    return fn(data)


@dataclass(frozen=True)
class EstimatorConfig:
    """Settings shared by the cross-fitted estimators.

    ``pi`` is the known target treated probability, or ``"estimate"`` to use
    ``n_1 / n``. ``score_arm="pooled"`` also fits the score on treated outcomes
    shifted by ``-tau_tilde``. ``var_bandwidth_scale`` refits the score with a
    wider (or narrower) bandwidth for the transformed outcomes used in variance
    estimation. ``fold_average`` switches to the average of the two fold-wise
    one-step estimates with fold-specific initial estimates.
    """

    initial: str = WT_MD
    splitting: str = CAR_SPLIT
    fisher: str = SQUARED_SCORE
    pi: float | str = "estimate"
    kernel: str = TRIWEIGHT
    bandwidth: float | str = "auto"
    bandwidth_scale: float = ESTIMATOR_BANDWIDTH_SCALE
    thresholds: TruncationThresholds | str = "auto"
    score_arm: str = "control"
    var_bandwidth_scale: float = 1.0
    fold_average: bool = False

    def __post_init__(self):
        if self.initial not in INITIAL_ESTIMATORS:
            raise ValidationError(f"unknown initial estimator {self.initial!r}")
        if self.splitting not in (CAR_SPLIT, SR_SPLIT):
            raise ValidationError(f"unknown splitting mode {self.splitting!r}")
        if self.fisher not in (SQUARED_SCORE, ALT_SECOND_DERIV):
            raise ValidationError(f"unknown Fisher information estimator {self.fisher!r}")
        if self.kernel not in (TRIWEIGHT, GAUSSIAN):
            raise ValidationError(f"unknown kernel {self.kernel!r}")
        if self.score_arm not in ("control", "pooled"):
            raise ValidationError(f"score_arm must be 'control' or 'pooled', got {self.score_arm!r}")
        if isinstance(self.pi, str):
            if self.pi != "estimate":
                raise ValidationError(f"pi must be a probability or 'estimate', got {self.pi!r}")
        elif not 0.0 < float(self.pi) < 1.0:
            raise ValidationError(f"pi must lie in (0, 1), got {self.pi}")
        if not self.bandwidth_scale > 0 or not self.var_bandwidth_scale > 0:
            raise ValidationError("bandwidth scales must be positive")

    def resolve_pi(self, data: TrialData) -> float:
        if isinstance(self.pi, str):
            return float(np.mean(data.a))
        return float(self.pi)


@dataclass
class TransformedOutcomes:
    """``z_hat[i]`` and the fold whose score model produced it."""

    z_hat: np.ndarray
    model_fold: np.ndarray


@dataclass
class FoldFit:
    """Split plus per-fold score models; reusable across initial estimators."""

    split: FoldSplit
    models: tuple[ScoreModel, ScoreModel]
    fisher_hat: float
    var_models: tuple[ScoreModel, ScoreModel] | None = None
    var_fisher_hat: float | None = None
    diagnostics: dict = field(default_factory=dict)


@dataclass
class EstimateResult:
    estimator: str
    tau_hat: float
    tau_tilde: float | None = None
    pi: float | None = None
    fisher_hat: float | None = None
    z: TransformedOutcomes | None = None
    z_var: TransformedOutcomes | None = None
    fit: FoldFit | None = None
    diagnostics: dict = field(default_factory=dict)


def _fit_sample(data: TrialData, members: np.ndarray, config: EstimatorConfig, tau_tilde: float) -> np.ndarray:
    ctrl = members[data.a[members] == 0]
    if config.score_arm == "control":
        return data.y[ctrl]
    treated = members[data.a[members] == 1]
    return np.concatenate([data.y[ctrl], data.y[treated] - tau_tilde])


def _fit_models(data, split, config, tau_tilde, bandwidth_scale):
    models = []
    for j in (1, 2):
        sample = _fit_sample(data, split.members(j), config, tau_tilde)
        models.append(
            fit_score(sample, kernel=config.kernel, thresholds=config.thresholds, bandwidth=config.bandwidth,
                      bandwidth_scale=bandwidth_scale, tag=j)
        )
    return tuple(models)


def _cross_scores(data: TrialData, split: FoldSplit, models, shift: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Score every unit at ``y - shift`` with the model of the opposite fold."""
    g = np.zeros(data.n)
    model_fold = np.zeros(data.n, dtype=np.int8)
    for j in (1, 2):
        idx = split.members(j)
        other = models[2 - j]  # fold 1 uses models[1] (fitted on fold 2) and vice versa
        if other.tag == j:
            raise EstimationError("cross-fitting violated: unit scored by a model fitted on its own fold")
        g[idx] = other.score(data.y[idx] - shift[idx])
        model_fold[idx] = other.tag
    return g, model_fold


def _fisher(data, split, models, config) -> float:
    ctrl = data.a == 0
    if config.fisher == SQUARED_SCORE:
        g, _ = _cross_scores(data, split, models, np.zeros(data.n))
        return fisher_info_hat(g[ctrl])
    values = []
    for j in (1, 2):
        idx = split.members(j)
        values.append(fisher_info_alt(models[j - 1], data.y[idx[data.a[idx] == 0]]))
    return float(np.mean(values))


def fit_folds(data: TrialData, config: EstimatorConfig, seed=None, tau_tilde: float | None = None,
              stream_keys: Mapping | None = None) -> FoldFit:
    """Split the sample and fit one score model per fold."""
    if tau_tilde is None:
        tau_tilde = initial_estimate(data, config.initial)
    split = split_samples(data, config.splitting, seed, stream_keys)
    models = _fit_models(data, split, config, tau_tilde, config.bandwidth_scale)
    fisher = _fisher(data, split, models, config)
    var_models = var_fisher = None
    if config.var_bandwidth_scale != 1.0:
        var_models = _fit_models(data, split, config, tau_tilde, config.bandwidth_scale * config.var_bandwidth_scale)
        var_fisher = _fisher(data, split, var_models, config)
    diagnostics = {
        "fold_sizes": (int(np.sum(split.fold == 1)), int(np.sum(split.fold == 2))),
        "bandwidths": tuple(m.bandwidth for m in models),
        "rates_ok": tuple(bool(validate_rates(m.size, m.thresholds, m.bandwidth)) for m in models),
        "delta_n": tuple(
            delta_n(data.s[split.members(j)][data.a[split.members(j)] == 0], data.s) for j in (1, 2)
        ),
    }
    return FoldFit(split=split, models=models, fisher_hat=fisher, var_models=var_models,
                   var_fisher_hat=var_fisher, diagnostics=diagnostics)


def transformed_outcomes(data: TrialData, split: FoldSplit, models, tau_tilde: float,
                         fisher_hat: float) -> TransformedOutcomes:
    """``Z_i = -g_(other fold)(Y_i - A_i * tau_tilde) / fisher_hat``."""
    if not fisher_hat > 0 or not math.isfinite(fisher_hat):
        raise EstimationError(f"degenerate Fisher information ({fisher_hat})")
    g, model_fold = _cross_scores(data, split, models, data.a * float(tau_tilde))
    return TransformedOutcomes(z_hat=-g / fisher_hat, model_fold=model_fold)


def _z_or_zero(data, split, models, tau_tilde, fisher_hat) -> TransformedOutcomes:
    # A score that vanishes on every control unit gives I_hat = 0; the update is
    # then empty rather than undefined, and the estimate stays at tau_tilde.
    if fisher_hat == 0.0:
        g, model_fold = _cross_scores(data, split, models, data.a * float(tau_tilde))
        if not np.any(g):
            warnings.warn("estimated score is identically zero; returning the initial estimate",
                          ScoreWarning, stacklevel=3)
            return TransformedOutcomes(z_hat=np.zeros(data.n), model_fold=model_fold)
    return transformed_outcomes(data, split, models, tau_tilde, fisher_hat)


def _prepare(data, config, seed, fit, stream_keys):
    tau_tilde = initial_estimate(data, config.initial)
    if fit is None:
        fit = fit_folds(data, config, seed, tau_tilde, stream_keys)
    z = _z_or_zero(data, fit.split, fit.models, tau_tilde, fit.fisher_hat)
    z_var = z
    if fit.var_models is not None:
        z_var = _z_or_zero(data, fit.split, fit.var_models, tau_tilde, fit.var_fisher_hat)
    return tau_tilde, fit, z, z_var


def _fold_average(data: TrialData, config: EstimatorConfig, fit: FoldFit, pi: float) -> float:
    """Average of the two fold-wise one-step estimates.

    Fold ``j`` is updated from the initial estimate, score model and
    second-derivative Fisher information of the other fold.
    """
    estimates = []
    for j in (1, 2):
        own, other = fit.split.members(j), fit.split.members(3 - j)
        tau_o = initial_estimate(TrialData(data.y[other], data.a[other], data.s[other]), config.initial)
        model = fit.models[2 - j]
        info = fisher_info_alt(model, data.y[other[data.a[other] == 0]])
        if not info > 0:
            raise EstimationError(f"degenerate Fisher information in fold {3 - j} ({info})")
        a = data.a[own].astype(float)
        g = model.score(data.y[own] - a * tau_o)
        estimates.append(tau_o - np.sum(a / pi * g - (1 - a) / (1 - pi) * g) / (own.size * info))
    return float(np.mean(estimates))


def tdim(data: TrialData, config: EstimatorConfig = EstimatorConfig(), seed=None, fit: FoldFit | None = None,
         stream_keys: Mapping | None = None) -> EstimateResult:
    """Cross-fitted transformed difference in means."""
    data.require_cells(1)
    pi = config.resolve_pi(data)
    tau_tilde, fit, z, z_var = _prepare(data, config, seed, fit, stream_keys)
    a = data.a.astype(float)
    update = np.mean(a * z.z_hat / pi - (1.0 - a) * z.z_hat / (1.0 - pi))
    tau_hat = float(tau_tilde + update)
    if config.fold_average:
        tau_hat = _fold_average(data, config, fit, pi)
    return EstimateResult("tdim", tau_hat, tau_tilde=tau_tilde, pi=pi, fisher_hat=fit.fisher_hat, z=z,
                          z_var=z_var, fit=fit, diagnostics=dict(fit.diagnostics, update=float(update)))


def stratified_tdim(data: TrialData, config: EstimatorConfig = EstimatorConfig(), seed=None,
                    fit: FoldFit | None = None, stream_keys: Mapping | None = None) -> EstimateResult:
    """Stratified transformed difference in means.

    Within stratum ``k`` the update uses the realized treated fraction
    ``pi_n[k]``; strata are combined with weights ``p_n[k]``.
    """
    data.require_cells(1)
    pi = config.resolve_pi(data)
    tau_tilde, fit, z, z_var = _prepare(data, config, seed, fit, stream_keys)
    a = data.a.astype(float)
    update = 0.0
    for k, p_k, pi_k in zip(data.labels, data.stratum_shares(), data.stratum_treated_fractions()):
        m = data.s == k
        update += p_k * np.mean(a[m] * z.z_hat[m] / pi_k - (1.0 - a[m]) * z.z_hat[m] / (1.0 - pi_k))
    return EstimateResult("str", float(tau_tilde + update), tau_tilde=tau_tilde, pi=pi, fisher_hat=fit.fisher_hat,
                          z=z, z_var=z_var, fit=fit, diagnostics=dict(fit.diagnostics, update=float(update)))
