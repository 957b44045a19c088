"""Kernel estimates of the control-outcome density and its truncated score.

The density estimate is the exact kernel convolution of the fitting sample,

    f(y) = 1 / (m * sigma) * sum_i K((y - Y_i) / sigma),

with analytic first and second derivatives. The score ``f'/f`` is reported
only on the truncation field

    D = {y : f(y) >= d, |y| <= e, |f'(y)| <= c * f(y), |f''(y)| <= b * f(y)}

and is zero elsewhere, which keeps it bounded by ``c`` and its derivative by
``b + c**2``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import _backend
from .errors import EstimationError, ScoreWarning, ValidationError

TRIWEIGHT = "triweight"
GAUSSIAN = "gaussian"
_KIND_CODES = {TRIWEIGHT: _backend.TRIWEIGHT, GAUSSIAN: _backend.GAUSSIAN}

MIN_FIT_SIZE = 20

# Rule-of-thumb multipliers on 1.06 * scale * m**(-1/7). Calibrated on the
# heavy-tailed simulation models; the triweight bandwidth is its support half-width.
BANDWIDTH_FACTOR = {TRIWEIGHT: 1.5, GAUSSIAN: 1.0}
# c = SCORE_CAP / sigma, b = c**2, d = DENSITY_FLOOR / scale
SCORE_CAP = 4.0
DENSITY_FLOOR = 0.015
DOMAIN_QUANTILE = 0.005

# finite-sample surrogates for the hyperparameter rate conditions
MAX_SIGMA_TIMES_C = 5.0


@dataclass(frozen=True)
class KernelSpec:
    kind: str = TRIWEIGHT
    bandwidth: float = 1.0

    def __post_init__(self):
        kind = str(self.kind).lower()
        if kind not in _KIND_CODES:
            raise ValidationError(f"unknown kernel {self.kind!r}; expected 'triweight' or 'gaussian'")
        object.__setattr__(self, "kind", kind)
        if not (self.bandwidth > 0 and math.isfinite(self.bandwidth)):
            raise ValidationError(f"bandwidth must be positive and finite, got {self.bandwidth}")


@dataclass(frozen=True)
class TruncationThresholds:
    """Caps defining the truncation field: second-derivative ratio ``b``,
    first-derivative ratio ``c``, density floor ``d`` and domain half-width ``e``."""

    b: float
    c: float
    d: float
    e: float

    def __post_init__(self):
        for name in ("b", "c", "d", "e"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValidationError(f"threshold {name} must be finite and non-negative, got {v}")

    @classmethod
    def wide(cls) -> "TruncationThresholds":
        """Thresholds loose enough never to bind on well-behaved inputs."""
        return cls(b=1e12, c=1e6, d=1e-300, e=1e12)


@dataclass(frozen=True)
class ScoreModel:
    sample: np.ndarray
    kernel: KernelSpec
    thresholds: TruncationThresholds
    scale: float = float("nan")
    fisher_hat: float | None = None
    tag: int | None = None
    _code: int = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        x = np.sort(np.asarray(self.sample, dtype=np.float64).ravel())
        if x.size == 0:
            raise EstimationError("no fitting data")
        if not np.all(np.isfinite(x)):
            raise ValidationError("fitting sample contains non-finite values")
        x.setflags(write=False)
        object.__setattr__(self, "sample", x)
        object.__setattr__(self, "_code", _KIND_CODES[self.kernel.kind])

    @property
    def size(self) -> int:
        return self.sample.size

    @property
    def bandwidth(self) -> float:
        return self.kernel.bandwidth

    def with_fisher(self, fisher_hat: float) -> "ScoreModel":
        return replace(self, fisher_hat=float(fisher_hat))

    def _sums(self, y):
        y = np.atleast_1d(np.asarray(y, dtype=np.float64))
        return y, _backend.kernel_sums(self.sample, np.ascontiguousarray(y.ravel()), self.bandwidth, self._code)

    def density(self, y):
        y, (f, _, _) = self._sums(y)
        return f.reshape(y.shape)

    def density_deriv(self, y):
        y, (_, f1, _) = self._sums(y)
        return f1.reshape(y.shape)

    def density_deriv2(self, y):
        y, (_, _, f2) = self._sums(y)
        return f2.reshape(y.shape)

    def evaluate(self, y):
        """Return ``(in_domain, score, score_deriv)`` at ``y`` in one kernel pass."""
        y, (f, f1, f2) = self._sums(y)
        y = y.ravel()
        t = self.thresholds
        ok = (f >= t.d) & (f > 0) & (np.abs(y) <= t.e) & (np.abs(f1) <= t.c * f) & (np.abs(f2) <= t.b * f)
        safe_f = np.where(ok, f, 1.0)
        ratio = f1 / safe_f
        score = np.where(ok, ratio, 0.0)
        deriv = np.where(ok, f2 / safe_f - ratio * ratio, 0.0)
        return ok.reshape(y.shape), score, deriv

    def in_domain(self, y):
        y = np.asarray(y, dtype=np.float64)
        return self.evaluate(y)[0].reshape(np.shape(y))

    def score(self, y):
        y = np.asarray(y, dtype=np.float64)
        return self.evaluate(y)[1].reshape(np.shape(y))

    def score_deriv(self, y):
        y = np.asarray(y, dtype=np.float64)
        return self.evaluate(y)[2].reshape(np.shape(y))


def robust_scale(x) -> float:
    """MAD-based scale, refined once on the central 98% of the sample."""
    x = np.asarray(x, dtype=float)
    lo, hi = np.quantile(x, [0.01, 0.99])
    core = x[(x >= lo) & (x <= hi)]
    if core.size < 2:
        core = x
    s = np.median(np.abs(core - np.median(core))) / 0.6745
    if not s > 0:
        s = np.std(x)
    if not s > 0:
        s = 1.0
    return float(s)


def default_bandwidth(x, kind: str = TRIWEIGHT, scale: float | None = None) -> float:
    x = np.asarray(x, dtype=float)
    s = robust_scale(x) if scale is None else scale
    return BANDWIDTH_FACTOR[kind] * 1.06 * s * x.size ** (-1.0 / 7.0)


def default_thresholds(x, sigma: float, scale: float | None = None) -> TruncationThresholds:
    x = np.asarray(x, dtype=float)
    s = robust_scale(x) if scale is None else scale
    qlo, qhi = np.quantile(x, [DOMAIN_QUANTILE, 1.0 - DOMAIN_QUANTILE])
    c = SCORE_CAP / sigma
    return TruncationThresholds(b=c * c, c=c, d=DENSITY_FLOOR / s, e=float(max(abs(qlo), abs(qhi))))


def fit_score(sample, kernel: str = TRIWEIGHT, thresholds: TruncationThresholds | str = "auto",
              bandwidth: float | str = "auto", bandwidth_scale: float = 1.0, tag: int | None = None) -> ScoreModel:
    """Fit a truncated kernel score model.

    Parameters
    ----------
    sample : array_like
        Outcomes the density is estimated from (at least 20).
    kernel : {"triweight", "gaussian"}
    thresholds : TruncationThresholds or "auto"
        Explicit thresholds are used unchanged.
    bandwidth : float or "auto"
        ``"auto"`` uses ``factor * 1.06 * scale * m**(-1/7)`` where ``scale`` is the
        refined MAD of the sample.
    bandwidth_scale : float
        Multiplier applied to the resolved bandwidth.
    """
    x = np.asarray(sample, dtype=float).ravel()
    if x.size < MIN_FIT_SIZE:
        raise EstimationError(
            f"insufficient data for score estimation: {x.size} points, need at least {MIN_FIT_SIZE}"
        )
    kind = KernelSpec(kernel).kind
    scale = robust_scale(x)
    if isinstance(bandwidth, str):
        if bandwidth != "auto":
            raise ValidationError(f"bandwidth must be a number or 'auto', got {bandwidth!r}")
        sigma = default_bandwidth(x, kind, scale)
    else:
        sigma = float(bandwidth)
    sigma *= float(bandwidth_scale)
    if isinstance(thresholds, str):
        if thresholds != "auto":
            raise ValidationError(f"thresholds must be TruncationThresholds or 'auto', got {thresholds!r}")
        thresholds = default_thresholds(x, sigma, scale)
    if thresholds.c == 0:
        warnings.warn("score cap c = 0: the estimated score is identically zero", ScoreWarning, stacklevel=2)
    return ScoreModel(sample=x, kernel=KernelSpec(kind, sigma), thresholds=thresholds, scale=scale, tag=tag)


@dataclass
class RateReport:
    passed: bool
    clauses: dict[str, bool]
    messages: list[str]

    def __bool__(self) -> bool:
        return self.passed


def validate_rates(n: int, thresholds: TruncationThresholds, sigma: float) -> RateReport:
    """Finite-sample check of the bandwidth/truncation rate conditions.

    Clauses: ``sigma * c`` stays bounded (at most ``MAX_SIGMA_TIMES_C``);
    ``e * sigma**-5 < n``; ``sigma``, ``d`` positive and finite; ``c > 0``.
    Advisory only: nothing raises.
    """
    clauses: dict[str, bool] = {}
    messages: list[str] = []
    t = thresholds

    clauses["positive"] = sigma > 0 and t.d > 0 and math.isfinite(sigma) and math.isfinite(t.d)
    if not clauses["positive"]:
        messages.append(f"bandwidth ({sigma}) and density floor ({t.d}) must be positive and finite")

    clauses["nondegenerate"] = t.c > 0
    if not clauses["nondegenerate"]:
        messages.append("c = 0 makes the estimated score identically zero")
        warnings.warn(messages[-1], ScoreWarning, stacklevel=2)

    sc = sigma * t.c
    clauses["sigma_c"] = sc <= MAX_SIGMA_TIMES_C
    if not clauses["sigma_c"]:
        messages.append(f"sigma * c = {sc:.4g} exceeds {MAX_SIGMA_TIMES_C}")

    window = t.e * sigma ** -5 if sigma > 0 else math.inf
    clauses["window"] = window < n
    if not clauses["window"]:
        messages.append(f"e * sigma^-5 = {window:.4g} is not below n = {n}")

    return RateReport(passed=all(clauses.values()), clauses=clauses, messages=messages)


def fisher_info_hat(score_values) -> float:
    """Mean squared score over control units, each scored by the opposite fold's model."""
    g = np.asarray(score_values, dtype=float)
    if g.size == 0:
        raise EstimationError("no control scores to estimate Fisher information from")
    value = float(np.mean(g * g))
    if value == 0.0:
        warnings.warn("estimated Fisher information is zero (score vanished everywhere)", ScoreWarning, stacklevel=2)
    return value


def fisher_info_alt(model: ScoreModel, control_outcomes) -> float:
    """``-mean (f''f - f'^2) / f^2`` over ``control_outcomes`` for one fold's model.

    Points outside the truncation field contribute zero. Average the two folds'
    values to obtain the cross-fitted estimate.
    """
    y = np.asarray(control_outcomes, dtype=float)
    if y.size == 0:
        raise EstimationError("no control outcomes to estimate Fisher information from")
    value = float(-np.mean(model.score_deriv(y)))
    if value <= 0.0:
        warnings.warn(f"alternative Fisher information estimate is {value:.3g} (non-positive)", ScoreWarning, stacklevel=2)
    return value


def delta_n(strata_control_fold, strata_control_all) -> float:
    """Largest gap between a fold's control stratum shares and the overall shares.

    Diagnostic only; reported alongside the rate check.
    """
    fold = np.asarray(strata_control_fold)
    full = np.asarray(strata_control_all)
    labels = np.unique(full)
    if fold.size == 0:
        return float("nan")
    return float(max(abs(np.mean(fold == k) - np.mean(full == k)) for k in labels))
