"""Variance estimation and Wald intervals.

The transformed outcomes ``Z`` make both cross-fitted estimators asymptotically
a difference in means of ``Z``, so their variances split into a within-stratum
part ``v_z2``, a between-stratum heterogeneity part ``v_h2`` and an
assignment-imbalance part ``v_a2`` that scales with the design's ``q_[k]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import NormalDist
from typing import Mapping

import numpy as np

from .designs import BIASED_COIN, BLOCK, MINIMIZATION, SIMPLE, DesignConfig, canonical_scheme
from .errors import EstimationError, NotApplicableError, ValidationError

MINIMIZATION_REFUSAL = (
    "the tdim variance is not universally applicable under minimization; use the stratified estimator (str)"
)


class _NotApplicable:
    """Sentinel for designs whose ``q_[k]`` is undefined."""

    reason = MINIMIZATION_REFUSAL

    def __repr__(self):
        return "Q_UNDEFINED"


Q_UNDEFINED = _NotApplicable()


@dataclass(frozen=True)
class VarianceComponents:
    v_z2: float
    v_h2: float
    v_a2: float

    def __post_init__(self):
        for name in ("v_z2", "v_h2", "v_a2"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be non-negative")


@dataclass(frozen=True)
class EstimateReport:
    estimator: str
    tau_hat: float
    sigma2: float | None
    n: int
    ci_lo: float | None
    ci_hi: float | None
    alpha: float
    method: str
    error: str | None = None

    @property
    def se(self) -> float | None:
        return None if self.sigma2 is None else math.sqrt(self.sigma2 / self.n)

    @property
    def length(self) -> float | None:
        return None if self.ci_lo is None else self.ci_hi - self.ci_lo

    def covers(self, tau: float) -> bool | None:
        return None if self.ci_lo is None else bool(self.ci_lo <= tau <= self.ci_hi)


def q_for_design(config: DesignConfig | str, pi: float | None = None):
    """Design constant ``q_[k]`` (common to every stratum), or ``Q_UNDEFINED``.

    Simple randomization gives ``pi * (1 - pi)``; permuted blocks and the biased
    coin are strongly balanced and give 0. Minimization returns the sentinel.
    """
    if isinstance(config, DesignConfig):
        scheme, pi = config.scheme, config.pi if pi is None else pi
    else:
        scheme = canonical_scheme(config)
    if scheme == MINIMIZATION:
        return Q_UNDEFINED
    if scheme in (BLOCK, BIASED_COIN):
        return 0.0
    if pi is None:
        raise ValidationError("simple randomization needs pi to determine q")
    assert scheme == SIMPLE
    return float(pi) * (1.0 - float(pi))


def _q_per_stratum(q, labels) -> np.ndarray:
    if q is Q_UNDEFINED:
        raise NotApplicableError(MINIMIZATION_REFUSAL)
    if isinstance(q, Mapping):
        return np.array([float(q[k]) for k in labels])
    arr = np.asarray(q, dtype=float)
    if arr.ndim == 0:
        return np.full(len(labels), float(arr))
    if arr.shape != (len(labels),):
        raise ValidationError(f"expected {len(labels)} q values, got {arr.size}")
    return arr


def variance_components(z, a, s, pi: float, q=0.0, stratum_names=None) -> VarianceComponents:
    """Plug-in variance components from per-unit values ``z``.

    ``q`` is a scalar, a per-stratum array in sorted label order, a mapping from
    label to value, or ``Q_UNDEFINED`` (in which case ``v_a2`` is not computed
    and is reported as 0; use :func:`variance_tdim` only with a defined ``q``).
    """
    z = np.asarray(getattr(z, "z_hat", z), dtype=float)
    a = np.asarray(a)
    s = np.asarray(s)
    if not 0.0 < pi < 1.0:
        raise ValidationError(f"pi must lie in (0, 1), got {pi}")
    labels = np.unique(s)
    n = z.size
    t_all, c_all = z[a == 1], z[a == 0]
    if t_all.size == 0 or c_all.size == 0:
        raise EstimationError("variance estimation needs both arms")
    zbar1, zbar0 = t_all.mean(), c_all.mean()
    v_z2 = v_h2 = v_a2 = 0.0
    qk = None if q is Q_UNDEFINED else _q_per_stratum(q, labels)
    for i, k in enumerate(labels):
        m = s == k
        p_k = m.sum() / n
        zt, zc = z[m & (a == 1)], z[m & (a == 0)]
        for arm, cell in ((1, zt), (0, zc)):
            if cell.size < 2:
                name = stratum_names[int(k)] if stratum_names is not None else int(k)
                raise EstimationError(f"stratum {name!r} arm {arm} has {cell.size} unit(s); variance needs at least 2")
        v_z2 += p_k * (zt.var() / pi + zc.var() / (1.0 - pi))
        d1, d0 = zt.mean() - zbar1, zc.mean() - zbar0
        v_h2 += p_k * (d1 - d0) ** 2
        if qk is not None:
            if not 0.0 <= qk[i] <= pi * (1.0 - pi) + 1e-12:
                raise ValidationError(f"q values must lie in [0, pi(1-pi)], got {qk[i]}")
            v_a2 += p_k * qk[i] * (d1 / pi + d0 / (1.0 - pi)) ** 2
    return VarianceComponents(float(v_z2), float(v_h2), float(v_a2))


def variance_tdim(components: VarianceComponents, q=None) -> float:
    if q is Q_UNDEFINED:
        raise NotApplicableError(MINIMIZATION_REFUSAL)
    return components.v_z2 + components.v_h2 + components.v_a2


def variance_str(components: VarianceComponents) -> float:
    return components.v_z2 + components.v_h2


def variance_conservative(fisher_hat: float, pi: float) -> float:
    """Design-free upper bound ``1 / (pi (1 - pi) I_hat)``."""
    if not fisher_hat > 0:
        raise EstimationError(f"Fisher information must be positive, got {fisher_hat}")
    return 1.0 / (pi * (1.0 - pi) * fisher_hat)


def normal_quantile(p: float) -> float:
    return NormalDist().inv_cdf(p)


def wald_ci(tau_hat: float, sigma2: float, n: int, alpha: float = 0.05, estimator: str = "",
            method: str = "wald") -> EstimateReport:
    """``tau_hat -/+ z_{alpha/2} * sqrt(sigma2 / n)``."""
    if not 0.0 < alpha < 1.0:
        raise ValidationError(f"alpha must lie in (0, 1), got {alpha}")
    if n < 1:
        raise ValidationError(f"n must be at least 1, got {n}")
    if sigma2 < 0 or not math.isfinite(sigma2):
        raise ValidationError(f"variance must be finite and non-negative, got {sigma2}")
    half = normal_quantile(1.0 - alpha / 2.0) * math.sqrt(sigma2 / n)
    return EstimateReport(estimator, float(tau_hat), float(sigma2), int(n), tau_hat - half, tau_hat + half,
                          alpha, method)


def point_only(estimator: str, tau_hat: float, n: int, alpha: float = 0.05, reason: str | None = None) -> EstimateReport:
    """Report without an interval (estimators with no variance formula, or refused inference)."""
    return EstimateReport(estimator, float(tau_hat), None, int(n), None, None, alpha, "point", error=reason)
