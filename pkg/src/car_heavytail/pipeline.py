"""Estimator selection and reporting shared by the simulation harness and the CLI."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Sequence

from .designs import MINIMIZATION, DesignConfig, canonical_scheme
from .errors import CarError, ValidationError
from .estimators import (
    MD,
    STR_MD,
    WT_MD,
    EstimatorConfig,
    TrialData,
    diff_in_medians,
    diff_in_weighted_medians,
    fit_folds,
    naive_dim,
    stratified_diff_in_medians,
    stratified_dim,
    stratified_tdim,
    tdim,
)
from .inference import (
    MINIMIZATION_REFUSAL,
    Q_UNDEFINED,
    EstimateReport,
    point_only,
    q_for_design,
    variance_components,
    variance_conservative,
    variance_str,
    variance_tdim,
    wald_ci,
)

log = logging.getLogger(__name__)

NAIVE_DIM = "naive-dim"
STR_DIM = "str-dim"
TDIM = "tdim"
STR = "str"
ESTIMATORS = (NAIVE_DIM, STR_DIM, MD, WT_MD, STR_MD, TDIM, STR)

# default variance choice per estimator
AUTO = "auto"
VARIANCES = (AUTO, "tdim", "str", "conservative", "none")

# estimators whose inference needs the design constant q (not available under minimization)
_NEEDS_Q = {NAIVE_DIM, TDIM}


@dataclass(frozen=True)
class EstimatorSpec:
    """One requested estimator.

    ``initial`` overrides the initial estimator for ``tdim``/``str``; ``label``
    names the output row (defaults to ``name``).
    """

    name: str
    initial: str | None = None
    variance: str = AUTO
    label: str | None = None

    def __post_init__(self):
        if self.name not in ESTIMATORS:
            raise ValidationError(f"unknown estimator {self.name!r}; expected one of {ESTIMATORS}")
        if self.variance not in VARIANCES:
            raise ValidationError(f"unknown variance {self.variance!r}; expected one of {VARIANCES}")
        if self.initial is not None and self.name not in (TDIM, STR):
            raise ValidationError(f"only tdim and str take an initial estimator, not {self.name!r}")

    @property
    def key(self) -> str:
        return self.label or self.name

    @classmethod
    def parse(cls, item) -> "EstimatorSpec":
        if isinstance(item, EstimatorSpec):
            return item
        if isinstance(item, str):
            return cls(item)
        if isinstance(item, Mapping):
            return cls(**item)
        raise ValidationError(f"cannot interpret estimator selection {item!r}")


# tdim starts from the difference in medians and str from the weighted version
DEFAULT_ESTIMATORS = (
    EstimatorSpec(NAIVE_DIM),
    EstimatorSpec(STR_DIM),
    EstimatorSpec(MD),
    EstimatorSpec(WT_MD),
    EstimatorSpec(TDIM, initial=MD),
    EstimatorSpec(STR, initial=WT_MD),
)


def _point(name: str, data: TrialData) -> float:
    return {
        NAIVE_DIM: naive_dim,
        STR_DIM: stratified_dim,
        MD: diff_in_medians,
        WT_MD: diff_in_weighted_medians,
        STR_MD: stratified_diff_in_medians,
    }[name](data)


def analyze_trial(data: TrialData, specs: Sequence[EstimatorSpec | str] = DEFAULT_ESTIMATORS,
                  config: EstimatorConfig = EstimatorConfig(), design: DesignConfig | str | None = None,
                  alpha: float = 0.05, seed=None) -> list[EstimateReport]:
    """Run every requested estimator with its interval.

    Each estimator is isolated: a failure becomes a report carrying the error
    message and no interval. ``design`` supplies ``q`` for the designs that
    need it; with no design, simple randomization is assumed for ``q``.
    Score models are fitted once and shared by ``tdim`` and ``str``.
    """
    specs = [EstimatorSpec.parse(s) for s in specs]
    scheme = canonical_scheme(design.scheme if isinstance(design, DesignConfig) else design or "simple")
    pi = config.resolve_pi(data)
    q = q_for_design(scheme, pi)
    reports = []
    fit = None
    for spec in specs:
        try:
            report, used = _one(spec, data, config, q, pi, alpha, seed, fit)
            if config.score_arm == "control":
                fit = used
            reports.append(report)
        except CarError as exc:
            log.info("estimator %s failed: %s", spec.key, exc)
            reports.append(EstimateReport(spec.key, float("nan"), None, data.n, None, None, alpha, "failed",
                                          error=str(exc)))
    return reports


def _one(spec, data, config, q, pi, alpha, seed, fit):
    """Return the report and the fold fit (reusable when scores use controls only)."""
    if spec.name in (TDIM, STR):
        cfg = config if spec.initial is None else replace(config, initial=spec.initial)
        if fit is None:
            fit = fit_folds(data, cfg, seed)
        res = (tdim if spec.name == TDIM else stratified_tdim)(data, cfg, seed, fit=fit)
        variance = spec.variance if spec.variance != AUTO else spec.name
        return _with_variance(spec, res.tau_hat, res.z_var.z_hat, data, pi, q, alpha, variance,
                              fisher=res.fisher_hat), fit

    tau_hat = _point(spec.name, data)
    if spec.name in (MD, WT_MD, STR_MD) or spec.variance == "none":
        return point_only(spec.key, tau_hat, data.n, alpha), fit
    variance = spec.variance if spec.variance != AUTO else ("tdim" if spec.name == NAIVE_DIM else "str")
    return _with_variance(spec, tau_hat, data.y, data, pi, q, alpha, variance), fit


def _with_variance(spec, tau_hat, values, data, pi, q, alpha, variance, fisher=None) -> EstimateReport:
    if variance == "none":
        return point_only(spec.key, tau_hat, data.n, alpha)
    if variance == "conservative":
        if fisher is None:
            raise ValidationError(f"the conservative variance needs a Fisher information ({spec.key})")
        return wald_ci(tau_hat, variance_conservative(fisher, pi), data.n, alpha, spec.key, "conservative")
    if variance == "tdim" and q is Q_UNDEFINED:
        return point_only(spec.key, tau_hat, data.n, alpha, reason=MINIMIZATION_REFUSAL)
    comps = variance_components(values, data.a, data.s, pi, 0.0 if q is Q_UNDEFINED else q,
                                stratum_names=data.stratum_names)
    sigma2 = variance_tdim(comps, q) if variance == "tdim" else variance_str(comps)
    return wald_ci(tau_hat, sigma2, data.n, alpha, spec.key, variance)


def refused_under(scheme: str) -> set[str]:
    """Estimators whose interval is refused under ``scheme``."""
    return set(_NEEDS_Q) if canonical_scheme(scheme) == MINIMIZATION else set()


def parse_specs(items: Iterable) -> list[EstimatorSpec]:
    return [EstimatorSpec.parse(i) for i in items]
