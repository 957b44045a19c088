"""Covariate-adaptive treatment allocation.

Four schemes are supported: simple randomization, stratified permuted blocks,
the stratified (generalized Efron) biased coin, and Pocock-Simon minimization.
All within-stratum schemes draw from an independent random stream per stratum
keyed by ``(seed, stratum label)``, so the assignment of stratum ``k`` does not
depend on which other strata exist or in what order units arrive across strata.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from . import _backend, _rng
from .errors import DesignWarning, ValidationError

SIMPLE = "simple"
BLOCK = "block"
BIASED_COIN = "biased-coin"
MINIMIZATION = "minimization"
SCHEMES = (SIMPLE, BLOCK, BIASED_COIN, MINIMIZATION)

_ALIASES = {
    "sr": SIMPLE,
    "simple-randomization": SIMPLE,
    "str": BLOCK,
    "stratified-block": BLOCK,
    "permuted-block": BLOCK,
    "biased_coin": BIASED_COIN,
    "efron": BIASED_COIN,
    "min": MINIMIZATION,
    "pocock-simon": MINIMIZATION,
}


def canonical_scheme(name: str) -> str:
    key = str(name).strip().lower()
    key = _ALIASES.get(key, key)
    if key not in SCHEMES:
        raise ValidationError(f"unknown randomization scheme {name!r}; expected one of {SCHEMES}")
    return key


def default_block_size(pi: float, minimum: int = 4) -> int:
    """Smallest block size >= ``minimum`` holding a whole number of treated slots."""
    denom = Fraction(pi).limit_denominator(1000).denominator
    size = denom
    while size < minimum:
        size += denom
    return size


@dataclass(frozen=True)
class DesignConfig:
    scheme: str = SIMPLE
    pi: float = 0.5
    block_size: int | None = None
    coin_p: float = 0.85
    weights: tuple[float, ...] | None = None
    seed: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "scheme", canonical_scheme(self.scheme))
        if not 0.0 < self.pi < 1.0:
            raise ValidationError(f"target treated probability must lie in (0, 1), got {self.pi}")
        if self.scheme == BLOCK:
            if self.block_size is not None and int(self.block_size) < 1:
                raise ValidationError(f"block_size must be a positive integer, got {self.block_size}")
        if self.scheme in (BIASED_COIN, MINIMIZATION):
            if not 0.5 <= self.coin_p < 1.0:
                raise ValidationError(f"coin_p must lie in [0.5, 1), got {self.coin_p}")
        if self.weights is not None:
            object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))

    @property
    def resolved_block_size(self) -> int:
        return int(self.block_size) if self.block_size is not None else default_block_size(self.pi)


@dataclass
class DesignDiagnostics:
    """Per-stratum imbalance summaries over replicated assignments.

    ``d_nk[r, k]`` is ``n_[k]1 - pi * n_[k]`` in replication ``r``; ``q_hat[k]`` is
    the across-replication variance of that imbalance divided by ``n_[k]``.
    """

    labels: np.ndarray
    stratum_sizes: np.ndarray
    d_nk: np.ndarray
    q_hat: np.ndarray
    pi: float
    mean_abs_imbalance: np.ndarray = field(init=False)

    def __post_init__(self):
        self.mean_abs_imbalance = np.abs(self.d_nk).mean(axis=0)


def _as_labels(strata) -> np.ndarray:
    s = np.asarray(strata)
    if s.ndim != 1:
        raise ValidationError("strata must be a one-dimensional sequence of labels")
    return s


def _stratum_keys(labels: np.ndarray, stream_keys: Mapping | None) -> dict:
    uniq = np.unique(labels)
    if stream_keys is None:
        for lab in uniq:
            if not isinstance(lab, (int, np.integer)) or lab < 0:
                raise ValidationError(
                    "stratum labels must be non-negative integers unless stream_keys is given"
                )
        return {lab: int(lab) for lab in uniq}
    return {lab: int(stream_keys[lab]) for lab in uniq}


def assign_simple(strata, pi: float, seed=None, stream_keys: Mapping | None = None) -> np.ndarray:
    """Treat every unit independently with probability ``pi``.

    ``pi`` equal to 0 or 1 is accepted to force all-control or all-treated vectors.
    """
    if not 0.0 <= pi <= 1.0:
        raise ValidationError(f"pi must lie in [0, 1], got {pi}")
    labels = _as_labels(strata)
    root = _rng.root_seed(seed)
    a = np.zeros(labels.shape[0], dtype=np.int8)
    for lab, key in _stratum_keys(labels, stream_keys).items():
        idx = np.flatnonzero(labels == lab)
        rng = _rng.stream(root, _rng.DESIGN, key)
        a[idx] = rng.random(idx.size) < pi
    return a


def assign_stratified_block(strata, pi: float, block_size: int | None = None, seed=None,
                            stream_keys: Mapping | None = None) -> np.ndarray:
    """Stratified permuted-block randomization.

    Each complete block of ``block_size`` consecutive arrivals in a stratum gets
    exactly ``round(pi * block_size)`` treated units. A trailing partial block of
    ``r`` units takes the first ``r`` slots of a freshly permuted full block, so
    every slot keeps marginal probability ``pi``.
    """
    if block_size is None:
        block_size = default_block_size(pi)
    block_size = int(block_size)
    if block_size < 1:
        raise ValidationError(f"block_size must be a positive integer, got {block_size}")
    n_treat = pi * block_size
    if abs(n_treat - round(n_treat)) > 1e-9:
        warnings.warn(
            f"pi * block_size = {n_treat:g} is not an integer; using {round(n_treat)} treated per block",
            DesignWarning,
            stacklevel=2,
        )
    template = np.zeros(block_size, dtype=np.int8)
    template[: int(round(n_treat))] = 1

    labels = _as_labels(strata)
    root = _rng.root_seed(seed)
    a = np.zeros(labels.shape[0], dtype=np.int8)
    for lab, key in _stratum_keys(labels, stream_keys).items():
        idx = np.flatnonzero(labels == lab)
        rng = _rng.stream(root, _rng.DESIGN, key)
        out = np.empty(idx.size, dtype=np.int8)
        for start in range(0, idx.size, block_size):
            block = rng.permutation(template)
            stop = min(start + block_size, idx.size)
            out[start:stop] = block[: stop - start]
        a[idx] = out
    return a


def assign_biased_coin(strata, pi: float, coin_p: float = 0.85, seed=None,
                       stream_keys: Mapping | None = None) -> np.ndarray:
    """Stratified biased coin.

    Within a stratum with imbalance ``D = n_treated - pi * n_so_far``: treat with
    probability ``1 - coin_p`` if ``D > 0``, ``coin_p`` if ``D < 0`` and ``pi`` if
    ``D == 0``. At ``pi = 1/2`` this is Efron's rule.
    """
    if not 0.5 <= coin_p < 1.0:
        raise ValidationError(f"coin_p must lie in [0.5, 1), got {coin_p}")
    labels = _as_labels(strata)
    root = _rng.root_seed(seed)
    a = np.zeros(labels.shape[0], dtype=np.int8)
    for lab, key in _stratum_keys(labels, stream_keys).items():
        idx = np.flatnonzero(labels == lab)
        u = _rng.stream(root, _rng.DESIGN, key).random(idx.size)
        a[idx] = _backend.efron_sequence(u, float(pi), float(coin_p))
    return a


def _encode_columns(covariates) -> tuple[np.ndarray, np.ndarray]:
    cov = np.asarray(covariates, dtype=object)
    if cov.ndim == 1:
        cov = cov[:, None]
    if cov.ndim != 2:
        raise ValidationError("covariates must be an (n, J) array of categories")
    codes = np.empty(cov.shape, dtype=np.int64)
    levels = np.empty(cov.shape[1], dtype=np.int64)
    for j in range(cov.shape[1]):
        seen: dict = {}
        for i, v in enumerate(cov[:, j]):
            if v is None or (isinstance(v, float) and np.isnan(v)):
                raise ValidationError(f"unit {i} has no category for covariate {j}")
            codes[i, j] = seen.setdefault(v, len(seen))
        levels[j] = max(len(seen), 1)
    return codes, levels


def assign_minimization(covariates, weights: Sequence[float] | None = None, coin_p: float = 0.85,
                        pi: float = 0.5, seed=None) -> np.ndarray:
    """Pocock-Simon minimization over the marginal counts of each covariate.

    For a new unit, the imbalance of putting it in each arm is the weighted sum
    over covariates of ``|n_T / pi - n_C / (1 - pi)|`` in the unit's category,
    counting the unit itself. The arm with the smaller total is chosen with
    probability ``coin_p``; ties are broken by a ``pi`` coin.
    """
    if not 0.5 <= coin_p < 1.0:
        raise ValidationError(f"coin_p must lie in [0.5, 1), got {coin_p}")
    if not 0.0 < pi < 1.0:
        raise ValidationError(f"pi must lie in (0, 1), got {pi}")
    codes, levels = _encode_columns(covariates)
    n_cov = codes.shape[1]
    if weights is None:
        w = np.full(n_cov, 1.0 / n_cov)
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != (n_cov,):
            raise ValidationError(f"expected {n_cov} minimization weights, got {w.size}")
        if np.any(w < 0) or w.sum() <= 0:
            raise ValidationError("minimization weights must be non-negative and not all zero")
        if abs(w.sum() - 1.0) > 1e-9:
            warnings.warn(f"minimization weights sum to {w.sum():g}; normalizing", DesignWarning, stacklevel=2)
            w = w / w.sum()
    u = _rng.stream(seed, _rng.DESIGN, 0).random(codes.shape[0])
    return _backend.minimization_sequence(codes, levels, np.ascontiguousarray(w), u, float(pi), float(coin_p))


def assign(config: DesignConfig, strata=None, covariates=None, seed=None) -> np.ndarray:
    """Dispatch to the scheme named in ``config``.

    Minimization uses ``covariates`` when given and otherwise treats the stratum
    label as its single factor. ``seed`` overrides ``config.seed``.
    """
    seed = config.seed if seed is None else seed
    if config.scheme == MINIMIZATION:
        factors = covariates if covariates is not None else strata
        if factors is None:
            raise ValidationError("minimization needs covariates or strata")
        return assign_minimization(factors, config.weights, config.coin_p, config.pi, seed)
    if strata is None:
        raise ValidationError(f"scheme {config.scheme!r} needs stratum labels")
    if config.scheme == SIMPLE:
        return assign_simple(strata, config.pi, seed)
    if config.scheme == BLOCK:
        return assign_stratified_block(strata, config.pi, config.block_size, seed)
    return assign_biased_coin(strata, config.pi, config.coin_p, seed)


def stratum_imbalance(a, strata, pi: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(labels, n_[k], D_n[k])`` for one assignment vector."""
    labels, inv = np.unique(_as_labels(strata), return_inverse=True)
    a = np.asarray(a, dtype=float)
    sizes = np.bincount(inv, minlength=labels.size).astype(float)
    treated = np.bincount(inv, weights=a, minlength=labels.size)
    return labels, sizes, treated - pi * sizes


def design_diagnostics(assignments, strata, pi: float) -> DesignDiagnostics:
    """Empirical ``q_hat`` from replicated assignment vectors on fixed strata."""
    reps = np.atleast_2d(np.asarray(assignments))
    if reps.shape[0] < 2:
        raise ValidationError("design diagnostics need at least two replications")
    labels, sizes, _ = stratum_imbalance(reps[0], strata, pi)
    d = np.vstack([stratum_imbalance(row, strata, pi)[2] for row in reps])
    q_hat = d.var(axis=0, ddof=1) / sizes
    return DesignDiagnostics(labels=labels, stratum_sizes=sizes, d_nk=d, q_hat=q_hat, pi=pi)
