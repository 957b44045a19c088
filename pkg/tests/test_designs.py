import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from car_heavytail import _backend
from car_heavytail.designs import (
    DesignConfig,
    assign,
    assign_biased_coin,
    assign_minimization,
    assign_simple,
    assign_stratified_block,
    canonical_scheme,
    default_block_size,
    design_diagnostics,
    stratum_imbalance,
)
from car_heavytail.errors import DesignWarning, ValidationError


def strata_of(sizes):
    return np.repeat(np.arange(len(sizes)), sizes)


class TestConfig:
    def test_aliases(self):
        assert canonical_scheme("STR") == "block"
        assert canonical_scheme("efron") == "biased-coin"
        assert canonical_scheme("min") == "minimization"
        with pytest.raises(ValidationError):
            canonical_scheme("urn")

    def test_validation(self):
        with pytest.raises(ValidationError):
            DesignConfig("simple", pi=1.0)
        with pytest.raises(ValidationError):
            DesignConfig("block", block_size=0)
        with pytest.raises(ValidationError):
            DesignConfig("biased-coin", coin_p=1.0)
        with pytest.raises(ValidationError):
            DesignConfig("minimization", coin_p=0.4)

    def test_default_block_size(self):
        assert default_block_size(0.5) == 4
        assert default_block_size(1 / 3) == 6
        assert DesignConfig("block", pi=0.5).resolved_block_size == 4


class TestSimple:
    def test_forced(self):
        s = strata_of([5, 7])
        assert assign_simple(s, 1.0, seed=1).tolist() == [1] * 12
        assert assign_simple(s, 0.0, seed=1).tolist() == [0] * 12

    def test_fraction(self):
        a = assign_simple(np.zeros(10000, dtype=int), 0.5, seed=3)
        assert 0.48 <= a.mean() <= 0.52

    def test_labels_must_be_ints(self):
        with pytest.raises(ValidationError):
            assign_simple(np.array(["a", "b"]), 0.5, seed=1)
        a = assign_simple(np.array(["a", "b"]), 0.5, seed=1, stream_keys={"a": 0, "b": 1})
        assert a.shape == (2,)


class TestBlock:
    def test_complete_block(self):
        a = assign_stratified_block(np.zeros(4, dtype=int), 0.5, 4, seed=2)
        assert a.sum() == 2

    @pytest.mark.parametrize("seed", range(50))
    def test_partial_block(self, seed):
        a = assign_stratified_block(np.zeros(6, dtype=int), 0.5, 4, seed=seed)
        assert a.sum() in (2, 3, 4) and abs(a.sum() - 3) <= 1
        assert a[:4].sum() == 2

    def test_non_integer_block_warns(self):
        with pytest.warns(DesignWarning):
            assign_stratified_block(np.zeros(10, dtype=int), 0.5, 5, seed=1)

    def test_bad_block(self):
        with pytest.raises(ValidationError):
            assign_stratified_block(np.zeros(4, dtype=int), 0.5, 0)

    def test_partial_block_marginal(self):
        # every slot of a truncated block keeps marginal probability pi
        reps = np.array([assign_stratified_block(np.zeros(3, dtype=int), 0.5, 4, seed=s) for s in range(4000)])
        assert np.allclose(reps.mean(axis=0), 0.5, atol=0.03)

    @given(st.lists(st.integers(1, 30), min_size=1, max_size=5), st.integers(0, 2**31))
    @settings(max_examples=40, deadline=None)
    def test_complete_blocks_exact(self, blocks, seed):
        s = strata_of([4 * b for b in blocks])
        a = assign_stratified_block(s, 0.5, 4, seed=seed)
        for k, b in enumerate(blocks):
            assert a[s == k].sum() == 2 * b


class TestBiasedCoin:
    def test_rule(self, kernels):
        # u just below / above the rule's probability decides the arm
        pi, p = 0.5, 0.85
        assert kernels.efron_sequence(np.array([0.49]), pi, p)[0] == 1
        assert kernels.efron_sequence(np.array([0.51]), pi, p)[0] == 0
        # after one treated unit D = +0.5 > 0: treated w.p. 1 - p = 0.15
        assert kernels.efron_sequence(np.array([0.0, 0.149]), pi, p).tolist() == [1, 1]
        assert kernels.efron_sequence(np.array([0.0, 0.151]), pi, p).tolist() == [1, 0]
        # after one control D < 0: treated w.p. p
        assert kernels.efron_sequence(np.array([0.99, 0.849]), pi, p).tolist() == [0, 1]

    def test_generalized_pi(self, kernels):
        # pi = 1/3: D = 1 - 1/3 > 0 after one treated unit
        out = kernels.efron_sequence(np.array([0.0, 0.2, 0.3]), 1 / 3, 0.75)
        assert out.tolist() == [1, 1, 0]

    def test_coin_validation(self):
        with pytest.raises(ValidationError):
            assign_biased_coin(np.zeros(3, dtype=int), 0.5, 0.3)

    def test_strongly_balanced(self):
        s = np.zeros(200, dtype=int)
        reps = np.array([assign_biased_coin(s, 0.5, 0.85, seed=r) for r in range(2000)])
        diag = design_diagnostics(reps, s, 0.5)
        assert diag.q_hat[0] < 0.05


class TestMinimization:
    def test_rule(self, kernels):
        # one covariate, every unit in category 0. u=0 forces treatment while
        # that is allowed, reaching T=3, C=1 before the fifth unit.
        codes = np.zeros((5, 1), dtype=np.int64)
        levels = np.array([1], dtype=np.int64)
        w = np.array([1.0])
        base = [0.0, 0.0, 0.0, 0.99]
        lo = kernels.minimization_sequence(codes, levels, w, np.array(base + [0.149]), 0.5, 0.85)
        hi = kernels.minimization_sequence(codes, levels, w, np.array(base + [0.151]), 0.5, 0.85)
        assert lo[:4].tolist() == [1, 1, 1, 0]
        # the imbalance-reducing arm (control) is taken w.p. 0.85
        assert lo[4] == 1 and hi[4] == 0

    def test_distinct_categories_is_simple(self):
        n = 4000
        cov = np.arange(n)[:, None]
        a = assign_minimization(cov, coin_p=0.85, pi=0.5, seed=4)
        assert 0.47 <= a.mean() <= 0.53

    def test_weights_normalized(self):
        cov = np.zeros((10, 2), dtype=int)
        with pytest.warns(DesignWarning):
            assign_minimization(cov, weights=[1.0, 1.0], seed=1)

    def test_missing_category(self):
        cov = np.array([[0, 1], [None, 0]], dtype=object)
        with pytest.raises(ValidationError, match="no category"):
            assign_minimization(cov, seed=1)

    def test_marginal_fraction(self):
        rng = np.random.default_rng(9)
        cov = rng.integers(0, 2, size=(200, 2))
        reps = np.array([assign_minimization(cov, [0.5, 0.5], 0.85, 0.5, seed=r) for r in range(2000)])
        assert abs(reps.mean() - 0.5) < 0.01

    def test_margins_balanced(self):
        rng = np.random.default_rng(2)
        cov = rng.integers(0, 2, size=(400, 2))
        a = assign_minimization(cov, [0.5, 0.5], 0.85, 0.5, seed=7)
        for j in range(2):
            for lev in (0, 1):
                m = cov[:, j] == lev
                assert abs(a[m].sum() - 0.5 * m.sum()) <= 6


class TestDispatchAndDiagnostics:
    def test_dispatch(self):
        s = strata_of([8, 8])
        for scheme in ("simple", "block", "biased-coin", "minimization"):
            a = assign(DesignConfig(scheme, seed=3), strata=s)
            assert a.shape == (16,) and set(np.unique(a)) <= {0, 1}
            assert np.array_equal(a, assign(DesignConfig(scheme, seed=3), strata=s))

    def test_needs_strata(self):
        with pytest.raises(ValidationError):
            assign(DesignConfig("block"))

    def test_counts_consistent(self):
        s = strata_of([13, 7, 20])
        a = assign(DesignConfig("biased-coin", seed=5), strata=s)
        labels, sizes, d = stratum_imbalance(a, s, 0.5)
        assert sizes.sum() == 40
        treated = d + 0.5 * sizes
        assert np.allclose(treated, [a[s == k].sum() for k in labels])

    def test_alternating_q_zero(self):
        s = np.zeros(10, dtype=int)
        reps = np.array([[1, 0] * 5, [0, 1] * 5])
        assert design_diagnostics(reps, s, 0.5).q_hat[0] == 0.0

    def test_needs_two_reps(self):
        with pytest.raises(ValidationError):
            design_diagnostics(np.zeros((1, 4)), np.zeros(4, dtype=int), 0.5)

    def test_simple_q(self):
        s = strata_of([100, 100])
        reps = np.array([assign_simple(s, 0.5, seed=r) for r in range(2000)])
        q = design_diagnostics(reps, s, 0.5).q_hat
        # binomial: Var(D)/n_k = pi (1 - pi)
        assert np.all(np.abs(q - 0.25) < 0.03)

    def test_block_q(self):
        s = strata_of([100, 100])
        reps = np.array([assign_stratified_block(s, 0.5, 4, seed=r) for r in range(200)])
        assert np.all(design_diagnostics(reps, s, 0.5).q_hat == 0.0)

    def test_relabel_equivariance(self):
        # stratum k's assignments depend only on (seed, key of k), not on other strata
        s = np.array([0, 1, 2, 0, 1, 2, 0, 1, 2, 0, 1, 2] * 3)
        relabel = {0: 2, 1: 0, 2: 1}
        s2 = np.array([relabel[v] for v in s])
        keys = {relabel[k]: k for k in relabel}
        for fn in (assign_simple, assign_stratified_block, assign_biased_coin):
            a = fn(s, 0.5, seed=11)
            b = fn(s2, 0.5, seed=11, stream_keys=keys)
            assert np.array_equal(a, b)

    def test_backend_selected(self):
        assert _backend.BACKEND in ("compiled", "python")
