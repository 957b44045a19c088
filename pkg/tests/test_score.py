import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from car_heavytail.errors import EstimationError, ScoreWarning, ValidationError
from car_heavytail.score import (
    GAUSSIAN,
    TRIWEIGHT,
    KernelSpec,
    ScoreModel,
    TruncationThresholds,
    default_thresholds,
    delta_n,
    fisher_info_alt,
    fisher_info_hat,
    fit_score,
    validate_rates,
)

PHI0 = 1 / math.sqrt(2 * math.pi)
PHI1 = math.exp(-0.5) / math.sqrt(2 * math.pi)
WIDE = TruncationThresholds.wide()


def model(sample, kind=GAUSSIAN, sigma=1.0, thresholds=WIDE):
    return ScoreModel(np.asarray(sample, float), KernelSpec(kind, sigma), thresholds)


class TestKernelSums:
    def test_single_point_gaussian(self):
        m = model([0.0])
        assert m.density(0.0)[0] == pytest.approx(PHI0, rel=1e-12)
        assert m.density_deriv(0.0)[0] == pytest.approx(0.0, abs=1e-15)
        assert m.density_deriv(1.0)[0] == pytest.approx(-PHI1, rel=1e-12)
        assert m.density_deriv2(0.0)[0] == pytest.approx(-PHI0, rel=1e-12)

    def test_two_points_gaussian(self):
        assert model([-1.0, 1.0]).density(0.0)[0] == pytest.approx(PHI1, rel=1e-12)

    def test_triweight_support(self):
        m = model([0.0], TRIWEIGHT)
        assert m.density(2.0)[0] == 0.0
        assert m.density(0.0)[0] == pytest.approx(35 / 32)

    def test_triweight_compact_support_random(self, rng):
        x = rng.standard_normal(200)
        m = fit_score(x, TRIWEIGHT)
        far = np.array([x.max() + 1.01 * m.bandwidth, x.min() - 1.01 * m.bandwidth])
        assert np.all(m.density(far) == 0.0)

    def test_empty_sample(self):
        with pytest.raises(EstimationError, match="no fitting data"):
            model([])

    def test_shape_preserved(self):
        m = model([0.0, 1.0])
        assert m.density(np.zeros((2, 3))).shape == (2, 3)
        assert m.score(0.5).shape == ()

    @pytest.mark.parametrize("kind", [GAUSSIAN, TRIWEIGHT])
    def test_derivatives_match_finite_differences(self, kind, rng):
        x = rng.standard_normal(300)
        m = model(x, kind, 0.6)
        y = rng.uniform(-2, 2, 100)
        h = 1e-5
        fd1 = (m.density(y + h) - m.density(y - h)) / (2 * h)
        fd2 = (m.density_deriv(y + h) - m.density_deriv(y - h)) / (2 * h)
        assert np.max(np.abs(fd1 - m.density_deriv(y)) / np.abs(m.density_deriv(y))) < 1e-6
        # f'' crosses zero inside the range, so its error is scaled by its magnitude over the points
        f2 = m.density_deriv2(y)
        assert np.max(np.abs(fd2 - f2)) / np.max(np.abs(f2)) < 1e-6

    def test_gaussian_integrates_to_one(self, rng):
        x = rng.standard_cauchy(100)
        m = model(x, GAUSSIAN, 0.5)
        grid = np.linspace(x.min() - 3.0, x.max() + 3.0, 200001)
        f = m.density(grid)
        area = np.sum(0.5 * (f[1:] + f[:-1]) * np.diff(grid))
        assert area == pytest.approx(1.0, abs=1e-3)

    def test_backends_agree(self, kernels, rng):
        from car_heavytail import _backend

        x = np.sort(rng.standard_cauchy(700))
        y = rng.standard_cauchy(300)
        ref = _backend.implementations()["python"]
        for code in (_backend.TRIWEIGHT, _backend.GAUSSIAN):
            got = kernels.kernel_sums(x, y, 0.7, code)
            want = ref.kernel_sums(x, y, 0.7, code)
            for g, w in zip(got, want):
                assert np.allclose(g, w, rtol=1e-12, atol=1e-15)


class TestScore:
    def test_outside_domain(self, rng):
        m = fit_score(rng.standard_normal(500))
        e = m.thresholds.e
        y = np.array([e + 0.01, -e - 0.5, 10 * e])
        assert np.all(m.score(y) == 0.0) and np.all(m.score_deriv(y) == 0.0)
        assert not m.in_domain(y).any()

    def test_density_floor(self):
        t = TruncationThresholds(b=1e9, c=1e9, d=0.3, e=100)
        m = model([0.0], GAUSSIAN, 1.0, t)
        # f(2) = phi(2) < 0.3 while f(0) = 0.399 >= 0.3
        assert m.score(2.0) == 0.0
        assert m.in_domain(0.0)

    def test_caps(self, rng):
        x = rng.standard_cauchy(800)
        m = fit_score(x)
        y = np.linspace(-30, 30, 5001)
        ok, g, dg = m.evaluate(y)
        t = m.thresholds
        assert np.all(np.abs(g) <= t.c + 1e-12)
        assert np.all(np.abs(dg[ok]) <= t.b + t.c**2 + 1e-9)
        assert np.all(g[~ok] == 0.0)

    def test_single_gaussian_score_deriv(self):
        assert model([0.0]).score_deriv(0.0) == pytest.approx(-1.0, rel=1e-12)

    def test_normal_score_at_one(self):
        # true standard-normal score at y = 1 is -1
        vals = [fit_score(np.random.default_rng(s).standard_normal(4000)).score(1.0) for s in range(20)]
        assert abs(np.median(vals) + 1.0) <= 0.15

    def test_normal_score_deriv_at_zero(self):
        # (f'/f)' = -1 for the standard normal. The second-derivative ratio is
        # noisy at the default bandwidth, so this uses a Gaussian kernel at
        # sigma = 0.4 and a 20-seed median.
        vals = [
            fit_score(np.random.default_rng(s).standard_normal(4000), GAUSSIAN, bandwidth=0.4).score_deriv(0.0)
            for s in range(20)
        ]
        assert abs(np.median(vals) + 1.0) <= 0.2

    def test_permutation_invariance(self, rng):
        x = rng.standard_normal(300)
        y = np.linspace(-3, 3, 50)
        a, b = fit_score(x), fit_score(rng.permutation(x))
        assert np.array_equal(a.score(y), b.score(y))

    def test_explicit_thresholds_echoed(self, rng):
        t = TruncationThresholds(1.0, 2.0, 0.001, 5.0)
        m = fit_score(rng.standard_normal(100), thresholds=t, bandwidth=0.7)
        assert m.thresholds is t and m.bandwidth == 0.7

    def test_too_small(self):
        with pytest.raises(EstimationError, match="insufficient data for score estimation"):
            fit_score(np.arange(19.0))

    def test_bad_inputs(self):
        with pytest.raises(ValidationError):
            fit_score(np.arange(30.0), kernel="epanechnikov")
        with pytest.raises(ValidationError):
            fit_score(np.arange(30.0), bandwidth="silverman")
        with pytest.raises(ValidationError):
            TruncationThresholds(-1, 1, 1, 1)
        with pytest.raises(ValidationError):
            KernelSpec(GAUSSIAN, 0.0)

    def test_zero_cap_warns(self, rng):
        with pytest.warns(ScoreWarning):
            m = fit_score(rng.standard_normal(50), thresholds=TruncationThresholds(1, 0, 0.01, 5))
        assert np.all(m.score(np.linspace(-2, 2, 11)) == 0.0)

    @given(st.lists(st.floats(-50, 50), min_size=20, max_size=60), st.floats(-100, 100))
    @settings(max_examples=50, deadline=None)
    def test_cap_property(self, xs, y):
        m = fit_score(np.array(xs) + np.linspace(0, 1e-3, len(xs)))
        g = float(m.score(y))
        assert abs(g) <= m.thresholds.c + 1e-12
        if abs(y) > m.thresholds.e:
            assert g == 0.0

    def test_l2_error_shrinks(self):
        # Monte Carlo estimate of the integral of (g_hat - f0'/f0)^2 dF0 on
        # standard normal data; the true score is -y.
        def err(n, seed):
            rng = np.random.default_rng(seed)
            m = fit_score(rng.standard_normal(n))
            y = rng.standard_normal(20000)
            return np.mean((m.score(y) + y) ** 2)

        small = np.median([err(500, s) for s in range(20)])
        large = np.median([err(4000, 100 + s) for s in range(20)])
        assert large < small


class TestRates:
    def test_fail_window(self):
        r = validate_rates(1000, TruncationThresholds(1.0, 1.0, 0.01, 10.0), 0.3)
        assert not r.clauses["window"] and not r.passed
        assert any("sigma^-5" in m for m in r.messages)

    def test_pass(self):
        r = validate_rates(1000, TruncationThresholds(0.25, 0.5, 0.01, 5.0), 0.5)
        assert r.passed and bool(r)

    def test_sigma_c_clause(self):
        r = validate_rates(10**9, TruncationThresholds(1.0, 100.0, 0.01, 1.0), 1.0)
        assert not r.clauses["sigma_c"]

    def test_degenerate_c_warns(self):
        with pytest.warns(ScoreWarning):
            r = validate_rates(1000, TruncationThresholds(1.0, 0.0, 0.01, 5.0), 0.5)
        assert not r.clauses["nondegenerate"]

    def test_defaults_pass_on_normal(self, rng):
        m = fit_score(rng.standard_normal(1000))
        assert validate_rates(1000, m.thresholds, m.bandwidth).passed

    def test_default_threshold_shape(self, rng):
        x = rng.standard_normal(1000)
        t = default_thresholds(x, 0.5)
        assert t.c == pytest.approx(8.0) and t.b == pytest.approx(64.0)
        assert t.e == pytest.approx(max(abs(np.quantile(x, 0.005)), abs(np.quantile(x, 0.995))))


class TestFisher:
    def test_mean_of_squares(self):
        assert fisher_info_hat([1.0, -1.0]) == 1.0

    def test_zero_flagged(self):
        with pytest.warns(ScoreWarning):
            assert fisher_info_hat([0.0, 0.0]) == 0.0
        with pytest.raises(EstimationError):
            fisher_info_hat([])

    def test_alt_single_gaussian(self):
        assert fisher_info_alt(model([0.0]), [0.0]) == pytest.approx(1.0)

    def test_alt_zero_region_flagged(self):
        m = model([0.0], GAUSSIAN, 1.0, TruncationThresholds(1.0, 1.0, 0.01, 0.1))
        with pytest.warns(ScoreWarning):
            assert fisher_info_alt(m, [5.0, 6.0]) == 0.0

    @staticmethod
    def cross_fitted(x):
        half = x.size // 2
        a, b = x[:half], x[half:]
        ma, mb = fit_score(a), fit_score(b)
        return fisher_info_hat(np.concatenate([mb.score(a), ma.score(b)]))

    def test_translation_invariance(self, rng):
        x = rng.standard_normal(600)
        half = 300
        a, b = x[:half], x[half:]

        def info(shift):
            ma = fit_score(a + shift, thresholds=WIDE)
            mb = fit_score(b + shift, thresholds=WIDE)
            return fisher_info_hat(np.concatenate([mb.score(a + shift), ma.score(b + shift)]))

        assert info(0.0) == pytest.approx(info(7.5), rel=1e-9)

    def test_alt_laplace(self):
        vals = []
        for s in range(20):
            x = np.random.default_rng(s).laplace(size=2000)
            vals.append(fisher_info_alt(fit_score(x[:1000]), x[1000:]))
        assert abs(np.median(vals) - 1.0) <= 0.2

    def test_delta_n(self):
        assert delta_n([0, 0, 1, 1], [0, 1, 0, 1]) == 0.0
        assert delta_n([0, 0, 0, 1], [0, 1, 0, 1]) == pytest.approx(0.25)
        assert math.isnan(delta_n([], [0, 1]))
