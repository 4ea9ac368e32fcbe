"""Kernel-level tests: closed forms vs. independent brute-force/MC oracles."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from advrisk import kernels as K
from advrisk.errors import KernelConvergenceError


RNG_SEED = 20240517


# ---------------------------------------------------------------------------
# Oracles (kept independent of the library paths they check)
# ---------------------------------------------------------------------------

def mc_pospart_sq(a, b, n, rng):
    g = rng.standard_normal(n)
    vals = np.maximum(a * g + b, 0.0) ** 2
    return vals.mean(), vals.std() / np.sqrt(n)


def grid_jq(x, lam, q, step=1e-6):
    # dense scan of the envelope objective over u in [-|x|, |x|]
    u = np.arange(-abs(x), abs(x) + step, step)
    return float(np.min(0.5 * (x - u) ** 2 + lam * np.abs(u) ** q))


def grid_moreau(x, mu, loss, lo=-10.0, hi=10.0, step=1e-6):
    t = np.arange(lo, hi, step)
    return float(np.min((x - t) ** 2 / (2 * mu) + loss.value(t)))


def mc_f_fun(c0, c1, t0, delta, n, rng):
    # continuous-law oracle: h, M both standard normal
    h = rng.standard_normal(n)
    m = rng.standard_normal(n)
    sigma_m1 = np.sqrt(2 / np.pi)
    arg = c0 / np.sqrt(delta) * h - c1 * m
    st = np.sign(arg) * np.maximum(np.abs(arg) - t0 / sigma_m1, 0.0)
    vals = 0.5 * st**2
    return vals.mean(), vals.std() / np.sqrt(n)


def mc_cal_j_q1(c0, c1, lam, delta, n, rng):
    h = rng.standard_normal(n)
    m = rng.standard_normal(n)
    arg = c0 / np.sqrt(delta) * h - c1 * m
    a = np.abs(arg)
    vals = np.where(a <= lam, 0.5 * a**2, lam * a - 0.5 * lam**2)
    return vals.mean(), vals.std() / np.sqrt(n)


def mc_expected_moreau_logistic(a, b, mu, n, rng):
    x = a * rng.standard_normal(n) + b
    t = x.copy()
    for _ in range(80):
        g = (t - x) / mu - 1.0 / (1.0 + np.exp(t))
        gp = 1.0 / mu + np.exp(t) / (1.0 + np.exp(t)) ** 2
        t = t - g / gp
    vals = (x - t) ** 2 / (2 * mu) + np.logaddexp(0.0, -t)
    return vals.mean(), vals.std() / np.sqrt(n)


# ---------------------------------------------------------------------------
# pospart_sq_moment
# ---------------------------------------------------------------------------

class TestPospartSqMoment:
    def test_degenerate_a_zero(self):
        assert K.pospart_sq_moment(0.0, 1.0) == 1.0
        assert K.pospart_sq_moment(0.0, -2.0) == 0.0

    def test_symmetric_half_second_moment(self):
        assert K.pospart_sq_moment(1.0, 0.0) == pytest.approx(0.5, abs=1e-14)

    def test_against_mc_oracle_a1_b1(self):
        rng = np.random.default_rng(RNG_SEED)
        mc, se = mc_pospart_sq(1.0, 1.0, 10_000_000, rng)
        val = K.pospart_sq_moment(1.0, 1.0)
        assert val == pytest.approx(1.9246602166562292, abs=1e-12)  # frozen
        assert abs(val - mc) < 3 * se

    def test_mc_sweep_20_points(self):
        rng = np.random.default_rng(RNG_SEED + 1)
        a_vals = rng.uniform(0.0, 3.0, 20)
        b_vals = rng.uniform(-3.0, 3.0, 20)
        for a, b in zip(a_vals, b_vals):
            mc, se = mc_pospart_sq(a, b, 1_000_000, rng)
            assert abs(K.pospart_sq_moment(a, b) - mc) < 3 * max(se, 1e-12)

    def test_rejects_nan_and_negative_a(self):
        with pytest.raises(ValueError):
            K.pospart_sq_moment(np.nan, 0.0)
        with pytest.raises(ValueError):
            K.pospart_sq_moment(1.0, np.nan)
        with pytest.raises(ValueError):
            K.pospart_sq_moment(-0.1, 0.0)

    def test_array_broadcast(self):
        a = np.array([0.0, 1.0, 2.0])
        b = np.array([1.0, 0.0, -1.0])
        out = K.pospart_sq_moment(a, b)
        assert out.shape == (3,)
        assert out[0] == 1.0 and out[1] == pytest.approx(0.5)


# ---------------------------------------------------------------------------
# jq
# ---------------------------------------------------------------------------

class TestJq:
    def test_huber_branch(self):
        # |x| >= lam: lam*|x| - lam^2/2
        assert K.jq(2.0, 1.0, 1.0) == pytest.approx(1.5, abs=1e-14)
        # |x| <= lam: x^2/2
        assert K.jq(0.5, 1.0, 1.0) == pytest.approx(0.125, abs=1e-14)

    def test_quadratic_branch(self):
        assert K.jq(1.0, 0.5, 2.0) == pytest.approx(0.25, abs=1e-14)

    def test_zero_input(self):
        for q in (1.0, 1.5, 2.0, 3.0):
            assert K.jq(0.0, 0.7, q) == 0.0

    def test_general_q_against_grid_search(self):
        val = K.jq(1.3, 0.7, 3.0)
        oracle = grid_jq(1.3, 0.7, 3.0)
        assert val == pytest.approx(0.39575168594, abs=1e-9)  # frozen
        assert abs(val - oracle) < 1e-7

    @pytest.mark.parametrize("q", [1.0, 1.2, 1.5, 2.0, 2.5, 4.0])
    def test_grid_search_other_exponents(self, q):
        for x, lam in [(0.4, 0.3), (2.1, 1.1), (-1.7, 0.05)]:
            assert abs(K.jq(x, lam, q) - grid_jq(x, lam, q)) < 1e-7

    def test_rejects_infinite_q(self):
        with pytest.raises(ValueError):
            K.jq(1.0, 0.5, np.inf)

    @given(
        x=st.floats(-20, 20),
        lam=st.floats(0, 10),
        q=st.floats(1, 5),
    )
    @settings(max_examples=200, deadline=None)
    def test_bounded_even_properties(self, x, lam, q):
        v = K.jq(x, lam, q)
        assert 0.0 <= v <= 0.5 * x * x + 1e-12
        assert v == pytest.approx(K.jq(-x, lam, q), rel=1e-12, abs=1e-12)

    def test_monotone_in_lam(self):
        lams = np.linspace(0.0, 4.0, 25)
        for x in (0.3, 1.0, 2.5):
            for q in (1.0, 1.5, 2.0, 3.0):
                vals = [K.jq(x, l, q) for l in lams]
                assert np.all(np.diff(vals) >= -1e-12)


# ---------------------------------------------------------------------------
# soft_threshold
# ---------------------------------------------------------------------------

class TestSoftThreshold:
    def test_basic_cases(self):
        assert K.soft_threshold(3.0, 1.0) == 2.0
        assert K.soft_threshold(-0.5, 1.0) == 0.0
        assert K.soft_threshold(2.5, 0.0) == 2.5

    @given(x=st.floats(-50, 50), a=st.floats(0, 50))
    @settings(max_examples=200, deadline=None)
    def test_shrinkage_properties(self, x, a):
        v = K.soft_threshold(x, a)
        assert abs(v) <= abs(x) + 1e-12
        assert v * x >= 0.0
        assert abs(v) == pytest.approx(max(abs(x) - a, 0.0), abs=1e-12)


# ---------------------------------------------------------------------------
# f_fun
# ---------------------------------------------------------------------------

class TestFFun:
    def setup_method(self):
        self.mean = K.gaussian_mean(p=1.0)

    def test_zero_threshold_identity(self):
        for c0, c1, delta in [(1.0, 1.0, 2.0), (0.7, -0.4, 0.5), (2.0, 0.0, 1.0)]:
            expect = 0.5 * (c0**2 / delta + c1**2)
            assert K.f_fun(c0, c1, 0.0, delta, self.mean) == pytest.approx(
                expect, abs=1e-10
            )

    def test_huge_threshold_vanishes(self):
        assert K.f_fun(1.0, 1.0, 1e9, 2.0, self.mean) == 0.0

    def test_against_mc_oracle(self):
        rng = np.random.default_rng(RNG_SEED + 2)
        mc, se = mc_f_fun(1.0, 1.0, 1.0, 2.0, 10_000_000, rng)
        val = K.f_fun(1.0, 1.0, 1.0, 2.0, self.mean)
        assert val == pytest.approx(0.10727407209320422, abs=1e-12)  # frozen
        assert abs(val - mc) < 3 * se

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError):
            K.f_fun(1.0, 1.0, -0.1, 1.0, self.mean)
        with pytest.raises(ValueError):
            K.f_fun(1.0, 1.0, 0.1, 0.0, self.mean)


# ---------------------------------------------------------------------------
# cal_j
# ---------------------------------------------------------------------------

class TestCalJ:
    def test_zero_penalty(self):
        mean = K.gaussian_mean(p=2.0)
        assert K.cal_j(1.0, 1.0, 0.0, 2.0, 1.0, mean) == 0.0

    def test_q2_closed_form_grid(self):
        mean = K.gaussian_mean(p=2.0)
        sigma2 = mean.sigma_m2**2
        for c0 in (0.3, 1.0, 2.0):
            for c1 in (-1.0, 0.0, 0.8):
                for lam0 in (0.05, 0.3, 2.0):
                    for delta in (0.5, 1.0, 4.0):
                        closed = (lam0 * sigma2 / (1 + 2 * lam0 * sigma2)) * (
                            c0**2 / delta + c1**2
                        )
                        val = K.cal_j(c0, c1, lam0, 2.0, delta, mean)
                        assert val == pytest.approx(closed, abs=1e-10)

    def test_q1_against_mc_oracle(self):
        # q = 1 pairs with p = inf, where the penalty scale is 1
        mean = K.gaussian_mean(p=np.inf)
        rng = np.random.default_rng(RNG_SEED + 3)
        mc, se = mc_cal_j_q1(1.0, 0.5, 0.3, 1.0, 10_000_000, rng)
        val = K.cal_j(1.0, 0.5, 0.3, 1.0, 1.0, mean)
        assert val == pytest.approx(0.22581879540963187, abs=1e-12)  # frozen
        assert abs(val - mc) < 3 * se

    def test_rejects_infinite_q(self):
        mean = K.gaussian_mean(p=2.0)
        with pytest.raises(ValueError):
            K.cal_j(1.0, 1.0, 0.5, np.inf, 1.0, mean)


# ---------------------------------------------------------------------------
# Moreau envelope
# ---------------------------------------------------------------------------

class TestMoreauLoss:
    @pytest.mark.parametrize("loss", [K.LOGISTIC, K.EXPONENTIAL, K.HINGE])
    def test_envelope_converges_to_loss(self, loss):
        for x in (-2.0, 0.0, 0.3, 4.0):
            assert K.moreau_loss(x, 1e-8, loss) == pytest.approx(
                float(loss.value(x)), abs=1e-6
            )

    @pytest.mark.parametrize("loss", [K.LOGISTIC, K.EXPONENTIAL, K.HINGE])
    def test_envelope_below_loss(self, loss):
        for x in np.linspace(-3, 3, 13):
            for mu in (0.01, 0.5, 2.0):
                assert K.moreau_loss(x, mu, loss) <= float(loss.value(x)) + 1e-12

    def test_logistic_against_grid_search(self):
        val = K.moreau_loss(0.0, 1.0, K.LOGISTIC)
        oracle = grid_moreau(0.0, 1.0, K.LOGISTIC)
        assert val == pytest.approx(0.5930145580865889, abs=1e-12)  # frozen
        assert abs(val - oracle) < 1e-9

    def test_hinge_closed_form_cases(self):
        # beyond the kink, inside the proximal band, and to the left of it
        assert K.moreau_loss(2.0, 1.0, K.HINGE) == 0.0
        assert K.moreau_loss(0.5, 1.0, K.HINGE) == pytest.approx(0.125)
        assert K.moreau_loss(-1.0, 1.0, K.HINGE) == pytest.approx(1.5)

    @pytest.mark.parametrize("loss", [K.LOGISTIC, K.EXPONENTIAL, K.HINGE])
    def test_derivative_matches_prox_formula(self, loss):
        # d/dx e(x; mu) = (x - t*) / mu, checked by central differences
        eps = 1e-6
        for x in (-1.3, 0.2, 1.7):
            for mu in (0.3, 1.0):
                if loss.id == "hinge" and abs(K.moreau_prox(x, mu, loss) - 1.0) < 1e-9:
                    continue
                t_star = K.moreau_prox(x, mu, loss)
                fd = (
                    K.moreau_loss(x + eps, mu, loss) - K.moreau_loss(x - eps, mu, loss)
                ) / (2 * eps)
                assert fd == pytest.approx((x - t_star) / mu, abs=1e-6)

    def test_exponential_extreme_argument(self):
        # stationarity is solved in closed form, so strongly negative margins
        # must not overflow
        val = K.moreau_loss(-800.0, 1.0, K.EXPONENTIAL)
        assert np.isfinite(val) and val > 0


class TestExpectedMoreau:
    def test_degenerate_a_zero(self):
        for b in (-1.0, 0.5):
            assert K.expected_moreau(0.0, b, 1.0, K.LOGISTIC) == pytest.approx(
                K.moreau_loss(b, 1.0, K.LOGISTIC), abs=1e-14
            )

    def test_decreasing_in_b_logistic(self):
        bs = np.linspace(-2, 2, 21)
        vals = [K.expected_moreau(1.0, b, 1.0, K.LOGISTIC) for b in bs]
        assert np.all(np.diff(vals) < 0)

    def test_against_mc_oracle(self):
        rng = np.random.default_rng(RNG_SEED + 4)
        mc, se = mc_expected_moreau_logistic(1.0, 0.5, 1.0, 10_000_000, rng)
        val = K.expected_moreau(1.0, 0.5, 1.0, K.LOGISTIC)
        assert val == pytest.approx(0.4999778780896343, abs=1e-12)  # frozen
        assert abs(val - mc) < 3 * se

    def test_quadrature_order_convergence(self):
        # grid spans the amplitude range the saddle solvers operate in; the
        # envelope's convergence strip shrinks with a, so much larger
        # amplitudes converge more slowly by nature
        r32 = K.QuadratureRule(gh_order=32)
        r64 = K.QuadratureRule(gh_order=64)
        for a in (0.5, 1.0, 2.0):
            for b in (-1.0, 0.0, 2.0):
                for mu in (0.2, 1.0):
                    v32 = K.expected_moreau(a, b, mu, K.LOGISTIC, r32)
                    v64 = K.expected_moreau(a, b, mu, K.LOGISTIC, r64)
                    assert abs(v32 - v64) < 1e-8


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

class TestQuadratureRule:
    def test_polynomial_exactness(self):
        # E[g^{2k}] = (2k-1)!! for the standard normal
        rule = K.QuadratureRule(gh_order=16)
        exact = 1.0
        for k in range(1, 9):
            exact *= 2 * k - 1
            got = rule.expect(lambda x, k=k: x ** (2 * k))
            assert got == pytest.approx(exact, rel=1e-12)

    def test_rejects_low_order(self):
        with pytest.raises(ValueError):
            K.QuadratureRule(gh_order=8)


class TestLossModel:
    @pytest.mark.parametrize("loss", [K.LOGISTIC, K.EXPONENTIAL, K.HINGE])
    def test_nonincreasing_and_convex(self, loss):
        t = np.linspace(-5, 5, 201)
        vals = loss.value(t)
        assert np.all(loss.derivative(t) <= 1e-12)
        slopes = np.diff(vals) / np.diff(t)
        assert np.all(np.diff(slopes) >= -1e-9)

    def test_unknown_loss_rejected(self):
        with pytest.raises(ValueError):
            K.make_loss("perceptron")


class TestMeanDistribution:
    def test_gaussian_factory_moments(self):
        m = K.gaussian_mean(p=1.0, scale=1.0)
        assert m.sigma_m2 == pytest.approx(1.0, abs=1e-12)
        assert m.sigma_m1 == pytest.approx(np.sqrt(2 / np.pi), abs=1e-12)
        m3 = K.gaussian_mean(p=3.0, scale=2.0)
        assert m3.sigma_mp**3 == pytest.approx(8 * 2 * np.sqrt(2 / np.pi), rel=1e-10)

    def test_infinite_p_uses_unit_budget_scale(self):
        m = K.gaussian_mean(p=np.inf)
        assert m.sigma_mp == 1.0

    def test_invariants_enforced(self):
        v = np.array([-1.0, 1.0])
        w = np.array([0.5, 0.5])
        K.MeanDistribution(sigma_m2=1.0, sigma_mp=1.0, p=2.0, values=v, weights=w)
        with pytest.raises(ValueError):
            K.MeanDistribution(sigma_m2=2.0, sigma_mp=1.0, p=2.0, values=v, weights=w)
        with pytest.raises(ValueError):
            K.MeanDistribution(
                sigma_m2=1.0, sigma_mp=1.0, p=2.0, values=v, weights=np.array([0.6, 0.5])
            )
        with pytest.raises(ValueError):
            K.MeanDistribution(sigma_m2=1.0, sigma_mp=1.7, p=3.0, values=v, weights=w)
