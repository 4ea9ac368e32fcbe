"""Threshold and spherical-width tests against analytic anchors and oracles."""

import numpy as np
import pytest

from advrisk import kernels as K
from advrisk import separability as S


MEAN_P1 = K.gaussian_mean(p=1.0)
MEAN_P2 = K.gaussian_mean(p=2.0)
MEAN_PINF = K.gaussian_mean(p=np.inf)


def golden_section_min(f, lo, hi, tol=1e-10):
    """Independent 1-D minimizer used as the threshold oracle."""
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while abs(b - a) > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    x = 0.5 * (a + b)
    return x, f(x)


def cvxpy_width_oracle(alpha, theta, eps0, d, seed):
    """Finite-dimensional width of the sparse-adversary set, solved exactly."""
    import cvxpy as cp

    rng = np.random.default_rng(seed)
    mu = rng.standard_normal(d) / np.sqrt(d)
    mu_hat = mu / np.linalg.norm(mu)
    h = rng.standard_normal(d)
    z = cp.Variable(d)
    constraints = [
        mu_hat @ z == 0,
        cp.norm(z, 2) <= alpha,
        cp.norm(z + theta * mu_hat, "inf") <= 1.0 / (eps0 * np.linalg.norm(mu, 1)),
    ]
    prob = cp.Problem(cp.Maximize(h @ z), constraints)
    prob.solve(solver=cp.CLARABEL)
    return prob.value / np.sqrt(d)


class TestOmega:
    def test_no_adversary_gives_alpha(self):
        for p, mean in ((1.0, MEAN_P1), (2.0, MEAN_P2), (np.inf, MEAN_PINF)):
            assert S.omega(1.3, 0.4, 0.0, p, mean) == 1.3

    def test_p2_branches(self):
        # huge alpha: the budget sphere radius wins
        w = S.omega(1e6, 0.5, 0.2, 2.0, MEAN_P2)
        assert w == pytest.approx(np.sqrt(1.0 / 0.04 - 0.25), abs=1e-12)
        # small alpha wins
        assert S.omega(0.3, 0.5, 0.2, 2.0, MEAN_P2) == 0.3

    def test_p2_infeasible_sentinel(self):
        # theta beyond the dual-budget radius: empty set, zero-width sentinel
        assert S.omega(1.0, 6.0, 0.2, 2.0, MEAN_P2) == 0.0

    def test_p1_against_high_dimensional_oracle(self):
        vals = [cvxpy_width_oracle(1.0, 0.0, 0.5, 2000, s) for s in (11, 12, 13)]
        oracle = float(np.mean(vals))
        w = S.omega(1.0, 0.0, 0.5, 1.0, MEAN_P1)
        assert abs(w - oracle) / oracle < 0.05

    def test_pinf_budget_inactive_equals_alpha(self):
        # small budget use: the scaled l1 ball is slack, width is the radius
        assert S.omega(1.0, 0.5, 0.3, np.inf, MEAN_PINF) == pytest.approx(1.0, abs=1e-9)

    def test_pinf_budget_binds_for_large_radius(self):
        w = S.omega(80.0, 10.0, 0.3, np.inf, MEAN_PINF)
        assert w < 80.0


class TestDeltaStar:
    def test_vanishing_signal_anchor(self):
        mean = K.gaussian_mean(p=2.0, scale=1e-6)
        thr = S.delta_star(0.0, 2.0, mean)
        assert thr.delta_star == pytest.approx(2.0, abs=1e-3)
        assert thr.method == "nonadversarial"

    def test_no_adversary_matches_golden_section_oracle(self):
        theta_o, val_o = golden_section_min(
            lambda t: K.pospart_sq_moment(np.sqrt(1 + t * t), -t), 0.0, 10.0
        )
        thr = S.delta_star(0.0, 2.0, MEAN_P2)
        assert thr.delta_star == pytest.approx(1.0 / val_o, rel=1e-8)
        assert thr.delta_star == pytest.approx(3.7000334556, rel=1e-8)  # frozen

    def test_no_adversary_identical_across_norms(self):
        vals = [
            S.delta_star(0.0, p, mean).delta_star
            for p, mean in ((1.0, MEAN_P1), (2.0, MEAN_P2), (np.inf, MEAN_PINF))
        ]
        assert max(vals) - min(vals) < 1e-6

    @pytest.mark.parametrize("eps0", [0.05, 0.2, 0.4])
    def test_p2_generic_matches_closed_form(self, eps0):
        closed = S.delta_star(eps0, 2.0, MEAN_P2)
        generic = S.delta_star(eps0, 2.0, MEAN_P2, method="generic")
        assert closed.method == "closed_form_p2"
        assert generic.method == "generic"
        assert abs(closed.delta_star - generic.delta_star) < 1e-3

    @pytest.mark.parametrize(
        "p,mean",
        [(1.0, MEAN_P1), (2.0, MEAN_P2), (np.inf, MEAN_PINF)],
        ids=["p1", "p2", "pinf"],
    )
    def test_threshold_nonincreasing_in_adversary_power(self, p, mean):
        x0 = None
        vals = []
        for eps0 in np.linspace(0.02, 0.4, 20):
            thr = S.delta_star(eps0, p, mean, x0=x0)
            x0 = (thr.argmin_alpha, thr.argmin_theta)
            vals.append(thr.delta_star)
        assert np.all(np.diff(vals) <= 1e-6)

    def test_ratio_at_argmin_reproduces_threshold(self):
        for eps0, p, mean in ((0.2, 2.0, MEAN_P2), (0.2, 1.0, MEAN_P1), (0.0, 2.0, MEAN_P2)):
            thr = S.delta_star(eps0, p, mean)
            ratio = S.separability_ratio(
                thr.argmin_alpha, thr.argmin_theta, eps0, p, mean
            )
            assert ratio == pytest.approx(thr.delta_star, rel=1e-6)

    def test_aniso_identity_covariance_matches_isotropic(self):
        cov_id = S.CovarianceSpec.spiked(1.0, np.ones(4))
        for eps0 in (0.1, 0.3):
            iso = S.delta_star(eps0, 2.0, MEAN_P2)
            aniso = S.delta_star(eps0, 2.0, MEAN_P2, cov=cov_id)
            assert aniso.method == "aniso_q2"
            assert abs(aniso.delta_star - iso.delta_star) < 1e-6

    def test_aniso_spectrum_shifts_threshold(self):
        cov = S.CovarianceSpec.spiked(1.5, np.linspace(0.5, 2.0, 8))
        thr = S.delta_star(0.2, 2.0, MEAN_P2, cov=cov)
        iso = S.delta_star(0.2, 2.0, MEAN_P2)
        assert thr.delta_star != pytest.approx(iso.delta_star, abs=1e-3)

    def test_aniso_requires_p2(self):
        cov = S.CovarianceSpec.spiked(2.0, np.ones(3) * 1.5)
        with pytest.raises(ValueError):
            S.delta_star(0.1, 1.0, MEAN_P1, cov=cov)

    @pytest.mark.parametrize(
        "p,mean", [(1.0, MEAN_P1), (np.inf, MEAN_PINF)], ids=["p1", "pinf"]
    )
    def test_argmin_first_order_stationarity(self, p, mean):
        # smooth-width norms: central differences of the ratio at the argmin
        eps0 = 0.2
        thr = S.delta_star(eps0, p, mean)
        a, t = thr.argmin_alpha, thr.argmin_theta

        def ratio(alpha, theta):
            return S.separability_ratio(alpha, theta, eps0, p, mean)

        scale = max(1.0, thr.delta_star)
        ha, ht = 1e-4 * max(a, 1.0), 1e-4 * max(abs(t), 1.0)
        ga = (ratio(a + ha, t) - ratio(a - ha, t)) / (2 * ha) * max(a, 1.0)
        gt = (ratio(a, t + ht) - ratio(a, t - ht)) / (2 * ht) * max(abs(t), 1.0)
        assert abs(ga) < 1e-5 * scale
        assert abs(gt) < 1e-5 * scale

    def test_p2_reduced_profile_stationarity(self):
        # the Euclidean optimum sits on the width kink, so stationarity is
        # checked on the smooth reduced profile instead
        eps0 = 0.2
        thr = S.delta_star(eps0, 2.0, MEAN_P2)
        th_hat = thr.argmin_theta / thr.argmin_alpha
        prof = S._reduced_profile_p2(MEAN_P2.sigma_m2, eps0)
        h = 1e-5
        grad = (prof(th_hat + h) - prof(th_hat - h)) / (2 * h)
        assert abs(grad) < 1e-5


class TestMarginObjective:
    def test_sign_flips_at_threshold(self):
        for eps0, p, mean in ((0.2, 2.0, MEAN_P2), (0.1, 1.0, MEAN_P1)):
            thr = S.delta_star(eps0, p, mean)
            below = S.margin_objective(
                0.98 * thr.delta_star, eps0, p, mean, threshold=thr
            )
            above = S.margin_objective(
                1.02 * thr.delta_star, eps0, p, mean, threshold=thr
            )
            assert below < 0 < above


class TestStieltjes:
    def test_isotropic_point(self):
        assert S.stieltjes(-1.0, S.CovarianceSpec.isotropic()) == pytest.approx(-0.5)

    def test_two_point_spectrum(self):
        cov = S.CovarianceSpec.spiked(1.0, np.array([1.0, 3.0]))
        assert S.stieltjes(-1.0, cov) == pytest.approx(0.5 * (1 / -2 + 1 / -4))

    def test_random_spectrum_matches_direct_mean(self):
        rng = np.random.default_rng(7)
        eig = rng.uniform(0.5, 3.0, 40)
        cov = S.CovarianceSpec.spiked(1.0, eig)
        z = -0.7
        assert S.stieltjes(z, cov) == pytest.approx(np.mean(1 / (z - eig)), rel=1e-12)

    def test_rejects_z_at_or_above_spectrum(self):
        cov = S.CovarianceSpec.isotropic()
        with pytest.raises(ValueError):
            S.stieltjes(1.0, cov)
        with pytest.raises(ValueError):
            S.stieltjes(1.5, cov)


class TestCovarianceSpec:
    def test_isotropic_must_be_unit(self):
        with pytest.raises(ValueError):
            S.CovarianceSpec(kind="isotropic", a2=2.0)

    def test_positive_spectrum_required(self):
        with pytest.raises(ValueError):
            S.CovarianceSpec.spiked(1.0, np.array([1.0, -0.5]))
