"""Robust-separability phase transition.

Computes the critical sampling ratio below which a Gaussian-mixture training
set admits a linear separator whose margin beats the adversary's budget, and
the limiting spherical width of the constraint set that controls it.  The
width is norm-dependent: closed form for the Euclidean adversary, a small
convex dual program otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize

from . import kernels as K
from .errors import SolverError

# stand-in for the optimizer "alpha at infinity" in regimes where the width
# constraint is void; large enough that the ratio is stationary to ~1e-8
ALPHA_UNBOUNDED = 1.0e8

_ETA_FLOOR = 1e-8


@dataclass(frozen=True)
class CovarianceSpec:
    """Feature covariance: identity, or a spike along the mean direction.

    ``a2`` is the eigenvalue attached to the mean direction and
    ``eigen_sample`` an empirical sample of the bulk spectrum (the law of
    the eigenvalues on the orthogonal complement).
    """

    kind: str
    a2: float = 1.0
    eigen_sample: np.ndarray = None

    def __post_init__(self):
        if self.kind not in ("isotropic", "spiked"):
            raise ValueError(f"unknown covariance kind {self.kind!r}")
        eig = self.eigen_sample
        if eig is None:
            eig = np.ones(1)
        eig = np.atleast_1d(np.asarray(eig, dtype=float))
        if np.any(eig <= 0) or self.a2 <= 0:
            raise ValueError("covariance eigenvalues must be positive")
        if self.kind == "isotropic":
            if abs(self.a2 - 1.0) > 1e-12 or np.any(np.abs(eig - 1.0) > 1e-12):
                raise ValueError("isotropic covariance requires unit spectrum")
        object.__setattr__(self, "eigen_sample", eig)

    @staticmethod
    def isotropic() -> "CovarianceSpec":
        return CovarianceSpec(kind="isotropic")

    @staticmethod
    def spiked(a2: float, eigen_sample) -> "CovarianceSpec":
        return CovarianceSpec(kind="spiked", a2=a2, eigen_sample=eigen_sample)


@dataclass(frozen=True)
class ThresholdResult:
    """Separability threshold with the ratio's optimizer and solve route."""

    delta_star: float
    argmin_alpha: float
    argmin_theta: float
    method: str


def stieltjes(z: float, cov: CovarianceSpec) -> float:
    """mean(1 / (z - s_i)) over the covariance spectrum, for z below it."""
    eig = cov.eigen_sample
    if np.any(np.abs(z - eig) < 1e-9):
        raise ValueError("z too close to an eigenvalue")
    if z >= eig.min():
        raise ValueError("stieltjes transform is used on z < min(spectrum) only")
    return float(np.mean(1.0 / (z - eig)))


# ---------------------------------------------------------------------------
# Spherical width
# ---------------------------------------------------------------------------

def _minimize_multipliers(obj, starts, bounds):
    """Minimize a smooth convex dual with analytic gradients."""
    best = None
    for x0 in starts:
        res = optimize.minimize(
            obj,
            x0=np.asarray(x0, dtype=float),
            jac=True,
            method="L-BFGS-B",
            bounds=bounds,
            options=dict(ftol=1e-15, gtol=1e-11, maxiter=500),
        )
        if best is None or res.fun < best.fun:
            best = res
    return best


def _width_generic(alpha, theta, eps0, q, mean, rule, state=None):
    """Width via the dual of the constrained sup, for a finite dual exponent.

    Minimizes over multipliers (lam0 >= 0, eta >= 0, nu), the first two in
    log scale; the sampling-ratio factor of the raw dual cancels after
    rescaling, so none is needed here.  ``state`` is a one-element list
    carrying the previous solution for warm starts.
    """
    penalty_scale = (eps0 * mean.sigma_mp) ** (-q)
    h, wh = rule.nodes()
    v, wv = mean.nodes()
    w = wh[:, None] * wv[None, :]
    m_over_s2 = v[None, :] / mean.sigma_m2
    h_grid = h[:, None]

    def obj(z):
        lam0, eta, nu = np.exp(z[0]), np.exp(z[1]), z[2]
        lam_j = lam0 / eta
        x = h_grid / eta - (nu / eta - theta) * m_over_s2
        jv, u = K.jq_value_prox(x, lam_j, q)
        ej = float(np.sum(w * jv))
        resid = x - u
        e_resid_m = float(np.sum(w * resid * m_over_s2))
        e_resid_xth = float(np.sum(w * resid * (x - theta * m_over_s2)))
        e_uq = float(np.sum(w * np.abs(u) ** q))
        val = (
            nu**2 / (2 * eta)
            + 1.0 / (2 * eta)
            + 0.5 * eta * alpha**2
            + lam0 * penalty_scale
            - eta * ej
        )
        d_nu = nu / eta + e_resid_m
        d_eta = (
            -(nu**2 + 1.0) / (2 * eta**2)
            + 0.5 * alpha**2
            - ej
            + e_resid_xth
            + lam_j * e_uq
        )
        d_llam = lam0 * (penalty_scale - e_uq)
        return val, np.array([d_llam, eta * d_eta, d_nu])

    bounds = [(-30.0, 12.0), (-18.0, 12.0), (None, None)]
    starts = [(0.0, 0.0, theta), (-1.0, 1.0, 2.0 * theta)]
    if state and state[0] is not None:
        starts = [state[0]]
    best = _minimize_multipliers(obj, starts, bounds)
    if state is not None:
        state[0] = best.x
    return float(best.fun)


def _width_p1(alpha, theta, eps0, mean, rule, state=None):
    """Width for the sparse adversary: two multipliers, soft-threshold core."""
    tau = (1.0 / eps0) / mean.sigma_m1
    h, wh = rule.nodes()
    v, wv = mean.nodes()
    w = wh[:, None] * wv[None, :]
    m_over_s2 = v[None, :] / mean.sigma_m2
    h_grid = h[:, None]

    def obj(z):
        eta, nu = np.exp(z[0]), z[1]
        x = h_grid / eta - (nu / eta - theta) * m_over_s2
        st = K.soft_threshold(x, tau)
        fv = 0.5 * float(np.sum(w * st**2))
        val = nu**2 / (2 * eta) + 1.0 / (2 * eta) + 0.5 * eta * alpha**2 - eta * fv
        d_nu = nu / eta + float(np.sum(w * st * m_over_s2))
        d_eta = (
            -(nu**2 + 1.0) / (2 * eta**2)
            + 0.5 * alpha**2
            - fv
            + float(np.sum(w * st * (x - theta * m_over_s2)))
        )
        return val, np.array([eta * d_eta, d_nu])

    bounds = [(-18.0, 12.0), (None, None)]
    starts = [(0.0, theta), (1.0, 2.0 * theta)]
    if state and state[0] is not None:
        starts = [state[0]]
    best = _minimize_multipliers(obj, starts, bounds)
    if state is not None:
        state[0] = best.x
    return float(best.fun)


def _width_aniso_q2(alpha, theta, eps0, V, a2, eigen_sample):
    """Width of the spiked-covariance Euclidean constraint set.

    Dual of sup h.z over {||z|| <= alpha, ||Sigma^(-1/2) z||^2 <= R^2} on the
    mean's orthocomplement; two multipliers, spectrum entering through an
    average of s / (l1*s + l2).
    """
    r2 = 1.0 / (eps0**2 * V**2) - theta**2 / a2
    if r2 < 0:
        return 0.0
    if r2 == 0:
        return 0.0
    s = eigen_sample

    def obj(z):
        l1, l2 = np.exp(z)
        return 0.25 * np.mean(s / (l1 * s + l2)) + l1 * alpha**2 + l2 * r2

    best = np.inf
    for x0 in ([0.0, 0.0], [2.0, -6.0], [-6.0, 2.0], [-2.0, -2.0]):
        res = optimize.minimize(
            obj, x0=np.array(x0), method="Nelder-Mead",
            options=dict(xatol=1e-10, fatol=1e-14, maxiter=2000),
        )
        best = min(best, res.fun)
    return float(min(best, alpha))


def omega(
    alpha: float,
    theta: float,
    eps0: float,
    p: float,
    mean: K.MeanDistribution,
    cov: CovarianceSpec | None = None,
    rule: K.QuadratureRule | None = None,
    _state: list | None = None,
) -> float:
    """Limiting spherical width of the margin-feasible direction set.

    Returns 0.0 (the zero-width sentinel) when the dual-norm budget makes
    the set empty, which happens for the Euclidean adversary once theta
    exceeds the budget radius.  With no adversary the set is a centered
    ball slice and the width is exactly ``alpha``.
    """
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    if eps0 < 0:
        raise ValueError("eps0 must be nonnegative")
    cov = cov or CovarianceSpec.isotropic()
    rule = rule or K.QuadratureRule()
    if eps0 == 0.0:
        return float(alpha)
    V = mean.sigma_m2
    if cov.kind == "spiked" or (p == 2.0 and cov.kind == "isotropic"):
        if p != 2.0:
            raise ValueError("anisotropic width implemented for p = 2 only")
        if cov.kind == "isotropic":
            bound = 1.0 / (eps0**2 * V**2) - theta**2
            if bound < 0:
                return 0.0
            return float(min(alpha, np.sqrt(bound)))
        return _width_aniso_q2(alpha, theta, eps0, V, cov.a2, cov.eigen_sample)
    # any dual iterate upper-bounds the width (weak duality) and the
    # enclosing ball bounds it by alpha, so the clamp below is exact at the
    # optimum and guards against an under-minimized dual at extreme scales
    if p == 1.0:
        w = _width_p1(alpha, theta, eps0, mean, rule, state=_state)
        return float(min(w, alpha))
    if not np.isfinite(p):
        q = 1.0
    else:
        if p <= 1.0:
            raise ValueError("p must be > 1, = 1, or inf")
        q = p / (p - 1.0)
    w = _width_generic(alpha, theta, eps0, q, mean, rule, state=_state)
    return float(min(w, alpha))


# ---------------------------------------------------------------------------
# Threshold
# ---------------------------------------------------------------------------

def separability_ratio(
    alpha: float,
    theta: float,
    eps0: float,
    p: float,
    mean: K.MeanDistribution,
    cov: CovarianceSpec | None = None,
    rule: K.QuadratureRule | None = None,
    _state: list | None = None,
) -> float:
    """width^2 over the positive-part moment; its maximum over (alpha, theta)
    is the separability threshold."""
    cov = cov or CovarianceSpec.isotropic()
    w = omega(alpha, theta, eps0, p, mean, cov, rule, _state=_state)
    if w <= 0:
        return 0.0
    V = mean.sigma_m2
    denom = K.pospart_sq_moment(
        np.sqrt(alpha**2 + cov.a2 * theta**2), 1.0 - V * theta
    )
    return float(w**2 / denom)


def _reduced_profile_nonadversarial(V, a2, rule):
    def profile(th):
        return K.pospart_sq_moment(np.sqrt(1.0 + a2 * th**2), -V * th)

    return profile


def _reduced_profile_p2(V, eps0):
    def profile(th):
        s = np.sqrt(1.0 + th**2)
        return K.pospart_sq_moment(s, (eps0 * s - th) * V)

    return profile


def _minimize_profile(profile, lo=-5.0, hi=80.0):
    grid = np.linspace(lo, hi, 400)
    vals = np.array([profile(t) for t in grid])
    i = int(np.argmin(vals))
    wlo = grid[max(i - 1, 0)]
    whi = grid[min(i + 1, len(grid) - 1)]
    res = optimize.minimize_scalar(
        profile, bounds=(wlo, whi), method="bounded",
        options=dict(xatol=1e-12),
    )
    return float(res.x), float(res.fun)


def _maximize_ratio_2d(ratio, starts, bounds, xatol=1e-6):
    def neg(z):
        return -ratio(float(np.exp(z[0])), float(z[1]))

    best = None
    for la0, th0 in starts:
        res = optimize.minimize(
            neg,
            x0=np.array([la0, th0]),
            method="Nelder-Mead",
            bounds=bounds,
            options=dict(xatol=2e-4, fatol=1e-9, maxiter=200),
        )
        if best is None or res.fun < best.fun:
            best = res
    polish = optimize.minimize(
        neg,
        x0=best.x,
        method="Nelder-Mead",
        bounds=bounds,
        options=dict(xatol=xatol, fatol=1e-13, maxiter=300),
    )
    if polish.fun <= best.fun:
        best = polish
    alpha = float(np.exp(best.x[0]))
    theta = float(best.x[1])
    return alpha, theta, float(-best.fun)


def delta_star(
    eps0: float,
    p: float,
    mean: K.MeanDistribution,
    cov: CovarianceSpec | None = None,
    rule: K.QuadratureRule | None = None,
    method: str = "auto",
    x0: tuple[float, float] | None = None,
) -> ThresholdResult:
    """Critical sampling ratio for robust separability.

    Below the returned value the training data admits a robust separator
    with high probability; above it, none exists.  ``method='auto'`` picks
    the cheapest exact route (1-D closed forms for no adversary and for the
    Euclidean isotropic case); ``method='generic'`` forces the 2-D search
    over (alpha, theta), used for cross-checking.  ``x0`` warm-starts the
    2-D search.
    """
    if eps0 < 0:
        raise ValueError("eps0 must be nonnegative")
    cov = cov or CovarianceSpec.isotropic()
    rule = rule or K.QuadratureRule()
    V = mean.sigma_m2

    if eps0 == 0.0 and method == "auto":
        profile = _reduced_profile_nonadversarial(V, cov.a2, rule)
        th_hat, val = _minimize_profile(profile)
        alpha = ALPHA_UNBOUNDED
        return ThresholdResult(
            delta_star=1.0 / val,
            argmin_alpha=alpha,
            argmin_theta=alpha * th_hat,
            method="nonadversarial",
        )

    if p == 2.0 and cov.kind == "isotropic" and method == "auto" and eps0 > 0:
        profile = _reduced_profile_p2(V, eps0)
        th_hat, val = _minimize_profile(profile)
        alpha = 1.0 / (eps0 * V * np.sqrt(1.0 + th_hat**2))
        return ThresholdResult(
            delta_star=1.0 / val,
            argmin_alpha=alpha,
            argmin_theta=alpha * th_hat,
            method="closed_form_p2",
        )

    if cov.kind == "spiked":
        if p != 2.0:
            raise ValueError("anisotropic threshold implemented for p = 2 only")
        method_name = "aniso_q2"
    elif p == 1.0:
        method_name = "p1_softthresh"
    else:
        method_name = "generic"

    warm = [None]
    last = [None]

    def ratio(alpha, theta):
        # a stale multiplier estimate far from the current point can stall
        # the inner minimization and overestimate the width, so reset it
        # whenever the search jumps
        here = (np.log(max(alpha, 1e-12)), theta)
        if last[0] is not None and (
            abs(here[0] - last[0][0]) > 1.0
            or abs(here[1] - last[0][1]) > 0.5 * (1.0 + abs(last[0][1]))
        ):
            warm[0] = None
        last[0] = here
        return separability_ratio(alpha, theta, eps0, p, mean, cov, rule, _state=warm)

    # the Euclidean closed form runs in milliseconds and pins down the
    # right scale of the optimizer for every norm
    if eps0 > 0:
        hint = _reduced_profile_p2(V, eps0)
        th_hat, _ = _minimize_profile(hint)
        a_hint = 1.0 / (eps0 * V * np.sqrt(1.0 + th_hat**2))
    else:
        hint = _reduced_profile_nonadversarial(V, cov.a2, rule)
        th_hat, _ = _minimize_profile(hint)
        a_hint = 8.0e3
    la = float(np.log(a_hint))
    hint_start = (la, a_hint * th_hat)
    if x0 is not None and x0[0] >= 1e6:
        # a budget-free optimizer (alpha at the unbounded sentinel) carries
        # no scale information for an adversarial instance
        x0 = None
    if x0 is not None:
        # keep the scale-correct hint next to the caller's warm start: sweep
        # optimizers can shift by orders of magnitude between grid points
        x0_start = (float(np.log(max(x0[0], 1e-6))), float(x0[1]))
        starts = [x0_start, hint_start]
        la_lo = min(x0_start[0], la)
        la_hi = max(x0_start[0], la)
        th_scale = max(abs(x0_start[1]), abs(a_hint * th_hat), 1.0)
    else:
        starts = [hint_start, (la - 0.7, 0.6 * a_hint * th_hat)]
        la_lo = la_hi = la
        th_scale = max(abs(a_hint * th_hat), 1.0)
    bounds = optimize.Bounds(
        [la_lo - 3.0, -0.5 * th_scale], [la_hi + 2.5, 4.0 * th_scale]
    )
    # polish harder when each ratio evaluation is cheap (closed-form or
    # spectrum-average widths)
    xatol = 1e-9 if method_name in ("aniso_q2", "generic") and p == 2.0 else 1e-6
    alpha, theta, value = _maximize_ratio_2d(ratio, starts, bounds, xatol=xatol)
    fresh = separability_ratio(alpha, theta, eps0, p, mean, cov, rule)
    if abs(fresh - value) > 1e-6 * max(1.0, abs(value)):
        # warm-state drift corrupted the search; redo it statelessly
        def cold_ratio(a, t):
            return separability_ratio(a, t, eps0, p, mean, cov, rule)

        alpha, theta, value = _maximize_ratio_2d(cold_ratio, starts, bounds, xatol=xatol)
        fresh = value
    value = fresh
    if not np.isfinite(value) or value <= 0:
        raise SolverError(
            "threshold search failed to find a positive ratio",
            last_iterate=(alpha, theta),
        )
    return ThresholdResult(
        delta_star=value,
        argmin_alpha=alpha,
        argmin_theta=theta,
        method=method_name,
    )


def margin_objective(
    delta: float,
    eps0: float,
    p: float,
    mean: K.MeanDistribution,
    cov: CovarianceSpec | None = None,
    rule: K.QuadratureRule | None = None,
    threshold: ThresholdResult | None = None,
) -> float:
    """Limiting feasibility margin of the separator program at ratio delta.

    Negative exactly when the data is asymptotically robustly separable;
    evaluated at the threshold-optimal direction, so its sign flips at the
    critical ratio.
    """
    cov = cov or CovarianceSpec.isotropic()
    thr = threshold or delta_star(eps0, p, mean, cov, rule)
    alpha, theta = thr.argmin_alpha, thr.argmin_theta
    V = mean.sigma_m2
    denom = K.pospart_sq_moment(
        np.sqrt(alpha**2 + cov.a2 * theta**2), 1.0 - V * theta
    )
    w = omega(alpha, theta, eps0, p, mean, cov, rule)
    return float(np.sqrt(denom) - w / np.sqrt(delta))
