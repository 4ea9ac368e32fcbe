"""Scalar convex-concave programs predicting asymptotic accuracies.

For a problem instance (perturbation norm, adversary power, sampling ratio,
loss, mean law, covariance) the solvers below find the saddle points of the
low-dimensional programs whose optimizers characterize the limiting geometry
of the trained classifier: the mean-aligned component ``theta``, the
orthogonal magnitude ``alpha``, and the scaled dual-norm ``gamma0``.  The
standard and robust accuracies follow from those three numbers through the
Gaussian cdf.

Two regimes exist on either side of the separability threshold, with
different programs and different normalization conventions:

* separable: ``alpha`` is the limit of the full Euclidean norm of the
  max-margin direction, and accuracies divide by ``alpha`` directly;
* non-separable: ``alpha`` is the limit of the component orthogonal to the
  mean, and accuracies divide by ``sqrt(alpha^2 + a^2 theta^2)``.

Euclidean perturbations admit fast reduced solvers; the other norms go
through nested optimization of the full saddle functions, finished by a
least-squares polish of the joint stationarity system.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize, special

from . import kernels as K
from . import separability as sep
from .errors import DegenerateModelError, PhaseBoundaryError, SolverError

_PHI = special.ndtr


def dual_exponent(p: float) -> float:
    if p == 1.0:
        return np.inf
    if not np.isfinite(p):
        return 1.0
    if p <= 1.0:
        raise ValueError("p must be >= 1")
    return p / (p - 1.0)


@dataclass(frozen=True)
class ProblemSpec:
    """Full instance: norm, adversary power, sampling ratio, loss, data law."""

    p: float
    eps0: float
    delta: float
    loss: K.LossModel = field(default_factory=lambda: K.LOGISTIC)
    mean: K.MeanDistribution | None = None
    cov: sep.CovarianceSpec = field(default_factory=sep.CovarianceSpec.isotropic)

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if self.eps0 < 0:
            raise ValueError("eps0 must be nonnegative")
        if np.isfinite(self.p) and self.p < 1:
            raise ValueError("p must be >= 1")
        if self.cov.kind == "spiked" and self.p != 2.0:
            raise ValueError("spiked covariance supported for p = 2 only")
        if self.mean is None:
            object.__setattr__(self, "mean", K.gaussian_mean(p=self.p))
        if np.isfinite(self.p) and np.isfinite(self.mean.p):
            if abs(self.mean.p - self.p) > 1e-12:
                raise ValueError("mean distribution was built for a different p")
        elif np.isfinite(self.p) != np.isfinite(self.mean.p):
            raise ValueError("mean distribution was built for a different p")

    @property
    def q(self) -> float:
        return dual_exponent(self.p)


def default_boxes() -> dict[str, tuple[float, float]]:
    return {
        "alpha": (1e-6, 50.0),
        "gamma0": (1e-6, 50.0),
        "theta": (-50.0, 50.0),
        "beta": (1e-6, 100.0),
        "tau_g": (1e-6, 100.0),
        "tau_h": (1e-6, 100.0),
        "lam0": (0.0, 100.0),
        "eta": (0.0, 100.0),
        "eta_tilde": (-100.0, 100.0),
        "nu": (-100.0, 100.0),
    }


@dataclass
class SaddleConfig:
    """Iteration and tolerance knobs for the saddle solvers."""

    max_outer_iters: int = 400
    grad_tol: float = 1e-6
    fd_step: float = 1e-6
    variable_boxes: dict = field(default_factory=default_boxes)
    gh_order: int | None = None

    def rule(self) -> K.QuadratureRule:
        if self.gh_order is None:
            return K.QuadratureRule()
        return K.QuadratureRule(gh_order=self.gh_order)


@dataclass(frozen=True)
class SolveResult:
    """Saddle solution: unique min-block plus the max-block found."""

    alpha: float
    theta: float
    gamma0: float
    variables: dict
    diagnostics: dict


@dataclass(frozen=True)
class TheoryPrediction:
    regime: str
    delta_star: float
    alpha_star: float
    theta_star: float
    gamma0_star: float
    sa: float
    ra: float
    diagnostics: dict


# ---------------------------------------------------------------------------
# Euclidean fast paths
# ---------------------------------------------------------------------------

def _separable_p2_constraint(c, sigma, delta):
    """min over u of u^2 + delta*E[(c - u*sigma + g)_+^2], with its argmin."""
    res = optimize.minimize_scalar(
        lambda u: u * u + delta * K.pospart_sq_moment(1.0, c - u * sigma),
        bounds=(-2.0, 2.0),
        method="bounded",
        options=dict(xatol=1e-12),
    )
    return float(res.fun), float(res.x)


def solve_separable_p2(spec: ProblemSpec, cfg: SaddleConfig | None = None) -> SolveResult:
    """Reduced Euclidean max-margin geometry via bisection.

    Shrinks the inverse margin radius until the normalized constraint value
    hits 1; the adversary enters only through the final change of variables,
    which is why the standard accuracy is budget-independent in this regime.
    """
    sigma = spec.mean.sigma_m2
    delta = spec.delta
    eps0 = spec.eps0
    c_lo = eps0 * sigma
    val_lo, _ = _separable_p2_constraint(c_lo, sigma, delta)
    if val_lo >= 1.0:
        raise SolverError(
            "no margin radius satisfies the constraint: the instance is at or "
            "beyond the separability boundary",
            last_iterate=c_lo,
        )
    c_hi = max(1.0, 2.0 * c_lo)
    for _ in range(80):
        val_hi, _ = _separable_p2_constraint(c_hi, sigma, delta)
        if val_hi > 1.0:
            break
        c_hi *= 2.0
    else:
        raise SolverError("constraint bracket expansion failed", last_iterate=c_hi)
    iterations = 0
    for _ in range(200):
        iterations += 1
        c = 0.5 * (c_lo + c_hi)
        val, u = _separable_p2_constraint(c, sigma, delta)
        if val > 1.0:
            c_hi = c
        else:
            c_lo = c
        if (c_hi - c_lo) < 1e-13 * max(1.0, c_hi):
            break
    c = 0.5 * (c_lo + c_hi)
    val, u = _separable_p2_constraint(c, sigma, delta)
    alpha = 1.0 / (c - eps0 * sigma)
    theta = u * alpha
    gamma0 = alpha * sigma
    return SolveResult(
        alpha=alpha,
        theta=theta,
        gamma0=gamma0,
        variables={"alpha_tilde": 1.0 / c, "u": u},
        diagnostics={
            "iterations": iterations,
            "residual": abs(val - 1.0),
            "gap": c_hi - c_lo,
            "route": "separable_p2",
        },
    )


def solve_nonseparable_p2(
    spec: ProblemSpec,
    cfg: SaddleConfig | None = None,
    warm_start: dict | None = None,
) -> SolveResult:
    """Euclidean non-separable saddle: scalar concave maximization over the
    dual scale with an inner smooth convex minimization over the geometry."""
    cfg = cfg or SaddleConfig()
    rule = cfg.rule()
    sigma = spec.mean.sigma_m2
    eps0, delta, loss = spec.eps0, spec.delta, spec.loss
    sqd = np.sqrt(delta)
    boxes = cfg.variable_boxes
    state = {"x": np.array([1.0, 1.0])}
    if warm_start and "alpha" in warm_start:
        state["x"] = np.array([warm_start["alpha"], warm_start["theta"]])
    evals = {"n": 0}

    def inner_min(beta):
        def obj(x):
            a, t = x
            r = np.hypot(a, t)
            evals["n"] += 1
            return K.expected_moreau(
                r, sigma * t - eps0 * r, a / (beta * sqd), loss, rule
            ) - a * beta / (2.0 * sqd)

        res = optimize.minimize(
            obj,
            x0=state["x"],
            method="L-BFGS-B",
            bounds=[boxes["alpha"], boxes["theta"]],
            options=dict(ftol=1e-15, gtol=1e-11, maxiter=300),
        )
        state["x"] = res.x
        return res

    lo, hi = boxes["beta"]
    outer = optimize.minimize_scalar(
        lambda b: -inner_min(b).fun,
        bounds=(lo, hi),
        method="bounded",
        options=dict(xatol=1e-10),
    )
    beta = float(outer.x)
    res = inner_min(beta)
    alpha, theta = float(res.x[0]), float(res.x[1])
    r = float(np.hypot(alpha, theta))
    if r < 1e-4:
        raise DegenerateModelError(
            "trained direction collapses to zero; accuracies undefined"
        )
    gamma0 = sigma * r
    grad_norm = float(np.max(np.abs(res.jac)))
    return SolveResult(
        alpha=alpha,
        theta=theta,
        gamma0=gamma0,
        variables={"beta": beta},
        diagnostics={
            "iterations": evals["n"],
            "residual": grad_norm,
            "gap": 0.0,
            "route": "nonseparable_p2",
        },
    )


# ---------------------------------------------------------------------------
# Saddle objective functions (generic routes)
# ---------------------------------------------------------------------------

def _pos(v, floor=0.0):
    # saddle objectives are evaluated on finite-difference probes that can
    # step just past a box face; clamp so they stay total functions
    return max(float(v), floor)


def _ds_finite_q(spec, rule, x, y):
    """Separable saddle objective for a finite dual exponent."""
    alpha, gamma0, theta = x
    beta, lam0, eta, eta_t = y
    alpha, gamma0 = _pos(alpha, 1e-9), _pos(gamma0, 1e-9)
    beta, lam0, eta = _pos(beta), _pos(lam0), _pos(eta)
    q = spec.q
    sigma = spec.mean.sigma_m2
    s = eta / (2.0 * alpha)
    pref = 1.0 / (1.0 + s)
    lam_arg = (lam0 / (q * gamma0 ** (q - 1.0))) * (1.0 + s) ** (1.0 - q)
    ej = K.cal_j(0.5 * beta, 0.5 * eta_t, lam_arg, q, spec.delta, spec.mean, rule)
    pp = K.pospart_sq_moment(alpha, 1.0 + spec.eps0 * gamma0 - theta * sigma)
    return (
        2.0 * pref * ej
        - (beta**2 / spec.delta + eta_t**2) * pref / 4.0
        - (2.0 * lam0 / q) * gamma0
        - eta * alpha / 2.0
        - eta_t * theta
        + beta * np.sqrt(pp)
    )


def _ds_p1(spec, rule, x, y):
    """Separable saddle objective for the sparse adversary (dual sup-norm)."""
    alpha, gamma0, theta = x
    beta, eta, eta_t = y
    alpha, gamma0 = _pos(alpha, 1e-9), _pos(gamma0, 1e-9)
    beta, eta = _pos(beta), _pos(eta)
    sigma = spec.mean.sigma_m2
    s = eta / (2.0 * alpha)
    pref = 1.0 / (1.0 + s)
    fv = K.f_fun(beta, eta_t, 2.0 * gamma0 * (1.0 + s), spec.delta, spec.mean, rule)
    pp = K.pospart_sq_moment(alpha, 1.0 + spec.eps0 * gamma0 - theta * sigma)
    return (
        0.5 * pref * fv
        - (beta**2 / spec.delta + eta_t**2) * pref / 4.0
        - eta * alpha / 2.0
        - eta_t * theta
        + beta * np.sqrt(pp)
    )


def _ds_aniso_q2(spec, rule, x, y):
    """Separable saddle objective for the spiked Euclidean model."""
    alpha, gamma0, theta = x
    beta, lam0, eta, eta_t = y
    alpha, gamma0 = _pos(alpha, 1e-9), _pos(gamma0, 1e-9)
    beta, lam0, eta = _pos(beta), _pos(lam0), _pos(eta)
    sig2 = spec.mean.sigma_m2**2
    V = spec.mean.sigma_m2
    a2 = spec.cov.a2
    s = spec.cov.eigen_sample
    b0 = eta / (2.0 * alpha)
    b1 = lam0 / (2.0 * gamma0)
    u = 1.0 + 2.0 * b1 * sig2
    f_val = b1 * sig2 * (
        eta_t**2 / (4.0 * (1.0 + b0 * a2) * (u + b0 * a2))
        + (beta**2 / (4.0 * spec.delta))
        * float(np.mean(s / ((1.0 + b0 * s) * (u + b0 * s))))
    )
    quad_term = (beta**2 / (2.0 * spec.delta)) * float(
        np.mean(s * alpha / (2.0 * alpha + s * eta))
    )
    pp = K.pospart_sq_moment(alpha, 1.0 + spec.eps0 * gamma0 - theta * V)
    return (
        2.0 * f_val
        - quad_term
        - lam0 * gamma0
        - eta * alpha / 2.0
        - eta_t * theta
        - eta_t**2 / (4.0 * (1.0 + b0 * a2))
        + beta * np.sqrt(pp)
    )


def _e_fun_aniso(spec, c0, c1, lam0):
    """Dual-norm envelope limit for the spiked Euclidean model."""
    sig2 = spec.mean.sigma_m2**2
    a2 = spec.cov.a2
    s = spec.cov.eigen_sample
    if lam0 == 0.0:
        return 0.0
    return lam0 * sig2 * (
        c1**2 * a2 / (a2 + 2.0 * lam0 * sig2)
        + (c0**2 / spec.delta) * float(np.mean(1.0 / (s + 2.0 * lam0 * sig2)))
    )


def _dns_terms(spec, rule, x, y, inner):
    """Non-separable saddle objective, written jointly in all its variables.

    ``x`` = (theta, alpha, gamma0, tau_g) descends, ``y`` = (beta, tau_h)
    ascends, and ``inner`` holds the innermost descent block whose content
    depends on the route: (lam0, nu) for finite dual exponents and the
    spiked model, (nu,) for the sparse adversary.
    """
    theta, alpha, gamma0, tau_g = x
    beta, tau_h = y
    alpha, gamma0 = _pos(alpha, 1e-9), _pos(gamma0, 1e-9)
    tau_g, tau_h, beta = _pos(tau_g, 1e-9), _pos(tau_h, 1e-9), _pos(beta, 1e-9)
    a2 = spec.cov.a2
    V = spec.mean.sigma_m2
    r = np.sqrt(alpha**2 + a2 * theta**2)
    moreau = K.expected_moreau(
        r, V * theta - spec.eps0 * gamma0, tau_g / beta, spec.loss, rule
    )
    lead = beta * tau_g / 2.0 + moreau
    k = gamma0 * tau_h / alpha
    if spec.p == 1.0:
        (nu,) = inner
        fv = K.f_fun(beta, tau_h * theta / alpha + nu, _pos(k), spec.delta, spec.mean, rule)
        bracket = (alpha / tau_h) * (
            beta**2 / (2.0 * spec.delta) + nu**2 / 2.0 - fv
        ) + alpha * tau_h / 2.0
    elif spec.cov.kind == "spiked":
        lam0, nu = inner
        lam0 = _pos(lam0)
        a = np.sqrt(a2)
        ev = _e_fun_aniso(spec, beta, tau_h * theta / alpha + nu / a, lam0)
        bracket = (alpha / tau_h) * (
            beta**2 / (2.0 * spec.delta) + lam0 * k**2 + nu**2 / 2.0 - ev
        ) + alpha * tau_h / 2.0
    else:
        lam0, nu = inner
        lam0 = _pos(lam0)
        q = spec.q
        ej = K.cal_j(
            beta, tau_h * theta / alpha + nu, lam0, q, spec.delta, spec.mean, rule
        )
        bracket = (alpha / tau_h) * (
            beta**2 / (2.0 * spec.delta) + lam0 * k**q + nu**2 / 2.0 - ej
        ) + alpha * tau_h / 2.0
    return lead - bracket


# ---------------------------------------------------------------------------
# Nested saddle machinery
# ---------------------------------------------------------------------------

def _clip_to(bounds, z):
    return np.array([np.clip(v, lo, hi) for v, (lo, hi) in zip(z, bounds)])


def _fd_grad(f, z, rel=1e-6):
    z = np.asarray(z, dtype=float)
    g = np.empty_like(z)
    f0 = None
    for i in range(z.size):
        h = rel * max(1.0, abs(z[i]))
        zp, zm = z.copy(), z.copy()
        zp[i] += h
        zm[i] -= h
        g[i] = (f(zp) - f(zm)) / (2.0 * h)
    return g


def _inner_max(fun, y0, bounds, gtol=1e-10):
    """Maximize a concave block with L-BFGS-B (FD gradients)."""
    res = optimize.minimize(
        lambda y: -fun(y),
        x0=_clip_to(bounds, y0),
        method="L-BFGS-B",
        bounds=bounds,
        options=dict(ftol=1e-15, gtol=gtol, maxiter=400),
    )
    return res


def _inner_min(fun, z0, bounds, gtol=1e-11):
    res = optimize.minimize(
        fun,
        x0=_clip_to(bounds, z0),
        method="L-BFGS-B",
        bounds=bounds,
        options=dict(ftol=1e-15, gtol=gtol, maxiter=400),
    )
    return res


def _projected_residual(flat_fun, z, bounds, ascend, rel_step):
    """Max |projected gradient| of the flattened saddle objective.

    ``ascend`` marks coordinates belonging to ascent blocks; at an active
    box face, gradient components pointing out of the box are feasible and
    get zeroed.
    """
    g = _fd_grad(flat_fun, z, rel=rel_step)
    out = np.abs(g)
    for i, (v, (lo, hi)) in enumerate(zip(z, bounds)):
        at_lo = v <= lo + 1e-9 * max(1.0, abs(lo))
        at_hi = v >= hi - 1e-9 * max(1.0, abs(hi))
        gi = g[i]
        if ascend[i]:
            if (at_lo and gi < 0) or (at_hi and gi > 0):
                out[i] = 0.0
        else:
            if (at_lo and gi > 0) or (at_hi and gi < 0):
                out[i] = 0.0
    return float(np.max(out))


def _polish_stationarity(flat_fun, z0, bounds, rel_step):
    """Least-squares polish of the joint stationarity system grad = 0.

    Flat directions (the max-block of these saddles is not always unique)
    make the Jacobian singular; least squares tolerates that and simply
    stays on the optimal face.
    """
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    margin = 1e-10 * np.maximum(1.0, np.abs(z0))

    def resid(z):
        return _fd_grad(flat_fun, z, rel=rel_step)

    try:
        res = optimize.least_squares(
            resid,
            x0=np.clip(z0, lo + margin, hi - margin),
            bounds=(lo, hi),
            xtol=1e-14,
            ftol=1e-14,
            gtol=1e-14,
            max_nfev=60,
        )
        return res.x, float(np.max(np.abs(res.fun)))
    except Exception:
        return z0, float(np.max(np.abs(resid(z0))))


def _gamma0_hint(spec, alpha, theta):
    """Scale guess for the dual-norm limit of a Gaussian-like direction."""
    r = np.sqrt(alpha**2 + theta**2)
    q = spec.q
    if np.isfinite(q):
        from scipy.special import gamma as _G

        c_q = (2 ** (q / 2.0) * _G((q + 1.0) / 2.0) / np.sqrt(np.pi)) ** (1.0 / q)
        return spec.mean.sigma_mp * c_q * r
    return 0.5 * spec.mean.sigma_m1 * r


def _eps_continuation_path(eps0):
    if eps0 == 0.0:
        return [0.0]
    return [f * eps0 for f in (0.1, 0.3, 0.6, 1.0)]


def _sep_layout(spec):
    if spec.p == 1.0:
        return _ds_p1, ["beta", "eta", "eta_tilde"]
    if spec.cov.kind == "spiked":
        return _ds_aniso_q2, ["beta", "lam0", "eta", "eta_tilde"]
    return _ds_finite_q, ["beta", "lam0", "eta", "eta_tilde"]


def _solve_separable_nested(spec, cfg, x0, y0, ds, y_names, x_bounds, y_bounds):
    """Fallback: nested outer descent / inner ascent with a joint polish."""
    rule = cfg.rule()
    y_state = {"y": np.asarray(y0, dtype=float)}
    evals = {"n": 0}

    def phi(x):
        evals["n"] += 1
        res = _inner_max(lambda y: ds(spec, rule, x, y), y_state["y"], y_bounds)
        y_state["y"] = res.x
        return -res.fun

    outer = optimize.minimize(
        phi,
        x0=_clip_to(x_bounds, x0),
        method="Nelder-Mead",
        bounds=optimize.Bounds([b[0] for b in x_bounds], [b[1] for b in x_bounds]),
        options=dict(
            xatol=1e-7, fatol=1e-12, maxiter=cfg.max_outer_iters * 3, adaptive=True
        ),
    )
    x = outer.x
    res_y = _inner_max(lambda y: ds(spec, rule, x, y), y_state["y"], y_bounds)
    z0 = np.concatenate([x, res_y.x])
    nx = len(x)

    def flat(z):
        return ds(spec, rule, z[:nx], z[nx:])

    z, resid = _polish_stationarity(flat, z0, x_bounds + y_bounds, cfg.fd_step)
    res_chk = _inner_max(lambda yy: ds(spec, rule, z[:nx], yy), z[nx:], y_bounds)
    if -res_chk.fun <= -res_y.fun + 1e-9:
        x, y = z[:nx], res_chk.x
    else:
        y = res_y.x
        resid = float(np.max(np.abs(_fd_grad(flat, z0, rel=cfg.fd_step))))
    return x, y, resid, evals["n"]


def solve_separable(
    spec: ProblemSpec,
    cfg: SaddleConfig | None = None,
    warm_start: dict | None = None,
    force_generic: bool = False,
) -> SolveResult:
    """Saddle of the separable-regime program for the given norm.

    Callers are expected to have checked ``delta < delta_star``.  Euclidean
    isotropic instances use the reduced bisection path; other norms start
    from the Euclidean solution of the budget-free instance (the programs
    coincide there) and track the saddle along a short continuation in the
    adversary's power, solving the joint stationarity system at each step.
    A nested descent/ascent fallback covers continuation failures.
    """
    cfg = cfg or SaddleConfig()
    if spec.p == 2.0 and spec.cov.kind == "isotropic" and not force_generic:
        return solve_separable_p2(spec, cfg)
    rule = cfg.rule()
    boxes = cfg.variable_boxes
    ds, y_names = _sep_layout(spec)
    y_bounds = [boxes[n] for n in y_names]
    x_bounds = [boxes["alpha"], boxes["gamma0"], boxes["theta"]]
    nx = 3

    iterations = 0
    if warm_start:
        x0 = np.array([warm_start["alpha"], warm_start["gamma0"], warm_start["theta"]])
    else:
        # Euclidean reduction at the same budget pins the (alpha, theta)
        # scale; gamma0 starts from the dual-norm magnitude of a
        # Gaussian-like direction
        base = ProblemSpec(
            p=2.0,
            eps0=spec.eps0,
            delta=spec.delta,
            loss=spec.loss,
            mean=K.gaussian_mean(2.0, scale=spec.mean.sigma_m2),
        )
        hint = solve_separable_p2(base, cfg)
        x0 = np.array(
            [hint.alpha, _gamma0_hint(spec, hint.alpha, hint.theta), hint.theta]
        )

    def flat_final(zz):
        return ds(spec, rule, zz[:nx], zz[nx:])

    ascend = [False] * nx + [True] * len(y_bounds)
    bounds_all = x_bounds + y_bounds

    def y_ladder(xx, eta0, lam0=0.5):
        # first-order guesses from the stationarity of the dual scale and
        # the mean-aligned multiplier; the margin multiplier eta is swept
        # because the optimum sits on the feasibility boundary
        a0, g0, t0 = xx
        s = eta0 / (2.0 * a0)
        pp = K.pospart_sq_moment(
            a0, 1.0 + spec.eps0 * g0 - t0 * spec.mean.sigma_m2
        )
        beta0 = 2.0 * spec.delta * (1.0 + s) * np.sqrt(pp)
        eta_t0 = -2.0 * t0 * (1.0 + s)
        if spec.p == 1.0:
            return np.array([beta0, eta0, eta_t0])
        return np.array([beta0, lam0 * (1.0 + s), eta0, eta_t0])

    def polish_ladder(xx, warm_y=None):
        best_z, best_r = None, np.inf
        ys = [warm_y] if warm_y is not None else []
        ys += [y_ladder(xx, e) for e in (0.5, 3.0, 10.0)]
        for y0 in ys:
            z0 = np.concatenate([xx, _clip_to(y_bounds, y0)])
            z_c, _ = _polish_stationarity(flat_final, z0, bounds_all, cfg.fd_step)
            r_c = _projected_residual(flat_final, z_c, bounds_all, ascend, cfg.fd_step)
            if r_c < best_r:
                best_z, best_r = z_c, r_c
            if best_r < cfg.grad_tol:
                break
        return best_z, best_r

    warm_y = None
    if warm_start and all(n in warm_start for n in y_names):
        warm_y = np.array([warm_start[n] for n in y_names])
    z, resid = polish_ladder(x0, warm_y)
    iterations += 1
    used_fallback = False
    if resid > cfg.grad_tol:
        used_fallback = True
        x_fb, y_fb, _, n_fb = _solve_separable_nested(
            spec, cfg, z[:nx], z[nx:], ds, y_names, x_bounds, y_bounds
        )
        iterations += n_fb
        z2, resid2 = polish_ladder(x_fb, y_fb)
        if resid2 < resid:
            z, resid = z2, resid2
        if resid > cfg.grad_tol * 10:
            raise SolverError(
                f"separable saddle residual {resid:.2e} above tolerance",
                last_iterate=z,
            )
    res_chk = _inner_max(
        lambda yy: ds(spec, rule, z[:nx], yy), z[nx:], y_bounds
    )
    gap = abs(-res_chk.fun - flat_final(z))
    alpha, gamma0, theta = (float(v) for v in z[:nx])
    variables = {n: float(v) for n, v in zip(y_names, z[nx:])}
    route = "p1" if spec.p == 1.0 else (
        "aniso_q2" if spec.cov.kind == "spiked" else "generic_q"
    )
    return SolveResult(
        alpha=alpha,
        theta=theta,
        gamma0=gamma0,
        variables=variables,
        diagnostics={
            "iterations": iterations,
            "residual": float(resid),
            "gap": float(gap),
            "fallback": used_fallback,
            "route": f"separable_{route}",
        },
    )


def _nonsep_layout(spec, boxes):
    p1 = spec.p == 1.0
    inner_names = ["nu"] if p1 else ["lam0", "nu"]
    x_bounds = [boxes["theta"], boxes["alpha"], boxes["gamma0"], boxes["tau_g"]]
    y_bounds = [boxes["beta"], boxes["tau_h"]]
    inner_bounds = [boxes[n] for n in inner_names]
    return inner_names, x_bounds, y_bounds, inner_bounds


def _solve_nonseparable_nested(spec, cfg, z0, inner_names, x_bounds, y_bounds, inner_bounds):
    """Fallback: three-level nesting (descent / ascent / descent)."""
    rule = cfg.rule()
    nx, ny = 4, 2
    inner_state = {"z": np.asarray(z0[nx + ny:], dtype=float)}
    y_state = {"y": np.asarray(z0[nx:nx + ny], dtype=float)}
    evals = {"n": 0}

    def phi(x):
        # joint ascent over the dual scales and the inner multipliers (the
        # supremum of nested suprema is the joint supremum)
        evals["n"] += 1
        if np.hypot(x[1], x[0]) < 1e-5:
            return np.inf
        res = _inner_max(
            lambda yw: _dns_terms(spec, rule, x, yw[:2], yw[2:]),
            np.concatenate([y_state["y"], inner_state["z"]]),
            y_bounds + inner_bounds,
            gtol=1e-9,
        )
        y_state["y"] = res.x[:2]
        inner_state["z"] = res.x[2:]
        return -res.fun

    outer = optimize.minimize(
        phi,
        x0=_clip_to(x_bounds, z0[:nx]),
        method="Nelder-Mead",
        bounds=optimize.Bounds([b[0] for b in x_bounds], [b[1] for b in x_bounds]),
        options=dict(
            xatol=1e-7, fatol=1e-12, maxiter=cfg.max_outer_iters * 4, adaptive=True
        ),
    )
    x = outer.x
    res_y = _inner_max(
        lambda yw: _dns_terms(spec, rule, x, yw[:2], yw[2:]),
        np.concatenate([y_state["y"], inner_state["z"]]),
        y_bounds + inner_bounds,
    )
    z1 = np.concatenate([x, res_y.x])

    def flat(z):
        return _dns_terms(spec, rule, z[:nx], z[nx:nx + ny], z[nx + ny:])

    z, resid = _polish_stationarity(
        flat, z1, x_bounds + y_bounds + inner_bounds, cfg.fd_step
    )
    res_chk = _inner_max(
        lambda yw: _dns_terms(spec, rule, z[:nx], yw[:2], yw[2:]),
        z[nx:],
        y_bounds + inner_bounds,
    )
    if -res_chk.fun <= -res_y.fun + 1e-9:
        out = np.concatenate([z[:nx], res_chk.x])
    else:
        out = z1
        resid = float(np.max(np.abs(_fd_grad(flat, z1, rel=cfg.fd_step))))
    return out, resid, evals["n"]


def solve_nonseparable(
    spec: ProblemSpec,
    cfg: SaddleConfig | None = None,
    warm_start: dict | None = None,
    force_generic: bool = False,
) -> SolveResult:
    """Saddle of the non-separable-regime program for the given norm.

    Callers are expected to have checked ``delta > delta_star``.  Strategy
    mirrors the separable solver: Euclidean fast path, otherwise a
    continuation in the adversary's power from the budget-free Euclidean
    solution, with a nested three-level fallback.
    """
    cfg = cfg or SaddleConfig()
    if spec.p == 2.0 and spec.cov.kind == "isotropic" and not force_generic:
        return solve_nonseparable_p2(spec, cfg, warm_start=warm_start)
    rule = cfg.rule()
    boxes = cfg.variable_boxes
    inner_names, x_bounds, y_bounds, inner_bounds = _nonsep_layout(spec, boxes)
    nx, ny = 4, 2
    bounds_all = x_bounds + y_bounds + inner_bounds

    iterations = 0
    if warm_start:
        x = np.array(
            [
                warm_start["theta"],
                warm_start["alpha"],
                warm_start["gamma0"],
                warm_start.get("tau_g", warm_start["alpha"] / np.sqrt(spec.delta)),
            ]
        )
        y = np.array(
            [
                warm_start.get("beta", 1.0),
                warm_start.get("tau_h", warm_start.get("beta", 1.0) / np.sqrt(spec.delta)),
            ]
        )
        z_in = np.array(
            [warm_start.get(n, d) for n, d in zip(inner_names, [1e-3, 0.0][-len(inner_names):])]
        )
        z = np.concatenate([x, y, z_in])
        path = [spec.eps0]
    else:
        base = ProblemSpec(
            p=2.0,
            eps0=0.0,
            delta=spec.delta,
            loss=spec.loss,
            mean=K.gaussian_mean(2.0, scale=spec.mean.sigma_m2),
        )
        hint = solve_nonseparable_p2(base, cfg)
        beta0 = hint.variables["beta"]
        x = np.array(
            [
                hint.theta,
                hint.alpha,
                _gamma0_hint(spec, hint.alpha, hint.theta),
                hint.alpha / np.sqrt(spec.delta),
            ]
        )
        y = np.array([beta0, max(beta0 / np.sqrt(spec.delta), 1e-3)])
        z_in = np.array([1e-3, 0.0][-len(inner_names):])
        z = np.concatenate([x, y, z_in])
        path = _eps_continuation_path(spec.eps0)

    resid = np.inf
    for e in path:
        spec_e = replace(spec, eps0=e)

        def flat(zz, s=spec_e):
            return _dns_terms(s, rule, zz[:nx], zz[nx:nx + ny], zz[nx + ny:])

        z, _ = _polish_stationarity(flat, z, bounds_all, cfg.fd_step)
        iterations += 1

    def flat_target(zz):
        return _dns_terms(spec, rule, zz[:nx], zz[nx:nx + ny], zz[nx + ny:])

    ascend_mask = [False] * nx + [True] * (ny + len(inner_bounds))
    resid = _projected_residual(flat_target, z, bounds_all, ascend_mask, cfg.fd_step)

    # verification: the whole ascent side (dual scales and the inner
    # multiplier block, which enters through a subtracted minimization and
    # is therefore maximized in the flattened objective) must reproduce the
    # saddle value; supremum over nested blocks equals the joint supremum,
    # so one joint ascent suffices
    def flat_final(zz):
        return _dns_terms(spec, rule, zz[:nx], zz[nx:nx + ny], zz[nx + ny:])

    res_chk = _inner_max(
        lambda yw: flat_final(np.concatenate([z[:nx], yw])),
        z[nx:],
        y_bounds + inner_bounds,
        gtol=1e-9,
    )
    gap = abs(-res_chk.fun - flat_final(z))
    used_fallback = False
    if resid > cfg.grad_tol or gap > 1e-6 * (1.0 + abs(res_chk.fun)):
        used_fallback = True
        z, resid, n_fb = _solve_nonseparable_nested(
            spec, cfg, z, inner_names, x_bounds, y_bounds, inner_bounds
        )
        iterations += n_fb
        if resid > cfg.grad_tol * 10:
            raise SolverError(
                f"non-separable saddle residual {resid:.2e} above tolerance",
                last_iterate=z,
            )
    theta, alpha, gamma0, tau_g = (float(v) for v in z[:nx])
    if np.hypot(alpha, theta) < 1e-4:
        raise DegenerateModelError(
            "trained direction collapses to zero; accuracies undefined"
        )
    variables = {
        "beta": float(z[nx]),
        "tau_h": float(z[nx + 1]),
        "tau_g": tau_g,
        **{n: float(v) for n, v in zip(inner_names, z[nx + ny:])},
    }
    route = "p1" if spec.p == 1.0 else (
        "aniso_q2" if spec.cov.kind == "spiked" else "generic_q"
    )
    return SolveResult(
        alpha=alpha,
        theta=theta,
        gamma0=gamma0,
        variables=variables,
        diagnostics={
            "iterations": iterations,
            "residual": float(resid),
            "gap": float(gap),
            "fallback": used_fallback,
            "route": f"nonseparable_{route}",
        },
    )


# ---------------------------------------------------------------------------
# Prediction
# ---------------------------------------------------------------------------

PHASE_EXCLUSION = 1e-4


def accuracies_from_solution(
    spec: ProblemSpec, regime: str, alpha: float, theta: float, gamma0: float
) -> tuple[float, float]:
    """Map the saddle geometry to (standard, robust) accuracy.

    The two regimes normalize differently: the separable ``alpha`` is the
    full-norm limit while the non-separable one is the mean-orthogonal
    component.
    """
    V = spec.mean.sigma_m2
    if regime == "separable":
        denom = alpha
    else:
        denom = np.sqrt(alpha**2 + spec.cov.a2 * theta**2)
    if denom <= 0:
        raise DegenerateModelError("zero-norm direction has undefined accuracies")
    sa = float(_PHI(V * theta / denom))
    ra = float(_PHI((V * theta - spec.eps0 * gamma0) / denom))
    return sa, ra


def predict(
    spec: ProblemSpec,
    cfg: SaddleConfig | None = None,
    threshold: sep.ThresholdResult | None = None,
    warm_start: dict | None = None,
) -> TheoryPrediction:
    """Asymptotic standard and robust accuracy for a problem instance.

    Computes the separability threshold, refuses instances inside the
    phase-boundary exclusion zone (both programs degenerate there), routes
    to the matching regime solver, and maps the solution to accuracies.
    """
    cfg = cfg or SaddleConfig()
    thr = threshold or sep.delta_star(
        spec.eps0, spec.p, spec.mean, spec.cov, cfg.rule()
    )
    dstar = thr.delta_star
    if abs(spec.delta - dstar) < PHASE_EXCLUSION * dstar:
        raise PhaseBoundaryError(
            f"delta={spec.delta} is within the exclusion zone of the "
            f"separability boundary {dstar}"
        )
    if spec.delta < dstar:
        regime = "separable"
        result = solve_separable(spec, cfg, warm_start=warm_start)
    else:
        regime = "non_separable"
        result = solve_nonseparable(spec, cfg, warm_start=warm_start)
    sa, ra = accuracies_from_solution(
        spec, regime, result.alpha, result.theta, result.gamma0
    )
    diagnostics = dict(result.diagnostics)
    diagnostics["threshold_method"] = thr.method
    return TheoryPrediction(
        regime=regime,
        delta_star=dstar,
        alpha_star=result.alpha,
        theta_star=result.theta,
        gamma0_star=result.gamma0,
        sa=sa,
        ra=ra,
        diagnostics=diagnostics,
    )


def saddle_certificate(
    spec: ProblemSpec, result: SolveResult, regime: str, cfg: SaddleConfig | None = None
) -> dict:
    """Projected-gradient norms of the saddle objective at a generic solution.

    Returns max |projected gradient| over the descent block and the ascent
    block separately; both should be at tolerance for a converged solve.
    """
    cfg = cfg or SaddleConfig()
    rule = cfg.rule()
    boxes = cfg.variable_boxes
    if regime == "separable":
        if spec.p == 1.0:
            y_names = ["beta", "eta", "eta_tilde"]
            ds = _ds_p1
        elif spec.cov.kind == "spiked":
            y_names = ["beta", "lam0", "eta", "eta_tilde"]
            ds = _ds_aniso_q2
        else:
            y_names = ["beta", "lam0", "eta", "eta_tilde"]
            ds = _ds_finite_q
        x = np.array([result.alpha, result.gamma0, result.theta])
        y = np.array([result.variables[n] for n in y_names])
        x_bounds = [boxes["alpha"], boxes["gamma0"], boxes["theta"]]
        y_bounds = [boxes[n] for n in y_names]

        def fun(z):
            return ds(spec, rule, z[: len(x)], z[len(x):])

    else:
        p1 = spec.p == 1.0
        inner_names = ["nu"] if p1 else ["lam0", "nu"]
        x = np.array(
            [result.theta, result.alpha, result.gamma0, result.variables["tau_g"]]
        )
        y = np.array([result.variables["beta"], result.variables["tau_h"]])
        z_in = np.array([result.variables[n] for n in inner_names])
        x_bounds = [boxes["theta"], boxes["alpha"], boxes["gamma0"], boxes["tau_g"]]
        y_bounds = [boxes["beta"], boxes["tau_h"]]
        in_bounds = [boxes[n] for n in inner_names]

        def fun(z):
            return _dns_terms(spec, rule, z[:4], z[4:6], z[6:])

        x = np.concatenate([x])
        y_full = np.concatenate([y, z_in])
        z = np.concatenate([x, y_full])
        g = _fd_grad(fun, z, rel=cfg.fd_step)
        gx = _project_grad(g[:4], x, x_bounds, descent=True)
        gy = _project_grad(g[4:6], y, y_bounds, descent=False)
        gi = _project_grad(g[6:], z_in, in_bounds, descent=True)
        return {
            "min_block": float(np.max(np.abs(np.concatenate([gx, gi])))),
            "max_block": float(np.max(np.abs(gy))),
        }

    z = np.concatenate([x, y])
    g = _fd_grad(fun, z, rel=cfg.fd_step)
    gx = _project_grad(g[: len(x)], x, x_bounds, descent=True)
    gy = _project_grad(g[len(x):], y, y_bounds, descent=False)
    return {
        "min_block": float(np.max(np.abs(gx))),
        "max_block": float(np.max(np.abs(gy))),
    }


def _project_grad(g, z, bounds, descent):
    """Zero out gradient components pushing outside an active box face."""
    out = np.array(g, dtype=float)
    for i, (v, (lo, hi)) in enumerate(zip(z, bounds)):
        at_lo = v <= lo + 1e-12 * max(1.0, abs(lo))
        at_hi = v >= hi - 1e-12 * max(1.0, abs(hi))
        if descent:
            # minimizing: at a lower bound, positive gradient is fine
            if at_lo and out[i] > 0:
                out[i] = 0.0
            if at_hi and out[i] < 0:
                out[i] = 0.0
        else:
            if at_lo and out[i] < 0:
                out[i] = 0.0
            if at_hi and out[i] > 0:
                out[i] = 0.0
    return out
