"""Empirical adversarial training and evaluation on sampled mixtures.

The inner maximization over norm-bounded perturbations of a linear model is
available in closed form, so the robust objective is the plain loss evaluated
at margin minus budget times the dual norm.  Training happens either by
subgradient descent with Polyak-style steps (the route used for Euclidean and
sup-norm adversaries) or through an exact convex solve (used where descent on
the dual sup-norm is impractically slow, and for the max-margin program).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import DegenerateModelError
from .gmm import Dataset, apply_sqrt_cov, rng_for
from .kernels import LOGISTIC, LossModel
from .separability import CovarianceSpec

TRAIN_STREAM_OFFSET = 0x7A11

_PHI = special.ndtr


@dataclass(frozen=True)
class ModelEstimate:
    """Trained coefficient vector with its optimization trace."""

    theta: np.ndarray
    objective_trace: np.ndarray
    converged: bool
    method: str


@dataclass(frozen=True)
class MaxMarginOutcome:
    """Explicit feasibility verdict plus the separator when one exists."""

    status: str  # "optimal" | "infeasible" | "boundary"
    estimate: ModelEstimate | None


def dual_norm(theta: np.ndarray, q: float) -> float:
    if q == np.inf:
        return float(np.max(np.abs(theta))) if theta.size else 0.0
    return float(np.linalg.norm(theta, ord=q))


def dual_norm_subgradient(theta: np.ndarray, q: float) -> np.ndarray:
    """A member of the subdifferential of the q-norm.

    At theta = 0 the zero vector is returned (a valid element).  For the
    sup-norm the lowest-index maximal coordinate breaks ties.
    """
    nrm = dual_norm(theta, q)
    if nrm == 0.0:
        return np.zeros_like(theta)
    if q == 2.0:
        return theta / nrm
    if q == 1.0:
        return np.sign(theta)
    if q == np.inf:
        g = np.zeros_like(theta)
        j = int(np.argmax(np.abs(theta)))
        g[j] = np.sign(theta[j])
        return g
    return np.sign(theta) * (np.abs(theta) / nrm) ** (q - 1.0)


def robust_loss(
    theta: np.ndarray,
    data: Dataset,
    eps: float,
    q: float,
    loss: LossModel = LOGISTIC,
) -> float:
    """Average loss at the adversarially reduced margins."""
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    margins = data.labels * (data.features @ theta) - eps * dual_norm(theta, q)
    return float(np.mean(loss.value(margins)))


def robust_loss_grad(
    theta: np.ndarray,
    data: Dataset,
    eps: float,
    q: float,
    loss: LossModel = LOGISTIC,
) -> tuple[float, np.ndarray]:
    """Objective value and a subgradient (chain rule through the dual norm)."""
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    margins = data.labels * (data.features @ theta) - eps * dual_norm(theta, q)
    lvals = loss.value(margins)
    lderiv = loss.derivative(margins)
    grad_data = (data.features.T @ (lderiv * data.labels)) / data.n
    grad_norm = -eps * float(np.mean(lderiv)) * dual_norm_subgradient(theta, q)
    return float(np.mean(lvals)), grad_data + grad_norm


def train_gd(
    data: Dataset,
    eps: float,
    q: float,
    mode: str = "polyak",
    budget: int = 20_000,
    seed: int = 0,
    gamma: float = 1.0,
    loss: LossModel = LOGISTIC,
) -> ModelEstimate:
    """Subgradient descent with a Polyak-style step size.

    ``polyak`` targets objective zero (the separable regime: the trace holds
    raw objective values and the final iterate is the direction estimate).
    ``approx_polyak`` targets the running best plus gamma/t (non-separable:
    the trace holds the monotone running best and the best iterate is
    returned).
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    if mode not in ("polyak", "approx_polyak"):
        raise ValueError(f"unknown mode {mode!r}")
    rng = rng_for(data.seed, TRAIN_STREAM_OFFSET + seed)
    direction = rng.standard_normal(data.d)
    theta = 1e-6 * direction / np.linalg.norm(direction)
    best_val = np.inf
    best_theta = theta.copy()
    trace = np.empty(budget)
    converged = False
    checkpoint = None
    check_every = 500
    for t in range(budget):
        val, grad = robust_loss_grad(theta, data, eps, q, loss)
        if val < best_val:
            best_val = val
            best_theta = theta.copy()
        trace[t] = val if mode == "polyak" else best_val
        gn2 = float(grad @ grad)
        if gn2 < 1e-28:
            converged = True
            trace = trace[: t + 1]
            break
        if mode == "polyak":
            step = val / gn2
        else:
            step = (val - best_val + gamma / (t + 1)) / gn2
        theta = theta - step * grad
        if mode == "polyak" and (t + 1) % check_every == 0:
            margins = data.labels * (data.features @ theta)
            margin_ok = float(np.min(margins)) - eps * dual_norm(theta, q) > 0
            direction_now = theta / np.linalg.norm(theta)
            if checkpoint is not None and margin_ok:
                if np.linalg.norm(direction_now - checkpoint) < 1e-6:
                    converged = True
                    trace = trace[: t + 1]
                    break
            checkpoint = direction_now
    final = theta if mode == "polyak" else best_theta
    return ModelEstimate(
        theta=final,
        objective_trace=np.asarray(trace),
        converged=converged,
        method="gd_polyak" if mode == "polyak" else "gd_approx_polyak",
    )


def _cvx_norm(theta_var, q: float):
    import cvxpy as cp

    if q == np.inf:
        return cp.norm(theta_var, "inf")
    return cp.norm(theta_var, q)


def max_margin(data: Dataset, eps: float, q: float) -> MaxMarginOutcome:
    """Minimal-norm separator with margin exceeding the adversary's budget.

    Solved as a conic program; infeasibility is certified by the solver
    rather than inferred, and ambiguous solver statuses map to the explicit
    ``boundary`` verdict.
    """
    import cvxpy as cp

    if eps < 0:
        raise ValueError("eps must be nonnegative")
    theta = cp.Variable(data.d)
    margins = cp.multiply(data.labels, data.features @ theta)
    constraints = [margins - eps * _cvx_norm(theta, q) >= 1]
    problem = cp.Problem(cp.Minimize(cp.sum_squares(theta)), constraints)
    try:
        problem.solve(solver=cp.CLARABEL)
    except cp.SolverError:
        return MaxMarginOutcome(status="boundary", estimate=None)
    if problem.status == cp.OPTIMAL:
        th = np.asarray(theta.value, dtype=float)
        slack = float(
            np.min(data.labels * (data.features @ th)) - eps * dual_norm(th, q)
        )
        if slack >= 1.0 - 1e-6:
            est = ModelEstimate(
                theta=th,
                objective_trace=np.array([float(problem.value)]),
                converged=True,
                method="max_margin",
            )
            return MaxMarginOutcome(status="optimal", estimate=est)
        return MaxMarginOutcome(status="boundary", estimate=None)
    if problem.status == cp.INFEASIBLE:
        return MaxMarginOutcome(status="infeasible", estimate=None)
    return MaxMarginOutcome(status="boundary", estimate=None)


def train_convex(
    data: Dataset,
    eps: float,
    q: float,
    loss: LossModel = LOGISTIC,
) -> ModelEstimate:
    """Exact convex solve of the robust objective (bounded regime only)."""
    import cvxpy as cp

    theta = cp.Variable(data.d)
    margin_expr = cp.multiply(data.labels, data.features @ theta) - eps * _cvx_norm(
        theta, q
    )
    if loss.id == "logistic":
        obj = cp.sum(cp.logistic(-margin_expr)) / data.n
    elif loss.id == "exponential":
        obj = cp.sum(cp.exp(-margin_expr)) / data.n
    elif loss.id == "hinge":
        obj = cp.sum(cp.pos(1.0 - margin_expr)) / data.n
    else:
        raise ValueError(f"unsupported loss {loss.id!r}")
    problem = cp.Problem(cp.Minimize(obj))
    problem.solve(solver=cp.CLARABEL)
    if problem.status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
        raise DegenerateModelError(
            f"convex training ended with status {problem.status}"
        )
    th = np.asarray(theta.value, dtype=float)
    return ModelEstimate(
        theta=th,
        objective_trace=np.array([float(problem.value)]),
        converged=problem.status == cp.OPTIMAL,
        method="convex_generic",
    )


def is_robustly_separable(data: Dataset, eps: float, q: float) -> str:
    """Verdict 'separable' / 'non_separable' / 'boundary' via max-margin."""
    outcome = max_margin(data, eps, q)
    return {
        "optimal": "separable",
        "infeasible": "non_separable",
        "boundary": "boundary",
    }[outcome.status]


def eval_population(
    theta: np.ndarray,
    mu: np.ndarray,
    cov: CovarianceSpec,
    eps: float,
    q: float,
) -> tuple[float, float]:
    """Exact population accuracies of a direction on the mixture.

    Both measures are scale-invariant in theta; the zero vector has no
    defined accuracy and is rejected.
    """
    nrm = np.linalg.norm(theta)
    if nrm == 0.0 or not np.isfinite(nrm):
        raise DegenerateModelError("accuracies are undefined for the zero direction")
    noise_scale = float(np.linalg.norm(apply_sqrt_cov(theta, mu, cov)))
    signal = float(mu @ theta)
    sa = float(_PHI(signal / noise_scale))
    ra = float(_PHI((signal - eps * dual_norm(theta, q)) / noise_scale))
    return sa, ra


def realized_budget(eps0: float, p: float, mu: np.ndarray) -> float:
    """Finite-dimensional budget matching the asymptotic normalization.

    Finite p scales by the p-norm of the mean; the sup-norm adversary uses
    the dimension-scaled convention eps0 / sqrt(d) instead, because the
    sup-norm of the mean does not stabilize.
    """
    if eps0 == 0.0:
        return 0.0
    if np.isfinite(p):
        return eps0 * float(np.linalg.norm(mu, ord=p))
    return eps0 / np.sqrt(mu.size)
