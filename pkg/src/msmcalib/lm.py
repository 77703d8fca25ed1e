"""Levenberg-Marquardt driver for whitened least-squares problems.

The solver works on an additive parameter vector (the optimizer state is
stored in minimal coordinates, so no manifold retraction is needed) and
accepts dense or ``scipy.sparse`` Jacobians.  The normal equations are formed
densely; the problems in this package have a few hundred unknowns at most.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse

from .exceptions import NoConvergence, SingularNormalEquations

logger = logging.getLogger(__name__)


@dataclass
class LMResult:
    x: np.ndarray
    cost: float
    grad_norm: float
    iterations: int
    converged: bool
    status: str
    JtJ: np.ndarray
    n_residuals: int
    cost_history: list = field(default_factory=list)


def _normal_equations(J, r):
    if scipy.sparse.issparse(J):
        J = J.tocsr()
        JtJ = (J.T @ J).toarray()
        g = J.T @ r
    else:
        JtJ = J.T @ J
        g = J.T @ r
    return JtJ, np.asarray(g).ravel()


def levenberg_marquardt(
    residual,
    jacobian,
    x0,
    lambda0=1e-3,
    factor=10.0,
    gtol=1e-8,
    xtol=1e-10,
    ftol=1e-15,
    max_iter=200,
    lambda_max=1e16,
    strict=False,
):
    """Minimise ``0.5 * |residual(x)|^2``.

    Parameters
    ----------
    residual : callable
        ``x -> r``.  Non-finite entries mark an invalid state; such trial
        steps are rejected like a cost increase.
    jacobian : callable
        ``x -> J`` (dense array or sparse matrix) with ``J = dr/dx``.
    x0 : array_like
        Starting point.
    lambda0, factor : float
        Initial Marquardt damping and its multiplicative update (divide on
        accept, multiply on reject).
    gtol, xtol, ftol : float
        Stop when ``max|J^T r| < gtol``, when the accepted step is below
        ``xtol * (|x| + xtol)``, or when the relative cost decrease is
        below ``ftol``.
    max_iter : int
        Maximum number of accepted or rejected iterations.
    strict : bool
        Raise :class:`NoConvergence` instead of returning a non-converged
        result.

    Returns
    -------
    LMResult
    """
    x = np.array(x0, dtype=float)
    r = residual(x)
    if not np.all(np.isfinite(r)):
        raise SingularNormalEquations("residuals are not finite at the initial state")
    cost = 0.5 * float(r @ r)
    J = jacobian(x)
    JtJ, g = _normal_equations(J, r)
    lam = lambda0
    history = [cost]
    status = "max_iter"
    converged = False
    it = 0

    while it < max_iter:
        gnorm = float(np.max(np.abs(g))) if g.size else 0.0
        if gnorm < gtol:
            status, converged = "gtol", True
            break
        diag = np.diag(JtJ).copy()
        diag[diag <= 0] = 1e-12 * max(1.0, float(diag.max(initial=0.0)))
        it += 1
        try:
            cf = scipy.linalg.cho_factor(JtJ + lam * np.diag(diag), check_finite=False)
            dx = -scipy.linalg.cho_solve(cf, g, check_finite=False)
        except (np.linalg.LinAlgError, ValueError):
            dx = None
        if dx is not None and np.all(np.isfinite(dx)):
            x_new = x + dx
            r_new = residual(x_new)
            cost_new = 0.5 * float(r_new @ r_new) if np.all(np.isfinite(r_new)) else np.inf
        else:
            cost_new = np.inf
        if cost_new <= cost:
            decrease = cost - cost_new
            x, r, cost = x_new, r_new, cost_new
            J = jacobian(x)
            JtJ, g = _normal_equations(J, r)
            history.append(cost)
            lam = max(lam / factor, 1e-15)
            if np.linalg.norm(dx) < xtol * (np.linalg.norm(x) + xtol):
                status, converged = "xtol", True
                break
            if decrease <= ftol * max(cost, 1e-300):
                status, converged = "ftol", True
                break
        else:
            lam *= factor
            if lam > lambda_max:
                # no descent direction left at double precision
                status, converged = "lambda_max", True
                break

    gnorm = float(np.max(np.abs(g))) if g.size else 0.0
    logger.debug("LM finished: %s after %d iterations, cost %.6g, |g| %.3g", status, it, cost, gnorm)
    if not converged and strict:
        raise NoConvergence(f"no convergence after {it} iterations (|g| = {gnorm:.3e})", gradient_norm=gnorm)
    return LMResult(
        x=x,
        cost=cost,
        grad_norm=gnorm,
        iterations=it,
        converged=converged,
        status=status,
        JtJ=JtJ,
        n_residuals=r.size,
        cost_history=history,
    )


def covariance_from_normal(JtJ, cond_max=1e12):
    """Inverse of whitened ``J^T J``; truncated pseudo-inverse when ill-conditioned.

    Returns ``(cov, truncated)``.
    """
    JtJ = 0.5 * (JtJ + JtJ.T)
    if not np.all(np.isfinite(JtJ)):
        raise SingularNormalEquations("normal equations contain non-finite entries")
    w, V = np.linalg.eigh(JtJ)
    if w[-1] <= 0:
        raise SingularNormalEquations("normal equations are zero")
    keep = w > w[-1] / cond_max
    truncated = not np.all(keep)
    inv = np.where(keep, 1.0 / np.where(keep, w, 1.0), 0.0)
    cov = (V * inv) @ V.T
    return 0.5 * (cov + cov.T), truncated
