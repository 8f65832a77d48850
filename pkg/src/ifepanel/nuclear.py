"""Nuclear-norm regularized estimator and its post-estimation refinement."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import NoConvergence
from .estimator import IfeFit, check_identified, within_ols
from .factors import EM_MAX_ITER, EM_TOL, FactorStructure, em_impute
from .panel import MaskedMatrix, PanelData
from .residualize import ResidualKind, map_residualize

logger = logging.getLogger(__name__)

NN_MAX_ITER = 5000
NN_TOL = 1e-7
NN_WINDOW = 100
POST_ITERS = 4


@dataclass(frozen=True, eq=False)
class NnFit:
    """Result of :func:`fit_nuclear`; ``solver_path`` is the best-so-far objective."""

    beta_star: np.ndarray
    nuclear_objective: float
    solver_path: tuple
    converged: bool
    iterations: int


def _w(d: PanelData, beta) -> np.ndarray:
    return np.where(d.mask, d.y - d.x @ np.asarray(beta, dtype=float), 0.0)


def nuclear_objective(d: PanelData, beta) -> float:
    """``(1/2n)`` times the nuclear norm of the zero-filled ``y - x'beta``."""
    return float(np.linalg.svd(_w(d, beta), compute_uv=False).sum()) / (2.0 * d.n_obs)


def _value_and_subgradient(d: PanelData, beta: np.ndarray):
    z = _w(d, beta)
    u, s, vt = np.linalg.svd(z, full_matrices=False)
    value = float(s.sum()) / (2.0 * d.n_obs)
    keep = s > 1e-12 * max(float(s[0]), np.finfo(float).tiny)
    uv = u[:, keep] @ vt[keep]
    grad = -np.einsum("it,itk->k", np.where(d.mask, uv, 0.0), d.x) / (2.0 * d.n_obs)
    return value, grad


def fit_nuclear(d: PanelData, max_iter: int = NN_MAX_ITER, tol: float = NN_TOL,
                step_scale: float | None = None, window: int = NN_WINDOW,
                raise_on_fail: bool = False) -> NnFit:
    """Minimize the nuclear-norm objective over beta by subgradient descent.

    Starts at the two-way within OLS estimate and takes normalized steps of
    length ``c / sqrt(k)`` with ``c = step_scale`` (default ten within-OLS
    standard errors). Stops once the best objective improves by less than
    ``tol`` (relative) over ``window`` iterations and returns the best iterate.
    """
    check_identified(d.x_obs())
    beta, se0 = within_ols(d)
    if step_scale is None:
        step_scale = 10.0 * float(np.linalg.norm(se0))
        if not step_scale > 0:
            step_scale = 1e-3 * max(float(np.linalg.norm(beta)), 1.0)
    best_beta = beta.copy()
    best, grad = _value_and_subgradient(d, beta)
    path = [best]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        gnorm = float(np.linalg.norm(grad))
        if gnorm == 0.0:
            converged = True
            break
        beta = beta - step_scale / math.sqrt(it) * grad / gnorm
        value, grad = _value_and_subgradient(d, beta)
        if value < best:
            best, best_beta = value, beta.copy()
        path.append(best)
        if it >= window:
            old = path[-window - 1]
            if old - best <= tol * max(abs(old), np.finfo(float).tiny):
                converged = True
                break
    if not converged:
        logger.warning("nuclear-norm subgradient descent hit max_iter = %d", max_iter)
    result = NnFit(best_beta, best, tuple(path), converged, it)
    if not converged and raise_on_fail:
        raise NoConvergence("nuclear-norm solver did not converge", partial=result)
    return result


def post_estimate(nn: NnFit, d: PanelData, r: int, n_iters: int = POST_ITERS,
                  em_tol: float = EM_TOL, em_max_iter: int = EM_MAX_ITER) -> IfeFit:
    """Refine ``nn.beta_star`` with a fixed number of factor/OLS steps.

    Each step estimates the factor structure of ``y - x'beta`` by EM, removes
    loadings and factors from ``y`` and every regressor, and re-solves OLS on
    the residualized data.
    """
    if r < 0 or n_iters < 1:
        raise ValueError("need r >= 0 and n_iters >= 1")
    mask = d.mask
    beta = np.asarray(nn.beta_star, dtype=float).copy()

    def factor_step(b):
        if r == 0:
            return FactorStructure.empty(d.n_units, d.n_periods)
        fs, _, _ = em_impute(MaskedMatrix(_w(d, b), mask), r, em_tol, em_max_iter,
                             raise_on_fail=False)
        return fs

    for _ in range(n_iters):
        fs = factor_step(beta)
        y_b = map_residualize(d.y, fs, ResidualKind.BREVE, d)[mask]
        x_b = map_residualize(d.x, fs, ResidualKind.BREVE, d)[mask]
        check_identified(x_b)
        beta = np.linalg.solve(x_b.T @ x_b, x_b.T @ y_b)
    fs = factor_step(beta)
    w = _w(d, beta)
    resid = np.where(mask, w - fs.common(), 0.0)
    obj = float((resid ** 2).sum()) / d.n_obs
    return IfeFit(beta=beta, factor=fs, residuals=resid, objective=obj, sigma2=obj,
                  converged=True, outer_iterations=n_iters)
