"""Principal-components factor extraction and EM imputation for incomplete matrices."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import EigenFailure, NoConvergence, RankTooLarge
from .panel import MaskedMatrix

EM_TOL = 1e-8
EM_MAX_ITER = 1000


class NormalizationSide(str, enum.Enum):
    FACTOR = "factor"    # F'F/T = I, Lambda'Lambda diagonal
    LOADING = "loading"  # Lambda'Lambda/N = I, F'F diagonal


@dataclass(frozen=True, eq=False)
class FactorStructure:
    """Loadings ``(N, R)`` and factors ``(T, R)`` of a rank-``R`` fit."""

    loadings: np.ndarray
    factors: np.ndarray
    side: NormalizationSide = NormalizationSide.FACTOR

    @property
    def r(self) -> int:
        return self.loadings.shape[1]

    def common(self) -> np.ndarray:
        """The ``N x T`` common component ``Lambda F'``."""
        return self.loadings @ self.factors.T

    @classmethod
    def empty(cls, n_units: int, n_periods: int) -> "FactorStructure":
        return cls(np.zeros((n_units, 0)), np.zeros((n_periods, 0)))


@dataclass
class EmReport:
    iterations: int = 0
    final_delta: float = float("nan")
    objective_path: list = field(default_factory=list)
    converged: bool = False


def _fix_signs(vecs: np.ndarray) -> np.ndarray:
    idx = np.abs(vecs).argmax(axis=0)
    signs = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs


def _top_eigvecs(gram: np.ndarray, r: int) -> tuple[np.ndarray, np.ndarray]:
    try:
        vals, vecs = np.linalg.eigh(gram)
    except np.linalg.LinAlgError as exc:
        raise EigenFailure(str(exc)) from exc
    order = slice(None, -r - 1, -1)
    return vals[order], _fix_signs(vecs[:, order])


def pca_factors(w: np.ndarray, r: int, side: NormalizationSide | str | None = None) -> FactorStructure:
    """Principal-components loadings and factors of a complete matrix.

    By default the eigenproblem is solved on the smaller Gram matrix: ``W'W``
    (factor-side normalization, ``F'F/T = I``) when ``T <= N`` and ``WW'``
    (loading-side, ``Lambda'Lambda/N = I``) otherwise. The common component
    ``Lambda F'`` does not depend on that choice.
    """
    w = np.asarray(w, dtype=float)
    n_units, n_periods = w.shape
    if r < 0 or r > min(n_units, n_periods):
        raise RankTooLarge(f"rank {r} exceeds min(N, T) = {min(n_units, n_periods)}")
    if side is None:
        side = NormalizationSide.FACTOR if n_periods <= n_units else NormalizationSide.LOADING
    side = NormalizationSide(side)
    if r == 0:
        return FactorStructure(np.zeros((n_units, 0)), np.zeros((n_periods, 0)), side)
    if side is NormalizationSide.FACTOR:
        _, vecs = _top_eigvecs(w.T @ w, r)
        factors = np.sqrt(n_periods) * vecs
        loadings = w @ factors / n_periods
    else:
        _, vecs = _top_eigvecs(w @ w.T, r)
        loadings = np.sqrt(n_units) * vecs
        factors = w.T @ loadings / n_units
    return FactorStructure(loadings, factors, side)


def eigen_tail(w: np.ndarray, r: int) -> float:
    """Sum of all but the ``r`` largest eigenvalues of ``W'W``."""
    gram = w.T @ w if w.shape[1] <= w.shape[0] else w @ w.T
    vals = np.linalg.eigvalsh(gram)[::-1]
    return float(vals[r:].sum())


def em_impute(w: MaskedMatrix, r: int, tol: float = EM_TOL, max_iter: int = EM_MAX_ITER,
              init: np.ndarray | None = None, side=None, raise_on_fail: bool = True):
    """Fill the missing cells of ``w`` with a rank-``r`` principal-components fit.

    Starting from zeros (or ``init``) in the missing block, alternate between a
    principal-components fit of the completed matrix and refilling the missing
    block with the fitted common component. Stops when the Frobenius change of
    the imputed block is below ``tol * (1 + ||imputed||_F)``.

    Returns
    -------
    factor : FactorStructure
    completed : ndarray
        Observed values with the final imputation in the missing block.
    report : EmReport
    """
    mask = w.mask
    values = np.where(mask, w.values, 0.0)
    missing = ~mask
    fill = np.zeros_like(values) if init is None else np.where(missing, init, 0.0)
    report = EmReport()
    has_missing = bool(missing.any())
    fs = None
    for it in range(1, max_iter + 1):
        completed = np.where(mask, values, fill)
        fs = pca_factors(completed, r, side)
        common = fs.common()
        resid = (values - common)[mask]
        report.objective_path.append(float(resid @ resid))
        new_fill = np.where(missing, common, 0.0)
        delta = float(np.linalg.norm(new_fill - fill)) if has_missing else 0.0
        fill = new_fill
        report.iterations = it
        report.final_delta = delta
        if delta < tol * (1.0 + np.linalg.norm(fill)):
            report.converged = True
            break
    completed = np.where(mask, values, fill)
    if not report.converged and raise_on_fail:
        raise NoConvergence(f"EM did not converge in {max_iter} iterations",
                            partial=(fs, completed), report=report)
    return fs, completed, report
