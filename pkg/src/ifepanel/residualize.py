"""Residuals after projecting estimated loadings and/or factors out of a panel vector.

On unbalanced panels the least-squares residuals are computed with the method of
alternating projections: cheap one-dimensional projections onto each loading
column (period by period) and each factor column (unit by unit) are cycled
until the residual stops changing. When the projected subspaces are nearly
collinear the sweeps can stall; past the sweep budget the remaining problem is
handed to a sparse Krylov least-squares solver.
"""

from __future__ import annotations

import enum

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import lsqr

from .errors import DegenerateProjector, NoConvergence
from .factors import FactorStructure

MAP_TOL = 1e-10
MAP_MAX_SWEEPS = 10_000
_LSQR_TOL = 1e-14
_UNDERFLOW = 1e-300


class ResidualKind(str, enum.Enum):
    BREVE = "breve"  # loadings and factors projected out
    GRAVE = "grave"  # loadings only
    ACUTE = "acute"  # factors only

    @property
    def uses_loadings(self) -> bool:
        return self is not ResidualKind.ACUTE

    @property
    def uses_factors(self) -> bool:
        return self is not ResidualKind.GRAVE


def _projector_weights(vec: np.ndarray, w: np.ndarray, axis: int):
    # vec broadcast over the panel; denominators are per period (axis=0) or per unit (axis=1)
    sq = (vec ** 2 * w).sum(axis=axis, keepdims=True)
    if np.any((sq > 0) & (sq < _UNDERFLOW)):
        raise DegenerateProjector("projection denominator underflows")
    inv = np.divide(1.0, sq, out=np.zeros_like(sq), where=sq > 0)
    return vec * w, inv


def _sparse_design(fs: FactorStructure, kind: ResidualKind, mask: np.ndarray):
    """Loading-by-period and factor-by-unit interaction dummies over observed cells."""
    n_units, n_periods = mask.shape
    ii, tt = np.nonzero(mask)
    rows = np.arange(ii.size)
    blocks = []
    for r in range(fs.r):
        if kind.uses_loadings:
            blocks.append(sparse.csr_matrix((fs.loadings[ii, r], (rows, tt)), (ii.size, n_periods)))
        if kind.uses_factors:
            blocks.append(sparse.csr_matrix((fs.factors[tt, r], (rows, ii)), (ii.size, n_units)))
    return sparse.hstack(blocks, format="csr")


def _krylov_finish(out: np.ndarray, fs: FactorStructure, kind: ResidualKind,
                   mask: np.ndarray) -> np.ndarray:
    design = _sparse_design(fs, kind, mask)
    finished = out.copy()
    for c in range(out.shape[2]):
        target = out[:, :, c][mask]
        coef = lsqr(design, target, atol=_LSQR_TOL, btol=_LSQR_TOL,
                    iter_lim=10 * sum(design.shape))[0]
        finished[:, :, c][mask] = target - design @ coef
    return finished


def map_residualize(v: np.ndarray, fs: FactorStructure, kind: ResidualKind | str, d,
                    tol: float = MAP_TOL, max_sweeps: int = MAP_MAX_SWEEPS,
                    fallback: bool = True) -> np.ndarray:
    """Project loadings and/or factors out of ``v`` over the observed cells.

    Parameters
    ----------
    v : ndarray, shape (N, T) or (N, T, m)
        Values on the panel; unobserved cells are ignored. With a third axis,
        each of the ``m`` columns is residualized (jointly, same sweeps).
    fs : FactorStructure
    kind : ResidualKind
        ``breve`` (both), ``grave`` (loadings) or ``acute`` (factors).
    d : PanelData or boolean mask
    tol : float
        Stop once the Euclidean norm of the change over one full sweep is below
        ``tol`` (unnormalized, hence scale dependent).
    fallback : bool
        After ``max_sweeps`` stalled sweeps, finish with sparse LSQR instead of
        raising :class:`NoConvergence`.

    Returns
    -------
    ndarray
        Residuals in the shape of ``v`` with zeros in unobserved cells.
    """
    kind = ResidualKind(kind)
    mask = d.mask if hasattr(d, "mask") else np.asarray(d, bool)
    squeeze = v.ndim == 2
    out = np.array(v[:, :, None] if squeeze else v, dtype=float)
    w = mask[:, :, None].astype(float)
    out *= w
    if fs.r == 0:
        return out[:, :, 0] if squeeze else out

    steps = []
    if kind.uses_loadings:
        for r in range(fs.r):
            lam = fs.loadings[:, r][:, None, None]
            steps.append((0, *_projector_weights(lam, w, axis=0), lam))
    if kind.uses_factors:
        for r in range(fs.r):
            f = fs.factors[:, r][None, :, None]
            steps.append((1, *_projector_weights(f, w, axis=1), f))

    for _ in range(max_sweeps):
        prev = out.copy()
        for axis, vec_w, inv, vec in steps:
            coef = (vec_w * out).sum(axis=axis, keepdims=True) * inv
            out -= vec_w * coef
        change = np.sqrt(((out - prev) ** 2).sum(axis=(0, 1))).max()
        if change < tol:
            break
    else:
        if not fallback:
            raise NoConvergence(f"alternating projections did not reach {tol} in {max_sweeps} sweeps",
                                partial=out[:, :, 0] if squeeze else out)
        out = _krylov_finish(out, fs, kind, mask)
    return out[:, :, 0] if squeeze else out


def dense_residualize(v: np.ndarray, fs: FactorStructure, kind: ResidualKind | str, mask) -> np.ndarray:
    """Reference least-squares residuals from the explicit interaction-dummy design.

    Builds the ``n x (T R + N R)`` regressor matrix of loading-by-period and
    factor-by-unit interactions and solves with ``lstsq``. Only for small panels.
    """
    kind = ResidualKind(kind)
    mask = np.asarray(mask, bool)
    n_units, n_periods = mask.shape
    ii, tt = np.nonzero(mask)
    cols = []
    for r in range(fs.r):
        if kind.uses_loadings:
            block = np.zeros((ii.size, n_periods))
            block[np.arange(ii.size), tt] = fs.loadings[ii, r]
            cols.append(block)
        if kind.uses_factors:
            block = np.zeros((ii.size, n_units))
            block[np.arange(ii.size), ii] = fs.factors[tt, r]
            cols.append(block)
    target = v[mask]
    out = np.zeros(v.shape)
    if cols:
        design = np.hstack(cols)
        coef, *_ = np.linalg.lstsq(design, target, rcond=None)
        out[mask] = target - design @ coef
    else:
        out[mask] = target
    return out
