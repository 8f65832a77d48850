"""Bias corrections, covariance estimators and tests for the IFE estimator."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import Collinear, UnitRoot, ZeroStdErr
from .estimator import RCOND_MIN, IfeFit
from .panel import PanelData
from .residualize import MAP_MAX_SWEEPS, MAP_TOL, ResidualKind, map_residualize


class VcovKind(str, enum.Enum):
    HOMOSKEDASTIC = "homoskedastic"
    HETEROSKEDASTIC_ROBUST = "robust"
    CLUSTERED_BY_UNIT = "clustered"


@dataclass(frozen=True)
class BiasBandwidths:
    l: int = 5  # lags for the predetermined-regressor term
    m: int = 3  # lags for the serial-correlation term

    def __post_init__(self):
        if self.l < 0 or self.m < 0:
            raise ValueError("bandwidths must be non-negative")


def rule_of_thumb_m(t_bar: float) -> int:
    """``round(4 (T/100)^(2/9))`` truncation lag."""
    return int(round(4.0 * (t_bar / 100.0) ** (2.0 / 9.0)))


@dataclass
class Residualized:
    """Regressors with loadings and/or factors projected out, each ``(N, T, K)``."""

    breve: np.ndarray
    grave: np.ndarray
    acute: np.ndarray


def residualize_regressors(fit: IfeFit, d: PanelData, tol: float = MAP_TOL,
                           max_sweeps: int = MAP_MAX_SWEEPS) -> Residualized:
    fs = fit.factor
    return Residualized(
        breve=map_residualize(d.x, fs, ResidualKind.BREVE, d, tol, max_sweeps),
        grave=map_residualize(d.x, fs, ResidualKind.GRAVE, d, tol, max_sweeps),
        acute=map_residualize(d.x, fs, ResidualKind.ACUTE, d, tol, max_sweeps),
    )


def _check_rcond(mat: np.ndarray) -> None:
    s = np.linalg.svd(mat, compute_uv=False)
    if s.size and (s[0] == 0 or s[-1] / s[0] < RCOND_MIN):
        raise Collinear("D matrix is numerically singular")


def d_matrix(fit: IfeFit, d: PanelData, res: Residualized | None = None) -> np.ndarray:
    """Gram matrix of the breve-residualized regressors over the observed cells."""
    breve = res.breve if res is not None else map_residualize(d.x, fit.factor, ResidualKind.BREVE, d)
    xb = breve[d.mask]
    dm = xb.T @ xb
    _check_rcond(dm)
    return dm


def theta_matrix(fit: IfeFit) -> np.ndarray:
    """``Lambda (Lambda'Lambda)^-1 (F'F)^-1 F'`` as an ``N x T`` matrix."""
    lam, f = fit.factor.loadings, fit.factor.factors
    if fit.r == 0:
        return np.zeros((lam.shape[0], f.shape[0]))
    return lam @ np.linalg.pinv(lam.T @ lam) @ np.linalg.pinv(f.T @ f) @ f.T


def factor_projection(fit: IfeFit, additive_effects: bool = False) -> np.ndarray:
    """``F (F'F)^+ F'``, ``T x T``.

    With ``additive_effects`` the constant is appended to ``F``: unit effects
    removed by a within transformation are a factor with a flat time profile.
    """
    f = fit.factor.factors
    if additive_effects:
        f = np.column_stack([f, np.ones(f.shape[0])])
    if f.shape[1] == 0:
        return np.zeros((f.shape[0], f.shape[0]))
    return f @ np.linalg.pinv(f.T @ f) @ f.T


def _lag_products(a: np.ndarray, b: np.ndarray, lag: int) -> np.ndarray:
    """``sum_i a[i, t] b[i, t - lag]`` for each ``t >= lag`` (zero-filled inputs)."""
    return (a[:, lag:] * b[:, :-lag]).sum(axis=0) if lag else (a * b).sum(axis=0)


def bias_terms(fit: IfeFit, d: PanelData, bw: BiasBandwidths = BiasBandwidths(),
               res: Residualized | None = None, dmat: np.ndarray | None = None,
               additive_effects: bool = False):
    """Estimated leading biases, already premultiplied by ``D^-1``.

    Returns ``(b, c1, c2)``: cross-sectional heteroskedasticity, predetermined
    regressors (lags ``1..bw.l``) and time-serial heteroskedasticity plus serial
    correlation (lags ``1..bw.m``). Pairs ``(t, t - lag)`` count only when both
    cells are observed. Set ``additive_effects`` when the panel was two-way
    demeaned, so that the predetermined-regressor term also covers the unit
    effects (with ``r = 0`` this is the usual within-estimator correction).
    """
    n_reg = d.n_regressors
    if fit.r == 0 and not additive_effects:
        zero = np.zeros(n_reg)
        return zero, zero.copy(), zero.copy()
    if res is None:
        res = residualize_regressors(fit, d)
    if dmat is None:
        dmat = d_matrix(fit, d, res)
    e = fit.residuals
    theta = theta_matrix(fit)
    proj = factor_projection(fit, additive_effects)
    e2 = e ** 2
    unit_e2 = e2.sum(axis=1)    # sum over t in D_i
    period_e2 = e2.sum(axis=0)  # sum over i in D_t
    n_periods = d.n_periods

    b_raw = np.empty(n_reg)
    c1_raw = np.zeros(n_reg)
    c2_raw = np.empty(n_reg)
    for k in range(n_reg):
        grave, acute, xk = res.grave[:, :, k], res.acute[:, :, k], d.x[:, :, k]
        # [P(X_grave) Theta']_ii = sum_t grave_it theta_it
        b_raw[k] = unit_e2 @ (grave * theta).sum(axis=1)
        for lag in range(1, min(bw.l, n_periods - 1) + 1):
            p_lag = np.diagonal(proj, offset=-lag)  # [P_F]_{t, t-lag}, t = lag..T-1
            c1_raw[k] += p_lag @ _lag_products(xk, e, lag)
        # G = P(X_acute)' Theta, T x T
        g = acute.T @ theta
        c2 = period_e2 @ np.diagonal(g)
        for lag in range(1, min(bw.m, n_periods - 1) + 1):
            sym = np.diagonal(g, offset=-lag) + np.diagonal(g, offset=lag)
            c2 += sym @ _lag_products(e, e, lag)
        c2_raw[k] = c2
    solve = lambda v: np.linalg.solve(dmat, v)  # noqa: E731
    return solve(b_raw), solve(c1_raw), solve(c2_raw)


def covariance(fit: IfeFit, d: PanelData, kind: VcovKind | str = VcovKind.HOMOSKEDASTIC,
               dof_adjust: bool = False, res: Residualized | None = None,
               dmat: np.ndarray | None = None) -> np.ndarray:
    """Covariance estimate for beta.

    ``homoskedastic``: ``sigma^2 D^-1``; ``robust``: ``D^-1 Omega_1 D^-1`` with
    ``Omega_1 = sum e^2 x x'``; ``clustered``: ``D^-1 Omega_2 D^-1`` with unit
    clusters. ``dof_adjust`` applies ``n/(n-K)`` (first two) or
    ``N/(N-1) (n-1)/(n-K)`` (clustered).
    """
    kind = VcovKind(kind)
    if dmat is None:
        dmat = d_matrix(fit, d, res)
    n, n_reg, n_units = d.n_obs, d.n_regressors, d.n_units
    dinv = np.linalg.inv(dmat)
    if kind is VcovKind.HOMOSKEDASTIC:
        vcov = fit.sigma2 * dinv
        factor = n / (n - n_reg)
    else:
        breve = res.breve if res is not None else map_residualize(d.x, fit.factor, ResidualKind.BREVE, d)
        e = fit.residuals
        if kind is VcovKind.HETEROSKEDASTIC_ROBUST:
            xb = breve[d.mask]
            eo = e[d.mask]
            omega = (xb * eo[:, None] ** 2).T @ xb
            factor = n / (n - n_reg)
        else:
            scores = (breve * e[:, :, None]).sum(axis=1)  # N x K
            omega = scores.T @ scores
            factor = n_units / (n_units - 1) * (n - 1) / (n - n_reg)
        vcov = dinv @ omega @ dinv
    if dof_adjust:
        vcov = vcov * factor
    return 0.5 * (vcov + vcov.T)


@dataclass
class InferenceReport:
    beta_hat: np.ndarray
    b_hat: np.ndarray
    c1_hat: np.ndarray
    c2_hat: np.ndarray
    beta_tilde: np.ndarray
    d_matrix: np.ndarray
    vcov_kind: VcovKind
    vcov: np.ndarray
    std_errors: np.ndarray
    z_stats: np.ndarray
    dof_adjusted: bool
    bandwidths: BiasBandwidths
    corrections: tuple = ("b", "c1", "c2")
    names: tuple = field(default=())
    additive_effects: bool = False

    def to_dict(self) -> dict:
        return {
            "names": list(self.names),
            "beta_hat": self.beta_hat.tolist(),
            "b_hat": self.b_hat.tolist(),
            "c1_hat": self.c1_hat.tolist(),
            "c2_hat": self.c2_hat.tolist(),
            "beta_tilde": self.beta_tilde.tolist(),
            "corrections": list(self.corrections),
            "vcov_kind": self.vcov_kind.value,
            "vcov": self.vcov.tolist(),
            "std_errors": self.std_errors.tolist(),
            "z_stats": self.z_stats.tolist(),
            "dof_adjusted": self.dof_adjusted,
            "bandwidths": {"L": self.bandwidths.l, "M": self.bandwidths.m},
            "additive_effects": self.additive_effects,
        }


def infer(fit: IfeFit, d: PanelData, bw: BiasBandwidths = BiasBandwidths(),
          kind: VcovKind | str = VcovKind.CLUSTERED_BY_UNIT, corrections=("b", "c1", "c2"),
          dof_adjust: bool = False, additive_effects: bool = False) -> InferenceReport:
    """Bias-corrected estimate and its covariance.

    ``corrections`` picks which estimated biases enter ``beta_tilde``; all three
    are always reported. ``additive_effects`` is passed to :func:`bias_terms`.
    """
    kind = VcovKind(kind)
    corrections = tuple(c.lower() for c in corrections)
    unknown = set(corrections) - {"b", "c1", "c2"}
    if unknown:
        raise ValueError(f"unknown corrections {sorted(unknown)}")
    res = residualize_regressors(fit, d)
    dmat = d_matrix(fit, d, res)
    b, c1, c2 = bias_terms(fit, d, bw, res, dmat, additive_effects)
    beta_tilde = fit.beta.copy()
    for name, term in (("b", b), ("c1", c1), ("c2", c2)):
        if name in corrections:
            beta_tilde = beta_tilde + term
    vcov = covariance(fit, d, kind, dof_adjust, res, dmat)
    se = np.sqrt(np.clip(np.diag(vcov), 0.0, None))
    with np.errstate(divide="ignore", invalid="ignore"):
        z = beta_tilde / se
    return InferenceReport(fit.beta.copy(), b, c1, c2, beta_tilde, dmat, kind, vcov, se, z,
                           dof_adjust, bw, corrections, tuple(d.regressor_names),
                           additive_effects)


def z_test(report: InferenceReport, null=0.0, level: float = 0.05):
    """Per-coefficient ``(z, reject)`` for ``H0: beta = null`` using ``beta_tilde``."""
    se = report.std_errors
    if np.any(se <= 0):
        raise ZeroStdErr("standard error is zero")
    z = (report.beta_tilde - np.broadcast_to(null, se.shape)) / se
    crit = stats.norm.ppf(1.0 - level / 2.0)
    return [(float(zk), bool(abs(zk) > crit)) for zk in z]


def long_run_effect(beta_index: int, gamma_indices, report: InferenceReport,
                    corrected: bool = True) -> tuple[float, float]:
    """``beta / (1 - sum(gamma))`` and its delta-method standard error."""
    est = report.beta_tilde if corrected else report.beta_hat
    gamma_indices = list(gamma_indices)
    g = float(sum(est[j] for j in gamma_indices))
    denom = 1.0 - g
    if abs(denom) < 1e-10:
        raise UnitRoot("sum of lag coefficients is 1")
    b = float(est[beta_index])
    phi = b / denom
    grad = np.zeros(est.size)
    grad[beta_index] = 1.0 / denom
    for j in gamma_indices:
        grad[j] += b / denom ** 2
    var = float(grad @ report.vcov @ grad)
    return phi, math.sqrt(max(var, 0.0))
