"""Estimators for the number of factors in a (zero-filled) pure factor model.

All estimators work from the eigenvalues ``mu_1 >= mu_2 >= ...`` of
``W'W / (N T)`` where missing cells of ``W`` are set to zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import SpectrumFailure
from .panel import MaskedMatrix

PA_PERMUTATIONS = 199
ED_MAX_ITER = 100
ED_WINDOW = 5
_REL_FLOOR = 1e-14   # eigenvalues below this fraction of the total are treated as zero
_ED_DELTA_FLOOR = 1e-10
_PA_FLOOR = 1e-10

ESTIMATORS = ("ic2", "bic3", "er", "gr", "ed", "pa")


@dataclass(frozen=True, eq=False)
class SelectionInput:
    w: MaskedMatrix
    r_max: int
    pa_permutations: int = PA_PERMUTATIONS
    pa_seed: int = 0

    def __post_init__(self):
        n_units, n_periods = self.w.values.shape
        if not 1 <= self.r_max < min(n_units, n_periods):
            raise ValueError(f"r_max must lie in [1, min(N, T)); got {self.r_max}")
        if self.pa_permutations < 1:
            raise ValueError("pa_permutations must be >= 1")


@dataclass(frozen=True)
class SelectionResult:
    """Estimated ranks and the spectra behind them.

    ``eigenvalue_spectrum`` holds ``mu_r`` (descending); ``pa_thresholds`` the
    per-rank maxima of the column-permuted spectrum on the same ``1/(NT)``
    eigenvalue scale; ``pa_deflated_thresholds`` the thresholds actually used by
    the sequential deflated test (one per tested rank).
    """

    ic2: int
    bic3: int
    er: int
    gr: int
    ed: int
    pa: int
    eigenvalue_spectrum: np.ndarray = field(repr=False)
    pa_thresholds: np.ndarray = field(repr=False)
    pa_deflated_thresholds: np.ndarray = field(repr=False)

    def as_dict(self) -> dict[str, int]:
        return {name: getattr(self, name) for name in ESTIMATORS}


def default_rbar(n_bar: float, t_bar: float) -> int:
    """``ceil(12 (min(N, T) / 100)^(1/4))``."""
    if n_bar <= 0 or t_bar <= 0:
        raise ValueError("sizes must be positive")
    value = 12.0 * (min(n_bar, t_bar) / 100.0) ** 0.25
    return int(math.ceil(value - 1e-9))


def _gram_eigvals(z: np.ndarray) -> np.ndarray:
    gram = z.T @ z if z.shape[1] <= z.shape[0] else z @ z.T
    try:
        vals = np.linalg.eigvalsh(gram)[::-1]
    except np.linalg.LinAlgError as exc:
        raise SpectrumFailure(str(exc)) from exc
    if not np.all(np.isfinite(vals)):
        raise SpectrumFailure("non-finite eigenvalues")
    return np.clip(vals, 0.0, None)


def spectrum(w: MaskedMatrix | np.ndarray) -> np.ndarray:
    """Descending eigenvalues of ``W'W / (N T)`` for the zero-filled ``W``."""
    z = w.zero_filled() if isinstance(w, MaskedMatrix) else np.asarray(w, dtype=float)
    return _gram_eigvals(z) / z.size


def _tail_sums(mu: np.ndarray) -> np.ndarray:
    """``V(k) = sum_{j > k} mu_j`` for ``k = 0..m``."""
    return np.concatenate([np.cumsum(mu[::-1])[::-1], [0.0]])


def _floored(mu: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    floor = max(_REL_FLOOR * float(mu.sum()), np.finfo(float).tiny)
    mu_f = np.maximum(mu, floor)
    return mu_f, _tail_sums(mu_f)


def ic2(mu: np.ndarray, n_units: int, n_periods: int, r_max: int) -> int:
    """Information criterion ``ln V(k) + k (N+T)/(NT) ln min(N, T)``."""
    _, v = _floored(mu)
    k = np.arange(r_max + 1)
    nt = n_units * n_periods
    crit = np.log(v[k]) + k * (n_units + n_periods) / nt * math.log(min(n_units, n_periods))
    return int(np.argmin(crit))


def bic3(mu: np.ndarray, n_units: int, n_periods: int, r_max: int) -> int:
    """``V(k) + k sigma^2 (N+T-k) ln(NT)/(NT)`` with ``sigma^2 = V(r_max)``."""
    _, v = _floored(mu)
    k = np.arange(r_max + 1)
    nt = n_units * n_periods
    crit = v[k] + k * v[r_max] * (n_units + n_periods - k) * math.log(nt) / nt
    return int(np.argmin(crit))


def _mock(mu: np.ndarray) -> float:
    return float(mu.sum()) / math.log(mu.size)


def eigenvalue_ratio(mu: np.ndarray, r_max: int) -> int:
    """``argmax_k mu_k / mu_{k+1}`` with the mock eigenvalue as ``mu_0``."""
    mu_f, _ = _floored(mu)
    ext = np.concatenate([[_mock(mu_f)], mu_f])
    ratios = ext[: r_max + 1] / ext[1: r_max + 2]
    return int(np.argmax(ratios))


def growth_ratio(mu: np.ndarray, r_max: int) -> int:
    """``argmax_k ln(1 + mu_k/V(k)) / ln(1 + mu_{k+1}/V(k+1))`` with the mock ``mu_0``."""
    mu_f, v = _floored(mu)
    ext = np.concatenate([[_mock(mu_f)], mu_f])
    k = np.arange(r_max + 1)
    with np.errstate(divide="ignore"):
        num = np.log1p(ext[k] / v[k])
        den = np.log1p(ext[k + 1] / v[k + 1])
        ratios = np.where(np.isinf(den), 0.0, num / den)
    return int(np.argmax(ratios))


def edge_distribution(mu: np.ndarray, r_max: int, max_iter: int = ED_MAX_ITER) -> int:
    """Edge-distribution estimator with iterated calibration of the threshold.

    The threshold ``delta`` is twice the absolute slope of a regression of
    ``mu_j, .., mu_{j+4}`` on ``(j-1)^{2/3}, .., (j+3)^{2/3}``; ``j`` starts at
    ``r_max + 1`` and is reset to ``r_hat + 1`` until ``r_hat`` settles.
    """
    m = mu.size
    delta_floor = _ED_DELTA_FLOOR * max(float(mu[0]), np.finfo(float).tiny)
    gaps = mu[:-1] - mu[1:]  # gaps[i - 1] = mu_i - mu_{i+1}
    j = r_max + 1
    r_hat = None
    for _ in range(max_iter):
        lo = min(j, m - 1)
        hi = min(lo + ED_WINDOW - 1, m)
        idx = np.arange(lo, hi + 1)  # 1-based eigenvalue indices
        if idx.size < 2:
            idx = np.arange(max(m - 1, 1), m + 1)
        xs = (idx - 1.0) ** (2.0 / 3.0)
        slope = np.polyfit(xs, mu[idx - 1], 1)[0] if idx.size >= 2 else 0.0
        delta = max(2.0 * abs(slope), delta_floor)
        above = np.flatnonzero(gaps[:r_max] >= delta)
        new = int(above[-1] + 1) if above.size else 0
        if new == r_hat:
            break
        r_hat = new
        j = r_hat + 1
    return int(r_hat)


def _top_sv(z: np.ndarray) -> float:
    gram = z.T @ z if z.shape[1] <= z.shape[0] else z @ z.T
    top = linalg.eigvalsh(gram, subset_by_index=[gram.shape[0] - 1, gram.shape[0] - 1])
    return math.sqrt(max(float(top[0]), 0.0))


def _generators(seed: int, key: int, n: int):
    return [np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(key, b))))
            for b in range(n)]


def permuted_spectrum(w: MaskedMatrix | np.ndarray, n_perm: int = PA_PERMUTATIONS,
                      seed: int = 0) -> np.ndarray:
    """Elementwise maxima of singular values over column-permuted copies.

    Each column of the zero-filled matrix is shuffled independently (zeros
    included) in every resample; resample ``b`` uses its own seeded generator.
    """
    if n_perm < 1:
        raise ValueError("n_perm must be >= 1")
    z = w.zero_filled() if isinstance(w, MaskedMatrix) else np.asarray(w, dtype=float)
    best = None
    for rng in _generators(seed, 0, n_perm):
        sv = np.linalg.svd(rng.permuted(z, axis=0), compute_uv=False)
        best = sv if best is None else np.maximum(best, sv)
    return best


def deflated_parallel_analysis(z: np.ndarray, r_max: int, n_perm: int = PA_PERMUTATIONS,
                               seed: int = 0) -> tuple[int, np.ndarray]:
    """Sequential permutation test with deflation.

    Rank ``k`` is accepted when the ``k``-th singular value of ``z`` exceeds the
    largest top singular value over column permutations of ``z`` with its first
    ``k-1`` principal components removed. Stops at the first rejection.
    """
    u, s, vt = np.linalg.svd(z, full_matrices=False)
    floor = _PA_FLOOR * max(float(s[0]), np.finfo(float).tiny)
    thresholds = []
    k = 0
    while k < r_max:
        resid = z - (u[:, :k] * s[:k]) @ vt[:k]
        thr = max(_top_sv(rng.permuted(resid, axis=0)) for rng in _generators(seed, k + 1, n_perm))
        thresholds.append(thr)
        if s[k] > max(thr, floor):
            k += 1
        else:
            break
    return k, np.asarray(thresholds)


def select(inp: SelectionInput) -> SelectionResult:
    """Run all six estimators on ``inp.w``."""
    z = inp.w.zero_filled()
    if not np.all(np.isfinite(z)):
        raise SpectrumFailure("matrix has non-finite entries")
    n_units, n_periods = z.shape
    mu = spectrum(z)
    r_max = inp.r_max
    pa, deflated = deflated_parallel_analysis(z, r_max, inp.pa_permutations, inp.pa_seed)
    perm = permuted_spectrum(z, inp.pa_permutations, inp.pa_seed)
    return SelectionResult(
        ic2=ic2(mu, n_units, n_periods, r_max),
        bic3=bic3(mu, n_units, n_periods, r_max),
        er=eigenvalue_ratio(mu, r_max),
        gr=growth_ratio(mu, r_max),
        ed=edge_distribution(mu, r_max),
        pa=pa,
        eigenvalue_spectrum=mu,
        pa_thresholds=perm ** 2 / z.size,
        pa_deflated_thresholds=deflated ** 2 / z.size,
    )
