"""Unbalanced panel container, masking operators and the two-way within transform.

A panel is stored densely: ``y`` is ``(N, T)``, ``x`` is ``(N, T, K)`` and
``mask`` marks the observed cells. Unobserved cells of ``y`` and ``x`` always
hold zeros, so every array already equals its masked projection.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Sequence

import numpy as np

from .errors import DataError, DuplicateCell, NoConvergence, NonFinite, RaggedRow, ShapeMismatch

logger = logging.getLogger(__name__)

WITHIN_TOL = 1e-10
WITHIN_MAX_ITER = 100_000


@dataclass(frozen=True)
class ObsIndex:
    unit: int
    period: int


@dataclass(frozen=True)
class MaskedMatrix:
    """An ``N x T`` matrix together with its observation mask."""

    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        if self.values.shape != self.mask.shape:
            raise ShapeMismatch(f"values {self.values.shape} vs mask {self.mask.shape}")

    @property
    def shape(self):
        return self.values.shape

    def zero_filled(self) -> np.ndarray:
        return np.where(self.mask, self.values, 0.0)


@dataclass(frozen=True, eq=False)
class PanelData:
    """Immutable (possibly unbalanced) panel.

    Attributes
    ----------
    y : ndarray, shape (N, T)
        Outcome, zero where unobserved.
    x : ndarray, shape (N, T, K)
        Regressors, zero where unobserved.
    mask : ndarray of bool, shape (N, T)
        True where ``(i, t)`` is observed.
    unit_keys, period_keys : tuple
        Original labels of the dense unit and period indices.
    regressor_names : tuple of str
    construction_report : tuple of str
        Warnings raised while building the panel (dropped rows/columns, thin units).
    """

    y: np.ndarray
    x: np.ndarray
    mask: np.ndarray
    unit_keys: tuple = ()
    period_keys: tuple = ()
    regressor_names: tuple = ()
    construction_report: tuple = field(default=())

    def __post_init__(self):
        for arr in (self.y, self.x, self.mask):
            arr.setflags(write=False)

    @property
    def n_units(self) -> int:
        return self.mask.shape[0]

    @property
    def n_periods(self) -> int:
        return self.mask.shape[1]

    @property
    def n_obs(self) -> int:
        return int(self.mask.sum())

    @property
    def n_regressors(self) -> int:
        return self.x.shape[2]

    @property
    def is_balanced(self) -> bool:
        return bool(self.mask.all())

    @property
    def n_bar(self) -> float:
        """Average cross-section size ``n / T``."""
        return self.n_obs / self.n_periods

    @property
    def t_bar(self) -> float:
        """Average time-series length ``n / N``."""
        return self.n_obs / self.n_units

    @property
    def observed(self) -> list[ObsIndex]:
        return [ObsIndex(int(i), int(t)) for i, t in zip(*np.nonzero(self.mask))]

    @property
    def unit_rows(self) -> list[np.ndarray]:
        """Observed periods of each unit."""
        return [np.flatnonzero(row) for row in self.mask]

    @property
    def period_columns(self) -> list[np.ndarray]:
        """Observed units of each period."""
        return [np.flatnonzero(col) for col in self.mask.T]

    def y_obs(self) -> np.ndarray:
        return self.y[self.mask]

    def x_obs(self) -> np.ndarray:
        return self.x[self.mask]

    def replace(self, y=None, x=None, regressor_names=None) -> "PanelData":
        """Copy with new outcome and/or regressors on the same observation set."""
        y = self.y if y is None else np.where(self.mask, y, 0.0)
        x = self.x if x is None else np.where(self.mask[:, :, None], x, 0.0)
        names = self.regressor_names if regressor_names is None else tuple(regressor_names)
        return PanelData(y, x, self.mask.copy(), self.unit_keys, self.period_keys, names,
                         self.construction_report)

    @classmethod
    def from_arrays(cls, y, x, mask=None, unit_keys=None, period_keys=None,
                    regressor_names=None) -> "PanelData":
        """Build a panel from dense arrays.

        Units or periods with no observation are dropped (with a warning recorded
        in ``construction_report``) and the remaining ones renumbered.
        """
        y = np.asarray(y, dtype=float)
        x = np.asarray(x, dtype=float)
        if x.ndim == 2:
            x = x[:, :, None]
        if y.ndim != 2 or x.ndim != 3 or x.shape[:2] != y.shape:
            raise ShapeMismatch(f"y {y.shape} and x {x.shape} are not compatible")
        mask = np.ones(y.shape, bool) if mask is None else np.asarray(mask, bool)
        if mask.shape != y.shape:
            raise ShapeMismatch(f"mask {mask.shape} vs y {y.shape}")
        if not (np.isfinite(y[mask]).all() and np.isfinite(x[mask]).all()):
            raise NonFinite("non-finite value in observed cells")
        unit_keys = tuple(range(y.shape[0])) if unit_keys is None else tuple(unit_keys)
        period_keys = tuple(range(y.shape[1])) if period_keys is None else tuple(period_keys)
        names = (tuple(f"x{k + 1}" for k in range(x.shape[2]))
                 if regressor_names is None else tuple(regressor_names))

        report = []
        keep_i = mask.any(axis=1)
        keep_t = mask.any(axis=0)
        if not keep_i.all() or not keep_t.all():
            msg = (f"dropped {int((~keep_i).sum())} empty units and "
                   f"{int((~keep_t).sum())} empty periods")
            logger.warning(msg)
            report.append(msg)
            mask = mask[keep_i][:, keep_t]
            y, x = y[keep_i][:, keep_t], x[keep_i][:, keep_t]
            unit_keys = tuple(k for k, keep in zip(unit_keys, keep_i) if keep)
            period_keys = tuple(k for k, keep in zip(period_keys, keep_t) if keep)
        if mask.size == 0:
            raise DataError("panel has no observations")

        y = np.where(mask, y, 0.0)
        x = np.where(mask[:, :, None], x, 0.0)
        return cls(y, x, mask.copy(), unit_keys, period_keys, names, tuple(report))


def _sort_keys(keys: Iterable[Hashable]) -> list:
    keys = list(keys)
    try:
        return sorted(keys)
    except TypeError:
        return sorted(keys, key=repr)


def from_long_records(records: Sequence[tuple], regressor_names=None) -> PanelData:
    """Build a panel from ``(unit, period, y, x)`` records.

    Units and periods are indexed densely in sorted key order, so the result does
    not depend on record order.
    """
    records = list(records)
    if not records:
        raise DataError("no records")
    k = None
    seen = set()
    rows = []
    for rec in records:
        unit, period, yv, xv = rec[0], rec[1], rec[2], rec[3]
        xv = np.atleast_1d(np.asarray(xv, dtype=float))
        if k is None:
            k = xv.size
        elif xv.size != k:
            raise RaggedRow(f"record {unit!r},{period!r} has {xv.size} regressors, expected {k}")
        if (unit, period) in seen:
            raise DuplicateCell(f"duplicate cell ({unit!r}, {period!r})")
        seen.add((unit, period))
        yv = float(yv)
        if not math.isfinite(yv) or not np.isfinite(xv).all():
            raise NonFinite(f"non-finite value at ({unit!r}, {period!r})")
        rows.append((unit, period, yv, xv))

    units = _sort_keys({r[0] for r in rows})
    periods = _sort_keys({r[1] for r in rows})
    ui = {u: i for i, u in enumerate(units)}
    pt = {p: t for t, p in enumerate(periods)}
    n_units, n_periods = len(units), len(periods)
    y = np.zeros((n_units, n_periods))
    x = np.zeros((n_units, n_periods, k))
    mask = np.zeros((n_units, n_periods), bool)
    for unit, period, yv, xv in rows:
        i, t = ui[unit], pt[period]
        y[i, t] = yv
        x[i, t] = xv
        mask[i, t] = True
    return PanelData.from_arrays(y, x, mask, units, periods, regressor_names)


def _parse_key(text: str):
    try:
        return int(text)
    except ValueError:
        try:
            return float(text)
        except ValueError:
            return text


def read_csv(path) -> PanelData:
    """Read the long CSV format ``unit,period,y,x1,...,xK``.

    Missing cells are absent rows; there is no NA sentinel.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if len(header) < 4 or header[:3] != ["unit", "period", "y"]:
            raise DataError(f"{path}: header must start with unit,period,y and name at least one regressor")
        names = header[3:]
        records = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise RaggedRow(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                values = [float(c) for c in row[2:]]
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            records.append((_parse_key(row[0].strip()), _parse_key(row[1].strip()),
                            values[0], values[1:]))
    return from_long_records(records, regressor_names=names)


def write_csv(panel: PanelData, path) -> None:
    names = panel.regressor_names or tuple(f"x{k + 1}" for k in range(panel.n_regressors))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["unit", "period", "y", *names])
        for i, t in zip(*np.nonzero(panel.mask)):
            writer.writerow([panel.unit_keys[i], panel.period_keys[t], repr(float(panel.y[i, t])),
                             *(repr(float(v)) for v in panel.x[i, t])])


def _mask_of(d) -> np.ndarray:
    return d.mask if hasattr(d, "mask") else np.asarray(d, bool)


def projection_d(m: np.ndarray, d) -> MaskedMatrix:
    """Zero out the unobserved cells of ``m``."""
    mask = _mask_of(d)
    m = np.asarray(m, dtype=float)
    if m.shape != mask.shape:
        raise ShapeMismatch(f"matrix {m.shape} vs panel {mask.shape}")
    return MaskedMatrix(np.where(mask, m, 0.0), mask)


def projection_d_perp(m: np.ndarray, d) -> MaskedMatrix:
    """Zero out the observed cells of ``m``."""
    mask = _mask_of(d)
    m = np.asarray(m, dtype=float)
    if m.shape != mask.shape:
        raise ShapeMismatch(f"matrix {m.shape} vs panel {mask.shape}")
    return MaskedMatrix(np.where(mask, 0.0, m), ~mask)


def demean_two_way(z: np.ndarray, mask: np.ndarray, tol: float = WITHIN_TOL,
                   max_iter: int = WITHIN_MAX_ITER) -> np.ndarray:
    """Residuals of ``z`` on unit and period dummies over the observed cells.

    ``z`` is ``(N, T)`` or ``(N, T, m)``; columns along the last axis are handled
    jointly. Alternates unit and period demeaning until the largest entry change
    in a sweep falls below ``tol``.
    """
    squeeze = z.ndim == 2
    z = np.array(z[:, :, None] if squeeze else z, dtype=float)
    w = mask[:, :, None].astype(float)
    z *= w
    row_n = w.sum(axis=1, keepdims=True)
    col_n = w.sum(axis=0, keepdims=True)
    for _ in range(max_iter):
        a = z.sum(axis=1, keepdims=True) / row_n
        z -= a * w
        b = z.sum(axis=0, keepdims=True) / col_n
        z -= b * w
        change = max(np.abs(a).max(), np.abs(b).max())
        if change < tol:
            break
    else:
        raise NoConvergence(f"two-way demeaning did not reach {tol} in {max_iter} sweeps",
                            partial=z[:, :, 0] if squeeze else z)
    return z[:, :, 0] if squeeze else z


def two_way_within(d: PanelData, tol: float = WITHIN_TOL, max_iter: int = WITHIN_MAX_ITER) -> PanelData:
    """Project additive unit and period effects out of ``y`` and every regressor."""
    stacked = np.concatenate([d.y[:, :, None], d.x], axis=2)
    out = demean_two_way(stacked, d.mask, tol, max_iter)
    return d.replace(y=out[:, :, 0], x=out[:, :, 1:])
