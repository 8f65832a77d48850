"""Monte Carlo design with two factors, four error configurations and three
patterns of randomly missing cells.

Every replication draws from its own counter-based generator derived from
``(seed, rep)``, so results do not depend on how replications are scheduled.
Data and deletion pattern use separate child streams: the same ``(seed, rep)``
yields identical complete panels under all three patterns.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.signal import lfilter

from .errors import IfeError, PatternInfeasible, StudyFailed
from .estimator import IfeOptions, fit
from .factor_count import PA_PERMUTATIONS, SelectionInput, default_rbar, select
from .inference import BiasBandwidths, VcovKind, infer, rule_of_thumb_m, z_test
from .panel import MaskedMatrix, ObsIndex, PanelData

logger = logging.getLogger(__name__)

R_TRUE = 2
BURN_IN = 1000
AR_COEF = 0.5
P1_MAX_ATTEMPTS = 1000
TABLE_HEADER = ("nbar", "tbar", "psi", "pattern", "config", "bias", "ratio", "size",
                "ic2", "bic3", "er", "gr", "ed", "pa", "reps")
ESTIMATORS = ("ic2", "bic3", "er", "gr", "ed", "pa")


class ErrorConfig(str, enum.Enum):
    HOMOSKEDASTIC = "i"
    FAT_TAILS = "ii"
    CROSS_HET = "iii"
    CROSS_HET_SERIAL = "iv"

    @property
    def corrections(self) -> tuple:
        return {"i": (), "ii": (), "iii": ("b",), "iv": ("b", "c2")}[self.value]

    @property
    def vcov_kind(self) -> VcovKind:
        return {"i": VcovKind.HOMOSKEDASTIC, "ii": VcovKind.HOMOSKEDASTIC,
                "iii": VcovKind.HETEROSKEDASTIC_ROBUST,
                "iv": VcovKind.CLUSTERED_BY_UNIT}[self.value]


class Pattern(str, enum.Enum):
    P1 = "1"  # cells missing uniformly at random
    P2 = "2"  # a block of units observed over the first part of the sample only
    P3 = "3"  # the same block with a randomly placed observation window


@dataclass(frozen=True)
class DgpConfig:
    n_bar: int
    t_bar: int
    psi: float = 0.0
    pattern: Pattern = Pattern.P1
    error_config: ErrorConfig = ErrorConfig.HOMOSKEDASTIC
    beta_true: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.psi < 1.0:
            raise ValueError("psi must lie in [0, 1)")
        if self.n_bar < 2 or self.t_bar < 2:
            raise ValueError("n_bar and t_bar must be >= 2")
        object.__setattr__(self, "pattern", Pattern(self.pattern))
        object.__setattr__(self, "error_config", ErrorConfig(self.error_config))

    @property
    def n_units(self) -> int:
        return int(round(self.n_bar / (1.0 - self.psi)))

    @property
    def n_periods(self) -> int:
        return int(round(self.t_bar / (1.0 - self.psi)))


@dataclass(frozen=True, eq=False)
class GroundTruth:
    beta: float
    loadings: np.ndarray
    factors: np.ndarray
    errors: np.ndarray
    dropped: frozenset


def _rep_generators(seed: int, rep: int):
    data_ss, pattern_ss = np.random.SeedSequence(seed, spawn_key=(rep,)).spawn(2)
    return np.random.Generator(np.random.Philox(data_ss)), np.random.Generator(np.random.Philox(pattern_ss))


def draw_errors(config: ErrorConfig | str, n_units: int, n_periods: int, rng: np.random.Generator,
                burn_in: int = BURN_IN) -> np.ndarray:
    """Idiosyncratic errors with variance 4 under every configuration."""
    config = ErrorConfig(config)
    # units 1, 3, 5, ... in one-based numbering are the low-variance ones
    odd = (np.arange(n_units) % 2 == 0)[:, None]
    if config is ErrorConfig.HOMOSKEDASTIC:
        return 2.0 * rng.standard_normal((n_units, n_periods))
    if config is ErrorConfig.FAT_TAILS:
        return math.sqrt(12.0 / 5.0) * rng.standard_t(5, (n_units, n_periods))
    if config is ErrorConfig.CROSS_HET:
        return np.where(odd, math.sqrt(2.0), math.sqrt(6.0)) * rng.standard_normal((n_units, n_periods))
    sd = np.where(odd, math.sqrt(1.5), math.sqrt(4.5))
    innov = sd * rng.standard_normal((n_units, n_periods + burn_in))
    return lfilter([1.0], [1.0, -AR_COEF], innov, axis=1)[:, burn_in:]


def _p1_mask(n_units, n_periods, n_drop, rng):
    for _ in range(P1_MAX_ATTEMPTS):
        mask = np.ones(n_units * n_periods, bool)
        mask[rng.choice(n_units * n_periods, n_drop, replace=False)] = False
        mask = mask.reshape(n_units, n_periods)
        if mask.any(axis=1).all() and mask.any(axis=0).all():
            return mask
    raise PatternInfeasible(f"no pattern-1 draw kept every row and column after {P1_MAX_ATTEMPTS} attempts")


def pattern_mask(pattern: Pattern | str, psi: float, n_units: int, n_periods: int,
                 rng: np.random.Generator | int = 0) -> np.ndarray:
    """Observed-cell mask with exactly ``round(N T psi)`` missing cells."""
    pattern = Pattern(pattern)
    if not isinstance(rng, np.random.Generator):
        rng = np.random.Generator(np.random.Philox(rng))
    n_drop = int(round(n_units * n_periods * psi))
    mask = np.ones((n_units, n_periods), bool)
    if n_drop == 0:
        return mask
    if pattern is Pattern.P1:
        return _p1_mask(n_units, n_periods, n_drop, rng)
    n_block = int(round(2.0 * psi * n_units))
    if n_block > n_units or n_block == 0:
        raise PatternInfeasible(f"{n_block} block units for N = {n_units}")
    per_unit, extra = divmod(n_drop, n_block)
    if per_unit + (extra > 0) >= n_periods:
        raise PatternInfeasible("block units would lose all periods")
    units = rng.choice(n_units, n_block, replace=False)
    for j, i in enumerate(units):
        drop = per_unit + (j < extra)
        keep = n_periods - drop
        start = 0 if pattern is Pattern.P2 else int(rng.integers(0, drop + 1))
        mask[i] = False
        mask[i, start:start + keep] = True
    if not mask.any(axis=0).all():
        raise PatternInfeasible("pattern leaves a period without observations")
    return mask


def apply_pattern(pattern: Pattern | str, psi: float, n_units: int, n_periods: int,
                  seed: np.random.Generator | int = 0) -> frozenset:
    """Cells to delete, as a set of :class:`ObsIndex`."""
    mask = pattern_mask(pattern, psi, n_units, n_periods, seed)
    return frozenset(ObsIndex(int(i), int(t)) for i, t in zip(*np.nonzero(~mask)))


def generate(config: DgpConfig, rep: int = 0) -> tuple[PanelData, GroundTruth]:
    """Draw one panel from the design and delete cells per ``config.pattern``."""
    data_rng, pattern_rng = _rep_generators(config.seed, rep)
    n_units, n_periods = config.n_units, config.n_periods
    f = data_rng.standard_normal((n_periods + 1, R_TRUE))  # row 0 is the pre-sample draw
    lam = data_rng.normal(1.0, 1.0, (n_units, R_TRUE))
    chi = data_rng.normal(1.0, 1.0, (n_units, R_TRUE))
    w = data_rng.standard_normal((n_units, n_periods))
    e = draw_errors(config.error_config, n_units, n_periods, data_rng)
    x = 1.0 + (lam + chi) @ (f[1:] + f[:-1]).T + w
    y = config.beta_true * x + lam @ f[1:].T + e
    mask = pattern_mask(config.pattern, config.psi, n_units, n_periods, pattern_rng)
    panel = PanelData.from_arrays(y, x[:, :, None], mask)
    dropped = frozenset(ObsIndex(int(i), int(t)) for i, t in zip(*np.nonzero(~mask)))
    return panel, GroundTruth(config.beta_true, lam, f[1:], e, dropped)


@dataclass(frozen=True)
class StudyOptions:
    """Estimation settings for :func:`run_study`.

    ``rbar=None`` uses :func:`default_rbar`, ``m=None`` the rule-of-thumb
    truncation lag for the average period count.
    """

    r: int = R_TRUE
    rbar: int | None = None
    select_factors: bool = True
    pa_permutations: int = PA_PERMUTATIONS
    l: int = 5
    m: int | None = None
    workers: int = 1
    max_failure_rate: float = 0.01
    ife: IfeOptions = field(default_factory=IfeOptions)


@dataclass(frozen=True)
class RepRecord:
    rep: int
    beta_hat: float = float("nan")
    beta_tilde: float = float("nan")
    se: float = float("nan")
    reject: bool = False
    r_hat: dict = field(default_factory=dict)
    error: str | None = None


@dataclass(frozen=True)
class SimMetrics:
    rel_bias_pct: float
    se_sd_ratio: float
    size_at_5pct: float
    mean_r_hat: dict
    n_reps: int
    n_failed: int = 0
    records: tuple = field(default=(), repr=False, compare=False)


def _one_rep(args) -> RepRecord:
    config, opts, rep = args
    try:
        panel, _ = generate(config, rep)
        res = fit(panel, replace(opts.ife, r=opts.r))
        m = opts.m if opts.m is not None else rule_of_thumb_m(config.t_bar)
        ec = config.error_config
        report = infer(res, panel, BiasBandwidths(opts.l, m), ec.vcov_kind, ec.corrections)
        _, reject = z_test(report, config.beta_true)[0]
        r_hat = {}
        if opts.select_factors:
            rbar = opts.rbar if opts.rbar is not None else default_rbar(config.n_bar, config.t_bar)
            res_bar = fit(panel, replace(opts.ife, r=rbar))
            w = np.where(panel.mask, panel.y - panel.x @ res_bar.beta, 0.0)
            sel = select(SelectionInput(MaskedMatrix(w, panel.mask), rbar, opts.pa_permutations,
                                        pa_seed=config.seed * 1_000_003 + rep))
            r_hat = sel.as_dict()
        return RepRecord(rep, float(res.beta[0]), float(report.beta_tilde[0]),
                         float(report.std_errors[0]), bool(reject), r_hat)
    except (IfeError, np.linalg.LinAlgError) as exc:
        return RepRecord(rep, error=f"{type(exc).__name__}: {exc}")


def _worker_init():
    from threadpoolctl import threadpool_limits
    threadpool_limits(1)


def aggregate(records, beta_true: float = 1.0) -> SimMetrics:
    """Bias (percent), se/sd ratio, size and mean rank estimates over successful reps."""
    ok = [r for r in records if r.error is None]
    n = len(ok)
    if n == 0:
        raise StudyFailed("no successful replications")
    bt = [r.beta_tilde for r in ok]
    mean_bt = math.fsum(bt) / n
    sd = math.sqrt(math.fsum((b - mean_bt) ** 2 for b in bt) / (n - 1)) if n > 1 else float("nan")
    mean_se = math.fsum(r.se for r in ok) / n
    ratio = mean_se / sd if n > 1 and sd > 0 else float("nan")
    size = sum(r.reject for r in ok) / n
    names = ok[0].r_hat.keys()
    mean_r = {k: math.fsum(r.r_hat[k] for r in ok) / n for k in names}
    return SimMetrics(100.0 * (mean_bt - beta_true) / beta_true, ratio, size, mean_r, n,
                      len(records) - n, tuple(records))


def run_study(config: DgpConfig, n_reps: int, opts: StudyOptions = StudyOptions()) -> SimMetrics:
    """Replicate generate / fit / correct / test ``n_reps`` times and summarize.

    Raises :class:`StudyFailed` when failed replications reach
    ``opts.max_failure_rate``.
    """
    if n_reps < 1:
        raise ValueError("n_reps must be >= 1")
    tasks = [(config, opts, rep) for rep in range(n_reps)]
    if opts.workers > 1:
        with ProcessPoolExecutor(opts.workers, initializer=_worker_init) as pool:
            records = list(pool.map(_one_rep, tasks, chunksize=max(1, n_reps // (4 * opts.workers))))
    else:
        records = [_one_rep(t) for t in tasks]
    n_failed = sum(r.error is not None for r in records)
    if n_failed:
        logger.warning("%d of %d replications failed", n_failed, n_reps)
    if n_failed and n_failed >= opts.max_failure_rate * n_reps:
        raise StudyFailed(f"{n_failed} of {n_reps} replications failed")
    return aggregate(records, config.beta_true)


def _fmt(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.6f}"
    return str(v)


def table_row(config: DgpConfig, metrics: SimMetrics) -> dict:
    row = {"nbar": config.n_bar, "tbar": config.t_bar, "psi": config.psi,
           "pattern": config.pattern.value, "config": config.error_config.value,
           "bias": metrics.rel_bias_pct, "ratio": metrics.se_sd_ratio, "size": metrics.size_at_5pct}
    for name in ESTIMATORS:
        row[name] = metrics.mean_r_hat.get(name, float("nan"))
    row["reps"] = metrics.n_reps
    return row


def table_csv(results) -> str:
    """CSV text with one row per ``(config, metrics)`` pair."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TABLE_HEADER)
    for config, metrics in results:
        row = table_row(config, metrics)
        writer.writerow([_fmt(row[k]) for k in TABLE_HEADER])
    return buf.getvalue()


def summary_json(results, extra: dict | None = None) -> str:
    """JSON text echoing each configuration with its metrics and failure count."""
    cells = []
    for config, metrics in results:
        cfg = asdict(config)
        cfg["pattern"] = config.pattern.value
        cfg["error_config"] = config.error_config.value
        cells.append({
            "config": cfg,
            "metrics": {"rel_bias_pct": metrics.rel_bias_pct, "se_sd_ratio": metrics.se_sd_ratio,
                        "size_at_5pct": metrics.size_at_5pct, "mean_r_hat": metrics.mean_r_hat,
                        "n_reps": metrics.n_reps, "n_failed": metrics.n_failed},
            "failures": [r.error for r in metrics.records if r.error is not None],
        })
    payload = {"cells": cells}
    if extra:
        payload.update(extra)
    return json.dumps(payload, indent=2, sort_keys=True, allow_nan=True) + "\n"
