"""Command-line interface: ``ifepanel {estimate,select-factors,nn-estimate,simulate}``.

Options may come from an INI file (``--config``, section ``[run]``); flags given
on the command line win. Every run writes ``manifest.ini`` into the output
directory, which can be fed back through ``--config`` to repeat the run.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import DataError, IfeError, NoConvergence, NumericalError, StudyFailed
from .estimator import IfeOptions, fit
from .factor_count import (ESTIMATORS, PA_PERMUTATIONS, SelectionInput, default_rbar,
                           permuted_spectrum, select)
from .inference import BiasBandwidths, infer, long_run_effect, rule_of_thumb_m
from .nuclear import NN_MAX_ITER, POST_ITERS, fit_nuclear, post_estimate
from .panel import MaskedMatrix, PanelData, read_csv, two_way_within
from .simulation import DgpConfig, StudyOptions, run_study, summary_json, table_csv

logger = logging.getLogger("ifepanel")

EXIT_OK, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3
SPECTRUM_LENGTH = 20
LAG_PREFIX = "y_lag"


def build_lags(d: PanelData, p: int) -> PanelData:
    """Append ``y_{t-1}, .., y_{t-p}`` as regressors.

    Cell ``(i, t)`` stays in the sample only if ``(i, t-1), .., (i, t-p)`` are
    all observed; lags follow the dense (sorted) period index.
    """
    if p < 0:
        raise DataError("number of lags must be non-negative")
    if p == 0:
        return d
    n_units, n_periods = d.mask.shape
    if p >= n_periods:
        raise DataError(f"{p} lags need more than {n_periods} periods")
    lags = np.zeros((n_units, n_periods, p))
    keep = d.mask.copy()
    keep[:, :p] = False
    for j in range(1, p + 1):
        lags[:, j:, j - 1] = d.y[:, :-j]
        keep[:, j:] &= d.mask[:, :-j]
    names = tuple(d.regressor_names) + tuple(f"{LAG_PREFIX}{j}" for j in range(1, p + 1))
    if keep.sum() <= len(names):
        raise DataError("too few observations remain after building lags")
    return PanelData.from_arrays(d.y, np.concatenate([d.x, lags], axis=2), keep,
                                 d.unit_keys, d.period_keys, names)


def prepare_panel(args) -> PanelData:
    try:
        d = read_csv(args.input)
    except OSError as exc:
        raise DataError(f"cannot read {args.input}: {exc}") from exc
    d = build_lags(d, args.lags)
    if args.two_way:
        d = two_way_within(d)
    return d


def _lag_indices(d: PanelData):
    lag_idx = [k for k, n in enumerate(d.regressor_names) if n.startswith(LAG_PREFIX)]
    other = [k for k in range(d.n_regressors) if k not in lag_idx]
    return other, lag_idx


def _bandwidths(args, d: PanelData) -> BiasBandwidths:
    m = args.M if args.M is not None else rule_of_thumb_m(d.t_bar)
    return BiasBandwidths(args.L, m)


def _panel_info(d: PanelData) -> dict:
    return {"n_units": d.n_units, "n_periods": d.n_periods, "n_obs": d.n_obs,
            "regressors": list(d.regressor_names), "construction": list(d.construction_report)}


def _fit_info(res) -> dict:
    return {"r": res.r, "converged": bool(res.converged), "objective": res.objective,
            "sigma2": res.sigma2, "outer_iterations": res.outer_iterations}


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_coef_table(path: Path, report) -> None:
    lines = ["name,beta_hat,b_hat,c1_hat,c2_hat,beta_tilde,std_error,z"]
    for k, name in enumerate(report.names):
        vals = (report.beta_hat[k], report.b_hat[k], report.c1_hat[k], report.c2_hat[k],
                report.beta_tilde[k], report.std_errors[k], report.z_stats[k])
        lines.append(",".join([name, *(f"{v:.10g}" for v in vals)]))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _inference_payload(res, d: PanelData, args) -> tuple[dict, object]:
    report = infer(res, d, _bandwidths(args, d), args.vcov, tuple(args.corrections),
                   dof_adjust=args.dof_adjust, additive_effects=args.two_way)
    payload = report.to_dict()
    other, lag_idx = _lag_indices(d)
    if lag_idx:
        payload["persistence"] = float(sum(report.beta_tilde[j] for j in lag_idx))
        payload["long_run"] = {}
        for k in other:
            phi, se = long_run_effect(k, lag_idx, report)
            payload["long_run"][d.regressor_names[k]] = {"estimate": phi, "std_error": se}
    return payload, report


def cmd_estimate(args) -> int:
    d = prepare_panel(args)
    opts = IfeOptions(r=args.r, n_starts=args.n_starts, rng_seed=args.seed, raise_on_fail=True)
    out = Path(args.output)
    payload = {"command": "estimate", "panel": _panel_info(d)}
    try:
        res = fit(d, opts)
    except NoConvergence as exc:
        res = exc.partial
        payload["fit"] = _fit_info(res)
        payload["error"] = str(exc)
        try:
            payload["inference"], report = _inference_payload(res, d, args)
            _write_coef_table(out / "table.csv", report)
        except IfeError as inner:
            payload["inference_error"] = str(inner)
        _write_json(out / "report.json", payload)
        raise
    payload["fit"] = _fit_info(res)
    payload["inference"], report = _inference_payload(res, d, args)
    _write_json(out / "report.json", payload)
    _write_coef_table(out / "table.csv", report)
    return EXIT_OK


def _write_spectrum(path: Path, w: np.ndarray, n_perm: int, seed: int) -> None:
    scale = math.sqrt(w.size)
    sv = np.linalg.svd(w, compute_uv=False) / scale
    perm = permuted_spectrum(w, n_perm, seed) / scale
    n = min(SPECTRUM_LENGTH, min(w.shape))
    lines = ["rank,singular_value,permuted_max"]
    lines += [f"{k + 1},{sv[k]:.10g},{perm[k]:.10g}" for k in range(n)]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _factor_matrix(d: PanelData, beta: np.ndarray, form: str) -> np.ndarray:
    fitted = d.x @ beta
    z = d.y - fitted if form == "residual" else fitted
    return np.where(d.mask, z, 0.0)


def _selection_payload(sel) -> dict:
    return {"estimates": sel.as_dict(),
            "eigenvalue_spectrum": sel.eigenvalue_spectrum.tolist(),
            "pa_thresholds": sel.pa_thresholds.tolist(),
            "pa_deflated_thresholds": sel.pa_deflated_thresholds.tolist()}


def cmd_select_factors(args) -> int:
    d = prepare_panel(args)
    r_max = args.r_max if args.r_max is not None else default_rbar(d.n_bar, d.t_bar)
    res = fit(d, IfeOptions(r=r_max, n_starts=args.n_starts, rng_seed=args.seed))
    w = _factor_matrix(d, res.beta, args.w_form)
    sel = select(SelectionInput(MaskedMatrix(w, d.mask), r_max, args.pa_permutations, args.seed))
    out = Path(args.output)
    payload = {"command": "select-factors", "panel": _panel_info(d), "r_max": r_max,
               "w_form": args.w_form, "fit": _fit_info(res), "beta_hat": res.beta.tolist(),
               **_selection_payload(sel)}
    _write_json(out / "report.json", payload)
    lines = ["estimator,r_hat"] + [f"{k},{v}" for k, v in sel.as_dict().items()]
    (out / "table.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    _write_spectrum(out / "spectrum.csv", w, args.pa_permutations, args.seed)
    return EXIT_OK if res.converged else EXIT_NUMERIC


def cmd_nn_estimate(args) -> int:
    d = prepare_panel(args)
    nn = fit_nuclear(d, max_iter=args.nn_max_iter)
    payload = {"command": "nn-estimate", "panel": _panel_info(d),
               "nuclear": {"beta_star": nn.beta_star.tolist(), "objective": nn.nuclear_objective,
                           "converged": nn.converged, "iterations": nn.iterations}}
    if args.r is not None and not args.select_rank:
        r = args.r
    else:
        w = _factor_matrix(d, nn.beta_star, "residual")
        r_max = args.r_max if args.r_max is not None else default_rbar(d.n_bar, d.t_bar)
        sel = select(SelectionInput(MaskedMatrix(w, d.mask), r_max, args.pa_permutations, args.seed))
        r = sel.as_dict()[args.estimator]
        payload["selection"] = {"estimator": args.estimator, "r_max": r_max, **_selection_payload(sel)}
    res = post_estimate(nn, d, r, args.post_iters)
    payload["fit"] = _fit_info(res)
    payload["inference"], report = _inference_payload(res, d, args)
    out = Path(args.output)
    _write_json(out / "report.json", payload)
    _write_coef_table(out / "table.csv", report)
    return EXIT_OK if nn.converged else EXIT_NUMERIC


def cmd_simulate(args) -> int:
    opts = StudyOptions(select_factors=args.select, rbar=args.r_max,
                        pa_permutations=args.pa_permutations, l=args.L, m=args.M,
                        workers=args.workers)
    results = []
    status = EXIT_OK
    for nbar in args.nbar:
        for tbar in args.tbar:
            for psi in args.psi:
                for pattern in args.pattern:
                    for config in args.error_config:
                        cfg = DgpConfig(nbar, tbar, psi, pattern, config, seed=args.seed)
                        try:
                            results.append((cfg, run_study(cfg, args.reps, opts)))
                        except StudyFailed as exc:
                            logger.error("cell %s failed: %s", cfg, exc)
                            status = EXIT_NUMERIC
    out = Path(args.output)
    (out / "table.csv").write_text(table_csv(results), encoding="utf-8")
    (out / "summary.json").write_text(summary_json(results, {"reps": args.reps, "seed": args.seed}),
                                      encoding="utf-8")
    return status


# ----------------------------------------------------------------------------- parsing

def _list_of(kind):
    def parse(text):
        if isinstance(text, list):
            return text
        return [kind(v.strip()) for v in str(text).split(",") if v.strip()]
    parse.__name__ = f"list_of_{kind.__name__}"
    return parse


def _optional_int(text):
    return None if str(text).strip().lower() in ("", "none", "auto") else int(text)


def _add_common(p: argparse.ArgumentParser, needs_input: bool = True) -> None:
    p.add_argument("--config", help="INI file with a [run] section; flags override it")
    p.add_argument("--output", "-o", default=".", help="output directory")
    p.add_argument("--seed", type=int, default=0)
    if needs_input:
        p.add_argument("--input", "-i", help="long CSV: unit,period,y,x1,...")
        p.add_argument("--lags", type=int, default=0, help="number of lagged outcomes p")
        p.add_argument("--two-way", dest="two_way", action=argparse.BooleanOptionalAction,
                       default=True, help="remove additive unit and period effects first")
        p.add_argument("--n-starts", dest="n_starts", type=int, default=1)
        p.add_argument("--pa-permutations", dest="pa_permutations", type=int, default=PA_PERMUTATIONS)


def _add_inference(p: argparse.ArgumentParser) -> None:
    p.add_argument("--L", dest="L", type=int, default=5, help="lags for the predetermined-regressor bias")
    p.add_argument("--M", dest="M", type=_optional_int, default=None,
                   help="lags for the serial-correlation bias (default: rule of thumb)")
    p.add_argument("--vcov", choices=("homoskedastic", "robust", "clustered"), default="clustered")
    p.add_argument("--corrections", type=_list_of(str), default=["b", "c1", "c2"],
                   help="comma-separated subset of b,c1,c2 (empty for none)")
    p.add_argument("--dof-adjust", dest="dof_adjust", action=argparse.BooleanOptionalAction, default=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ifepanel", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", help="fit with r factors, bias-correct and report")
    _add_common(est)
    est.add_argument("--r", type=int, default=1)
    _add_inference(est)
    est.set_defaults(func=cmd_estimate)

    sel = sub.add_parser("select-factors", help="estimate the number of factors")
    _add_common(sel)
    sel.add_argument("--r-max", dest="r_max", type=_optional_int, default=None)
    sel.add_argument("--w-form", dest="w_form", choices=("residual", "fitted"), default="residual",
                     help="pure factor matrix: y minus fitted regressors (residual) or the fitted part")
    sel.set_defaults(func=cmd_select_factors)

    nn = sub.add_parser("nn-estimate", help="nuclear-norm estimate plus post-estimation")
    _add_common(nn)
    nn.add_argument("--r", type=_optional_int, default=None, help="rank for post-estimation")
    nn.add_argument("--select-rank", dest="select_rank", action="store_true",
                    help="choose the rank by --estimator even if --r is set")
    nn.add_argument("--estimator", choices=ESTIMATORS, default="ed")
    nn.add_argument("--r-max", dest="r_max", type=_optional_int, default=None)
    nn.add_argument("--post-iters", dest="post_iters", type=int, default=POST_ITERS)
    nn.add_argument("--nn-max-iter", dest="nn_max_iter", type=int, default=NN_MAX_ITER)
    _add_inference(nn)
    nn.set_defaults(func=cmd_nn_estimate)

    sim = sub.add_parser("simulate", help="Monte Carlo grid")
    _add_common(sim, needs_input=False)
    sim.add_argument("--nbar", type=_list_of(int), default=[120])
    sim.add_argument("--tbar", type=_list_of(int), default=[24])
    sim.add_argument("--psi", type=_list_of(float), default=[0.0])
    sim.add_argument("--pattern", type=_list_of(str), default=["1"])
    sim.add_argument("--error-config", dest="error_config", type=_list_of(str), default=["i"])
    sim.add_argument("--reps", type=int, default=100)
    sim.add_argument("--workers", type=int, default=1)
    sim.add_argument("--select", action=argparse.BooleanOptionalAction, default=True,
                     help="also estimate the number of factors")
    sim.add_argument("--r-max", dest="r_max", type=_optional_int, default=None)
    sim.add_argument("--pa-permutations", dest="pa_permutations", type=int, default=PA_PERMUTATIONS)
    sim.add_argument("--L", dest="L", type=int, default=5)
    sim.add_argument("--M", dest="M", type=_optional_int, default=None)
    sim.set_defaults(func=cmd_simulate)
    return parser


def _subparser(parser, command):
    for action in parser._subparsers._group_actions:
        if command in action.choices:
            return action.choices[command]
    raise KeyError(command)


def _apply_config_file(parser, sub, argv) -> None:
    """Install values from ``--config`` as subcommand defaults."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    cp = configparser.ConfigParser()
    cp.optionxform = str
    if not cp.read(known.config, encoding="utf-8"):
        raise DataError(f"cannot read config file {known.config}")
    if not cp.has_section("run"):
        raise DataError(f"{known.config}: missing [run] section")
    actions = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, raw in cp.items("run"):
        dest = key.replace("-", "_")
        if dest in ("command", "config", "version"):
            continue
        action = actions.get(dest)
        if action is None:
            raise DataError(f"{known.config}: unknown option {key!r}")
        if isinstance(action, (argparse.BooleanOptionalAction, argparse._StoreTrueAction)):
            defaults[dest] = cp.getboolean("run", key)
        elif action.type is not None:
            defaults[dest] = action.type(raw)
        else:
            defaults[dest] = raw
    sub.set_defaults(**defaults)


def _manifest_value(v) -> str:
    if isinstance(v, (list, tuple)):
        return ",".join(str(x) for x in v)
    return "none" if v is None else str(v)


def write_manifest(args, path: Path) -> None:
    cp = configparser.ConfigParser()
    cp.optionxform = str
    skip = {"func", "config", "log_level"}
    cp["run"] = {"command": args.command}
    for key in sorted(vars(args)):
        if key in skip or key == "command":
            continue
        cp["run"][key] = _manifest_value(getattr(args, key))
    cp["library"] = {"ifepanel": __version__, "numpy": np.__version__}
    with open(path, "w", encoding="utf-8") as fh:
        cp.write(fh)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    command = next((a for a in argv if not a.startswith("-")), None)
    try:
        if command is not None:
            try:
                sub = _subparser(parser, command)
            except KeyError:
                sub = None
            if sub is not None:
                _apply_config_file(parser, sub, argv)
        args = parser.parse_args(argv)
        logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                            format="%(levelname)s %(name)s: %(message)s")
        if getattr(args, "input", "") is None:
            raise DataError("--input is required")
        out = Path(args.output)
        out.mkdir(parents=True, exist_ok=True)
        write_manifest(args, out / "manifest.ini")
        return args.func(args)
    except DataError as exc:
        print(f"ifepanel: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"ifepanel: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"ifepanel: invalid input: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
