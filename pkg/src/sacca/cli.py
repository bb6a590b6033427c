"""Command-line entry point: ``sacca <command> [options]``.

Every command writes tab-separated tables that start with ``#`` comment
lines (package version, command, config hash, seed). Floats are written at
10 significant digits, so identical configurations give byte-identical
files. Exit codes: 0 success, 2 bad input or configuration, 3 numerical
failure. Nonconvergence is a warning, counted in the printed summary.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import NumericalError, SaccaError, ValidationError

log = logging.getLogger("sacca")

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 2, 3
# flags that change where or how results are written, not what they are
NON_CONFIG = {"out", "workers", "emit_gnuplot", "figures", "func", "verbose"}


class _Counter(logging.Handler):
    def __init__(self):
        super().__init__(logging.WARNING)
        self.count = 0

    def emit(self, record):
        self.count += 1


# argument helpers -----------------------------------------------------------


def _positive(v):
    x = float(v)
    if not x > 0 or not math.isfinite(x):
        raise argparse.ArgumentTypeError(f"expected a positive number, got {v!r}")
    return x


def _bandwidth(v):
    return "auto" if v == "auto" else _positive(v)


def _floats(v):
    try:
        vals = tuple(float(s) for s in v.split(",") if s.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {v!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _screen(v):
    """``none``, ``topk``, ``topk:K``, ``fixed:T`` or ``theory:DELTA``."""
    from .pipeline import ScreenSpec

    if v == "none":
        return None
    rule, _, arg = v.partition(":")
    try:
        if rule == "topk":
            return ScreenSpec("topk", k=int(arg) if arg else None)
        if rule == "fixed":
            return ScreenSpec("fixed", t=float(arg))
        if rule == "theory":
            return ScreenSpec("theory", delta=float(arg))
    except (ValueError, ValidationError) as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None
    raise argparse.ArgumentTypeError(f"unknown screen rule {v!r}")


def _config(args):
    cfg = {}
    for k, v in sorted(vars(args).items()):
        if k in NON_CONFIG:
            continue
        if hasattr(v, "__dataclass_fields__"):
            v = {f: getattr(v, f) for f in v.__dataclass_fields__}
        cfg[k] = v
    return cfg


def _outdir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load(args):
    from .data import load_pair, preprocess

    raw = load_pair(args.x, args.y)
    return preprocess(raw, args.winsor, args.winsor_center)


def _emit(args, tsv, kind):
    from .output import write_gnuplot

    if args.emit_gnuplot:
        write_gnuplot(tsv, kind)


def _tune_spec(args, seed):
    from .pipeline import TuneSpec

    if not args.tune:
        return None
    return TuneSpec(args.perms, args.c_grid, args.gammas, args.statistic, seed)


# commands -------------------------------------------------------------------


def cmd_fit(args):
    from .artifact import build_artifact, save_artifact
    from .output import figure_tune, write_tsv
    from .pipeline import KERNEL, run_pipeline

    if args.gamma is not None and args.method not in KERNEL:
        raise ValidationError("--gamma only applies to kernel methods")
    data = _load(args)
    cfg = _config(args)
    gamma = 1e-2 if args.gamma is None else args.gamma
    bw = None if args.bandwidth == "auto" else args.bandwidth
    outcome = run_pipeline(data, args.method, args.c, gamma, bw, args.screen, _tune_spec(args, args.seed),
                           args.init, args.seed, args.workers)
    out = _outdir(args)
    art = build_artifact(outcome, data, cfg, args.seed)
    save_artifact(art, out / "model.json")
    fit = outcome.fit
    rows = []
    for view, names, cols, norms, supp in (
        ("x", data.x_names, outcome.x_cols, fit.norms_x, set(outcome.support_x.tolist())),
        ("y", data.y_names, outcome.y_cols, fit.norms_y, set(outcome.support_y.tolist())),
    ):
        if fit.method == "kcca-full":
            norms = np.full(len(cols), np.nan)
        for i, j in enumerate(cols):
            rows.append([view, int(j), names[j], norms[i], int(j in supp)])
    write_tsv(out / "norms.tsv", ["view", "index", "name", "norm", "in_support"], rows, "fit", cfg, args.seed)
    if outcome.tuning is not None:
        _write_tune(out / "tune.tsv", outcome.tuning, cfg, args.seed, args)
        if args.figures:
            figure_tune(outcome.tuning, out / "tune.png")
    print(f"method\t{fit.method}")
    print(f"objective\t{fit.objective:.10g}")
    print(f"converged\t{int(fit.converged)}")
    print(f"C\t{fit.c}\tgamma\t{fit.gamma}")
    print("support_x\t" + ",".join(data.x_names[j] for j in outcome.support_x))
    print("support_y\t" + ",".join(data.y_names[k] for k in outcome.support_y))
    return 0


def _write_tune(path, report, cfg, seed, args):
    from .output import write_tsv
    from .tuning import report_table

    header, body = report_table(report)
    write_tsv(path, header, body, "tune", cfg, seed)
    _emit(args, path, "tune")


def cmd_evaluate(args):
    from .artifact import evaluate_artifact, load_artifact
    from .data import load_pair
    from .output import write_tsv

    art = load_artifact(args.model)
    raw = load_pair(args.x, args.y)
    res = evaluate_artifact(art, raw.x, raw.y)
    cfg = _config(args)
    if args.out is not None:
        out = _outdir(args)
        rows = [[i, a, b] for i, (a, b) in enumerate(zip(res["f"], res["g"]))]
        write_tsv(out / "values.tsv", ["row", "f", "g"], rows, "evaluate", cfg, art["provenance"]["seed"])
    print(f"objective\t{res['objective']:.10g}")
    print(f"stored_objective\t{art['objective']:.10g}")
    print(f"correlation\t{res['correlation']:.10g}")
    return 0


def cmd_screen(args):
    from .output import figure_matrix, write_tsv
    from .pipeline import ScreenSpec, screen_data

    data = _load(args)
    cfg = _config(args)
    spec = ScreenSpec(args.rule, k=args.k, t=args.t, delta=args.delta, method=args.method,
                      gamma=args.gamma, calibration_perms=args.perms)
    M, sel = screen_data(data, spec, "kcca", args.seed, args.workers)
    out = _outdir(args)
    kept = set(sel.kept)
    rows = []
    for j in range(M.m.shape[0]):
        for k in range(M.m.shape[1]):
            rows.append([j, k, data.x_names[j], data.y_names[k], M.m[j, k], int((j, k) in kept)])
    tsv = write_tsv(out / "matrix.tsv", ["x_index", "y_index", "x_name", "y_name", "score", "kept"],
                    rows, "screen", cfg, args.seed)
    _emit(args, tsv, "matrix")
    sel_rows = [["x", int(j), data.x_names[j]] for j in sel.selected_x]
    sel_rows += [["y", int(k), data.y_names[k]] for k in sel.selected_y]
    write_tsv(out / "selected.tsv", ["view", "index", "name"], sel_rows, "screen", cfg, args.seed)
    if args.figures:
        figure_matrix(M.m, out / "matrix.png")
    print(f"rule\t{sel.rule}\tthreshold\t{sel.threshold:.10g}")
    print("selected_x\t" + ",".join(data.x_names[j] for j in sel.selected_x))
    print("selected_y\t" + ",".join(data.y_names[k] for k in sel.selected_y))
    return 0


def cmd_tune(args):
    from .output import figure_tune
    from .pipeline import TuneSpec, tune_data

    data = _load(args)
    cfg = _config(args)
    report = tune_data(data, args.method, TuneSpec(args.perms, args.c_grid, args.gammas, args.statistic, args.seed),
                       args.seed)
    out = _outdir(args)
    _write_tune(out / "tune.tsv", report, cfg, args.seed, args)
    if args.figures:
        figure_tune(report, out / "tune.png")
    best = report.best
    print(f"chosen_C\t{best.c}\tchosen_gamma\t{best.gamma}\tz\t{best.z:.10g}")
    return 0


def cmd_calibrate(args):
    from .output import write_tsv
    from .screening import calibrate_theory

    data = _load(args)
    cfg = _config(args)
    cal = calibrate_theory(data, args.method, args.perms, args.seed, args.gamma)
    eps = cal.epsilon(data.n, data.p1, data.p2, args.delta)
    out = _outdir(args)
    write_tsv(out / "calibration.tsv", ["sigma", "c1", "c2", "n_perms", "delta", "epsilon"],
              [[cal.sigma, cal.c1, cal.c2, cal.n_perms, args.delta, eps]], "calibrate", cfg, args.seed)
    print(f"sigma\t{cal.sigma:.10g}\tepsilon\t{eps:.10g}")
    return 0


def _scenario(args):
    from .bench import Scenario

    name = args.scenario.removeprefix("figure1-")
    p1 = args.p1 if args.p1 is not None else args.p
    p2 = args.p2 if args.p2 is not None else args.p
    defaults = {"table1": (75, 10), "table2": (150, 150)}
    n0, p0 = defaults.get(name, (150, 15))
    return Scenario(name, args.n or n0, p1 or p0, p2 or p0, args.noise, args.x_dist, args.seed)


def cmd_bench(args):
    from .bench import Pipeline, run_experiment
    from .output import figure_bench, write_tsv

    scen = _scenario(args)
    cfg = _config(args)
    gamma = 1e-2 if args.gamma is None else args.gamma
    pipe = Pipeline(args.method, args.screen, _tune_spec(args, args.seed), args.c, gamma, args.init)
    metrics = run_experiment(scen, pipe, args.repeats, args.workers)
    out = _outdir(args)
    cols = ["repeat", "seed", "test_correlation", "precision", "recall", "support_x", "support_y",
            "converged", "C", "gamma", "error"]
    rows = []
    for i, r in enumerate(metrics.records):
        rows.append([i, r.seed, r.test_correlation, r.precision, r.recall, r.support_x or "-",
                     r.support_y or "-", int(r.converged), r.chosen_c, r.chosen_gamma, r.error or "-"])
    rows.append(["all", scen.seed, metrics.test_correlation, metrics.precision, metrics.recall, "-", "-",
                 sum(r.converged for r in metrics.ok), None, None, metrics.failures])
    tsv = write_tsv(out / "bench.tsv", cols, rows, "bench", cfg, args.seed)
    _emit(args, tsv, "bench")
    if args.figures:
        figure_bench(metrics, out / "bench.png")
    print(f"scenario\t{scen.name}\tmethod\t{args.method}\trepeats\t{metrics.repeats}")
    print(f"test_correlation\t{metrics.test_correlation:.10g}")
    print(f"precision\t{metrics.precision:.10g}\trecall\t{metrics.recall:.10g}")
    return 0


def cmd_path(args):
    from .bench import generate_scenario, regularization_path
    from .data import standardize
    from .output import figure_path, write_tsv

    cfg = _config(args)
    if args.scenario:
        raw, truth = generate_scenario(_scenario(args))
        data = standardize(raw)
    elif args.x and args.y:
        data, truth = _load(args), None
    else:
        raise ValidationError("path needs --x/--y or --scenario")
    if args.c_grid:
        cs = args.c_grid
    else:
        top = math.sqrt(min(data.p1, data.p2))
        cs = tuple(np.geomspace(1.0, top, args.n_c)) if top > 1 else (1.0,)
    gamma = 1e-2 if args.gamma is None else args.gamma
    rows = regularization_path(data, args.method, cs, gamma, truth, args.seed)
    out = _outdir(args)
    names = {"x": data.x_names, "y": data.y_names}
    body = [[r.c, r.view, r.index, names[r.view][r.index], r.norm, int(r.relevant)] for r in rows]
    tsv = write_tsv(out / "path.tsv", ["C", "view", "index", "name", "norm", "relevant"], body,
                    "path", cfg, args.seed)
    _emit(args, tsv, "path")
    if args.figures:
        figure_path(rows, out / "path.png")
    print(f"grid\t{','.join(format(c, '.6g') for c in cs)}\trows\t{len(rows)}")
    return 0


def cmd_generate(args):
    from .bench import generate_scenario
    from .data import write_csv_table
    from .output import write_tsv

    scen = _scenario(args)
    raw, truth = generate_scenario(scen)
    out = _outdir(args)
    write_csv_table(out / "x.csv", raw.x_names, raw.x)
    write_csv_table(out / "y.csv", raw.y_names, raw.y)
    rows = [["x", j] for j in truth.x] + [["y", k] for k in truth.y]
    write_tsv(out / "truth.tsv", ["view", "index"], rows, "generate", _config(args), scen.seed)
    print(f"wrote {out / 'x.csv'} and {out / 'y.csv'} ({scen.n} rows, {scen.p1}+{scen.p2} columns)")
    return 0


# parser ---------------------------------------------------------------------


def _data_args(p, required=True):
    p.add_argument("--x", required=required, help="CSV of the X view (header row, numeric cells)")
    p.add_argument("--y", required=required, help="CSV of the Y view, rows aligned with --x")
    p.add_argument("--winsor", type=float, default=None, help="winsorize at center +/- M * MAD before standardizing")
    p.add_argument("--winsor-center", choices=("mean", "median"), default="mean")


def _common(p, out="."):
    from .screening import default_workers

    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=out, help="output directory")
    p.add_argument("--workers", type=int, default=default_workers(),
                   help="parallel workers (default: $SACCA_WORKERS or 1)")
    p.add_argument("--emit-gnuplot", action="store_true", help="write a .gp script next to each table")
    p.add_argument("--figures", action="store_true", help="also render PNG figures (needs matplotlib)")


def _tune_args(p):
    p.add_argument("--perms", type=int, default=25, help="permutations per grid point")
    p.add_argument("--c-grid", type=_floats, default=None, help="comma-separated budgets (default: 8 in [1, sqrt p])")
    p.add_argument("--gammas", type=_floats, default=None, help="comma-separated kernel gammas")
    p.add_argument("--statistic", choices=("objective", "correlation", "fisher"), default="fisher")


def _scenario_args(p, positional=True):
    from .bench import SCENARIOS

    names = list(SCENARIOS) + [f"figure1-{s}" for s in ("square", "abs", "cos", "logsin", "linear")]
    if positional:
        p.add_argument("scenario", choices=names)
    else:
        p.add_argument("--scenario", choices=names, default=None)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--p", type=int, default=None, help="covariates per view")
    p.add_argument("--p1", type=int, default=None)
    p.add_argument("--p2", type=int, default=None)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--x-dist", choices=("normal", "uniform"), default="normal")


def build_parser():
    from .pipeline import METHODS

    ap = argparse.ArgumentParser(prog="sacca", description="Sparse additive functional and kernel CCA.")
    ap.add_argument("--version", action="version", version=f"sacca {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="preprocess, optionally screen and tune, then fit one model")
    _data_args(p)
    p.add_argument("--method", choices=METHODS, default="fcca")
    p.add_argument("--c", type=_positive, default=1.0, help="group-l1 budget for both views")
    p.add_argument("--gamma", type=_positive, default=None, help="kernel smoothness (kernel methods, default 1e-2)")
    p.add_argument("--bandwidth", type=_bandwidth, default="auto")
    p.add_argument("--screen", type=_screen, default=None, help="none | topk[:K] | fixed:T | theory:DELTA")
    p.add_argument("--tune", action="store_true", help="choose C (and gamma) by permutation tests")
    p.add_argument("--init", choices=("nonsparse", "random"), default="nonsparse")
    _tune_args(p)
    _common(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("evaluate", help="re-evaluate a saved model on raw CSVs")
    p.add_argument("--model", required=True)
    p.add_argument("--x", required=True)
    p.add_argument("--y", required=True)
    p.add_argument("--out", default=None, help="directory for values.tsv (optional)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("screen", help="marginal correlation matrix and thresholded selection")
    _data_args(p)
    p.add_argument("--method", choices=("kcca-pairwise", "fcca-pairwise"), default="kcca-pairwise")
    p.add_argument("--rule", choices=("topk", "fixed", "theory"), default="topk")
    p.add_argument("--k", type=int, default=None, help="topk count (default ceil(n/5))")
    p.add_argument("--t", type=float, default=None, help="fixed threshold")
    p.add_argument("--delta", type=float, default=None, help="theory rule confidence level")
    p.add_argument("--gamma", type=_positive, default=None)
    p.add_argument("--perms", type=int, default=10, help="calibration permutations for the theory rule")
    _common(p)
    p.set_defaults(func=cmd_screen)

    p = sub.add_parser("tune", help="permutation tuning table")
    _data_args(p)
    p.add_argument("--method", choices=("fcca", "kcca", "scca", "kcca-full"), default="fcca")
    _tune_args(p)
    _common(p)
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("calibrate", help="permutation scale of marginal correlations for the theory rule")
    _data_args(p)
    p.add_argument("--method", choices=("kcca-pairwise", "fcca-pairwise"), default="kcca-pairwise")
    p.add_argument("--perms", type=int, default=10)
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--gamma", type=_positive, default=1e-2)
    _common(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("bench", help="seeded synthetic experiment")
    _scenario_args(p)
    p.add_argument("--method", choices=METHODS, default="fcca")
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--c", type=_positive, default=1.0)
    p.add_argument("--gamma", type=_positive, default=None)
    p.add_argument("--init", choices=("nonsparse", "random"), default="nonsparse")
    p.add_argument("--screen", type=_screen, default=None)
    p.add_argument("--tune", action="store_true")
    _tune_args(p)
    _common(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("path", help="regularization path of group norms over C")
    _data_args(p, required=False)
    _scenario_args(p, positional=False)
    p.add_argument("--method", choices=("fcca", "kcca", "scca"), default="fcca")
    p.add_argument("--c-grid", type=_floats, default=None)
    p.add_argument("--n-c", type=int, default=8, help="grid size when --c-grid is not given")
    p.add_argument("--gamma", type=_positive, default=None)
    _common(p)
    p.set_defaults(func=cmd_path)

    p = sub.add_parser("generate", help="write a synthetic scenario as CSVs")
    _scenario_args(p)
    _common(p)
    p.set_defaults(func=cmd_generate)
    return ap


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    counter = _Counter()
    logging.getLogger().addHandler(counter)
    try:
        code = args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (NumericalError, SaccaError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    finally:
        logging.getLogger().removeHandler(counter)
    if args.func is not cmd_evaluate and args.func is not cmd_generate:
        print(f"warnings\t{counter.count}")
    return code


if __name__ == "__main__":
    sys.exit(main())
