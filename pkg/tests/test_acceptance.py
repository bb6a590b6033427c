"""Acceptance criteria, one test (or a few) per criterion.

Each test records a PASS/FAIL line that is repeated in the terminal
summary. Criteria that cannot be met are marked as expected failures with
the reason; they are not weakened.
"""

import functools
import math
import time

import numpy as np
import pytest
from scipy.linalg import eigh

from sacca.baselines import linear_cca
from sacca.bench import (
    Pipeline,
    Scenario,
    generate_scenario,
    path_separates,
    regularization_path,
    run_experiment,
    train_test_data,
)
from sacca.cli import main
from sacca.data import PairedDataset, standardize
from sacca.fcca import fit_fcca, group_norms, random_init, soft_threshold_update
from sacca.kcca import make_views, nonsparse_additive_kcca, sparse_subproblem
from sacca.kernels import top_gen_eig
from sacca.pipeline import ScreenSpec, TuneSpec, run_pipeline, screen_data
from sacca.screening import (
    build_marginal_matrix,
    calibrate_theory,
    threshold_marginals,
)
from sacca.smoothing import build_smoother

REPEATS = 10
NONLINEAR = ("square", "abs", "cos", "logsin")
RELEVANT = {0, 1, 2, 3}
FULL_KCCA_TUNE = TuneSpec(25, gamma_values=(1e-3, 1e-2, 1e-1))

KCCA_SPARSITY = (
    "with gamma > 0 the quadratic constraint bounds the norm of the sum, not the sum of "
    "squared group norms, so C = 1 does not force one active function and SA-KCCA keeps "
    "small noise components (precision about 0.1 to 0.2)"
)
FCCA_TABLE2 = (
    "the tuned budget varies between repeats; C near 1.9 already admits noise components "
    "(precision 0.84 even when fixed), and the repeats that choose C = 2.35 fall to 0.33 to 0.38"
)


@functools.lru_cache(maxsize=None)
def experiment(name, method, n=150, p=15, init="nonsparse", tuned=False):
    scen = Scenario(name, n=n, p1=p, p2=p)
    pipe = Pipeline(method, init=init, tune=FULL_KCCA_TUNE if tuned else None)
    return run_experiment(scen, pipe, REPEATS)


@functools.lru_cache(maxsize=None)
def table2(method):
    scen = Scenario("table2", n=150, p1=150, p2=150)
    screen = ScreenSpec("topk", k=30)
    if method == "fcca":
        pipe = Pipeline("fcca", screen=screen, tune=TuneSpec(25))
    elif method == "kcca":
        # C is tuned at a fixed gamma with the minimum family of 10 permutations
        pipe = Pipeline("kcca", screen=screen, tune=TuneSpec(10, gamma_values=(1e-2,)))
    else:
        pipe = Pipeline("scca", tune=TuneSpec(25))
    return run_experiment(scen, pipe, REPEATS)


def exact_support(metrics):
    return sum(r.precision == 1.0 and r.recall == 1.0 for r in metrics.ok)


# criterion 1 ----------------------------------------------------------------


@pytest.mark.slow
def test_c1_sparse_additive_test_correlation(criterion):
    parts, ok = [], True
    for method in ("fcca", "kcca"):
        for name in NONLINEAR:
            corr = experiment(name, method).test_correlation
            need = 0.80 if name == "logsin" else 0.85
            ok &= corr >= need
            parts.append(f"{method}/{name}={corr:.3f}")
    criterion("1a (SA-FCCA, SA-KCCA test correlation >= 0.85, logsin >= 0.80)", ok, " ".join(parts))
    assert ok


@pytest.mark.slow
def test_c1_fcca_support(criterion):
    counts = {name: exact_support(experiment(name, "fcca")) for name in NONLINEAR}
    ok = all(v >= 8 for v in counts.values())
    criterion("1b (SA-FCCA precision = recall = 1 in >= 8/10)", ok,
              " ".join(f"{k}={v}/10" for k, v in counts.items()))
    assert ok


@pytest.mark.xfail(strict=True, reason=KCCA_SPARSITY)
@pytest.mark.slow
def test_c1_kcca_support(criterion):
    counts = {name: exact_support(experiment(name, "kcca")) for name in NONLINEAR}
    prec = {name: experiment(name, "kcca").precision for name in NONLINEAR}
    ok = all(v >= 8 for v in counts.values())
    criterion("1c (SA-KCCA precision = recall = 1 in >= 8/10)", ok,
              " ".join(f"{k}={counts[k]}/10 (precision {prec[k]:.2f})" for k in NONLINEAR))
    assert ok


@pytest.mark.slow
def test_c1_baselines_on_square(criterion):
    scca = experiment("square", "scca").test_correlation
    full = experiment("square", "kcca-full", tuned=True).test_correlation
    ok = scca <= 0.3 and full <= 0.6
    criterion("1d (square: SCCA <= 0.3, full KCCA <= 0.6)", ok, f"scca={scca:.3f} full_kcca={full:.3f}")
    assert ok


# criterion 2 ----------------------------------------------------------------


@pytest.mark.slow
def test_c2_linear_row(criterion):
    vals = {m: experiment("linear", m, tuned=m == "kcca-full").test_correlation
            for m in ("fcca", "kcca", "scca", "kcca-full")}
    ok = all(v >= 0.9 for v in vals.values())
    criterion("2 (linear row, all four methods >= 0.9)", ok, " ".join(f"{k}={v:.3f}" for k, v in vals.items()))
    assert ok


# criterion 3 ----------------------------------------------------------------


@pytest.mark.slow
def test_c3_table1_nonsparse_init(criterion):
    p10 = experiment("table1", "fcca", n=75, p=10).test_correlation
    p50 = experiment("table1", "fcca", n=75, p=50).test_correlation
    ok = p10 >= 0.9 and p50 <= 0.5
    criterion("3a (Table 1 non-sparse init: p=10 >= 0.9, p=50 <= 0.5)", ok, f"p10={p10:.3f} p50={p50:.3f}")
    assert ok


@pytest.mark.slow
def test_c3_table1_random_init(criterion):
    vals = {p: experiment("table1", "fcca", n=75, p=p, init="random").test_correlation for p in (10, 25, 50)}
    ok = all(abs(v) <= 0.2 for v in vals.values())
    criterion("3b (Table 1 random init: |mean| <= 0.2 at every p)", ok,
              " ".join(f"p{p}={v:.3f}" for p, v in vals.items()))
    assert ok


# criterion 4 ----------------------------------------------------------------


@pytest.mark.slow
def test_c4_screening_keeps_relevant(criterion):
    parts, ok = [], True
    for method in ("fcca", "kcca"):
        hits = sum(RELEVANT <= set(r.screened_x) and RELEVANT <= set(r.screened_y) for r in table2(method).ok)
        ok &= hits >= 9
        parts.append(f"{method}-pairwise={hits}/10")
    criterion("4a (topk(30) keeps all 8 relevant in >= 9/10)", ok, " ".join(parts))
    assert ok


@pytest.mark.slow
def test_c4_fcca_pipeline(criterion):
    m = table2("fcca")
    ok = m.test_correlation >= 0.85 and m.recall >= 0.65
    criterion("4b (Table 2 SA-FCCA: corr >= 0.85, recall >= 0.65)", ok,
              f"corr={m.test_correlation:.3f} recall={m.recall:.3f}")
    assert ok


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason=FCCA_TABLE2)
def test_c4_fcca_precision(criterion):
    m = table2("fcca")
    ok = m.precision >= 0.85
    criterion("4c (Table 2 SA-FCCA precision >= 0.85)", ok, f"precision={m.precision:.3f} "
              f"chosen C={','.join(format(r.chosen_c, '.2f') for r in m.ok)}")
    assert ok


@pytest.mark.slow
def test_c4_kcca_correlation(criterion):
    m = table2("kcca")
    ok = m.test_correlation >= 0.85 and m.recall >= 0.65
    criterion("4d (Table 2 SA-KCCA: corr >= 0.85, recall >= 0.65)", ok,
              f"corr={m.test_correlation:.3f} recall={m.recall:.3f}")
    assert ok


@pytest.mark.xfail(strict=True, reason=KCCA_SPARSITY)
@pytest.mark.slow
def test_c4_kcca_precision(criterion):
    m = table2("kcca")
    ok = m.precision >= 0.85
    criterion("4e (Table 2 SA-KCCA precision >= 0.85)", ok, f"precision={m.precision:.3f}")
    assert ok


@pytest.mark.slow
def test_c4_scca(criterion):
    corr = table2("scca").test_correlation
    ok = corr <= 0.2
    criterion("4f (Table 2 SCCA corr <= 0.2)", ok, f"corr={corr:.3f}")
    assert ok


@pytest.mark.slow
def test_c4_screening_runtime(criterion):
    raw, _ = generate_scenario(Scenario("table2", n=150, p1=150, p2=150, seed=0))
    data = standardize(raw)
    t0 = time.perf_counter()
    for method in ("fcca", "kcca"):
        screen_data(data, ScreenSpec("topk", k=30), method, seed=0, workers=8)
    secs = time.perf_counter() - t0
    ok = secs <= 3600
    criterion("4g (150x150 screening <= 60 min)", ok, f"both pairwise methods in {secs:.0f} s")
    assert ok


# criterion 5 ----------------------------------------------------------------


@pytest.mark.slow
def test_c5_paths_separate(criterion):
    counts = {"fcca": 0, "kcca": 0}
    for seed in range(REPEATS):
        train, _, truth = train_test_data(Scenario("square", n=100, p1=12, p2=12, seed=seed))
        grid = np.geomspace(1.0, math.sqrt(12), 8)
        for method in counts:
            counts[method] += path_separates(regularization_path(train, method, grid, truth=truth, seed=seed))
    ok = all(v >= 8 for v in counts.values())
    criterion("5 (paths separate at all 8 C in >= 8/10)", ok, " ".join(f"{k}={v}/10" for k, v in counts.items()))
    assert ok


# criterion 6 ----------------------------------------------------------------


@pytest.mark.xfail(strict=True, reason="the lymphoma gene-expression data is not available")
def test_c6_real_data(criterion):
    criterion("6 (real-data results)", False, "not reproducible: data unavailable; "
              "CSV + winsorize/standardize path covered by criteria 1-5 and the CLI tests")
    raise AssertionError("real data unavailable")


# criterion 7 ----------------------------------------------------------------


def test_c7_smoother_exactness(criterion):
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(5, 60))
        x = rng.standard_normal(n) * rng.uniform(0.1, 10)
        S = build_smoother(x, rng.uniform(0.05, 3.0) * x.std())
        worst = max(worst, np.abs(S @ np.ones(n) - 1).max(), np.abs(S @ x - x).max() / max(1, np.abs(x).max()))
    ok = worst <= 1e-8
    criterion("7 (S 1 = 1 and S x = x to 1e-8, 100 draws)", ok, f"max error {worst:.1e}")
    assert ok


# criterion 8 ----------------------------------------------------------------


def test_c8_generalized_eigensolver(criterion):
    rng = np.random.default_rng(8)
    worst_res = worst_val = 0.0
    for _ in range(100):
        d = int(rng.integers(1, 31))
        A = rng.standard_normal((d, d))
        A = A + A.T
        M = rng.standard_normal((d, d))
        B = M @ M.T + 0.1 * d * np.eye(d)
        r = top_gen_eig(A, B)
        oracle = eigh(A, B, eigvals_only=True)[-1]
        worst_res = max(worst_res, r.residual_norm / max(1.0, np.abs(A).max()))
        worst_val = max(worst_val, abs(r.value - oracle) / max(1.0, abs(oracle)))
    ok = worst_res <= 1e-8 and worst_val <= 1e-8
    criterion("8 (gen. eigensolver, 100 pencils up to dim 30)", ok,
              f"residual {worst_res:.1e} value error {worst_val:.1e}")
    assert ok


# criterion 9 ----------------------------------------------------------------


def test_c9_fcca_update_kkt(criterion):
    rng = np.random.default_rng(9)
    worst_l2 = worst_l1 = worst_bracket = 0.0
    fired = 0
    for _ in range(200):
        p = int(rng.integers(2, 15))
        P = rng.standard_normal((p, 30)) * rng.uniform(0.1, 3, (p, 1))
        C = rng.uniform(1.0, math.sqrt(p))
        vals, _, info = soft_threshold_update(P, C)
        norms = group_norms(vals)
        worst_l2 = max(worst_l2, abs(np.sum(norms**2) - 1))
        if info.branch == "threshold":
            fired += 1
            worst_l1 = max(worst_l1, abs(norms.sum() - C))
            worst_bracket = max(worst_bracket, info.bracket[1] - info.bracket[0])
    drops = 0.0
    for trial in range(50):
        n, p = 40, int(rng.integers(2, 6))
        x = rng.standard_normal((n, p))
        y = rng.standard_normal((n, p))
        y[:, 0] = np.sin(2 * x[:, 0]) + 0.3 * rng.standard_normal(n)
        d = standardize(PairedDataset(x, y))
        c = rng.uniform(1.0, math.sqrt(p))
        m = fit_fcca(d, c, c, init=random_init(p, n, trial), max_iter=40)
        drops = max(drops, -np.diff(m.trace).min(initial=0.0))
    ok = worst_l2 <= 1e-6 and worst_l1 <= 1e-6 and worst_bracket <= 1e-8 and drops <= 1e-8 and fired > 20
    criterion("9 (FCCA update KKT and monotone traces)", ok,
              f"l2 {worst_l2:.1e} l1 {worst_l1:.1e} bracket {worst_bracket:.1e} ({fired} thresholded) "
              f"max drop {drops:.1e}")
    assert ok


# criterion 10 ---------------------------------------------------------------


def test_c10_kcca_subproblem_and_linear_kernel(criterion):
    rng = np.random.default_rng(10)
    worst_kkt = 0.0
    for _ in range(50):
        p = int(rng.integers(1, 6))
        x = standardize(PairedDataset(rng.standard_normal((30, p)), rng.standard_normal((30, 1))))
        vx, _ = make_views(x, 10 ** rng.uniform(-3, -1))
        res = sparse_subproblem(rng.standard_normal(30), vx, rng.uniform(1.0, math.sqrt(p)))
        worst_kkt = max(worst_kkt, max(res.kkt.values()))
    worst_lin = 0.0
    for _ in range(20):
        p1, p2 = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        d = standardize(PairedDataset(rng.standard_normal((40, p1)), rng.standard_normal((40, p2))))
        _, _, rho = nonsparse_additive_kcca(*make_views(d, 1e-6, kernel="linear"))
        worst_lin = max(worst_lin, abs(rho - linear_cca(d, ridge=1e-6).correlation))
    ok = worst_kkt <= 1e-6 and worst_lin <= 1e-3
    criterion("10 (KCCA subproblem KKT <= 1e-6; linear kernel = linear CCA to 1e-3)", ok,
              f"kkt {worst_kkt:.1e} linear gap {worst_lin:.1e}")
    assert ok


# criterion 11 ---------------------------------------------------------------


def test_c11_screening_properties(criterion):
    rng = np.random.default_rng(11)
    mono = True
    for _ in range(100):
        m = rng.uniform(-0.2, 1.0, (6, 5))
        ts = np.sort(rng.uniform(-0.2, 1.0, 4))
        sets = [set(threshold_marginals(m, "fixed", t=t).kept) for t in ts]
        mono &= all(b <= a for a, b in zip(sets, sets[1:]))
        ks = [set(threshold_marginals(m, "topk", k=k).kept) for k in (1, 3, 7, 30)]
        mono &= all(a <= b for a, b in zip(ks, ks[1:]))

    hits = 0
    for s in range(100):
        r = np.random.default_rng(1000 + s)
        d = standardize(PairedDataset(r.standard_normal((100, 5)), r.standard_normal((100, 5))))
        eps = calibrate_theory(d, "kcca-pairwise", n_perms=10, seed=s).epsilon(d.n, d.p1, d.p2, 0.05)
        kept = threshold_marginals(build_marginal_matrix(d, "kcca-pairwise", seed=s), "theory", epsilon=eps).kept
        hits += bool(kept)

    d = standardize(PairedDataset(rng.standard_normal((80, 4)), rng.standard_normal((80, 3))))
    a = build_marginal_matrix(d, "kcca-pairwise", seed=3).m
    b = build_marginal_matrix(d.swap(), "kcca-pairwise", seed=3).m
    sym = float(np.abs(a - b.T).max())
    ok = mono and hits <= 5 and sym <= 1e-12
    criterion("11 (monotone thresholds; null inclusion <= 5%; transpose symmetry)", ok,
              f"monotone={mono} null seeds with any inclusion={hits}/100 asymmetry={sym:.1e}")
    assert ok


# criterion 12 ---------------------------------------------------------------


def _pipeline_outputs(raw, test_raw, method):
    data = standardize(raw)
    test = data.transform_like(test_raw.x, test_raw.y)
    tune = TuneSpec(10, c_values=(1.0, 1.5, 2.0)) if method == "fcca" else None
    out = run_pipeline(data, method, screen=ScreenSpec("topk", k=12), tune=tune)
    ev = out.fit.evaluate(test.subset(x_cols=out.x_cols, y_cols=out.y_cols))
    return out, ev


def test_c12_affine_invariance(criterion):
    rng = np.random.default_rng(12)
    scen = Scenario("cos", n=100, p1=6, p2=6, seed=3)
    raw, _ = generate_scenario(scen)
    test_raw, _ = generate_scenario(scen.with_seed(99))
    a1, b1 = rng.uniform(0.1, 20, 6) * rng.choice([-1, 1], 6), rng.uniform(-50, 50, 6)
    a2, b2 = rng.uniform(0.1, 20, 6) * rng.choice([-1, 1], 6), rng.uniform(-50, 50, 6)

    def moved(d):
        return PairedDataset(d.x * a1 + b1, d.y * a2 + b2)

    worst = 0.0
    same = True
    for method in ("fcca", "kcca", "scca", "linear"):
        o1, e1 = _pipeline_outputs(raw, test_raw, method)
        o2, e2 = _pipeline_outputs(moved(raw), moved(test_raw), method)
        same &= np.array_equal(o1.support_x, o2.support_x) and np.array_equal(o1.support_y, o2.support_y)
        same &= o1.fit.c == o2.fit.c
        if method in ("scca", "linear"):
            # a negative scale flips the matching coefficient; compare magnitudes and the variates
            worst = max(worst, np.abs(np.abs(o1.fit.norms_x) - np.abs(o2.fit.norms_x)).max())
        else:
            worst = max(worst, np.abs(o1.fit.norms_x - o2.fit.norms_x).max(),
                        np.abs(o1.fit.norms_y - o2.fit.norms_y).max())
        worst = max(worst, abs(o1.fit.objective - o2.fit.objective),
                    np.abs(np.sum(e1["f_values"], axis=0) - np.sum(e2["f_values"], axis=0)).max()
                    if np.ndim(e1["f_values"]) == 2 else np.abs(e1["f_values"] - e2["f_values"]).max(),
                    abs(e1["correlation"] - e2["correlation"]))
    ok = same and worst <= 1e-8
    criterion("12 (affine invariance of the pipeline, 1e-8)", ok, f"same supports={same} max difference {worst:.1e}")
    assert ok


# criterion 13 ---------------------------------------------------------------


def _snapshot(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir()) if p.is_file()}


def test_c13_cli_determinism(tmp_path, capsys, criterion):
    data_dir = tmp_path / "data"
    assert main(["generate", "abs", "--n", "80", "--p", "4", "--out", str(data_dir)]) == 0
    xy = ["--x", str(data_dir / "x.csv"), "--y", str(data_dir / "y.csv")]
    commands = {
        "generate": ["generate", "cos", "--n", "60", "--p", "3"],
        "fit": ["fit", *xy, "--screen", "topk:6", "--tune", "--perms", "10", "--c-grid", "1,1.5"],
        "fit-kcca": ["fit", "--method", "kcca", *xy],
        "screen": ["screen", *xy, "--emit-gnuplot"],
        "tune": ["tune", *xy, "--perms", "10", "--c-grid", "1,2"],
        "calibrate": ["calibrate", *xy, "--perms", "3"],
        "bench": ["bench", "square", "--n", "60", "--p", "3", "--repeats", "2"],
        "path": ["path", *xy, "--c-grid", "1,1.5,2", "--emit-gnuplot"],
    }
    differs = []
    capsys.readouterr()
    for name, argv in commands.items():
        outs = []
        for run in ("a", "b"):
            out_dir = tmp_path / name / run
            code = main(argv + ["--out", str(out_dir)])
            stdout = capsys.readouterr().out.replace(str(out_dir), "OUT")
            outs.append((code, stdout, _snapshot(out_dir)))
        if name == "fit":
            model = str(tmp_path / name / "a" / "model.json")
            for run in ("c", "d"):
                code = main(["evaluate", "--model", model, *xy, "--out", str(tmp_path / "evaluate" / run)])
                outs.append((code, capsys.readouterr().out, _snapshot(tmp_path / "evaluate" / run)))
            if outs[2] != outs[3]:
                differs.append("evaluate")
        if outs[0][0] != 0 or outs[0] != outs[1]:
            differs.append(name)
    ok = not differs
    criterion("13 (byte-identical CLI reruns)", ok,
              f"{len(commands) + 1} commands compared" + (f"; differing: {differs}" if differs else ""))
    assert ok
