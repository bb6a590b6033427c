"""Synthetic scenarios, support metrics, experiment driver and regularization paths."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .baselines import sparse_linear_cca
from .data import PairedDataset, standardize
from .errors import SaccaError, ValidationError
from .fcca import fit_fcca, nonsparse_start
from .pipeline import METHODS, ScreenSpec, TuneSpec, run_pipeline

log = logging.getLogger(__name__)

FIGURE1 = {
    "square": np.square,
    "abs": np.abs,
    "cos": np.cos,
    "logsin": lambda x: np.exp(np.sin(x)),
    "linear": lambda x: x,
}
SCENARIOS = tuple(FIGURE1) + ("table1", "table2", "nullNoise")
TEST_SIZE = 200
TEST_SEED_SHIFT = 100_003
MIN_SUCCESS = 0.8


@dataclass(frozen=True)
class Scenario:
    name: str
    n: int = 150
    p1: int = 15
    p2: int = 15
    noise_sd: float = 0.1
    x_distribution: str = "normal"
    seed: int = 0

    def __post_init__(self):
        if self.name not in SCENARIOS:
            raise ValidationError(f"unknown scenario {self.name!r}; choose from {SCENARIOS}")
        if self.x_distribution not in ("normal", "uniform"):
            raise ValidationError("x_distribution must be 'normal' or 'uniform'")
        min_p = 4 if self.name == "table2" else 1
        if self.n < 4 or self.p1 < min_p or self.p2 < min_p:
            raise ValidationError(f"scenario {self.name} needs n >= 4 and p >= {min_p}")

    def with_seed(self, seed):
        return replace(self, seed=seed)


@dataclass(frozen=True)
class Truth:
    x: tuple
    y: tuple


def _standard(col):
    return (col - col.mean()) / col.std()


def _draw(rng, dist, shape):
    if dist == "uniform":
        return rng.uniform(-1.0, 1.0, shape)
    return rng.standard_normal(shape)


def generate_scenario(s: Scenario):
    """Raw (unstandardized) data and the relevant covariates."""
    rng = np.random.default_rng(s.seed)
    if s.name in FIGURE1 or s.name == "table1":
        phi = FIGURE1["square"] if s.name == "table1" else FIGURE1[s.name]
        x = _draw(rng, s.x_distribution, (s.n, s.p1))
        y = rng.standard_normal((s.n, s.p2))
        y[:, 0] = phi(x[:, 0]) + s.noise_sd * rng.standard_normal(s.n)
        return PairedDataset(x, y), Truth((0,), (0,))
    if s.name == "table2":
        x = np.apply_along_axis(_standard, 0, rng.uniform(size=(s.n, s.p1)))
        y = np.apply_along_axis(_standard, 0, rng.uniform(size=(s.n, s.p2)))
        comps = [
            _standard(np.cos(np.pi / 2 * x[:, 0])),
            _standard(x[:, 1] ** 2),
            _standard(np.cos(np.pi / 2 * x[:, 2])),
            _standard(x[:, 3] ** 2),
        ]
        for j in range(4):
            y[:, j] = sum(comps[i] for i in range(4) if i != j) + s.noise_sd * rng.standard_normal(s.n)
        return PairedDataset(x, y), Truth((0, 1, 2, 3), (0, 1, 2, 3))
    x = _draw(rng, s.x_distribution, (s.n, s.p1))
    y = rng.standard_normal((s.n, s.p2))
    return PairedDataset(x, y), Truth((), ())


def score_support(selected_x, selected_y, truth: Truth):
    """Precision and recall over the union of both views' covariates.

    Nothing selected scores precision 0 unless nothing is relevant either.
    """
    sel = {("x", int(j)) for j in selected_x} | {("y", int(k)) for k in selected_y}
    rel = {("x", j) for j in truth.x} | {("y", k) for k in truth.y}
    hit = len(sel & rel)
    if not sel:
        precision = 1.0 if not rel else 0.0
    else:
        precision = hit / len(sel)
    recall = hit / len(rel) if rel else 1.0
    return {"precision": precision, "recall": recall}


@dataclass
class Pipeline:
    """What to run on each repeat.

    Screening (a :class:`~sacca.pipeline.ScreenSpec`) applies to the additive
    sparse solvers only; tuning (a :class:`~sacca.pipeline.TuneSpec`) to every
    method but linear CCA. Fixed ``c``/``gamma`` apply when not tuned.
    """

    method: str = "fcca"
    screen: ScreenSpec = None
    tune: TuneSpec = None
    c: float = 1.0
    gamma: float = 1e-2
    init: str = "nonsparse"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValidationError(f"unknown method {self.method!r}; choose from {METHODS}")
        if self.init not in ("nonsparse", "random"):
            raise ValidationError("init must be 'nonsparse' or 'random'")


@dataclass
class RepeatRecord:
    seed: int
    test_correlation: float
    precision: float
    recall: float
    support_x: tuple
    support_y: tuple
    converged: bool
    screened_x: tuple = None
    screened_y: tuple = None
    chosen_c: float = None
    chosen_gamma: float = None
    error: str = None


@dataclass
class BenchMetrics:
    scenario: Scenario
    pipeline: Pipeline
    records: list = field(default_factory=list)

    @property
    def ok(self):
        return [r for r in self.records if r.error is None]

    def _mean(self, attr):
        vals = [getattr(r, attr) for r in self.ok]
        return float(np.mean(vals)) if vals else float("nan")

    @property
    def test_correlation(self):
        return self._mean("test_correlation")

    @property
    def precision(self):
        return self._mean("precision")

    @property
    def recall(self):
        return self._mean("recall")

    @property
    def repeats(self):
        return len(self.records)

    @property
    def failures(self):
        return len(self.records) - len(self.ok)


def _ints(a):
    return tuple(int(v) for v in a)


def train_test_data(scenario: Scenario):
    """Standardized training data, test data in the same units, and the truth."""
    raw, truth = generate_scenario(scenario)
    test_raw, _ = generate_scenario(replace(scenario, n=TEST_SIZE, seed=scenario.seed + TEST_SEED_SHIFT))
    data = standardize(raw)
    return data, data.transform_like(test_raw.x, test_raw.y), truth


def run_repeat(scenario: Scenario, pipe: Pipeline, workers=1):
    data, test, truth = train_test_data(scenario)
    screen = pipe.screen if pipe.method in ("fcca", "kcca") else None
    out = run_pipeline(data, pipe.method, pipe.c, pipe.gamma, screen=screen, tune=pipe.tune,
                       init=pipe.init, seed=scenario.seed, workers=workers)
    test = test.subset(x_cols=out.x_cols, y_cols=out.y_cols)
    corr = out.fit.evaluate(test)["correlation"]
    sx, sy = out.support_x, out.support_y
    score = score_support(sx, sy, truth)
    sel = out.screening
    return RepeatRecord(
        seed=scenario.seed,
        test_correlation=float(corr),
        precision=score["precision"],
        recall=score["recall"],
        support_x=_ints(sx),
        support_y=_ints(sy),
        converged=bool(out.fit.converged),
        screened_x=None if sel is None else _ints(sel.selected_x),
        screened_y=None if sel is None else _ints(sel.selected_y),
        chosen_c=out.fit.c,
        chosen_gamma=out.fit.gamma,
    )


def _guarded_repeat(scenario, pipe, workers):
    try:
        return run_repeat(scenario, pipe, workers)
    except (SaccaError, ArithmeticError, np.linalg.LinAlgError) as exc:
        log.warning("repeat with seed %d failed: %s", scenario.seed, exc)
        nan = float("nan")
        return RepeatRecord(scenario.seed, nan, nan, nan, (), (), False, error=str(exc))


def run_experiment(scenario: Scenario, pipe: Pipeline, repeats=10, workers=1):
    """Independent seeded repeats (seeds ``scenario.seed + r``) and their mean metrics.

    With ``workers > 1`` repeats run on a thread pool; records keep seed order.
    """
    if repeats < 1:
        raise ValidationError("repeats must be at least 1")
    seeds = [scenario.with_seed(scenario.seed + r) for r in range(repeats)]
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            records = list(pool.map(lambda s: _guarded_repeat(s, pipe, 1), seeds))
    else:
        records = [_guarded_repeat(s, pipe, 1) for s in seeds]
    metrics = BenchMetrics(scenario, pipe, records)
    if len(metrics.ok) < MIN_SUCCESS * repeats:
        raise SaccaError(f"only {len(metrics.ok)} of {repeats} repeats succeeded")
    return metrics


# regularization paths -----------------------------------------------------


@dataclass
class PathRow:
    c: float
    view: str
    index: int
    norm: float
    relevant: bool


def regularization_path(data, method, c_values, gamma=1e-2, truth: Truth = None, seed=0):
    """Group norms (or |u|, |v| for SCCA) along a sorted grid of budgets.

    Each fit is warm-started from the previous grid point's solution.
    """
    cs = [float(c) for c in c_values]
    if any(b < a for a, b in zip(cs, cs[1:])):
        raise ValidationError("c_values must be sorted")
    truth = truth or Truth((), ())
    rows = []

    def emit(c, view, norms, rel):
        for j, v in enumerate(norms):
            rows.append(PathRow(c, view, j, float(v), j in rel))

    if method == "fcca":
        init = fit_fcca(data, None, None, init=nonsparse_start(data.n, seed)).g
        for c in cs:
            m = fit_fcca(data, c, c, init=init)
            init = m.g
            emit(c, "x", m.f.group_norms, truth.x)
            emit(c, "y", m.g.group_norms, truth.y)
    elif method == "kcca":
        from .kcca import fit_sa_kcca, make_views

        views = make_views(data, gamma)
        init = None
        for c in cs:
            m = fit_sa_kcca(gamma=gamma, cf=c, cg=c, init=init, views=views)
            init = (m.c, m.d)
            emit(c, "x", m.f_norms, truth.x)
            emit(c, "y", m.g_norms, truth.y)
    elif method == "scca":
        for c in cs:
            sol = sparse_linear_cca(data, min(c, math.sqrt(data.p1)), min(c, math.sqrt(data.p2)))
            emit(c, "x", np.abs(sol.u), truth.x)
            emit(c, "y", np.abs(sol.v), truth.y)
    else:
        raise ValidationError(f"paths are available for fcca, kcca and scca, not {method!r}")
    return rows


def path_separates(rows, c_values=None):
    """True when at every C each view's relevant norms beat all irrelevant ones."""
    cs = sorted({r.c for r in rows}) if c_values is None else c_values
    for c in cs:
        for view in ("x", "y"):
            sub = [r for r in rows if r.c == c and r.view == view]
            rel = [r.norm for r in sub if r.relevant]
            irr = [r.norm for r in sub if not r.relevant]
            if rel and irr and min(rel) <= max(irr):
                return False
    return True
