"""One fit of any method behind a common result type, plus the full
preprocess, screen, tune and fit sequence shared by the CLI and the benchmarks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .baselines import full_kcca, linear_cca, sparse_linear_cca
from .errors import ValidationError
from .fcca import evaluate_fit, fit_fcca, random_init

METHODS = ("fcca", "kcca", "scca", "kcca-full", "linear")
SPARSE = ("fcca", "kcca", "scca")
KERNEL = ("kcca", "kcca-full")


@dataclass
class FitResult:
    """A fitted model seen through its training component values.

    ``f_values``/``g_values`` are ``(p, n)`` per-covariate values for the
    additive methods and ``(1, n)`` for full kernel CCA.
    """

    method: str
    model: object = field(repr=False)
    f_values: np.ndarray = field(repr=False)
    g_values: np.ndarray = field(repr=False)
    norms_x: np.ndarray
    norms_y: np.ndarray
    support_x: np.ndarray
    support_y: np.ndarray
    objective: float
    converged: bool
    iterations: int
    c: float = None
    gamma: float = None
    evaluate: object = field(default=None, repr=False)


def _norms(values):
    return np.sqrt(np.mean(values**2, axis=1))


def fit_method(data, method, c=1.0, gamma=1e-2, bandwidths=None, init="nonsparse", seed=0):
    """Fit ``method`` with fixed hyperparameters on standardized data.

    ``c`` is used for both views. SCCA clips it to ``sqrt(p)`` per view.
    """
    if method not in METHODS:
        raise ValidationError(f"unknown method {method!r}; choose from {METHODS}")
    if init not in ("nonsparse", "random"):
        raise ValidationError("init must be 'nonsparse' or 'random'")
    bw = None if bandwidths is None else (bandwidths, bandwidths)
    if method == "fcca":
        start = None if init == "nonsparse" else random_init(data.p2, data.n, seed)
        m = fit_fcca(data, c, c, init=start, bandwidths=bw, seed=seed)
        return FitResult(method, m, m.f.values, m.g.values, m.f.group_norms, m.g.group_norms,
                         m.support_x, m.support_y, m.objective, m.converged, m.iterations, c, None,
                         lambda nd: evaluate_fit(m, nd))
    if method == "kcca":
        from .kcca import evaluate_kcca, fit_sa_kcca, make_views

        views = make_views(data, gamma, bw)
        start = None
        if init == "random":
            rng = np.random.default_rng(seed)
            start = (rng.standard_normal(views[0].dim), rng.standard_normal(views[1].dim))
        m = fit_sa_kcca(gamma=gamma, cf=c, cg=c, init=start, views=views)
        vx, vy = views
        return FitResult(method, m, vx.values(m.c), vy.values(m.d), m.f_norms, m.g_norms,
                         m.support_x, m.support_y, m.objective, m.converged, m.iterations, c, gamma,
                         lambda nd: evaluate_kcca(m, nd))
    if method == "scca":
        sol = sparse_linear_cca(data, min(c, math.sqrt(data.p1)), min(c, math.sqrt(data.p2)))
        fv, gv = data.x.T * sol.u[:, None], data.y.T * sol.v[:, None]
        obj = float(fv.sum(axis=0) @ gv.sum(axis=0) / data.n)
        return FitResult(method, sol, fv, gv, _norms(fv), _norms(gv), sol.support_x, sol.support_y,
                         obj, sol.converged, sol.iterations, c, None, sol.evaluate)
    if method == "kcca-full":
        m = full_kcca(data, gamma, bw)
        out = m.evaluate(data)
        fv, gv = out["f_values"][None, :], out["g_values"][None, :]
        return FitResult(method, m, fv, gv, np.ones(data.p1), np.ones(data.p2),
                         np.arange(data.p1), np.arange(data.p2), m.correlation, True, 1, None, gamma,
                         m.evaluate)
    sol = linear_cca(data)
    fv, gv = data.x.T * sol.u[:, None], data.y.T * sol.v[:, None]
    return FitResult(method, sol, fv, gv, _norms(fv), _norms(gv), np.arange(data.p1), np.arange(data.p2),
                     sol.correlation, True, 0, None, None, sol.evaluate)


@dataclass
class ScreenSpec:
    """``rule`` is ``"topk"`` (``k=None`` means ``ceil(n/5)``), ``"fixed"`` (``t``)
    or ``"theory"`` (``delta``, with the permutation-calibrated scale)."""

    rule: str = "topk"
    k: int = None
    t: float = None
    delta: float = None
    method: str = None
    gamma: float = None
    calibration_perms: int = 10

    def __post_init__(self):
        if self.rule not in ("topk", "fixed", "theory"):
            raise ValidationError("screen rule must be topk, fixed or theory")
        if self.rule == "topk" and self.k is not None and self.k < 0:
            raise ValidationError("topk needs k >= 0")
        if self.rule == "fixed" and self.t is None:
            raise ValidationError("fixed screening needs a threshold t")
        if self.rule == "theory" and self.delta is None:
            raise ValidationError("theory screening needs delta")


@dataclass
class TuneSpec:
    n_perms: int = 25
    c_values: tuple = None
    gamma_values: tuple = None
    statistic: str = "fisher"
    seed: int = None


@dataclass
class PipelineOutcome:
    fit: FitResult
    x_cols: np.ndarray
    y_cols: np.ndarray
    data: object = field(repr=False)
    screening: object = None
    marginals: object = field(default=None, repr=False)
    tuning: object = None

    @property
    def support_x(self):
        return self.x_cols[np.asarray(self.fit.support_x, dtype=int)]

    @property
    def support_y(self):
        return self.y_cols[np.asarray(self.fit.support_y, dtype=int)]


def screen_data(data, spec: ScreenSpec, method, seed=0, workers=None):
    """Marginal matrix and thresholded selection for ``data``."""
    from .screening import (
        DEFAULT_GAMMA,
        build_marginal_matrix,
        calibrate_theory,
        threshold_marginals,
    )

    smethod = spec.method or ("fcca-pairwise" if method == "fcca" else "kcca-pairwise")
    gamma = spec.gamma if spec.gamma is not None else DEFAULT_GAMMA
    M = build_marginal_matrix(data, smethod, seed=seed, gamma=gamma, workers=workers)
    if spec.rule == "topk":
        sel = threshold_marginals(M, "topk", k=spec.k)
    elif spec.rule == "fixed":
        sel = threshold_marginals(M, "fixed", t=spec.t)
    else:
        cal = calibrate_theory(data, smethod, n_perms=spec.calibration_perms, seed=seed, gamma=gamma)
        sel = threshold_marginals(M, "theory", epsilon=cal.epsilon(data.n, data.p1, data.p2, spec.delta))
    return M, sel


def tune_data(data, method, spec: TuneSpec, seed=0):
    from .tuning import TuneGrid, default_grid, permutation_tune

    base = default_grid(data.p1, data.p2, "kcca" if method in KERNEL else method,
                        n_perms=spec.n_perms, seed=seed if spec.seed is None else spec.seed,
                        statistic=spec.statistic)
    cs = base.c_values if spec.c_values is None else tuple(spec.c_values)
    if method == "kcca-full":
        cs = (1.0,)
    gs = base.gamma_values if spec.gamma_values is None or method not in KERNEL else tuple(spec.gamma_values)
    grid = TuneGrid(cs, gs, base.n_perms, base.seed, base.statistic)
    return permutation_tune(data, method, grid)


def run_pipeline(data, method, c=1.0, gamma=1e-2, bandwidths=None, screen: ScreenSpec = None,
                 tune: TuneSpec = None, init="nonsparse", seed=0, workers=None):
    """Screen, tune and fit standardized ``data``.

    Screening only applies to the additive sparse methods; the selected
    columns are what the later steps see.
    """
    from .errors import EmptySelection

    x_cols, y_cols = np.arange(data.p1), np.arange(data.p2)
    M = sel = report = None
    work = data
    if screen is not None:
        M, sel = screen_data(data, screen, method, seed, workers)
        if sel.selected_x.size == 0 or sel.selected_y.size == 0:
            raise EmptySelection("screening kept no covariate in at least one view")
        x_cols, y_cols = np.asarray(sel.selected_x), np.asarray(sel.selected_y)
        work = data.subset(x_cols=x_cols, y_cols=y_cols)
    if tune is not None and method != "linear":
        report = tune_data(work, method, tune, seed)
        best = report.best
        c = best.c if best.c is not None else c
        gamma = best.gamma if best.gamma is not None else gamma
    fit = fit_method(work, method, c, gamma, bandwidths, init, seed)
    return PipelineOutcome(fit, x_cols, y_cols, work, sel, M, report)
