"""Permutation-test selection of the sparsity budget and kernel smoothness.

For every grid point the sparse model is fitted to the real pairing and to
row-permuted copies of Y (the same permutations for every grid point), and
the point whose real statistic stands out most from its permutation family
(largest z-score) is chosen. ``C_f = C_g = C`` and ``gamma_f = gamma_g``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import SaccaError, ValidationError
from .fcca import fit_fcca, nonsparse_start, pearson
from .smoothing import build_smoother_set

log = logging.getLogger(__name__)

STATISTICS = ("objective", "correlation", "fisher")
MIN_SURVIVAL = 0.8
SD_FLOOR = 1e-12


@dataclass(frozen=True)
class TuneGrid:
    c_values: tuple
    gamma_values: tuple = (None,)
    n_perms: int = 25
    seed: int = 0
    statistic: str = "fisher"

    def __post_init__(self):
        c = tuple(float(v) for v in self.c_values)
        g = tuple(None if v is None else float(v) for v in self.gamma_values)
        object.__setattr__(self, "c_values", c)
        object.__setattr__(self, "gamma_values", g)
        if not c or not g:
            raise ValidationError("tuning grids must be nonempty")
        if any(b <= a for a, b in zip(c, c[1:])):
            raise ValidationError("c_values must be strictly increasing")
        if c[0] < 1.0 - 1e-12:
            raise ValidationError("c_values must be at least 1")
        gs = [v for v in g if v is not None]
        if gs and (any(v <= 0 for v in gs) or any(b <= a for a, b in zip(gs, gs[1:]))):
            raise ValidationError("gamma_values must be positive and increasing")
        if self.n_perms < 10:
            raise ValidationError("n_perms must be at least 10")
        if self.statistic not in STATISTICS:
            raise ValidationError(f"statistic must be one of {STATISTICS}")

    def points(self):
        return [(c, g) for c in self.c_values for g in self.gamma_values]


def default_grid(p1, p2, method="fcca", n_perms=25, seed=0, statistic="fisher"):
    """Eight log-spaced budgets in ``[1, sqrt(min(p1, p2))]``.

    Kernel fits also get ``gamma in {1e-3, 1e-2, 1e-1}``.
    """
    top = math.sqrt(min(p1, p2))
    cs = np.unique(np.round(np.geomspace(1.0, top, 8), 12)) if top > 1 else np.array([1.0])
    gammas = (1e-3, 1e-2, 1e-1) if method == "kcca" else (None,)
    return TuneGrid(tuple(cs), gammas, n_perms, seed, statistic)


@dataclass
class TuneRow:
    c: float
    gamma: float
    real: float
    perm_mean: float
    perm_sd: float
    z: float
    n_valid: int
    valid: bool = True


@dataclass
class TuneReport:
    rows: list
    chosen: int
    method: str
    grid: TuneGrid
    perms: np.ndarray = field(repr=False, default=None)

    @property
    def best(self):
        return self.rows[self.chosen]


def _statistic(kind, objective, f_total, g_total):
    if kind == "objective":
        return float(objective)
    r = pearson(f_total, g_total)
    if kind == "correlation":
        return r
    return float(np.arctanh(np.clip(r, -1 + 1e-15, 1 - 1e-15)))


def _choose(rows):
    valid = [i for i, r in enumerate(rows) if r.valid and np.isfinite(r.z)]
    if not valid:
        raise ValidationError("no grid point produced a valid permutation family")
    # max z; ties go to the smallest C, then the smallest gamma
    return min(valid, key=lambda i: (-rows[i].z, rows[i].c or 0.0, rows[i].gamma or 0.0))


def _fcca_runner(data, grid):
    Sx = build_smoother_set(data.x)
    Sy = build_smoother_set(data.y)

    def prepare(perm):
        d = data if perm is None else data.permute_y(perm)
        sy = Sy if perm is None else Sy.permuted(perm)
        init = fit_fcca(d, None, None, init=nonsparse_start(data.n, grid.seed), smoothers=(Sx, sy)).g
        return d, sy, init

    def fit(state, c, gamma):
        d, sy, init = state
        m = fit_fcca(d, c, c, init=init, smoothers=(Sx, sy))
        return _statistic(grid.statistic, m.objective, m.f.total, m.g.total)

    return prepare, fit


def _kcca_runner(data, grid):
    from .kcca import fit_sa_kcca, make_views, nonsparse_additive_kcca

    base = {g: make_views(data, g) for g in grid.gamma_values}

    def prepare(perm):
        out = {}
        for g, (vx, vy) in base.items():
            vyp = vy if perm is None else vy.permuted(perm)
            c, d, _ = nonsparse_additive_kcca(vx, vyp)
            out[g] = (vx, vyp, (c, d))
        return out

    def fit(state, c, gamma):
        vx, vy, init = state[gamma]
        m = fit_sa_kcca(gamma=gamma, cf=c, cg=c, init=init, views=(vx, vy))
        return _statistic(grid.statistic, m.objective, vx.total(m.c), vy.total(m.d))

    return prepare, fit


def _scca_runner(data, grid):
    from .baselines import sparse_linear_cca

    def prepare(perm):
        return data if perm is None else data.permute_y(perm)

    def fit(d, c, gamma):
        sol = sparse_linear_cca(d, c, c)
        obj = float(sol.u @ (d.x.T @ d.y / d.n) @ sol.v)
        return _statistic(grid.statistic, obj, d.x @ sol.u, d.y @ sol.v)

    return prepare, fit


def _full_kcca_runner(data, grid):
    from .baselines import full_kcca

    def prepare(perm):
        return data if perm is None else data.permute_y(perm)

    def fit(d, c, gamma):
        m = full_kcca(d, gamma)
        out = m.evaluate(d)
        return _statistic(grid.statistic, m.correlation, out["f_values"], out["g_values"])

    return prepare, fit


TUNABLE = ("fcca", "kcca", "scca", "kcca-full")


def permutation_tune(data, method="fcca", grid: TuneGrid = None):
    """Fit every grid point on real and permuted pairings; pick max z.

    ``kcca-full`` has no budget, so only its gamma values are searched.
    """
    if grid is None:
        grid = default_grid(data.p1, data.p2, "kcca" if method == "kcca-full" else method)
    if method not in TUNABLE:
        raise ValidationError(f"unknown method {method!r}; choose from {TUNABLE}")
    kernel = method in ("kcca", "kcca-full")
    if kernel and None in grid.gamma_values:
        raise ValidationError("kernel tuning needs gamma values")
    if method != "kcca-full" and max(grid.c_values) > math.sqrt(min(data.p1, data.p2)) + 1e-9:
        raise ValidationError("c_values must not exceed sqrt(min(p1, p2))")
    if method == "fcca":
        prepare, fit = _fcca_runner(data, grid)
        points = [(c, None) for c in grid.c_values]
    elif method == "kcca":
        prepare, fit = _kcca_runner(data, grid)
        points = grid.points()
    elif method == "scca":
        prepare, fit = _scca_runner(data, grid)
        points = [(c, None) for c in grid.c_values]
    else:
        prepare, fit = _full_kcca_runner(data, grid)
        points = [(None, g) for g in grid.gamma_values]

    rng = np.random.default_rng(grid.seed)
    perms = np.array([rng.permutation(data.n) for _ in range(grid.n_perms)])

    real_state = prepare(None)
    real = [fit(real_state, c, g) for c, g in points]
    null = np.full((grid.n_perms, len(points)), np.nan)
    for b, perm in enumerate(perms):
        try:
            state = prepare(perm)
        except (SaccaError, ArithmeticError, np.linalg.LinAlgError) as exc:
            log.warning("permutation %d failed to initialize: %s", b, exc)
            continue
        for i, (c, g) in enumerate(points):
            try:
                null[b, i] = fit(state, c, g)
            except (SaccaError, ArithmeticError, np.linalg.LinAlgError) as exc:
                log.warning("permutation %d at %s failed: %s", b, (c, g), exc)

    rows = []
    for i, (c, g) in enumerate(points):
        col = null[:, i][np.isfinite(null[:, i])]
        ok = col.size >= MIN_SURVIVAL * grid.n_perms and col.size >= 2
        mean = float(col.mean()) if col.size else float("nan")
        sd = float(col.std(ddof=1)) if col.size >= 2 else float("nan")
        z = (real[i] - mean) / max(sd, SD_FLOOR) if ok else float("nan")
        rows.append(TuneRow(c, g, real[i], mean, sd, z, int(col.size), ok))
    return TuneReport(rows, _choose(rows), method, grid, perms)


def report_table(report: TuneReport):
    """Header and rows for TSV output."""
    header = ["C", "gamma", "real", "perm_mean", "perm_sd", "z", "n_valid", "valid", "chosen"]
    body = []
    for i, r in enumerate(report.rows):
        body.append([r.c if r.c is not None else float("nan"), r.gamma if r.gamma is not None else float("nan"), r.real,
                     r.perm_mean, r.perm_sd, r.z, r.n_valid, int(r.valid), int(i == report.chosen)])
    return header, body
