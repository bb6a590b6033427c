"""Sparse additive functional CCA by biconvex backfitting.

Each component function is stored through its values at the training
points. A component produced by an update is ``coef_j * (S_j r - m_j)``
for the source vector ``r`` that was smoothed (the current sum of the
opposite view), so it extends to new points by smoothing ``r`` there.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import AllSmoothedZero, DimensionMismatch, ValidationError
from .smoothing import SmootherSet, build_smoother_set

log = logging.getLogger(__name__)

ZERO_NORM = 1e-12
BISECT_TOL = 1e-12
BISECT_MAX = 200


def group_norms(values):
    """Root-mean-square of each row of a ``(p, n)`` array."""
    values = np.asarray(values, dtype=float)
    return np.sqrt(np.mean(values * values, axis=1))


@dataclass
class AdditiveFit:
    """Component function values at the training points of one view."""

    values: np.ndarray
    source: np.ndarray = None
    coef: np.ndarray = None
    offset: np.ndarray = None

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))

    @property
    def group_norms(self):
        return group_norms(self.values)

    @property
    def support(self):
        return np.flatnonzero(self.group_norms > 0)

    @property
    def total_l1(self):
        return float(self.group_norms.sum())

    @property
    def total_l2sq(self):
        return float(np.sum(self.group_norms**2))

    @property
    def total(self):
        """The additive function ``sum_j f_j`` at the training points."""
        return self.values.sum(axis=0)

    def centered(self):
        """Step-4 centering; keeps the extension data consistent."""
        means = self.values.mean(axis=1)
        off = None if self.offset is None else self.offset + means / np.where(self.coef != 0, self.coef, 1.0)
        vals = self.values - means[:, None]
        if self.coef is not None:
            vals[self.coef == 0] = 0.0
        return AdditiveFit(vals, self.source, self.coef, off)


@dataclass
class ThresholdInfo:
    branch: str
    gamma: float = 0.0
    lam: float = 0.0
    bracket: tuple = (0.0, 0.0)


def _l1_ratio(norms, gamma):
    s = np.maximum(norms - gamma, 0.0)
    l2 = np.sqrt(np.sum(s * s))
    return (s.sum() / l2 if l2 > 0 else 0.0), l2


def threshold_factors(norms, C):
    """Per-covariate scale factors of the constrained update.

    Given the RMS norms of the smoothed targets, returns ``(factors, info)``
    such that ``f_j = factors[j] * P_j`` has ``sum ||f_j||^2 = 1`` and
    ``sum ||f_j|| <= C`` (``= C`` when the threshold binds). ``C = None``
    disables the sparsity constraint.
    """
    norms = np.asarray(norms, dtype=float)
    if not np.any(norms >= ZERO_NORM):
        raise AllSmoothedZero("every smoothed target has zero norm")
    norms = np.where(norms >= ZERO_NORM, norms, 0.0)
    lam0 = float(np.sqrt(np.sum(norms**2)))
    if C is None or norms.sum() / lam0 <= C:
        return np.full(norms.shape, 1.0 / lam0), ThresholdInfo("none", 0.0, lam0)

    top = norms.max()
    ties = norms >= top * (1.0 - 1e-12)
    if C < np.sqrt(ties.sum()):
        # no gamma can reach the budget; keep the max-norm functions only
        fac = np.where(ties, C / (ties.sum() * top), 0.0)
        return fac, ThresholdInfo("max-norm", top, float(ties.sum() * top / C))

    lo, hi = 0.0, float(top)
    for _ in range(BISECT_MAX):
        mid = 0.5 * (lo + hi)
        r, _ = _l1_ratio(norms, mid)
        if r > C:
            lo = mid
        else:
            hi = mid
        if hi - lo <= BISECT_TOL * top:
            break
    gamma = hi
    _, lam = _l1_ratio(norms, gamma)
    if lam <= 0:
        # ties at the top collapsed the bracket end onto the maximum
        gamma = lo
        _, lam = _l1_ratio(norms, gamma)
    shrink = np.maximum(norms - gamma, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        fac = np.where(norms > 0, shrink / (norms * lam), 0.0)
    return fac, ThresholdInfo("threshold", float(gamma), float(lam), (lo, hi))


def soft_threshold_update(smoothed, C):
    """Constrained f-update from smoothed targets ``P_j = S_j a``.

    ``smoothed`` is ``(p, n)``. Returns ``(values, factors, info)``.
    """
    smoothed = np.atleast_2d(np.asarray(smoothed, dtype=float))
    fac, info = threshold_factors(group_norms(smoothed), C)
    return fac[:, None] * smoothed, fac, info


@dataclass
class FccaModel:
    f: AdditiveFit
    g: AdditiveFit
    objective: float
    iterations: int
    converged: bool
    cf: float = None
    cg: float = None
    smoothers_x: SmootherSet = field(default=None, repr=False)
    smoothers_y: SmootherSet = field(default=None, repr=False)
    trace: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)

    @property
    def support_x(self):
        return self.f.support

    @property
    def support_y(self):
        return self.g.support


def objective(f_total, g_total):
    return float(np.dot(f_total, g_total) / f_total.shape[0])


def backfit_sweep(target, smoothers: SmootherSet, C):
    """One view's update given the opposite view's sum ``target``.

    Smoothed targets are centered before thresholding, so the centering
    step leaves group norms (and the constraint values) untouched.
    """
    target = np.asarray(target, dtype=float)
    P = smoothers.apply(target)
    means = P.mean(axis=1)
    P = P - means[:, None]
    vals, fac, info = soft_threshold_update(P, C)
    fit = AdditiveFit(vals, source=target.copy(), coef=fac, offset=means).centered()
    return fit, info


def random_init(p, n, seed):
    """Random centered component values with unit total squared norm."""
    v = np.random.default_rng(seed).standard_normal((p, n))
    v -= v.mean(axis=1, keepdims=True)
    return AdditiveFit(v / np.sqrt(np.sum(group_norms(v) ** 2)))


def _init_target(init, n):
    if isinstance(init, AdditiveFit):
        t = init.total
    else:
        t = np.asarray(init, dtype=float)
        if t.ndim == 2:
            t = t.sum(axis=0)
    if t.shape != (n,):
        raise DimensionMismatch(f"initial g must have {n} sample values")
    if not np.any(np.abs(t) > 0):
        raise ValidationError("initial g is identically zero")
    return t


def fit_fcca(
    data,
    cf=None,
    cg=None,
    init=None,
    bandwidths=None,
    smoothers=None,
    tol=1e-6,
    max_iter=200,
    seed=0,
):
    """Alternate f- and g-updates until the objective stops moving.

    ``data`` is a standardized :class:`~sacca.data.PairedDataset`.
    ``cf``/``cg`` are the group-l1 budgets (``None`` for no sparsity).
    ``init`` gives the starting ``g`` (an :class:`AdditiveFit`, a ``(p2, n)``
    array or an ``n``-vector); by default the non-sparse fit is used.

    Smoothers are not symmetric, so a half-sweep is not guaranteed to
    increase the objective; with a budget on either view a half-sweep that
    would decrease it is rejected and the fit stops there. Without budgets
    the alternation is a power iteration, every step is kept, and it stops
    once both the objective and ``g`` stop moving.
    """
    sparse = cf is not None or cg is not None
    if smoothers is None:
        bx = by = None
        if bandwidths is not None:
            bx, by = bandwidths
        smoothers = (build_smoother_set(data.x, bx), build_smoother_set(data.y, by))
    Sx, Sy = smoothers
    n = Sx.n
    if init is None:
        init = fit_fcca(data, None, None, init=nonsparse_start(n, seed),
                        smoothers=smoothers, tol=tol, max_iter=max_iter).g
    g_target = _init_target(init, n)

    diags = []
    f, info = backfit_sweep(g_target, Sx, cf)
    diags.append(("f", info))
    g, info = backfit_sweep(f.total, Sy, cg)
    diags.append(("g", info))
    obj = objective(f.total, g.total)
    trace = [obj]
    converged = False
    it = 1
    while it < max_iter:
        it += 1
        prev = obj
        prev_g = g.total
        stalled = False
        for view in ("f", "g"):
            if view == "f":
                cand, info = backfit_sweep(g.total, Sx, cf)
                cand_obj = objective(cand.total, g.total)
            else:
                cand, info = backfit_sweep(f.total, Sy, cg)
                cand_obj = objective(f.total, cand.total)
            if sparse and cand_obj < obj:
                stalled = True
                break
            if view == "f":
                f = cand
            else:
                g = cand
            obj = cand_obj
            trace.append(obj)
            diags.append((view, info))
        if sparse and (stalled or obj - prev < tol):
            converged = True
            break
        moved = np.linalg.norm(g.total - prev_g) / np.sqrt(n)
        if not sparse and abs(obj - prev) < tol and moved < np.sqrt(tol):
            converged = True
            break
    if not converged:
        # an unconverged non-sparse fit is only ever a starting point
        (log.warning if sparse else log.info)("SA-FCCA did not converge in %d iterations", max_iter)
    return FccaModel(
        f=f, g=g, objective=obj, iterations=it, converged=converged, cf=cf, cg=cg,
        smoothers_x=Sx, smoothers_y=Sy, trace=trace, diagnostics=diags,
    )


def nonsparse_start(n, seed=0):
    """Deterministic pseudo-random starting vector for the non-sparse fit."""
    v = np.random.default_rng(seed).standard_normal(n)
    return v - v.mean()


def fit_nonsparse_fcca(data, smoothers=None, seed=0, tol=1e-6, max_iter=200):
    """Algorithm without the sparsity constraint (used for initialization)."""
    return fit_fcca(data, None, None, init=nonsparse_start(data.n, seed),
                    smoothers=smoothers, tol=tol, max_iter=max_iter)


def extend_component(fit: AdditiveFit, smoothers: SmootherSet, j, new_points):
    """Value of component ``j`` of a fitted view at new points."""
    if fit.coef is None or fit.coef[j] == 0:
        return np.zeros(np.asarray(new_points).shape[0])
    W = smoothers.extension(j, new_points)
    return fit.coef[j] * (W @ fit.source - fit.offset[j])


def evaluate_view(fit: AdditiveFit, smoothers: SmootherSet, new_x):
    new_x = np.asarray(new_x, dtype=float)
    if new_x.shape[1] != fit.values.shape[0]:
        raise DimensionMismatch(
            f"model has {fit.values.shape[0]} covariates, data has {new_x.shape[1]}"
        )
    comps = np.zeros((fit.values.shape[0], new_x.shape[0]))
    for j in fit.support:
        comps[j] = extend_component(fit, smoothers, j, new_x[:, j])
    return comps


def pearson(a, b):
    a = np.asarray(a, dtype=float) - np.mean(a)
    b = np.asarray(b, dtype=float) - np.mean(b)
    den = np.sqrt(np.dot(a, a) * np.dot(b, b))
    if den <= 1e-300:
        return 0.0
    return float(np.clip(np.dot(a, b) / den, -1.0, 1.0))


def evaluate_fit(model: FccaModel, new_data):
    """Component values on new data and the correlation of the view sums."""
    fv = evaluate_view(model.f, model.smoothers_x, new_data.x)
    gv = evaluate_view(model.g, model.smoothers_y, new_data.y)
    if model.f.support.size == 0 or model.g.support.size == 0:
        corr = 0.0
    else:
        corr = pearson(fv.sum(axis=0), gv.sum(axis=0))
    return {"f_values": fv, "g_values": gv, "correlation": corr}
