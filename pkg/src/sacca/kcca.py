"""Sparse additive kernel CCA.

Coefficients are handled in each Gram's eigenbasis: with
``K_j = U_j diag(lam_j) U_j'`` the component values are
``K_j alpha_j = U_j c_j`` where ``c_j = lam_j * (U_j' alpha_j)``. In these
coordinates

* ``||f_j||_2 = ||c_j|| / sqrt(n)``,
* ``alpha_j' K_j alpha_j = c_j' diag(1 / lam_j) c_j``,
* the quadratic constraint is ``c' Q c <= 1`` with
  ``Q = U'U / n + gamma * diag(1 / lam)``, whose diagonal blocks are
  diagonal matrices.

The null space of each Gram is dropped, which changes none of the
objective or constraint values.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.optimize import brentq

from .errors import DimensionMismatch, ValidationError, ZeroTarget
from .fcca import pearson
from ._blockcd import bcd as _bcd
from .kernels import GramSet, build_gram_set, top_gen_eig

log = logging.getLogger(__name__)

SUPPORT_TOL = 1e-6
KKT_TOL = 1e-6


class ReducedView:
    """Stacked eigenbases of one view's Grams with the metric for ``gamma``."""

    def __init__(self, grams: GramSet, gamma: float):
        if not gamma > 0:
            raise ValidationError("gamma must be positive")
        self.grams = grams
        self.gamma = float(gamma)
        bases = [grams.basis(j) for j in range(grams.p)]
        self.U = np.hstack([U for U, _ in bases]) if bases else np.zeros((grams.n, 0))
        self.lam = np.concatenate([lam for _, lam in bases]) if bases else np.zeros(0)
        sizes = [lam.size for _, lam in bases]
        edges = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
        self.blocks = [slice(edges[j], edges[j + 1]) for j in range(grams.p)]
        self.edges = edges.astype(np.int64)
        self.n = grams.n
        self.Q = (self.U.T @ self.U) / self.n
        self.Q[np.diag_indices_from(self.Q)] += self.gamma / self.lam
        self.Q = np.ascontiguousarray(0.5 * (self.Q + self.Q.T))
        self._chol = None
        sizes = np.diff(self.edges)
        self._nonempty = sizes > 0
        self._starts = self.edges[:-1][self._nonempty]

    def permuted(self, perm):
        """Same view with samples reordered; ``Q`` is unchanged by this."""
        out = object.__new__(ReducedView)
        out.__dict__.update(self.__dict__)
        out.grams = self.grams.permuted(perm)
        out.U = self.U[np.asarray(perm)]
        return out

    def with_gamma(self, gamma):
        return ReducedView(self.grams, gamma)

    @property
    def p(self):
        return len(self.blocks)

    @property
    def dim(self):
        return self.lam.size

    def values(self, c):
        """Component values ``(p, n)``."""
        return np.array([self.U[:, b] @ c[b] for b in self.blocks]).reshape(self.p, self.n)

    def total(self, c):
        return self.U @ c

    def group_norms(self, c):
        c = np.asarray(c, dtype=float)
        out = np.zeros(self.p)
        if self.dim:
            out[self._nonempty] = np.sqrt(np.add.reduceat(c * c, self._starts))
        return out / np.sqrt(self.n)

    def solve(self, b):
        """``Q^{-1} b`` through a cached Cholesky factor."""
        if self._chol is None:
            self._chol = cho_factor(self.Q)
        return cho_solve(self._chol, b)

    def quad(self, c):
        return float(c @ self.Q @ c)

    def alpha(self, c):
        """Dual coefficients ``(n, p)`` in the original kernel expansion."""
        out = np.zeros((self.n, self.p))
        for j, b in enumerate(self.blocks):
            out[:, j] = self.U[:, b] @ (c[b] / self.lam[b])
        return out

    def coords_from_alpha(self, alpha):
        alpha = np.asarray(alpha, dtype=float)
        c = np.zeros(self.dim)
        for j, b in enumerate(self.blocks):
            c[b] = self.lam[b] * (self.U[:, b].T @ alpha[:, j])
        return c


@dataclass
class SubproblemResult:
    c: np.ndarray
    tau: float
    mu: float
    kkt: dict
    branch: str
    group: int = -1


def _group_lasso(view: ReducedView, b, pen, c0=None, tol=1e-13, max_sweeps=5000):
    """Block coordinate descent for ``0.5 c'Qc - b'c + pen * sum ||c_j||``.

    Sweeps cycle over the active groups and re-check every group once the
    active ones have settled.
    """
    c = np.zeros(view.dim) if c0 is None else np.array(c0, dtype=float)
    return _bcd(view.Q, np.ascontiguousarray(b), view.edges, float(pen), c, tol, max_sweeps)


def _l1(view, c):
    return float(view.group_norms(c).sum())


def kkt_report(view: ReducedView, b, c, mu, tau, C):
    """Scaled KKT residuals of ``max b'c`` s.t. ``c'Qc <= 1``, group-l1 ``<= C``."""
    w = 1.0 / np.sqrt(view.n)
    grad = b - 2.0 * mu * (view.Q @ c)
    stat = 0.0
    for blk in view.blocks:
        cj = c[blk]
        nc = np.linalg.norm(cj)
        gj = grad[blk]
        if nc > 0:
            stat = max(stat, np.linalg.norm(gj - tau * w * cj / nc))
        else:
            stat = max(stat, max(0.0, np.linalg.norm(gj) - tau * w))
    bn = max(np.linalg.norm(b), 1e-300)
    q = view.quad(c)
    l1 = _l1(view, c)
    slack_l1 = 0.0 if C is None else C - l1
    return {
        "stationarity": stat / bn,
        "primal_quad": max(0.0, q - 1.0),
        "primal_l1": max(0.0, -slack_l1),
        "comp_quad": abs(mu * (q - 1.0)) / bn,
        "comp_l1": abs(tau * slack_l1) / bn,
    }


def sparse_subproblem(a, view: ReducedView, C, warm_start=None, tau_hint=None, tol=1e-7):
    """Best coefficients for one view given the other view's sum ``a``.

    Maximizes ``(1/n) a' sum_j U_j c_j`` subject to the quadratic constraint
    and ``sum_j ||f_j||_2 <= C`` (``C = None`` for no group-l1 constraint).
    The group-l1 multiplier is found by root finding on the penalized problem;
    the quadratic multiplier then follows by rescaling. ``warm_start`` (a
    penalized solution, ``2 mu c``) and ``tau_hint`` come from a previous call.
    """
    a = np.asarray(a, dtype=float)
    if a.shape != (view.n,):
        raise DimensionMismatch(f"target must have {view.n} entries")
    if np.linalg.norm(a) < 1e-12:
        raise ZeroTarget("target vector is zero")
    b = view.U.T @ a / view.n
    if np.linalg.norm(b) < 1e-10 * np.linalg.norm(a) / view.n:
        raise ZeroTarget("target is orthogonal to every Gram range")

    c_free = view.solve(b)
    s = np.sqrt(c_free @ b)
    c_free = c_free / s
    if C is None or _l1(view, c_free) <= C + 1e-12:
        mu = s / 2.0
        return SubproblemResult(c_free, 0.0, mu, kkt_report(view, b, c_free, mu, 0.0, C), "free")

    w = 1.0 / np.sqrt(view.n)
    bnorms = np.array([np.linalg.norm(b[blk]) for blk in view.blocks])
    top = int(np.argmax(bnorms))
    tau_max = bnorms[top] / w
    blk = view.blocks[top]
    bj = b[blk]
    # l1 / sqrt(quad) of the best single group, the largest ratio a tight
    # quadratic constraint can coexist with near tau_max
    ratio_top = bnorms[top] * w / np.sqrt(bj @ view.Q[blk, blk] @ bj)
    if ratio_top >= C:
        # quadratic constraint slack: a linear objective over the group-l1
        # ball is maximized on the group with the largest gradient norm
        c = np.zeros(view.dim)
        c[blk] = bj * (C / (bnorms[top] * w))
        return SubproblemResult(
            c, tau_max, 0.0, kkt_report(view, b, c, 0.0, tau_max, C), "max-norm", top
        )

    state = {"c": warm_start, "best": None}

    def gap(tau):
        c_hat = _group_lasso(view, b, tau * w, state["c"])
        sq = np.sqrt(max(view.quad(c_hat), 0.0))
        if sq == 0:
            state["c"] = None
            return -C
        state["c"] = c_hat
        ratio = _l1(view, c_hat) / sq
        if ratio <= C:
            best = state["best"]
            if best is None or ratio > best[3]:
                state["best"] = (tau, c_hat.copy(), sq, ratio)
        return ratio - C

    hi = tau_max * (1 - 1e-9)
    lo = 0.0
    if tau_hint is not None and 0 < tau_hint < hi:
        # bracket around the previous multiplier, widening until the sign flips
        width = 1e-3
        while width < 1.0:
            a_lo, a_hi = tau_hint * (1 - width), min(tau_hint * (1 + width), hi)
            if gap(a_hi) < 0:
                if gap(a_lo) > 0:
                    lo, hi = a_lo, a_hi
                    break
                hi = a_hi
            width *= 10
    if gap(hi) < 0 and C - state["best"][3] > tol * C:
        brentq(gap, lo, hi, xtol=1e-14 * tau_max, rtol=1e-13, maxiter=200)
    if state["best"] is None:
        # only reachable through rounding right at the single-group ratio
        c = np.zeros(view.dim)
        c[blk] = bj * (C / (bnorms[top] * w))
        return SubproblemResult(
            c, tau_max, 0.0, kkt_report(view, b, c, 0.0, tau_max, C), "max-norm", top
        )
    tau, c_hat, sq, _ = state["best"]
    c = c_hat / sq
    mu = sq / 2.0
    return SubproblemResult(c, tau, mu, kkt_report(view, b, c, mu, tau, C), "threshold")


def nonsparse_additive_kcca(view_x: ReducedView, view_y: ReducedView):
    """Top solution of the additive kernel CCA pencil without sparsity.

    Returns ``(c, d, rho)`` with both quadratic constraints tight.
    """
    dx, dy = view_x.dim, view_y.dim
    M = view_x.U.T @ view_y.U / view_x.n
    A = np.zeros((dx + dy, dx + dy))
    A[:dx, dx:] = M
    A[dx:, :dx] = M.T
    B = np.zeros_like(A)
    B[:dx, :dx] = view_x.Q
    B[dx:, dx:] = view_y.Q
    res = top_gen_eig(A, B)
    c, d = res.vector[:dx], res.vector[dx:]
    c = c / np.sqrt(view_x.quad(c))
    d = d / np.sqrt(view_y.quad(d))
    return c, d, res.value


@dataclass
class KccaModel:
    c: np.ndarray
    d: np.ndarray
    view_x: ReducedView = field(repr=False)
    view_y: ReducedView = field(repr=False)
    objective: float
    iterations: int = 0
    converged: bool = True
    cf: float = None
    cg: float = None
    trace: list = field(default_factory=list)
    kkt: list = field(default_factory=list)

    @property
    def gamma(self):
        return self.view_x.gamma

    @property
    def alpha(self):
        return self.view_x.alpha(self.c)

    @property
    def beta(self):
        return self.view_y.alpha(self.d)

    @property
    def f_norms(self):
        return self.view_x.group_norms(self.c)

    @property
    def g_norms(self):
        return self.view_y.group_norms(self.d)

    @property
    def support_x(self):
        return np.flatnonzero(self.f_norms > SUPPORT_TOL)

    @property
    def support_y(self):
        return np.flatnonzero(self.g_norms > SUPPORT_TOL)

    def recompute_objective(self):
        return float(self.view_x.total(self.c) @ self.view_y.total(self.d) / self.view_x.n)


def make_views(data, gamma, bandwidths=None, kernel="gaussian", grams=None):
    if grams is None:
        bx = by = None
        if bandwidths is not None:
            bx, by = bandwidths
        grams = (build_gram_set(data.x, bx, kernel), build_gram_set(data.y, by, kernel))
    gx, gy = grams
    gamma_f, gamma_g = (gamma, gamma) if np.isscalar(gamma) else gamma
    return ReducedView(gx, gamma_f), ReducedView(gy, gamma_g)


def _feasible(view, c, C):
    """Scale ``c`` onto the boundary of the intersection of both constraints."""
    q = view.quad(c)
    if q <= 0:
        return c
    s = 1.0 / np.sqrt(q)
    if C is not None:
        s = min(s, C / max(_l1(view, c), 1e-300))
    return c * s


def _singular_jump(vx, vy, j, k, cf, cg):
    bx, by = vx.blocks[j], vy.blocks[k]
    M = vx.U[:, bx].T @ vy.U[:, by]
    u, _, vt = np.linalg.svd(M)
    c = np.zeros(vx.dim)
    d = np.zeros(vy.dim)
    c[bx] = u[:, 0] * (cf * np.sqrt(vx.n))
    d[by] = vt[0] * (cg * np.sqrt(vy.n))
    return c, d


def fit_sa_kcca(
    data=None,
    gamma=1e-2,
    cf=None,
    cg=None,
    init=None,
    views=None,
    bandwidths=None,
    kernel="gaussian",
    tol=1e-6,
    max_iter=200,
):
    """Biconvex alternation between the two convex subproblems.

    ``init`` is ``(c, d)`` in reduced coordinates or a :class:`KccaModel`;
    default is the non-sparse solution. A subproblem solution that scores
    below the current iterate (possible only through solver tolerance) is
    not accepted, which makes the objective trace non-decreasing.
    """
    if views is None:
        views = make_views(data, gamma, bandwidths, kernel)
    vx, vy = views
    if init is None:
        c, d, _ = nonsparse_additive_kcca(vx, vy)
    elif isinstance(init, KccaModel):
        c, d = init.c.copy(), init.d.copy()
    else:
        c, d = (np.asarray(v, dtype=float).copy() for v in init)
    n = vx.n

    def obj(c_, d_):
        return float(vx.total(c_) @ vy.total(d_) / n)

    # the init need not satisfy the sparse constraints; start from a g-feasible point
    res = sparse_subproblem(vx.total(c), vy, cg)
    d = res.c
    kkts = [res.kkt]
    first_g = res
    res = sparse_subproblem(vy.total(d), vx, cf)
    c = res.c
    kkts.append(res.kkt)
    cur = obj(c, d)
    trace = [cur]
    last = {"f": res, "g": first_g}
    converged = False
    it = 1
    step = 1.0
    before = None
    while it < max_iter:
        it += 1
        prev = cur
        stalled = False
        if before is not None:
            # safeguarded extrapolation along the last iteration's move; the
            # subproblems that follow restore their optimality conditions
            ec = _feasible(vx, c + step * (c - before[0]), cf)
            ed = _feasible(vy, d + step * (d - before[1]), cg)
            cand = obj(ec, ed)
            if cand > cur:
                c, d, cur = ec, ed, cand
                trace.append(cur)
                step = min(2.0 * step, 64.0)
            else:
                step = 1.0
        before = (c, d)
        for side in ("g", "f"):
            prev_res = last[side]
            hint = {}
            if prev_res is not None and prev_res.branch == "threshold":
                hint = {"warm_start": prev_res.c * (2.0 * prev_res.mu), "tau_hint": prev_res.tau}
            if side == "g":
                res = sparse_subproblem(vx.total(c), vy, cg, **hint)
                cand = obj(c, res.c)
            else:
                res = sparse_subproblem(vy.total(d), vx, cf, **hint)
                cand = obj(res.c, d)
            if cand < cur:
                stalled = True
                break
            if side == "g":
                d = res.c
            else:
                c = res.c
            cur = cand
            trace.append(cur)
            kkts.append(res.kkt)
            last[side] = res
        if not stalled and last["f"].branch == last["g"].branch == "max-norm":
            # with both quadratic constraints slack the alternation is a power
            # iteration on one cross block; jump to its top singular pair
            jc, jd = _singular_jump(vx, vy, last["f"].group, last["g"].group, cf, cg)
            cand = obj(jc, jd)
            if cand > cur:
                c, d, cur = jc, jd, cand
                trace.append(cur)
        if stalled or cur - prev < tol:
            converged = True
            break
    if not converged:
        log.warning("SA-KCCA did not converge in %d iterations", max_iter)
    return KccaModel(c, d, vx, vy, cur, it, converged, cf, cg, trace, kkts)


def evaluate_view(view: ReducedView, coef, new_x):
    new_x = np.asarray(new_x, dtype=float)
    if new_x.shape[1] != view.p:
        raise DimensionMismatch(f"model has {view.p} covariates, data has {new_x.shape[1]}")
    alpha = view.alpha(coef)
    norms = view.group_norms(coef)
    out = np.zeros((view.p, new_x.shape[0]))
    for j in range(view.p):
        if norms[j] > 0:
            out[j] = view.grams.cross(j, new_x[:, j]) @ alpha[:, j]
    return out


def evaluate_kcca(model: KccaModel, new_data):
    fv = evaluate_view(model.view_x, model.c, new_data.x)
    gv = evaluate_view(model.view_y, model.d, new_data.y)
    if not np.any(model.f_norms > 0) or not np.any(model.g_norms > 0):
        corr = 0.0
    else:
        corr = pearson(fv.sum(axis=0), gv.sum(axis=0))
    return {"f_values": fv, "g_values": gv, "correlation": corr}
