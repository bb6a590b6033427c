"""Marginal thresholding: pairwise non-sparse fits and their held-out correlations.

Every ``(x_j, y_k)`` pair gets a one-covariate-per-view fit on the training
half of a shared split; the fitted pair of functions is evaluated on the
held-out half and the Pearson correlation goes into entry ``(j, k)`` of M.
Thresholding M gives the covariates kept for the joint sparse fit.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import SplitPlan, split_half
from .errors import EmptySelection, InvalidDelta, ValidationError
from .fcca import AdditiveFit, fit_fcca, nonsparse_start
from .kernels import build_gram_set, plugin_bandwidth
from .smoothing import build_smoother, local_linear_weights

log = logging.getLogger(__name__)

METHODS = ("kcca-pairwise", "fcca-pairwise")
DEFAULT_GAMMA = 1e-2
ACE_TOL = 1e-10
ACE_MAX_ITER = 200


def default_workers():
    """Worker count from ``SACCA_WORKERS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("SACCA_WORKERS", "1")))
    except ValueError:
        return 1


@dataclass
class MarginalMatrix:
    m: np.ndarray
    method: str
    split: SplitPlan
    gamma: float = DEFAULT_GAMMA
    failures: int = 0

    @property
    def shape(self):
        return self.m.shape


@dataclass
class ScreeningResult:
    selected_x: np.ndarray
    selected_y: np.ndarray
    kept: list
    threshold: float
    rule: str
    epsilon: float = None

    @property
    def empty(self):
        return len(self.kept) == 0


# kernel pairwise features -------------------------------------------------


@dataclass
class _KernelFeatures:
    """Whitened eigen-features of one column on the train and held-out rows.

    For a single covariate the quadratic metric is diagonal in the Gram's
    eigenbasis, so ``train @ u`` for a unit vector ``u`` is a function with
    tight constraint and ``heldout @ u`` is its kernel-expansion extension.
    """

    train: np.ndarray
    heldout: np.ndarray


def _kernel_features(column, split: SplitPlan, gamma, h=None):
    col = np.asarray(column, dtype=float)
    h = plugin_bandwidth(col) if h is None else h
    tr, ho = col[split.train_idx], col[split.holdout_idx]
    gs = build_gram_set(tr[:, None], [h])
    U, lam = gs.basis(0)
    n = tr.size
    q = 1.0 / n + gamma / lam
    scale = 1.0 / np.sqrt(q)
    train = U * scale
    cross = gs.cross(0, ho)
    heldout = cross @ (U * (scale / lam))
    return _KernelFeatures(train, heldout)


def _pad(feats, r):
    out_t = np.zeros((feats.train.shape[0], r))
    out_h = np.zeros((feats.heldout.shape[0], r))
    k = feats.train.shape[1]
    out_t[:, :k] = feats.train
    out_h[:, :k] = feats.heldout
    return out_t, out_h


def _batched_pearson(a, b):
    """Row-wise Pearson correlation of two ``(m, n)`` arrays."""
    a = a - a.mean(axis=1, keepdims=True)
    b = b - b.mean(axis=1, keepdims=True)
    num = np.einsum("ij,ij->i", a, b)
    den = np.sqrt(np.einsum("ij,ij->i", a, a) * np.einsum("ij,ij->i", b, b))
    out = np.zeros(a.shape[0])
    ok = den > 1e-300
    out[ok] = np.clip(num[ok] / den[ok], -1.0, 1.0)
    return out


def _kcca_pairs(first_t, first_h, second_t, second_h):
    """Held-out correlations for stacked pairs ``(first, second)``.

    Inputs are ``(m, n, r)`` train and ``(m, n_h, r)`` held-out features.
    """
    n = first_t.shape[1]
    A = np.einsum("mni,mnj->mij", first_t, second_t) / n
    u, s, vt = np.linalg.svd(A)
    f = np.einsum("mhi,mi->mh", first_h, u[:, :, 0])
    g = np.einsum("mhi,mi->mh", second_h, vt[:, 0, :])
    r = _batched_pearson(f, g)
    r[s[:, 0] <= 1e-14] = 0.0
    return r


def _column_key(col):
    return tuple(np.asarray(col, dtype=float).tolist())


def _kcca_matrix(x, y, split, gamma, workers):
    p1, p2 = x.shape[1], y.shape[1]
    fx = [_kernel_features(x[:, j], split, gamma) for j in range(p1)]
    fy = [_kernel_features(y[:, k], split, gamma) for k in range(p2)]
    r = max(f.train.shape[1] for f in fx + fy)
    px = [_pad(f, r) for f in fx]
    py = [_pad(f, r) for f in fy]
    # a canonical order inside each pair makes swapping the views transpose M
    keys = sorted({_column_key(x[:, j]) for j in range(p1)} | {_column_key(y[:, k]) for k in range(p2)})
    rank = {k: i for i, k in enumerate(keys)}
    rx = [rank[_column_key(x[:, j])] for j in range(p1)]
    ry = [rank[_column_key(y[:, k])] for k in range(p2)]

    def row(j):
        swap = np.array([ry[k] < rx[j] for k in range(p2)])
        xt = np.broadcast_to(px[j][0], (p2,) + px[j][0].shape)
        xh = np.broadcast_to(px[j][1], (p2,) + px[j][1].shape)
        yt = np.stack([t for t, _ in py])
        yh = np.stack([h for _, h in py])
        first_t = np.where(swap[:, None, None], yt, xt)
        first_h = np.where(swap[:, None, None], yh, xh)
        second_t = np.where(swap[:, None, None], xt, yt)
        second_h = np.where(swap[:, None, None], xh, yh)
        return _kcca_pairs(first_t, first_h, second_t, second_h)

    return _run_rows(row, p1, workers)


# smoother pairwise fits ---------------------------------------------------


def _smoother_parts(column, split: SplitPlan, h=None):
    col = np.asarray(column, dtype=float)
    h = plugin_bandwidth(col) if h is None else h
    tr, ho = col[split.train_idx], col[split.holdout_idx]
    return build_smoother(tr, h), local_linear_weights(tr, ho, h)


def _ace_batch(Sx, Sy, y_train):
    """ACE power iteration of one x smoother against stacked y smoothers.

    ``Sy`` is ``(m, n, n)`` and ``y_train`` is ``(m, n)``; returns the final
    ``(f, g)`` values and the vectors each was smoothed from.
    """
    g = y_train - y_train.mean(axis=1, keepdims=True)
    g /= np.maximum(np.sqrt(np.mean(g * g, axis=1, keepdims=True)), 1e-300)
    f = np.zeros_like(g)
    src_f = g
    src_g = f
    for _ in range(ACE_MAX_ITER):
        src_f = g
        f_new = src_f @ Sx.T
        f_new -= f_new.mean(axis=1, keepdims=True)
        nf = np.sqrt(np.mean(f_new * f_new, axis=1, keepdims=True))
        f_new = np.where(nf > 1e-300, f_new / np.maximum(nf, 1e-300), 0.0)
        src_g = f_new
        g_new = np.einsum("mij,mj->mi", Sy, src_g)
        g_new -= g_new.mean(axis=1, keepdims=True)
        ng = np.sqrt(np.mean(g_new * g_new, axis=1, keepdims=True))
        g_new = np.where(ng > 1e-300, g_new / np.maximum(ng, 1e-300), 0.0)
        delta = max(np.max(np.abs(f_new - f)), np.max(np.abs(g_new - g)))
        f, g = f_new, g_new
        if delta <= ACE_TOL:
            break
    return f, g, src_f, src_g


def _fcca_matrix(x, y, split, workers):
    p1, p2 = x.shape[1], y.shape[1]
    parts_x = [_smoother_parts(x[:, j], split) for j in range(p1)]
    parts_y = [_smoother_parts(y[:, k], split) for k in range(p2)]
    Sy = np.stack([s for s, _ in parts_y])
    Wy = np.stack([w for _, w in parts_y])
    y_train = y[split.train_idx].T.copy()

    def row(j):
        Sx, Wx = parts_x[j]
        f, g, src_f, src_g = _ace_batch(Sx, Sy, y_train)
        # extend by smoothing the source vectors at the held-out points
        fh = src_f @ Wx.T
        gh = np.einsum("mij,mj->mi", Wy, src_g)
        r = _batched_pearson(fh, gh)
        dead = (np.abs(f).max(axis=1) == 0) | (np.abs(g).max(axis=1) == 0)
        r[dead] = 0.0
        return r

    return _run_rows(row, p1, workers)


def _run_rows(row, p1, workers):
    failures = 0

    def safe(j):
        try:
            return row(j), 0
        except (ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
            log.warning("marginal fits for x column %d failed: %s", j, exc)
            return None, 1

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(safe, range(p1)))
    else:
        results = [safe(j) for j in range(p1)]
    rows = []
    for res, bad in results:
        failures += bad
        rows.append(res)
    width = next((r.size for r in rows if r is not None), 0)
    m = np.vstack([r if r is not None else np.zeros(width) for r in rows]) if rows else np.zeros((0, 0))
    return m, failures


def _check_method(method):
    if method not in METHODS:
        raise ValidationError(f"unknown screening method {method!r}; choose from {METHODS}")


def marginal_pair_fit(x_col, y_col, method="kcca-pairwise", split=None, gamma=DEFAULT_GAMMA, seed=0):
    """Held-out correlation of the non-sparse fit to one ``(x, y)`` pair."""
    _check_method(method)
    x_col = np.asarray(x_col, dtype=float).reshape(-1, 1)
    y_col = np.asarray(y_col, dtype=float).reshape(-1, 1)
    split = split_half(x_col.shape[0], seed) if split is None else split
    return float(build_marginal_matrix_arrays(x_col, y_col, method, split, gamma)[0][0, 0])


def build_marginal_matrix_arrays(x, y, method, split, gamma=DEFAULT_GAMMA, workers=1):
    try:
        if method == "kcca-pairwise":
            return _kcca_matrix(x, y, split, gamma, workers)
        return _fcca_matrix(x, y, split, workers)
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        log.warning("marginal fit failed: %s", exc)
        return np.zeros((x.shape[1], y.shape[1])), x.shape[1] * y.shape[1]


def build_marginal_matrix(data, method="kcca-pairwise", seed=0, gamma=DEFAULT_GAMMA, workers=None):
    """All ``p1 x p2`` held-out marginal correlations under one shared split."""
    _check_method(method)
    split = split_half(data.n, seed)
    workers = default_workers() if workers is None else workers
    m, failures = build_marginal_matrix_arrays(data.x, data.y, method, split, gamma, workers)
    if failures:
        log.warning("%d marginal fit group(s) failed and were scored 0", failures)
    return MarginalMatrix(m, method, split, gamma, failures)


# thresholding -------------------------------------------------------------


def _result(m, keep, threshold, rule, epsilon=None):
    rows, cols = np.nonzero(keep)
    kept = sorted(zip(rows.tolist(), cols.tolist()))
    return ScreeningResult(
        selected_x=np.unique(rows),
        selected_y=np.unique(cols),
        kept=kept,
        threshold=float(threshold),
        rule=rule,
        epsilon=epsilon,
    )


def threshold_marginals(m, rule="topk", k=None, t=None, epsilon=None):
    """Threshold a marginal matrix.

    ``rule`` is ``"topk"`` (keep the ``k`` largest entries plus any ties with
    the k-th), ``"fixed"`` (entries ``> t``) or ``"theory"`` (entries
    ``> epsilon``, see :func:`theory_epsilon`).
    """
    mat = m.m if isinstance(m, MarginalMatrix) else np.asarray(m, dtype=float)
    if rule == "topk":
        if k is None:
            if not isinstance(m, MarginalMatrix):
                raise ValidationError("topk on a bare matrix needs k")
            k = default_topk(m.split.train_idx.size + m.split.holdout_idx.size)
        k = int(k)
        if k < 0:
            raise ValidationError("k must be non-negative")
        if k == 0 or mat.size == 0:
            return _result(mat, np.zeros(mat.shape, dtype=bool), np.inf, f"topk({k})")
        flat = mat.ravel()
        order = np.lexsort((np.arange(flat.size), -flat))
        cut = flat[order[min(k, flat.size) - 1]]
        return _result(mat, mat >= cut, cut, f"topk({k})")
    if rule == "fixed":
        if t is None:
            raise ValidationError("fixed rule needs a threshold t")
        return _result(mat, mat > t, t, f"fixed({t})")
    if rule == "theory":
        if epsilon is None:
            raise ValidationError("theory rule needs epsilon")
        return _result(mat, mat > epsilon, epsilon, "theory", epsilon)
    raise ValidationError(f"unknown threshold rule {rule!r}")


def default_topk(n):
    return math.ceil(n / 5)


def theory_epsilon(n, p1, p2, delta, c1=1.0, c2=1.0, form="sobolev", zeta=None, c=None):
    """Screening threshold from the uniform deviation bounds.

    ``form="sobolev"``: ``c1 / sqrt(n) + c2 * sqrt(log(p1 p2 / delta) / n)``.
    ``form="rkhs"``: ``zeta + c * sqrt(log(p1 p2 / delta) / n)``.
    """
    if not 0 < delta < 1:
        raise InvalidDelta(f"delta must lie in (0, 1), got {delta}")
    if n < 1:
        raise ValidationError("n must be at least 1")
    tail = math.sqrt(max(math.log(p1 * p2 / delta), 0.0) / n)
    if form == "sobolev":
        return c1 / math.sqrt(n) + c2 * tail
    if form == "rkhs":
        if zeta is None or c is None:
            raise ValidationError("rkhs form needs zeta and c")
        return zeta + c * tail
    raise ValidationError(f"unknown epsilon form {form!r}")


@dataclass
class Calibration:
    """Null scale of M entries estimated from row-permuted Y."""

    sigma: float
    c1: float
    c2: float
    n_perms: int
    null_entries: np.ndarray = field(repr=False, default=None)

    def epsilon(self, n, p1, p2, delta):
        return theory_epsilon(n, p1, p2, delta, self.c1, self.c2)


def calibrate_theory(data, method="kcca-pairwise", n_perms=10, seed=0, gamma=DEFAULT_GAMMA, max_pairs=2000):
    """Calibrate the Sobolev-form constants by permutation.

    Null entries of M are approximately ``N(0, sigma^2 / n)``; a union bound
    over the ``p1 p2`` entries then gives ``c1 = 0`` and
    ``c2 = sqrt(2) * sigma``.
    """
    _check_method(method)
    rng = np.random.default_rng(seed)
    split = split_half(data.n, seed)
    p1, p2 = data.p1, data.p2
    total = p1 * p2
    entries = []
    for _ in range(n_perms):
        perm = rng.permutation(data.n)
        y = data.y[perm]
        if total > max_pairs:
            pick = np.sort(rng.choice(total, max_pairs, replace=False))
            xs = np.unique(pick // p2)
            ys = np.unique(pick % p2)
        else:
            xs, ys = np.arange(p1), np.arange(p2)
        m, _ = build_marginal_matrix_arrays(data.x[:, xs], y[:, ys], method, split, gamma)
        entries.append(m.ravel())
    null = np.concatenate(entries)
    sigma = float(np.sqrt(data.n) * np.std(null))
    return Calibration(sigma, 0.0, math.sqrt(2.0) * sigma, n_perms, null)


# sparse initialization ----------------------------------------------------


def build_sparse_init(data, selected: ScreeningResult, method="kcca", gamma=DEFAULT_GAMMA, views=None, seed=0):
    """Non-sparse fit on the selected covariates, embedded in full dimension.

    For ``"fcca"`` returns an :class:`~sacca.fcca.AdditiveFit` of ``g`` values
    ``(p2, n)``; for ``"kcca"`` returns ``(c, d)`` reduced coordinates of the
    full-dimension views (built here when ``views`` is not given).
    """
    sx = np.asarray(selected.selected_x, dtype=int)
    sy = np.asarray(selected.selected_y, dtype=int)
    if sx.size == 0 or sy.size == 0:
        raise EmptySelection("screening selected no covariates in at least one view")
    sub = data.subset(x_cols=sx, y_cols=sy)
    if method == "fcca":
        model = fit_fcca(sub, None, None, init=nonsparse_start(data.n, seed))
        vals = np.zeros((data.p2, data.n))
        vals[sy] = model.g.values
        return AdditiveFit(vals)
    if method == "kcca":
        from .kcca import make_views, nonsparse_additive_kcca

        vx, vy = make_views(data, gamma) if views is None else views
        sub_views = (_subset_view(vx, sx), _subset_view(vy, sy))
        c_sub, d_sub, _ = nonsparse_additive_kcca(*sub_views)
        return _embed(vx, sx, sub_views[0], c_sub), _embed(vy, sy, sub_views[1], d_sub)
    raise ValidationError(f"unknown method {method!r}")


def _subset_view(view, cols):
    from .kcca import ReducedView

    return ReducedView(view.grams.subset(cols), view.gamma)


def _embed(full, cols, sub, coef):
    out = np.zeros(full.dim)
    for i, j in enumerate(cols):
        out[full.blocks[j]] = coef[sub.blocks[i]]
    return out
