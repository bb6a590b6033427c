"""Comparison methods: linear CCA, diagonal sparse linear CCA, full kernel CCA."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, ValidationError
from .fcca import pearson
from .kernels import RANK_TOL, center_gram, multivariate_bandwidth, top_gen_eig

BISECT_TOL = 1e-12
BISECT_MAX = 200


@dataclass
class LinearCcaSolution:
    u: np.ndarray
    v: np.ndarray
    correlation: float
    iterations: int = 0
    converged: bool = True

    def evaluate(self, new_data):
        if new_data.p1 != self.u.size or new_data.p2 != self.v.size:
            raise DimensionMismatch("new data does not match the fitted dimensions")
        f = new_data.x @ self.u
        g = new_data.y @ self.v
        return {"f_values": f, "g_values": g, "correlation": pearson(f, g)}

    @property
    def support_x(self):
        return np.flatnonzero(np.abs(self.u) > 0)

    @property
    def support_y(self):
        return np.flatnonzero(np.abs(self.v) > 0)


def linear_cca(data, ridge=1e-6):
    """Top canonical pair of standardized data.

    The ridge (scaled by the trace over dimension) only stabilizes the
    pencil; the returned directions have unit sample variance,
    ``u'X'Xu / n = 1``, so ``correlation = u'X'Yv / n`` is the Pearson
    correlation of the canonical variates.
    """
    x, y, n = data.x, data.y, data.n
    p1, p2 = data.p1, data.p2
    cxx = x.T @ x / n
    cyy = y.T @ y / n
    cxy = x.T @ y / n
    A = np.zeros((p1 + p2, p1 + p2))
    A[:p1, p1:] = cxy
    A[p1:, :p1] = cxy.T
    B = np.zeros_like(A)
    B[:p1, :p1] = cxx + ridge * np.trace(cxx) / p1 * np.eye(p1)
    B[p1:, p1:] = cyy + ridge * np.trace(cyy) / p2 * np.eye(p2)
    res = top_gen_eig(A, B)
    u, v = res.vector[:p1], res.vector[p1:]
    u = u / np.sqrt(u @ cxx @ u)
    v = v / np.sqrt(v @ cyy @ v)
    corr = float(u @ cxy @ v)
    if corr < 0:
        v = -v
        corr = -corr
    return LinearCcaSolution(u, v, corr)


def soft_threshold(a, theta):
    return np.sign(a) * np.maximum(np.abs(a) - theta, 0.0)


def l1_normalized(a, c):
    """``S(a, theta) / ||S(a, theta)||_2`` with ``theta`` bisected so the l1 norm is ``<= c``."""
    a = np.asarray(a, dtype=float)
    na = np.linalg.norm(a)
    if na == 0:
        return np.zeros_like(a)
    u = a / na
    if np.abs(u).sum() <= c:
        return u
    lo, hi = 0.0, float(np.abs(a).max())
    for _ in range(BISECT_MAX):
        mid = 0.5 * (lo + hi)
        s = soft_threshold(a, mid)
        ns = np.linalg.norm(s)
        if ns > 0 and np.abs(s).sum() / ns > c:
            lo = mid
        else:
            hi = mid
        if hi - lo <= BISECT_TOL * np.abs(a).max():
            break
    s = soft_threshold(a, hi)
    ns = np.linalg.norm(s)
    if ns == 0:
        # every entry below the bracket top is a tie at the maximum
        s = soft_threshold(a, lo)
        ns = np.linalg.norm(s)
    return s / ns


def sparse_linear_cca(data, c1, c2, max_iter=500, tol=1e-6):
    """Diagonal penalized CCA by alternating soft-thresholded power steps.

    ``u`` and ``v`` have unit Euclidean norm and l1 norms at most ``c1`` and
    ``c2``; the reported correlation is the Pearson correlation of ``Xu`` and
    ``Yv`` on the fitting data.
    """
    p1, p2 = data.p1, data.p2
    if not 1.0 - 1e-12 <= c1 <= np.sqrt(p1) + 1e-12 or not 1.0 - 1e-12 <= c2 <= np.sqrt(p2) + 1e-12:
        raise ValidationError("c1 and c2 must lie in [1, sqrt(p)]")
    x, y, n = data.x, data.y, data.n
    Z = x.T @ y / n
    if not np.any(Z):
        return LinearCcaSolution(np.zeros(p1), np.zeros(p2), 0.0, 0, True)
    _, _, vt = np.linalg.svd(Z)
    v = vt[0]
    u = np.zeros(p1)
    prev = -np.inf
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        u = l1_normalized(Z @ v, c1)
        v = l1_normalized(Z.T @ u, c2)
        cur = float(u @ Z @ v)
        if abs(cur - prev) < tol:
            converged = True
            break
        prev = cur
    corr = pearson(x @ u, y @ v)
    return LinearCcaSolution(u, v, corr, it, converged)


@dataclass
class FullKccaModel:
    alpha: np.ndarray
    beta: np.ndarray
    correlation: float
    gamma: float
    bandwidths: tuple
    design_x: np.ndarray = field(repr=False, default=None)
    design_y: np.ndarray = field(repr=False, default=None)
    means: dict = field(repr=False, default_factory=dict)

    def _cross(self, new, design, h, key):
        d2 = (
            np.sum(new**2, axis=1)[:, None]
            + np.sum(design**2, axis=1)[None, :]
            - 2.0 * new @ design.T
        )
        K = np.exp(-np.maximum(d2, 0.0) / (2.0 * h * h))
        row_means, grand = self.means[key]
        return K - K.mean(axis=1, keepdims=True) - row_means[None, :] + grand

    def evaluate(self, new_data):
        if new_data.p1 != self.design_x.shape[1] or new_data.p2 != self.design_y.shape[1]:
            raise DimensionMismatch("new data does not match the fitted dimensions")
        f = self._cross(new_data.x, self.design_x, self.bandwidths[0], "x") @ self.alpha
        g = self._cross(new_data.y, self.design_y, self.bandwidths[1], "y") @ self.beta
        return {"f_values": f, "g_values": g, "correlation": pearson(f, g)}


def _gaussian_gram(rows, h):
    sq = np.sum(rows**2, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * rows @ rows.T, 0.0)
    return np.exp(-d2 / (2.0 * h * h))


def _whitened(K, gamma, n):
    lam, U = np.linalg.eigh(K)
    keep = lam > max(lam[-1], 0.0) * RANK_TOL
    U, lam = U[:, keep], lam[keep]
    q = 1.0 / n + gamma / lam
    return U, lam, q


def full_kcca(data, gamma=1e-2, bandwidths=None):
    """Regularized kernel CCA with one multivariate Gaussian Gram per view.

    Maximizes ``a' Kx Ky b / n`` subject to ``a'(Kx^2 / n + gamma Kx)a <= 1``
    (and the Y analogue); solved in each Gram's eigenbasis, where the pencil
    reduces to a singular value problem.
    """
    if not gamma > 0:
        raise ValidationError("gamma must be positive")
    n = data.n
    hx, hy = bandwidths if bandwidths is not None else (multivariate_bandwidth(data.x), multivariate_bandwidth(data.y))
    Kx_raw = _gaussian_gram(data.x, hx)
    Ky_raw = _gaussian_gram(data.y, hy)
    Kx, Ky = center_gram(Kx_raw), center_gram(Ky_raw)
    Ux, lx, qx = _whitened(Kx, gamma, n)
    Uy, ly, qy = _whitened(Ky, gamma, n)
    A = (Ux / np.sqrt(qx)).T @ (Uy / np.sqrt(qy)) / n
    u, s, vt = np.linalg.svd(A)
    c = u[:, 0] / np.sqrt(qx)
    d = vt[0] / np.sqrt(qy)
    alpha = Ux @ (c / lx)
    beta = Uy @ (d / ly)
    means = {
        "x": (Kx_raw.mean(axis=0), Kx_raw.mean()),
        "y": (Ky_raw.mean(axis=0), Ky_raw.mean()),
    }
    return FullKccaModel(alpha, beta, float(s[0]), gamma, (hx, hy), data.x.copy(), data.y.copy(), means)
