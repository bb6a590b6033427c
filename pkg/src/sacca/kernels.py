"""Kernels, per-covariate Gram matrices and the generalized eigensolver."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import DegenerateColumn, NonpositiveBandwidth, NotPositiveDefinite

BANDWIDTH_SUBSAMPLE = 2000
RANK_TOL = 1e-9


def gaussian_kernel(x, y, h):
    """``exp(-(x - y)^2 / (2 h^2))``, broadcasting over arrays."""
    if not h > 0:
        raise NonpositiveBandwidth(f"bandwidth must be positive, got {h}")
    d = np.subtract(x, y)
    return np.exp(-(d * d) / (2.0 * h * h))


def linear_kernel(x, y, h=None):
    return np.multiply(x, y)


KERNELS = {"gaussian": gaussian_kernel, "linear": linear_kernel}


def kernel_matrix(a, b, h, kernel="gaussian"):
    """Kernel evaluations between 1-d point sets ``a`` (rows) and ``b``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return KERNELS[kernel](a[:, None], b[None, :], h)


def plugin_bandwidth(column, rng=None):
    """Median absolute difference over all pairs of points.

    Columns longer than 2000 are subsampled (seeded, default seed 0) first.
    """
    col = np.asarray(column, dtype=float).ravel()
    if col.size > BANDWIDTH_SUBSAMPLE:
        rng = np.random.default_rng(0) if rng is None else rng
        col = rng.choice(col, BANDWIDTH_SUBSAMPLE, replace=False)
    if col.size < 2 or np.all(col == col[0]):
        raise DegenerateColumn("bandwidth needs at least two distinct values")
    iu = np.triu_indices(col.size, k=1)
    d = np.abs(col[iu[0]] - col[iu[1]])
    h = float(np.median(d))
    if h <= 0:
        # more than half the pairs are ties; fall back to the positive distances
        h = float(np.median(d[d > 0]))
    return h


def multivariate_bandwidth(rows):
    """Median Euclidean distance between distinct rows."""
    rows = np.asarray(rows, dtype=float)
    if rows.shape[0] > BANDWIDTH_SUBSAMPLE:
        idx = np.random.default_rng(0).choice(rows.shape[0], BANDWIDTH_SUBSAMPLE, replace=False)
        rows = rows[idx]
    sq = np.sum(rows**2, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * rows @ rows.T
    iu = np.triu_indices(rows.shape[0], k=1)
    d = np.sqrt(np.maximum(d2[iu], 0.0))
    if not np.any(d > 0):
        raise DegenerateColumn("all rows identical")
    h = float(np.median(d))
    return h if h > 0 else float(np.median(d[d > 0]))


def center_gram(K):
    """Double centering ``H K H`` with ``H = I - 11'/n``."""
    K = np.asarray(K, dtype=float)
    r = K.mean(axis=0)
    c = K.mean(axis=1)
    out = K - r[None, :] - c[:, None] + K.mean()
    return 0.5 * (out + out.T)


def _constant_complement(n):
    """Orthonormal ``(n, n - 1)`` basis of vectors with zero sum (a Householder reflector)."""
    v = np.full(n, 1.0 / np.sqrt(n))
    v[0] -= 1.0
    H = np.eye(n) - 2.0 * np.outer(v, v) / (v @ v)
    return H[:, 1:]


@dataclass
class GramSet:
    """Centered Gram matrices, one per covariate of a view.

    Besides the matrices, this keeps what is needed to evaluate kernel
    expansions at new points with the training centering applied.
    """

    grams: list
    bandwidths: np.ndarray
    design: np.ndarray
    kernel: str = "gaussian"
    centered: bool = True
    row_means: list = field(default_factory=list)
    grand_means: np.ndarray = None
    _basis: dict = field(default_factory=dict, repr=False)

    @property
    def p(self):
        return len(self.grams)

    @property
    def n(self):
        return self.design.shape[0]

    def basis(self, j):
        """Orthonormal eigenbasis ``U`` and eigenvalues ``lam`` of Gram ``j``.

        Eigenvalues below ``RANK_TOL * max`` are dropped; every quantity in
        the kernel CCA programs depends on coefficients only through the
        Gram's range.
        """
        if j not in self._basis:
            K = self.grams[j]
            if self.centered and self.n > 1:
                # a centered Gram annihilates constants; decompose it on the
                # complement so that tiny eigenvectors cannot pick them up
                Z = _constant_complement(self.n)
                lam, V = np.linalg.eigh(Z.T @ K @ Z)
                U = Z @ V
            else:
                lam, U = np.linalg.eigh(K)
            top = lam[-1] if lam.size else 0.0
            keep = lam > max(top, 0.0) * RANK_TOL
            if top <= 0 or not np.any(keep):
                self._basis[j] = (np.zeros((self.n, 0)), np.zeros(0))
            else:
                U = U[:, keep][:, ::-1]
                lam = lam[keep][::-1]
                # fix eigenvector signs for reproducibility
                s = np.sign(U[np.argmax(np.abs(U), axis=0), np.arange(U.shape[1])])
                self._basis[j] = (U * s, lam)
        return self._basis[j]

    def permuted(self, perm):
        """GramSet for the same covariates with samples reordered."""
        perm = np.asarray(perm)
        out = GramSet(
            grams=[K[np.ix_(perm, perm)] for K in self.grams],
            bandwidths=self.bandwidths,
            design=self.design[perm],
            kernel=self.kernel,
            centered=self.centered,
            row_means=[r[perm] for r in self.row_means],
            grand_means=self.grand_means,
        )
        for j, (U, lam) in self._basis.items():
            out._basis[j] = (U[perm], lam)
        return out

    def subset(self, cols):
        cols = list(cols)
        out = GramSet(
            grams=[self.grams[j] for j in cols],
            bandwidths=self.bandwidths[cols],
            design=self.design[:, cols],
            kernel=self.kernel,
            centered=self.centered,
            row_means=[self.row_means[j] for j in cols],
            grand_means=self.grand_means[cols],
        )
        for i, j in enumerate(cols):
            if j in self._basis:
                out._basis[i] = self._basis[j]
        return out

    def cross(self, j, new_points):
        """Centered kernel between new points (rows) and the design of ``j``."""
        Kn = kernel_matrix(new_points, self.design[:, j], self.bandwidths[j], self.kernel)
        if not self.centered:
            return Kn
        return Kn - Kn.mean(axis=1, keepdims=True) - self.row_means[j][None, :] + self.grand_means[j]


def resolve_bandwidths(data, bandwidths=None):
    """Per-column bandwidths; ``None``/``"auto"`` means the plug-in rule."""
    data = np.asarray(data, dtype=float)
    p = data.shape[1]
    if bandwidths is None or (isinstance(bandwidths, str) and bandwidths == "auto"):
        return np.array([plugin_bandwidth(data[:, j]) for j in range(p)])
    bw = np.broadcast_to(np.asarray(bandwidths, dtype=float), (p,)).copy()
    if np.any(bw <= 0):
        raise NonpositiveBandwidth("bandwidths must be positive")
    return bw


def build_gram_set(data, bandwidths=None, kernel="gaussian", center=True):
    """Per-covariate Gram matrices of an ``n x p`` table."""
    data = np.asarray(data, dtype=float)
    if data.ndim == 1:
        data = data[:, None]
    bw = resolve_bandwidths(data, bandwidths) if kernel == "gaussian" else np.ones(data.shape[1])
    grams, row_means, grand = [], [], []
    for j in range(data.shape[1]):
        K = kernel_matrix(data[:, j], data[:, j], bw[j], kernel)
        row_means.append(K.mean(axis=0))
        grand.append(K.mean())
        grams.append(center_gram(K) if center else 0.5 * (K + K.T))
    return GramSet(
        grams=grams,
        bandwidths=bw,
        design=data.copy(),
        kernel=kernel,
        centered=center,
        row_means=row_means,
        grand_means=np.array(grand),
    )


@dataclass(frozen=True)
class GenEigResult:
    value: float
    vector: np.ndarray
    residual_norm: float


def _canonical_sign(w):
    i = int(np.argmax(np.abs(w)))
    return -w if w[i] < 0 else w


def top_gen_eig(A, B, ridge=1e-8):
    """Largest eigenpair of the symmetric-definite pencil ``A w = rho B w``.

    Uses the Cholesky reduction of LAPACK's ``sygvx``. If ``B`` is not
    numerically positive definite, ``ridge * trace(B) / dim`` is added to its
    diagonal once before giving up. The returned vector has ``w' B w = 1``
    (with the ``B`` actually factorized) and a fixed sign.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    A = 0.5 * (A + A.T)
    B = 0.5 * (B + B.T)
    d = A.shape[0]
    Bf = B
    for attempt in range(2):
        try:
            vals, vecs = sla.eigh(A, Bf, subset_by_index=[d - 1, d - 1])
            break
        except (np.linalg.LinAlgError, sla.LinAlgError):
            if attempt == 1:
                raise NotPositiveDefinite("B is not positive definite even with ridge") from None
            tr = np.trace(B)
            Bf = B + np.eye(d) * (ridge * (tr if tr > 0 else 1.0) / d)
    rho = float(vals[-1])
    w = _canonical_sign(vecs[:, -1])
    res = float(np.linalg.norm(A @ w - rho * (Bf @ w)))
    return GenEigResult(rho, w, res)
