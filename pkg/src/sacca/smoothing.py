"""Local-linear smoother matrices and out-of-sample extension.

Row ``i`` of a smoother holds the weights of a degree-1 weighted least
squares fit evaluated at ``x_i``, with Gaussian weights. The fit is written
around the local weighted mean, which keeps constant and linear
reproduction exact to rounding even for narrow bandwidths.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, NonpositiveBandwidth, SingularLocalFit
from .kernels import resolve_bandwidths

WEIGHT_FLOOR = 1e-12
INFLATE = 1.5
MAX_INFLATIONS = 5


def _weights_at(design, points, h):
    d = design[None, :] - points[:, None]
    w = np.exp(-(d * d) / (2.0 * h * h))
    s0 = w.sum(axis=1)
    xbar = (w @ design) / np.where(s0 > 0, s0, 1.0)
    dc = design[None, :] - xbar[:, None]
    v = np.sum(w * dc * dc, axis=1)
    # a local fit needs two distinct design points carrying weight
    live = w > WEIGHT_FLOOR
    hi = np.where(live, design[None, :], -np.inf).max(axis=1)
    lo = np.where(live, design[None, :], np.inf).min(axis=1)
    ok = (hi > lo) & (v > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        W = w / s0[:, None] + ((points - xbar) / v)[:, None] * (w * dc)
    return W, ok


def local_linear_weights(design, points, h):
    """Matrix ``W`` with ``W @ values`` = local-linear fit at ``points``.

    Evaluation points whose local fit is singular get their bandwidth
    inflated by 1.5, at most five times.
    """
    design = np.asarray(design, dtype=float).ravel()
    points = np.asarray(points, dtype=float).ravel()
    if not h > 0:
        raise NonpositiveBandwidth(f"bandwidth must be positive, got {h}")
    if design.size < 2:
        raise SingularLocalFit("need at least two design points")
    W, ok = _weights_at(design, points, h)
    hh = h
    for _ in range(MAX_INFLATIONS):
        if ok.all():
            break
        hh *= INFLATE
        bad = np.flatnonzero(~ok)
        Wb, okb = _weights_at(design, points[bad], hh)
        W[bad] = Wb
        ok[bad] = okb
    if not ok.all():
        raise SingularLocalFit(
            f"local fit singular at {int((~ok).sum())} point(s) after bandwidth inflation"
        )
    return W


def build_smoother(column, h):
    """``n x n`` local-linear smoother on the column's own sample points."""
    column = np.asarray(column, dtype=float).ravel()
    if column.size < 3:
        raise SingularLocalFit("need at least three samples to build a smoother")
    return local_linear_weights(column, column, h)


def smooth_apply(S, values):
    values = np.asarray(values, dtype=float)
    if values.shape[0] != S.shape[1]:
        raise DimensionMismatch(f"smoother expects {S.shape[1]} values, got {values.shape[0]}")
    return S @ values


def extend_fit(column, fitted, new_points, h):
    """Evaluate the local-linear fit of ``(column, fitted)`` at new points.

    At the design points this returns ``S @ fitted``, which equals ``fitted``
    whenever ``fitted`` is reproduced by the smoother (constants, linear
    functions). Fitted additive components are extended by smoothing their
    source vector instead; see :func:`sacca.fcca.evaluate_fit`.
    """
    fitted = np.asarray(fitted, dtype=float)
    column = np.asarray(column, dtype=float).ravel()
    if fitted.shape[0] != column.size:
        raise DimensionMismatch("fitted values and design points differ in length")
    return local_linear_weights(column, new_points, h) @ fitted


@dataclass
class SmootherSet:
    """Stacked smoother matrices ``(p, n, n)`` for one view."""

    smoothers: np.ndarray
    bandwidths: np.ndarray
    design: np.ndarray

    @property
    def p(self):
        return self.smoothers.shape[0]

    @property
    def n(self):
        return self.smoothers.shape[1]

    def apply(self, values):
        """``S_j @ values`` for every covariate, as a ``(p, n)`` array."""
        values = np.asarray(values, dtype=float)
        if values.shape[0] != self.n:
            raise DimensionMismatch(f"expected {self.n} values, got {values.shape[0]}")
        return self.smoothers @ values

    def extension(self, j, new_points):
        return local_linear_weights(self.design[:, j], new_points, self.bandwidths[j])

    def permuted(self, perm):
        perm = np.asarray(perm)
        return SmootherSet(
            self.smoothers[:, perm][:, :, perm], self.bandwidths, self.design[perm]
        )

    def subset(self, cols):
        cols = np.asarray(cols, dtype=int)
        return SmootherSet(self.smoothers[cols], self.bandwidths[cols], self.design[:, cols])


def build_smoother_set(data, bandwidths=None):
    data = np.asarray(data, dtype=float)
    if data.ndim == 1:
        data = data[:, None]
    bw = resolve_bandwidths(data, bandwidths)
    n, p = data.shape
    S = np.empty((p, n, n))
    for j in range(p):
        S[j] = build_smoother(data[:, j], bw[j])
    return SmootherSet(S, bw, data.copy())
