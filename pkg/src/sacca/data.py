"""Paired two-view datasets: ingestion, preprocessing and splitting.

Every solver in the package assumes columns that have mean zero and
population standard deviation one (divisor ``n``), so that
``x_j @ x_j / n == 1``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConstantColumn, DimensionMismatch, TooFewSamples, ValidationError

SD_FLOOR = 1e-12


@dataclass(frozen=True)
class ColumnTransform:
    """Per-column affine map ``(clip(raw, lo, hi) - shift) / scale``."""

    lo: np.ndarray
    hi: np.ndarray
    shift: np.ndarray
    scale: np.ndarray

    @classmethod
    def identity(cls, p):
        return cls(
            lo=np.full(p, -np.inf),
            hi=np.full(p, np.inf),
            shift=np.zeros(p),
            scale=np.ones(p),
        )

    def apply(self, raw):
        raw = np.asarray(raw, dtype=float)
        if raw.ndim != 2 or raw.shape[1] != self.shift.size:
            raise DimensionMismatch(
                f"expected {self.shift.size} columns, got shape {raw.shape}"
            )
        return (np.clip(raw, self.lo, self.hi) - self.shift) / self.scale

    def to_dict(self):
        return {k: getattr(self, k).tolist() for k in ("lo", "hi", "shift", "scale")}

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: np.asarray(d[k], dtype=float) for k in ("lo", "hi", "shift", "scale")})


@dataclass(frozen=True)
class PairedDataset:
    """Two aligned numeric tables sharing their rows (samples).

    ``x`` is ``n x p1`` and ``y`` is ``n x p2``. The transforms map raw input
    columns to the stored values and are what :meth:`transform_like`
    replays on held-out data.
    """

    x: np.ndarray
    y: np.ndarray
    x_transform: ColumnTransform = None
    y_transform: ColumnTransform = None
    standardized: bool = False
    winsorized: bool = False
    x_names: tuple = None
    y_names: tuple = None

    def __post_init__(self):
        x = np.array(self.x, dtype=float)
        y = np.array(self.y, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if y.ndim == 1:
            y = y[:, None]
        if x.ndim != 2 or y.ndim != 2:
            raise ValidationError("x and y must be 2-d tables")
        if x.shape[0] != y.shape[0]:
            raise DimensionMismatch(
                f"x has {x.shape[0]} rows but y has {y.shape[0]}"
            )
        if x.shape[0] < 4:
            raise TooFewSamples(f"need at least 4 samples, got {x.shape[0]}")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValidationError("NaN or Inf entries are not accepted")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        if self.x_transform is None:
            object.__setattr__(self, "x_transform", ColumnTransform.identity(x.shape[1]))
        if self.y_transform is None:
            object.__setattr__(self, "y_transform", ColumnTransform.identity(y.shape[1]))
        if self.x_names is None:
            object.__setattr__(self, "x_names", tuple(f"x{j + 1}" for j in range(x.shape[1])))
        if self.y_names is None:
            object.__setattr__(self, "y_names", tuple(f"y{k + 1}" for k in range(y.shape[1])))

    @property
    def n(self):
        return self.x.shape[0]

    @property
    def p1(self):
        return self.x.shape[1]

    @property
    def p2(self):
        return self.y.shape[1]

    def swap(self):
        """Same data with the two views exchanged."""
        return replace(
            self,
            x=self.y,
            y=self.x,
            x_transform=self.y_transform,
            y_transform=self.x_transform,
            x_names=self.y_names,
            y_names=self.x_names,
        )

    def subset(self, rows=None, x_cols=None, y_cols=None):
        rows = slice(None) if rows is None else np.asarray(rows)
        xc = np.arange(self.p1) if x_cols is None else np.asarray(x_cols, dtype=int)
        yc = np.arange(self.p2) if y_cols is None else np.asarray(y_cols, dtype=int)
        return replace(
            self,
            x=self.x[rows][:, xc],
            y=self.y[rows][:, yc],
            x_transform=_take(self.x_transform, xc),
            y_transform=_take(self.y_transform, yc),
            x_names=tuple(self.x_names[j] for j in xc),
            y_names=tuple(self.y_names[k] for k in yc),
        )

    def permute_y(self, perm):
        """Re-pair the samples by reordering the rows of ``y``."""
        return replace(self, y=self.y[np.asarray(perm)])

    def transform_like(self, x_raw, y_raw):
        """Preprocess raw held-out tables with this dataset's transforms."""
        return PairedDataset(
            self.x_transform.apply(x_raw),
            self.y_transform.apply(y_raw),
            x_transform=self.x_transform,
            y_transform=self.y_transform,
            standardized=self.standardized,
            winsorized=self.winsorized,
            x_names=self.x_names,
            y_names=self.y_names,
        )


def _take(t, cols):
    return ColumnTransform(t.lo[cols], t.hi[cols], t.shift[cols], t.scale[cols])


def _standardize_view(a, t, view):
    mean = a.mean(axis=0)
    centered = a - mean
    sd = np.sqrt(np.mean(centered**2, axis=0))
    bad = np.flatnonzero(sd <= SD_FLOOR)
    if bad.size:
        raise ConstantColumn(int(bad[0]), view)
    out = centered / sd
    # compose with the existing transform: new = ((clip(raw) - s0)/c0 - m)/sd
    new_t = ColumnTransform(t.lo, t.hi, t.shift + t.scale * mean, t.scale * sd)
    return out, new_t


def standardize(data: PairedDataset) -> PairedDataset:
    """Center every column and scale it to unit population sd."""
    x, tx = _standardize_view(data.x, data.x_transform, "x")
    y, ty = _standardize_view(data.y, data.y_transform, "y")
    return replace(data, x=x, y=y, x_transform=tx, y_transform=ty, standardized=True)


def _winsor_bounds(a, multiplier, center):
    if center == "mean":
        c = a.mean(axis=0)
    elif center == "median":
        c = np.median(a, axis=0)
    else:
        raise ValidationError(f"unknown winsorization center {center!r}")
    mad = np.mean(np.abs(a - c), axis=0)
    return c - multiplier * mad, c + multiplier * mad


def winsorize(data: PairedDataset, multiplier: float = 2.0, center: str = "mean") -> PairedDataset:
    """Clamp each column to ``center +/- multiplier * MAD``.

    MAD is the mean absolute deviation about ``center``. Must run before
    standardization; the bounds are stored in raw units so held-out data is
    clipped identically.
    """
    if multiplier < 0:
        raise ValidationError("winsorization multiplier must be non-negative")
    if data.standardized:
        raise ValidationError("winsorize before standardizing")
    out = {}
    for view in ("x", "y"):
        a = getattr(data, view)
        t = getattr(data, f"{view}_transform")
        lo, hi = _winsor_bounds(a, multiplier, center)
        # data is still in raw units here (identity shift/scale)
        out[view] = np.clip(a, lo, hi)
        out[f"{view}_transform"] = ColumnTransform(
            np.maximum(t.lo, lo), np.minimum(t.hi, hi), t.shift, t.scale
        )
    return replace(data, winsorized=True, **out)


def preprocess(data: PairedDataset, winsor: float | None = None, center: str = "mean") -> PairedDataset:
    """Optional winsorization followed by standardization."""
    if winsor is not None:
        data = winsorize(data, winsor, center)
    return standardize(data)


@dataclass(frozen=True)
class SplitPlan:
    train_idx: np.ndarray
    holdout_idx: np.ndarray
    seed: int = field(default=0)


def split_half(n: int, seed: int) -> SplitPlan:
    """Random train/holdout partition of ``range(n)`` into halves."""
    if n < 4:
        raise TooFewSamples(f"need at least 4 samples to split, got {n}")
    perm = np.random.default_rng(seed).permutation(n)
    m = (n + 1) // 2
    return SplitPlan(np.sort(perm[:m]), np.sort(perm[m:]), seed)


def read_csv_table(path):
    """Read a headered, all-numeric CSV into ``(names, values)``."""
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValidationError(f"{path}: empty file")
    header = tuple(h.strip() for h in rows[0])
    body = [r for r in rows[1:] if r and any(c.strip() for c in r)]
    try:
        values = np.array([[float(c) for c in r] for r in body], dtype=float)
    except ValueError as exc:
        raise ValidationError(f"{path}: non-numeric cell ({exc})") from None
    if values.ndim != 2 or values.shape[1] != len(header):
        raise ValidationError(f"{path}: ragged rows or header/column count mismatch")
    if not np.all(np.isfinite(values)):
        raise ValidationError(f"{path}: missing or non-finite values")
    return header, values


def write_csv_table(path, names, values):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for row in np.asarray(values):
            w.writerow([repr(float(v)) for v in row])


def load_pair(x_path, y_path) -> PairedDataset:
    xn, x = read_csv_table(x_path)
    yn, y = read_csv_table(y_path)
    if x.shape[0] != y.shape[0]:
        raise DimensionMismatch(f"{x_path} has {x.shape[0]} rows, {y_path} has {y.shape[0]}")
    return PairedDataset(x, y, x_names=xn, y_names=yn)
