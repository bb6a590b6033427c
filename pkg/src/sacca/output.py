"""Deterministic TSV output, gnuplot companions and optional figures."""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path

import numpy as np

from . import __version__

DIGITS = 10


def fmt(v):
    """One cell at 10 significant digits; integers and strings verbatim."""
    if v is None:
        return "NA"
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        out = format(v, f".{DIGITS}g")
        return "0" if out == "-0" else out
    if isinstance(v, (tuple, list, np.ndarray)):
        return ",".join(fmt(x) for x in v)
    return str(v)


def config_hash(config: dict):
    """Short SHA-256 of the canonical JSON form of ``config``."""
    blob = json.dumps(config, sort_keys=True, default=str, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def header_lines(command, config, seed):
    return [
        f"# sacca {__version__}",
        f"# command: {command}",
        f"# config_hash: {config_hash(config)}",
        f"# seed: {seed}",
    ]


def write_tsv(path, columns, rows, command, config, seed):
    path = Path(path)
    lines = header_lines(command, config, seed)
    lines.append("\t".join(columns))
    lines.extend("\t".join(fmt(v) for v in row) for row in rows)
    path.write_text("\n".join(lines) + "\n")
    return path


def read_tsv(path):
    """Header comments, column names and string rows of a written TSV."""
    comments, body = [], []
    for line in Path(path).read_text().splitlines():
        (comments if line.startswith("#") else body).append(line)
    cols = body[0].split("\t")
    return comments, cols, [r.split("\t") for r in body[1:]]


# gnuplot ------------------------------------------------------------------

_GNUPLOT = {
    "path": """set key off
set xlabel 'C'
set ylabel 'group norm'
set logscale x
# columns: C view index name norm relevant
plot for [v in "x y"] '{tsv}' using (strcol(2) eq v ? $1 : 1/0):5 with linespoints title v
""",
    "tune": """set xlabel 'C'
set ylabel 'z'
set logscale x
plot '{tsv}' using 1:6 with linespoints title 'z-score'
""",
    "matrix": """set xlabel 'y index'
set ylabel 'x index'
# columns: x_index y_index x_name y_name score kept
plot '{tsv}' using 2:1:5 with image title 'marginal correlation'
""",
    "bench": """set xlabel 'repeat'
set ylabel 'test correlation'
set yrange [-1:1]
# the aggregate row ('all') is not numeric in column 1 and is skipped
plot '{tsv}' using 1:3 with points title 'per repeat'
""",
}


def write_gnuplot(tsv_path, kind):
    tsv_path = Path(tsv_path)
    script = "set datafile separator '\\t'\nset datafile commentschars '#'\n"
    script += f"set terminal pngcairo\nset output '{tsv_path.stem}.png'\n"
    script += _GNUPLOT[kind].format(tsv=tsv_path.name)
    out = tsv_path.with_suffix(".gp")
    out.write_text(script)
    return out


# matplotlib figures (optional dependency) ---------------------------------


def _pyplot():
    try:
        import matplotlib
    except ImportError as exc:
        raise RuntimeError("figures need matplotlib; install the 'figures' extra") from exc
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": None})


def figure_path(rows, out_png):
    """Group norm against C, one line per covariate, relevant ones highlighted."""
    plt = _pyplot()
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5), sharey=True)
    for ax, view in zip(axes, ("x", "y")):
        idx = sorted({r.index for r in rows if r.view == view})
        for j in idx:
            pts = sorted((r.c, r.norm, r.relevant) for r in rows if r.view == view and r.index == j)
            cs = [p[0] for p in pts]
            ns = [p[1] for p in pts]
            rel = pts[0][2]
            ax.plot(cs, ns, color="C3" if rel else "0.6", lw=2 if rel else 1, marker="o", ms=3)
        ax.set_xscale("log")
        ax.set_xlabel("C")
        ax.set_title(f"view {view}")
    axes[0].set_ylabel("group norm")
    _save(fig, out_png)
    plt.close(fig)
    return Path(out_png)


def figure_tune(report, out_png):
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    gammas = sorted({r.gamma for r in report.rows}, key=lambda g: -1 if g is None else g)
    for g in gammas:
        pts = [(r.c, r.z) for r in report.rows if r.gamma == g and r.valid]
        if pts:
            label = "z" if g is None else f"gamma={g:g}"
            ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=label)
    best = report.best
    if best.c is not None:
        ax.axvline(best.c, color="0.5", ls="--")
        ax.set_xscale("log")
        ax.set_xlabel("C")
    ax.set_ylabel("permutation z-score")
    ax.legend()
    _save(fig, out_png)
    plt.close(fig)
    return Path(out_png)


def figure_matrix(m, out_png):
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 4))
    im = ax.imshow(m, cmap="viridis", aspect="auto", vmin=-1, vmax=1)
    ax.set_xlabel("y covariate")
    ax.set_ylabel("x covariate")
    fig.colorbar(im, ax=ax, label="held-out correlation")
    _save(fig, out_png)
    plt.close(fig)
    return Path(out_png)


def figure_bench(metrics, out_png):
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    recs = metrics.ok
    ax.plot(range(len(recs)), [r.test_correlation for r in recs], "o")
    ax.axhline(metrics.test_correlation, color="C3", ls="--", label="mean")
    ax.set_ylim(-1, 1)
    ax.set_xlabel("repeat")
    ax.set_ylabel("test correlation")
    ax.legend()
    _save(fig, out_png)
    plt.close(fig)
    return Path(out_png)
