"""JSON model artifacts.

An artifact stores the preprocessing transforms, the screened columns and,
for every fitted covariate, its component function as a table of
(design point, value) pairs. Re-evaluating an artifact interpolates those
tables linearly and holds the end values outside the design range, so on
the training rows it reproduces the fitted values exactly. Linear methods
also store their coefficients and full kernel CCA its dual expansion, and
those are evaluated exactly instead.
"""

from __future__ import annotations

import json
import platform
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .data import ColumnTransform, PairedDataset
from .errors import DimensionMismatch, ValidationError
from .fcca import pearson

FORMAT = "sacca-model/1"


def _table(points, values):
    """Sorted unique design points; duplicated points keep their mean value."""
    pts, inv = np.unique(points, return_inverse=True)
    vals = np.zeros(pts.size)
    np.add.at(vals, inv, values)
    vals /= np.bincount(inv, minlength=pts.size)
    return pts.tolist(), vals.tolist()


def _view_block(names, transform, cols, design, values, norms, support):
    comps = []
    for i, j in enumerate(cols):
        pts, vals = _table(design[:, i], values[i])
        comps.append({"index": int(j), "name": names[j], "norm": float(norms[i]),
                      "points": pts, "values": vals})
    return {
        "names": list(names),
        "transform": transform.to_dict(),
        "selected": [int(j) for j in cols],
        "support": [int(cols[k]) for k in support],
        "components": comps,
    }


def build_artifact(outcome, full_data, config, seed):
    """Serializable dict for a :class:`~sacca.pipeline.PipelineOutcome`.

    ``full_data`` is the preprocessed dataset before screening; its names
    and transforms describe the raw input files.
    """
    fit = outcome.fit
    work = outcome.data
    art = {
        "format": FORMAT,
        "method": fit.method,
        "hyper": {"c": fit.c, "gamma": fit.gamma, "bandwidth": config.get("bandwidth")},
        "objective": float(fit.objective),
        "converged": bool(fit.converged),
        "iterations": int(fit.iterations),
        "n": int(work.n),
        "provenance": {
            "seed": seed,
            "config": config,
            "versions": {"sacca": __version__, "numpy": np.__version__,
                         "scipy": scipy.__version__, "python": platform.python_version()},
        },
    }
    if outcome.tuning is not None:
        best = outcome.tuning.best
        art["tuning"] = {"c": best.c, "gamma": best.gamma, "z": best.z,
                         "statistic": outcome.tuning.grid.statistic}
    if fit.method == "kcca-full":
        m = fit.model
        art["x"] = {"names": list(full_data.x_names), "transform": full_data.x_transform.to_dict(),
                    "selected": list(range(work.p1)), "support": list(range(work.p1)), "components": []}
        art["y"] = {"names": list(full_data.y_names), "transform": full_data.y_transform.to_dict(),
                    "selected": list(range(work.p2)), "support": list(range(work.p2)), "components": []}
        art["full_kernel"] = {
            "alpha": m.alpha.tolist(), "beta": m.beta.tolist(), "bandwidths": list(m.bandwidths),
            "design_x": m.design_x.tolist(), "design_y": m.design_y.tolist(),
            "means_x": [m.means["x"][0].tolist(), float(m.means["x"][1])],
            "means_y": [m.means["y"][0].tolist(), float(m.means["y"][1])],
        }
        return art
    art["x"] = _view_block(full_data.x_names, full_data.x_transform, outcome.x_cols, work.x,
                           fit.f_values, fit.norms_x, fit.support_x)
    art["y"] = _view_block(full_data.y_names, full_data.y_transform, outcome.y_cols, work.y,
                           fit.g_values, fit.norms_y, fit.support_y)
    if fit.method in ("scca", "linear"):
        art["coef_x"] = fit.model.u.tolist()
        art["coef_y"] = fit.model.v.tolist()
    return art


def save_artifact(art, path):
    Path(path).write_text(json.dumps(art, indent=1, sort_keys=True) + "\n")


def load_artifact(path):
    art = json.loads(Path(path).read_text())
    if art.get("format") != FORMAT:
        raise ValidationError(f"{path}: not a {FORMAT} artifact")
    return art


def _standardized(art, view, raw):
    block = art[view]
    t = ColumnTransform.from_dict(block["transform"])
    if raw.shape[1] != len(block["names"]):
        raise DimensionMismatch(f"artifact expects {len(block['names'])} {view} columns, got {raw.shape[1]}")
    return t.apply(raw)[:, block["selected"]]


def _components(block, z):
    out = np.zeros((len(block["components"]), z.shape[0]))
    for i, comp in enumerate(block["components"]):
        if comp["norm"] > 0:
            out[i] = np.interp(z[:, i], comp["points"], comp["values"])
    return out


def evaluate_artifact(art, x_raw, y_raw):
    """Component sums, correlation and mean cross product on raw tables."""
    x_raw = np.atleast_2d(np.asarray(x_raw, dtype=float))
    y_raw = np.atleast_2d(np.asarray(y_raw, dtype=float))
    zx = _standardized(art, "x", x_raw)
    zy = _standardized(art, "y", y_raw)
    if "full_kernel" in art:
        from .baselines import FullKccaModel

        fk = art["full_kernel"]
        m = FullKccaModel(
            np.asarray(fk["alpha"]), np.asarray(fk["beta"]), art["objective"], art["hyper"]["gamma"],
            tuple(fk["bandwidths"]), np.asarray(fk["design_x"]), np.asarray(fk["design_y"]),
            {"x": (np.asarray(fk["means_x"][0]), fk["means_x"][1]),
             "y": (np.asarray(fk["means_y"][0]), fk["means_y"][1])},
        )
        out = m.evaluate(PairedDataset(zx, zy))
        f, g = out["f_values"], out["g_values"]
    elif "coef_x" in art:
        f = zx @ np.asarray(art["coef_x"])
        g = zy @ np.asarray(art["coef_y"])
    else:
        f = _components(art["x"], zx).sum(axis=0)
        g = _components(art["y"], zy).sum(axis=0)
    return {"f": f, "g": g, "correlation": pearson(f, g), "objective": float(f @ g / f.shape[0])}
