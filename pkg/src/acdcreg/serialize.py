"""JSON and CSV persistence for fits, reports, and harness tables.

Schemas are plain nested dicts of native types, written with sorted
keys so identical inputs produce identical bytes.  The component record
stores the fitted curve in sorted-x order together with the slopes
between consecutive points; that pair is exactly what the supporting
hyperplane predictor needs, so records round-trip through
``component_from_record`` without touching the training data.
"""

import csv
import hashlib
import json
import platform
from importlib import metadata

import numpy as np

from .data import Dataset, Permutation
from .univariate import CONCAVE, CONVEX, UnivariateFit

__all__ = [
    "component_from_record",
    "component_record",
    "condition_record",
    "config_hash",
    "model_record",
    "report_record",
    "run_metadata",
    "write_csv",
    "write_dataset_csv",
    "write_json",
]


def _floats(values):
    return [float(v) for v in np.asarray(values).ravel()]


# ---- record builders -------------------------------------------------------


def component_record(fit, lam=None):
    """One fitted component as a plain dict.

    Keys: ``coordinate``, ``x`` (sorted), ``values`` (matching x),
    ``slopes`` (between consecutive sorted points), ``curvature``,
    ``shape``, ``sup_norm``, and ``lambda`` when given.
    """
    rec = {
        "coordinate": int(fit.coordinate),
        "x": _floats(fit.x_sorted),
        "values": _floats(fit.values_sorted),
        "slopes": _floats(fit.slopes),
        "curvature": _floats(fit.curvature),
        "shape": fit.shape,
        "sup_norm": float(fit.sup_norm),
    }
    if lam is not None:
        rec["lambda"] = float(lam)
    return rec


def component_from_record(rec):
    """Rebuild a UnivariateFit from ``component_record`` output."""
    shape = rec["shape"]
    if shape not in (CONVEX, CONCAVE):
        raise ValueError(f"unknown shape {shape!r}")
    x = np.asarray(rec["x"], dtype=float)
    values = np.asarray(rec["values"], dtype=float)
    order = np.arange(x.shape[0])
    perm = Permutation(order=order, coordinate=int(rec["coordinate"]))
    return UnivariateFit(
        coordinate=int(rec["coordinate"]), perm=perm, x_sorted=x,
        values=values, slopes=np.asarray(rec["slopes"], dtype=float),
        curvature=np.asarray(rec["curvature"], dtype=float), shape=shape,
        sup_norm=float(np.abs(values).max(initial=0.0)))


def model_record(model):
    """Additive fit as a dict: mean, penalty, trace, and components."""
    return {
        "mu": float(model.mu),
        "lambda": float(model.lam),
        "cycles": int(model.cycles),
        "converged": bool(model.converged),
        "objective_trace": _floats(model.objective_trace),
        "components": [component_record(c) for c in model.components],
    }


def report_record(report):
    """Selection report as a dict; concave norms keyed by coordinate."""
    return {
        "selected": [int(k) for k in report.selected],
        "lambda": float(report.lam),
        "threshold": float(report.threshold),
        "ac_norms": _floats(report.ac_norms),
        "dc_norms": [
            {"coordinate": int(k), "norm": float(v)}
            for k, v in sorted(report.dc_norms.items())
        ],
    }


def condition_record(cond):
    """Suffix-sum diagnostic as a dict, one row per coordinate."""
    return {
        "lambda": float(cond.lam),
        "variant": cond.variant,
        "holds": bool(cond.holds()),
        "coordinates": [
            {
                "coordinate": int(c.coordinate),
                "main_stat": float(c.main_stat),
                "appendix_stat": float(c.appendix_stat),
                "value_range": float(c.value_range),
                "gap_ratio": float(c.gap_ratio),
                "holds_main": bool(c.holds_main),
                "holds_appendix": bool(c.holds_appendix),
            }
            for c in cond.coordinates
        ],
    }


# ---- provenance ------------------------------------------------------------


def config_hash(config):
    """Stable short hash of any JSON-serializable configuration."""
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


def run_metadata(config=None, seed=None):
    """Provenance block written next to every table: seed, hash, versions."""
    try:
        own = metadata.version("acdcreg")
    except metadata.PackageNotFoundError:
        own = "unknown"
    meta = {
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "acdcreg": own,
        },
    }
    if seed is not None:
        meta["seed"] = int(seed)
    if config is not None:
        meta["config"] = config
        meta["config_hash"] = config_hash(config)
    return meta


# ---- file output -----------------------------------------------------------


def write_json(obj, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def write_csv(path, header, rows):
    """Comma-separated table; floats written with repr round-trip."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([
                repr(v) if isinstance(v, float) else v for v in row])
    return path


def write_dataset_csv(ds, path):
    """Dataset as a header + rows CSV, response in the last column."""
    if not isinstance(ds, Dataset):
        raise TypeError("ds must be a Dataset")
    header = list(ds.names) + ["y"]
    rows = [list(map(float, ds.X[i])) + [float(ds.y[i])]
            for i in range(ds.n)]
    return write_csv(path, header, rows)
