"""JSON serialization of estimates and reports, and the CSV + manifest dataset format.

A manifest is a JSON object ``{"name": ..., "tasks": [...]}`` where each task
entry is either a CSV path or ``{"name": ..., "csv": path}``. Paths are
relative to the manifest. Each CSV has a header ``f0,...,f{d-1},y``.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .model import (
    CoefficientSet,
    DiagonalCovariance,
    DiagPlusLowRank,
    DimensionError,
    FullCovariance,
    MultiTaskDataset,
    check_dataset,
)

# Only sources whose address is published alongside the benchmark are listed;
# the other datasets must be obtained and converted by hand.
DOWNLOAD_SOURCES = {
    "sarcos": "http://www.gaussianprocess.org/gpml/data/",
}


class ManifestError(ValueError):
    """A manifest or one of its CSV files is missing or malformed."""


def _plain(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, tuple):
        return list(obj)
    if hasattr(obj, "to_dict"):
        return obj.to_dict()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj, **kw):
    return json.dumps(obj, default=_plain, **kw)


def save_json(obj, path):
    Path(path).write_text(dumps(obj, indent=2) + "\n")


def load_json(path):
    return json.loads(Path(path).read_text())


def _trace_meta(trace):
    if trace is None:
        return None
    final = trace.final_objective
    return {
        "iterations": trace.iterations,
        "converged": trace.converged,
        "final_objective": final if math.isfinite(final) else None,
    }


def covariance_to_dict(estimate, trace=None):
    if isinstance(estimate, DiagonalCovariance):
        out = {"structure": "diagonal", "d": estimate.d, "omega": estimate.omega.tolist()}
    elif isinstance(estimate, FullCovariance):
        out = {"structure": "full", "d": estimate.d, "matrix": estimate.matrix.ravel().tolist()}
    elif isinstance(estimate, DiagPlusLowRank):
        out = {
            "structure": "diag_lowrank",
            "d": estimate.d,
            "omega": estimate.sparse_part.omega.tolist(),
            "matrix": estimate.lowrank_part.matrix.ravel().tolist(),
            "rank_estimate": estimate.rank_estimate,
        }
    else:
        raise TypeError(f"not a covariance estimate: {type(estimate).__name__}")
    out["trace"] = _trace_meta(trace)
    return out


def covariance_from_dict(data):
    try:
        kind, d = data["structure"], int(data["d"])
        if kind == "diagonal":
            return DiagonalCovariance(np.asarray(data["omega"], dtype=float))
        matrix = np.asarray(data["matrix"], dtype=float)
        if matrix.size != d * d:
            raise DimensionError(f"matrix has {matrix.size} entries, expected {d * d}")
        matrix = matrix.reshape(d, d)
        if kind == "full":
            return FullCovariance(matrix)
        if kind == "diag_lowrank":
            return DiagPlusLowRank(
                DiagonalCovariance(np.asarray(data["omega"], dtype=float)),
                FullCovariance(matrix),
                int(data.get("rank_estimate", 0)),
            )
    except KeyError as exc:
        raise ValueError(f"covariance JSON lacks field {exc}") from None
    raise ValueError(f"unknown covariance structure {kind!r}")


def coefficients_to_dict(coefficients: CoefficientSet):
    return {"m": coefficients.m, "d": coefficients.d, "betas": coefficients.betas.tolist()}


def coefficients_from_dict(data):
    return CoefficientSet(np.asarray(data["betas"], dtype=float))


# --- CSV datasets ---------------------------------------------------------


def write_task_csv(path, design, response):
    design = np.asarray(design, dtype=float)
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"f{j}" for j in range(design.shape[1])] + ["y"])
        for row, y in zip(design, response):
            w.writerow([repr(float(v)) for v in row] + [repr(float(y))])


def read_task_csv(path):
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"task file not found: {path}")
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ManifestError(f"{path}: empty file, expected a header row")
    header = [h.strip() for h in rows[0]]
    d = len(header) - 1
    expected = [f"f{j}" for j in range(d)] + ["y"]
    if d < 1 or header != expected:
        raise ManifestError(f"{path}: header must be f0..f{{d-1}},y; got {','.join(header)}")
    body = [r for r in rows[1:] if r]
    try:
        data = np.array([[float(v) for v in r] for r in body], dtype=float).reshape(len(body), d + 1)
    except ValueError as exc:
        raise ManifestError(f"{path}: {exc}") from None
    if any(len(r) != d + 1 for r in body):
        raise ManifestError(f"{path}: every row needs {d + 1} values")
    return data[:, :d], data[:, d]


def standardize_task(design, response):
    """Centre every column and the response, scale columns to unit variance."""
    X = design - design.mean(axis=0)
    sd = X.std(axis=0)
    X = X / np.where(sd > 0, sd, 1.0)
    return X, response - response.mean()


def load_manifest(path, standardize=False):
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    try:
        spec = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON ({exc})") from None
    tasks = spec.get("tasks") if isinstance(spec, dict) else None
    if not isinstance(tasks, list) or not tasks:
        raise ManifestError(f"{path}: expected an object with a non-empty 'tasks' list")
    designs, responses = [], []
    for i, entry in enumerate(tasks):
        rel = entry.get("csv") if isinstance(entry, dict) else entry
        if not isinstance(rel, str):
            raise ManifestError(f"{path}: task {i} has no CSV path")
        X, y = read_task_csv(path.parent / rel)
        if standardize:
            X, y = standardize_task(X, y)
        designs.append(X)
        responses.append(y)
    ds = MultiTaskDataset.from_arrays(designs, responses)
    try:
        check_dataset(ds)
    except DimensionError as exc:
        raise ManifestError(f"{path}: {exc}") from None
    return ds


def export_dataset(dataset, directory, name="dataset", truth=None):
    """Write one CSV per task plus a manifest (and ``truth.json`` if given); returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, t in enumerate(dataset.tasks):
        fname = f"task{i:03d}.csv"
        write_task_csv(directory / fname, t.design, t.response)
        entries.append({"name": f"task{i}", "csv": fname})
    manifest = directory / f"{name}.json"
    save_json({"name": name, "tasks": entries}, manifest)
    if truth is not None:
        save_json(
            {
                "betas": np.asarray(truth.betas).tolist(),
                "shared_support": list(truth.shared_support),
                "per_task_support": [list(s) for s in truth.per_task_support],
            },
            directory / "truth.json",
        )
    return manifest


def download_hint(name):
    """Where to obtain a real dataset; None when no published address is known."""
    return DOWNLOAD_SOURCES.get(name)
