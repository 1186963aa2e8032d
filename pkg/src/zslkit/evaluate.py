"""Metrics (mean per-class top-1), confusion matrices, report emission, and a
deterministic 2D principal-component projection for eyeballing structure."""

import csv
import json
from dataclasses import dataclass, field

import numpy as np


@dataclass(eq=False)
class EvalReport:
    classes: tuple
    per_class: dict
    mean_per_class: float
    overall: float
    confusion: np.ndarray
    warnings: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def equals(self, other):
        return (self.classes == other.classes
                and self.per_class == other.per_class
                and self.mean_per_class == other.mean_per_class
                and self.overall == other.overall
                and np.array_equal(self.confusion, other.confusion)
                and self.warnings == other.warnings
                and self.meta == other.meta)


def confusion_matrix(predictions, true_labels, classes):
    """Counts with rows = true class, columns = predicted class."""
    index = {name: i for i, name in enumerate(classes)}
    matrix = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for pred, true in zip(predictions, true_labels):
        if true not in index:
            raise ValueError(f"unknown true label {true!r}")
        if pred not in index:
            raise ValueError(f"unknown predicted label {pred!r}")
        matrix[index[true], index[pred]] += 1
    return matrix


def mean_per_class_top1(predictions, true_labels, classes=None, meta=None):
    """Arithmetic mean over classes of per-class top-1 accuracy.

    Classes named in ``classes`` but absent from the truth are excluded from
    the mean, each recorded as a warning. Robust to class imbalance by
    construction (the 99-vs-1 case averages to 0.5).
    """
    predictions = list(predictions)
    true_labels = list(true_labels)
    if len(predictions) != len(true_labels):
        raise ValueError("predictions and labels disagree in length")
    if len(true_labels) == 0:
        raise ValueError("nothing to evaluate")
    if classes is None:
        classes = sorted(set(true_labels) | set(predictions))
    classes = tuple(classes)
    matrix = confusion_matrix(predictions, true_labels, classes)
    counts = matrix.sum(axis=1)
    warnings = []
    per_class = {}
    for i, name in enumerate(classes):
        if counts[i] == 0:
            warnings.append(f"class {name!r} has no samples; excluded")
            continue
        per_class[name] = float(matrix[i, i] / counts[i])
    if not per_class:
        raise ValueError("no evaluated class has samples")
    mean = float(np.mean(list(per_class.values())))
    overall = float(np.trace(matrix) / matrix.sum())
    return EvalReport(classes, per_class, mean, overall, matrix,
                      warnings, dict(meta or {}))


# ---------------------------------------------------------------------------
# 2D projection
# ---------------------------------------------------------------------------


@dataclass
class Projection2D:
    coords: np.ndarray
    second_axis_degenerate: bool


def _power_iteration(C, start, tol=1e-9, max_iter=10_000, orth=None):
    v = start / np.linalg.norm(start)
    if orth is not None:
        v = v - (v @ orth) * orth
        norm = np.linalg.norm(v)
        v = start if norm == 0 else v / max(norm, 1e-300)
    for _ in range(max_iter):
        w = C @ v
        if orth is not None:
            w = w - (w @ orth) * orth
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return v, 0.0
        w /= norm
        if w @ v < 0:
            w = -w
        if np.linalg.norm(w - v) < tol:
            v = w
            break
        v = w
    # canonical sign: largest-magnitude component positive
    if v[int(np.argmax(np.abs(v)))] < 0:
        v = -v
    return v, float(v @ C @ v)


def project_2d(features):
    """Top-2 principal directions of the centered features, by power iteration.

    Deterministic start vectors; if the data is rank-deficient below 2 the
    second axis is zero-filled and flagged.
    """
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 3:
        raise ValueError("need at least 3 feature rows")
    Xc = X - X.mean(axis=0)
    C = (Xc.T @ Xc) / X.shape[0]
    d = C.shape[0]
    rng = np.random.default_rng(0)
    start1 = rng.standard_normal(d)
    start2 = rng.standard_normal(d)
    v1, l1 = _power_iteration(C, start1)
    coords = np.zeros((X.shape[0], 2))
    if l1 <= 0.0:
        return Projection2D(coords, True)
    coords[:, 0] = Xc @ v1
    if d == 1:
        return Projection2D(coords, True)
    C2 = C - l1 * np.outer(v1, v1)
    v2, l2 = _power_iteration(C2, start2, orth=v1)
    degenerate = l2 <= 1e-12 * l1
    if not degenerate:
        coords[:, 1] = Xc @ v2
    return Projection2D(coords, degenerate)


# ---------------------------------------------------------------------------
# report emission
# ---------------------------------------------------------------------------


def emit_report(report, path, fmt="json"):
    """Serialize a report losslessly (json) or as a flat CSV listing."""
    if fmt == "json":
        payload = {
            "mean_per_class": report.mean_per_class,
            "overall": report.overall,
            "per_class": report.per_class,
            "confusion": report.confusion.tolist(),
            "classes": list(report.classes),
            "warnings": list(report.warnings),
            "meta": report.meta,
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")
    elif fmt == "csv":
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["kind", "name", "accuracy"])
            writer.writerow(["summary", "mean_per_class",
                             repr(report.mean_per_class)])
            writer.writerow(["summary", "overall", repr(report.overall)])
            for name in report.classes:
                if name in report.per_class:
                    writer.writerow(["class", name,
                                     repr(report.per_class[name])])
    else:
        raise ValueError(f"unknown report format {fmt!r}")


def load_report(path):
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    return EvalReport(
        classes=tuple(payload["classes"]),
        per_class=dict(payload["per_class"]),
        mean_per_class=payload["mean_per_class"],
        overall=payload["overall"],
        confusion=np.array(payload["confusion"], dtype=np.int64),
        warnings=list(payload["warnings"]),
        meta=dict(payload["meta"]),
    )


def emit_grid_csv(grid, path):
    """Aggregated method x group accuracy grid (one column per group).

    ``grid`` maps method name -> {group name -> accuracy}; group columns are
    the sorted union so the header is stable across runs.
    """
    groups = sorted({g for row in grid.values() for g in row})
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["method"] + groups)
        for method in grid:
            cells = []
            for g in groups:
                val = grid[method].get(g)
                cells.append("" if val is None else repr(val))
            writer.writerow([method] + cells)
