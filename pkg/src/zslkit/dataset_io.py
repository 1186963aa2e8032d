"""Loading, validation, and synthesis of feature datasets, per-class attribute
tables, and seen/unseen splits.

File formats (UTF-8, '.' decimal point, LF endings):
  features CSV   header ``id,label,f0,...,f{d-1}``; empty label = unlabeled
  attributes CSV header ``class,a0,...,a{K-1}``
  split JSON     ``{"seen": [...], "unseen": [...]}``
"""

import csv
import json
from dataclasses import dataclass

import numpy as np

GENERATOR_NAME = "PCG64"  # numpy default_rng; recorded in run manifests


class ParseError(ValueError):
    """Malformed input file; carries the offending 1-based line number."""

    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


class EmptyInputError(ValueError):
    """File contains no data rows."""


class ValidationError(ValueError):
    """A bundle failed invariant validation."""


@dataclass(frozen=True)
class FeatureDataset:
    """N feature vectors with optional class-name labels."""

    sample_ids: tuple
    features: np.ndarray
    labels: tuple  # class-name strings; None marks unlabeled rows

    def __post_init__(self):
        if self.features.ndim != 2 or self.features.shape[0] < 1 \
                or self.features.shape[1] < 1:
            raise ValidationError("features must be a nonempty N x d matrix")
        if len(self.sample_ids) != self.features.shape[0] \
                or len(self.labels) != self.features.shape[0]:
            raise ValidationError("ids, labels and feature rows disagree")

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    def labeled_mask(self):
        return np.array([lab is not None for lab in self.labels])


@dataclass(frozen=True)
class ClassAttributeTable:
    """C distinct class names with a C x K attribute matrix."""

    class_names: tuple
    attributes: np.ndarray

    def __post_init__(self):
        if len(set(self.class_names)) != len(self.class_names):
            raise ValidationError("duplicate class names in attribute table")
        if self.attributes.ndim != 2 \
                or self.attributes.shape[0] != len(self.class_names):
            raise ValidationError("attribute matrix does not match class names")

    @property
    def dim(self):
        return self.attributes.shape[1]

    def row(self, name):
        return self.attributes[self.class_names.index(name)]


@dataclass(frozen=True)
class SplitSpec:
    """Disjoint seen/unseen class-name lists."""

    seen: tuple
    unseen: tuple


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of the synthetic attribute-linear bundle generator."""

    seed: int = 7
    n_seen: int = 8
    n_unseen: int = 3
    d: int = 32
    k: int = 16
    samples_per_class: int = 100
    noise_sigma: float = 0.1

    def validate(self):
        if min(self.n_seen, self.n_unseen, self.d, self.k,
               self.samples_per_class) < 1:
            raise ValidationError("all synthetic counts must be >= 1")
        if self.d < self.k:
            raise ValidationError("feature dim must be >= attribute dim")
        if self.noise_sigma < 0:
            raise ValidationError("noise sigma must be nonnegative")


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------


def _parse_float(cell, line_no, col):
    try:
        value = float(cell)
    except ValueError:
        raise ParseError(f"non-numeric cell {cell!r} in column {col}", line_no) from None
    if not np.isfinite(value):
        raise ParseError(f"non-finite value {cell!r} in column {col}", line_no)
    return value


def _read_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return [row for row in rows if row]  # drop blank lines


def load_features(path):
    """Parse a features CSV; d is inferred from the header, row order kept."""
    rows = _read_rows(path)
    if not rows:
        raise EmptyInputError(f"{path}: empty features file")
    header = rows[0]
    if len(header) < 3 or header[0] != "id" or header[1] != "label" \
            or header[2:] != [f"f{i}" for i in range(len(header) - 2)]:
        raise ParseError("expected header id,label,f0,...", 1)
    d = len(header) - 2
    if len(rows) == 1:
        raise EmptyInputError(f"{path}: no data rows")
    ids, labels = [], []
    feats = np.empty((len(rows) - 1, d))
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != d + 2:
            raise ParseError(f"expected {d + 2} cells, found {len(row)}", r)
        ids.append(row[0])
        labels.append(row[1] if row[1] != "" else None)
        for j, cell in enumerate(row[2:]):
            feats[r - 2, j] = _parse_float(cell, r, f"f{j}")
    return FeatureDataset(tuple(ids), feats, tuple(labels))


def load_attributes(path):
    """Parse an attributes CSV; duplicate class names are rejected."""
    rows = _read_rows(path)
    if not rows:
        raise EmptyInputError(f"{path}: empty attributes file")
    header = rows[0]
    if len(header) < 2 or header[0] != "class" \
            or header[1:] != [f"a{i}" for i in range(len(header) - 1)]:
        raise ParseError("expected header class,a0,...", 1)
    k = len(header) - 1
    if len(rows) == 1:
        raise EmptyInputError(f"{path}: no data rows")
    names = []
    attrs = np.empty((len(rows) - 1, k))
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != k + 1:
            raise ParseError(f"expected {k + 1} cells, found {len(row)}", r)
        if row[0] in names:
            raise ParseError(f"duplicate class name {row[0]!r}", r)
        names.append(row[0])
        for j, cell in enumerate(row[1:]):
            attrs[r - 2, j] = _parse_float(cell, r, f"a{j}")
    return ClassAttributeTable(tuple(names), attrs)


def load_split(path):
    """Parse a split JSON object with 'seen' and 'unseen' name lists."""
    with open(path, encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc}") from None
    if not isinstance(payload, dict) or "seen" not in payload \
            or "unseen" not in payload:
        raise ParseError("split must be an object with 'seen' and 'unseen'")
    seen = [str(c) for c in payload["seen"]]
    unseen = [str(c) for c in payload["unseen"]]
    if len(set(seen)) != len(seen) or len(set(unseen)) != len(unseen):
        raise ParseError("split lists contain duplicates")
    return SplitSpec(tuple(seen), tuple(unseen))


def save_features(dataset, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "label"] + [f"f{i}" for i in range(dataset.dim)])
        for sid, lab, row in zip(dataset.sample_ids, dataset.labels,
                                 dataset.features):
            writer.writerow([sid, lab if lab is not None else ""]
                            + [repr(float(x)) for x in row])


def save_attributes(table, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["class"] + [f"a{i}" for i in range(table.dim)])
        for name, row in zip(table.class_names, table.attributes):
            writer.writerow([name] + [repr(float(x)) for x in row])


def save_split(split, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"seen": list(split.seen), "unseen": list(split.unseen)}, fh,
                  indent=2)
        fh.write("\n")


# ---------------------------------------------------------------------------
# validation and normalization
# ---------------------------------------------------------------------------


def normalize_attributes(table):
    """Scale every class row to unit Euclidean norm (idempotent)."""
    norms = np.linalg.norm(table.attributes, axis=1)
    if np.any(norms == 0.0):
        bad = table.class_names[int(np.argmin(norms))]
        raise ValidationError(f"all-zero attribute row for class {bad!r}")
    return ClassAttributeTable(table.class_names,
                               table.attributes / norms[:, None])


def validate_bundle(features, table, split):
    """Collect every invariant violation as a message; empty means usable."""
    report = []
    if table.dim < 2:
        report.append(f"attribute dimension {table.dim} < 2")
    known = set(table.class_names)
    overlap = sorted(set(split.seen) & set(split.unseen))
    for name in overlap:
        report.append(f"seen/unseen overlap: {name!r}")
    for name in list(split.seen) + list(split.unseen):
        if name not in known:
            report.append(f"split class {name!r} missing from attribute table")
    if len(split.seen) < 2:
        report.append(f"need >= 2 seen classes, found {len(split.seen)}")
    if len(split.unseen) < 1:
        report.append("need >= 1 unseen class")
    covered = set(split.seen) | set(split.unseen)
    seen_labels = {lab for lab in features.labels if lab is not None}
    for lab in sorted(seen_labels):
        if lab not in known:
            report.append(f"unknown label {lab!r}")
        elif lab not in covered:
            report.append(f"label {lab!r} not covered by split")
    # identical attribute rows make classes indistinguishable
    attrs = table.attributes
    for i in range(attrs.shape[0]):
        for j in range(i + 1, attrs.shape[0]):
            if np.array_equal(attrs[i], attrs[j]):
                report.append(
                    f"classes {table.class_names[i]!r} and "
                    f"{table.class_names[j]!r} have identical attributes"
                )
    return report


# ---------------------------------------------------------------------------
# synthesis
# ---------------------------------------------------------------------------


def gen_synthetic(spec):
    """Seeded attribute-linear bundle: class mean = M @ a_c, Gaussian noise.

    Attribute vectors are drawn uniform(0,1) per coordinate and unit-normalized
    (keeping them valid BCE targets); a single random d x k map M places class
    means, so zero-shot transfer is solvable by construction.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    names = tuple(f"seen{i}" for i in range(spec.n_seen)) \
        + tuple(f"unseen{i}" for i in range(spec.n_unseen))
    attrs = rng.uniform(0.0, 1.0, size=(len(names), spec.k))
    attrs /= np.linalg.norm(attrs, axis=1)[:, None]
    mix = rng.normal(size=(spec.d, spec.k))
    means = attrs @ mix.T
    ids, labels, blocks = [], [], []
    for c, name in enumerate(names):
        blocks.append(rng.normal(means[c], spec.noise_sigma,
                                 size=(spec.samples_per_class, spec.d)))
        ids.extend(f"{name}_{i:03d}" for i in range(spec.samples_per_class))
        labels.extend([name] * spec.samples_per_class)
    dataset = FeatureDataset(tuple(ids), np.vstack(blocks), tuple(labels))
    table = ClassAttributeTable(names, attrs)
    split = SplitSpec(names[:spec.n_seen], names[spec.n_seen:])
    return dataset, table, split


def subset(dataset, mask, drop_labels=False):
    """Row-filtered copy of a dataset; optionally strips the labels."""
    mask = np.asarray(mask)
    idx = np.nonzero(mask)[0]
    labels = tuple(None if drop_labels else dataset.labels[i] for i in idx)
    return FeatureDataset(
        tuple(dataset.sample_ids[i] for i in idx),
        dataset.features[idx],
        labels,
    )
