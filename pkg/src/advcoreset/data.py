"""Synthetic dataset generators and CSV interchange.

CSV layout: one sample per line, integer label first, then the feature
values; no header. Class count k is inferred as max label + 1.
"""

import numpy as np

from .errors import CsvFormatError, DimensionError
from .model import Dataset

KINDS = ("gaussian-blobs", "two-rings")


def synth_dataset(kind, n, d, k, margin, seed=0):
    """Deterministic labeled dataset.

    gaussian-blobs: k class means placed pairwise `margin` apart on simplex
    axes, unit covariance noise. two-rings: two concentric rings separated
    radially by `margin` in the first two coordinates, mild noise elsewhere.
    """
    if kind not in KINDS:
        raise DimensionError(f"kind must be one of {KINDS}")
    if n < k or k < 2 or d < 1:
        raise DimensionError("need n >= k >= 2 and d >= 1")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xda7a]))
    labels = np.arange(n) % k
    if kind == "gaussian-blobs":
        if d < k:
            raise DimensionError("gaussian-blobs needs d >= k")
        means = np.zeros((k, d))
        means[np.arange(k), np.arange(k)] = margin / np.sqrt(2.0)
        feats = means[labels] + rng.standard_normal((n, d))
    else:
        if k != 2:
            raise DimensionError("two-rings is a binary dataset (k must be 2)")
        if d < 2:
            raise DimensionError("two-rings needs d >= 2")
        angles = rng.uniform(0.0, 2.0 * np.pi, size=n)
        radii = 3.0 + margin * labels + 0.25 * rng.standard_normal(n)
        feats = np.zeros((n, d))
        feats[:, 0] = radii * np.cos(angles)
        feats[:, 1] = radii * np.sin(angles)
        if d > 2:
            feats[:, 2:] = 0.1 * rng.standard_normal((n, d - 2))
    return Dataset(features=feats, labels=labels, k=k)


def save_csv(path, data):
    with open(path, "w", encoding="utf-8") as fh:
        for label, row in zip(data.labels, data.features):
            fh.write(str(int(label)) + "," + ",".join(repr(float(v)) for v in row) + "\n")


def load_csv(path):
    """Parse a label-first CSV into a Dataset; errors carry line numbers."""
    labels, rows = [], []
    width = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if width is None:
                width = len(parts)
                if width < 2:
                    raise CsvFormatError("need a label and at least one feature", lineno)
            elif len(parts) != width:
                raise CsvFormatError(
                    f"expected {width} fields, found {len(parts)}", lineno)
            try:
                label = int(parts[0])
            except ValueError:
                raise CsvFormatError(f"non-integer label {parts[0]!r}", lineno) from None
            try:
                feats = [float(v) for v in parts[1:]]
            except ValueError:
                raise CsvFormatError("non-numeric feature field", lineno) from None
            if label < 0:
                raise CsvFormatError("labels must be >= 0", lineno)
            labels.append(label)
            rows.append(feats)
    if not rows:
        raise CsvFormatError("empty dataset file", 1)
    labels = np.array(labels, dtype=np.int64)
    return Dataset(features=np.array(rows), labels=labels, k=int(labels.max()) + 1)
