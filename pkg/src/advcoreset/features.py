"""Per-unit adversarial gradient features for coreset selection.

A feature row is the last-layer gradient of one training unit's objective:
the plain cross-entropy, the adversarial cross-entropy evaluated at an
attack point, or the three-term TRADES gradient. Batch aggregation sums
rows of shuffled chunks so selection can run over batches instead of
samples.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from . import attacks, model
from .errors import DimensionError, NumericError

OBJECTIVE_TAGS = ("vanilla", "adversarial-ce", "trades")

_MAGIC = b"ACSF"
_VERSION = 1


@dataclass(frozen=True)
class ObjectiveKind:
    tag: str = "adversarial-ce"
    trades_lambda: float = 1.0

    def __post_init__(self):
        if self.tag not in OBJECTIVE_TAGS:
            raise DimensionError(f"objective tag must be one of {OBJECTIVE_TAGS}")
        if not (np.isfinite(self.trades_lambda) and self.trades_lambda > 0):
            raise DimensionError("trades_lambda must be finite and > 0")


@dataclass
class GradientFeatures:
    """m x p matrix of per-unit gradients plus the unit -> sample index map."""

    rows: np.ndarray
    unit_kind: str = "sample"
    index_map: list = field(default_factory=list)

    def __post_init__(self):
        self.rows = np.ascontiguousarray(self.rows, dtype=np.float64)
        if self.rows.ndim != 2:
            raise DimensionError("feature rows must be 2-d")
        if self.unit_kind not in ("sample", "batch"):
            raise DimensionError("unit_kind must be 'sample' or 'batch'")
        if not self.index_map:
            self.index_map = [np.array([i], dtype=np.int64) for i in range(self.m)]
        if len(self.index_map) != self.m:
            raise DimensionError("index_map must have one entry per row")
        self.index_map = [np.asarray(ix, dtype=np.int64) for ix in self.index_map]
        if self.unit_kind == "batch":
            flat = np.sort(np.concatenate(self.index_map)) if self.index_map else np.empty(0)
            if not np.array_equal(flat, np.arange(len(flat))):
                raise DimensionError("batch index_map must partition the sample range")

    @property
    def m(self):
        return self.rows.shape[0]

    @property
    def p(self):
        return self.rows.shape[1]

    @property
    def n_samples(self):
        return int(sum(len(ix) for ix in self.index_map))


def _check_rows_finite(rows):
    bad = ~np.all(np.isfinite(rows), axis=1)
    if np.any(bad):
        raise NumericError(f"non-finite gradient feature for sample {int(np.flatnonzero(bad)[0])}")


def _trades_rows(params, data, objective, attack_cfg):
    x, y = data.features, data.labels
    clean = model.forward(params, x)
    p_clean = clean.probs
    adv = attacks.trades_inner_max(params, x, attack_cfg)
    adv_cache = model.forward(params, adv.x_adv)
    p_adv, log_p_adv = adv_cache.probs, adv_cache.log_probs

    onehot = np.zeros_like(p_clean)
    onehot[np.arange(data.n), y] = 1.0
    inv_lambda = 1.0 / objective.trades_lambda

    # clean hard-CE gradient
    dz_clean = p_clean - onehot
    # prediction-side partial of CE(f(x_adv), f(x)) with the target frozen
    dz_adv = (p_adv - p_clean) * inv_lambda
    # target-side partial with the prediction frozen: the softmax-Jacobian
    # term, so that the two partials sum to the exact total gradient
    inner = (p_clean * log_p_adv).sum(axis=1, keepdims=True)
    dz_target = p_clean * (inner - log_p_adv) * inv_lambda

    rows = model.last_layer_rows(dz_clean + dz_target, clean.penultimate)
    rows += model.last_layer_rows(dz_adv, adv_cache.penultimate)
    return rows


def adv_grad_features(params, data, objective, attack_cfg):
    """Sample-level GradientFeatures for the requested training objective.

    vanilla: gradients at the clean points. adversarial-ce: gradients at
    pgd_attack points. trades: clean gradient plus (1/lambda) times the two
    frozen-side partials of the robustness cross-entropy.
    """
    x, y = data.features, data.labels
    if objective.tag == "vanilla":
        rows = model.per_sample_last_layer_grad(params, x, y)
    elif objective.tag == "adversarial-ce":
        adv = attacks.pgd_attack(params, x, y, attack_cfg, "hard-ce",
                                 sample_ids=np.arange(data.n))
        rows = model.per_sample_last_layer_grad(params, adv.x_adv, y)
    else:
        rows = _trades_rows(params, data, objective, attack_cfg)
    _check_rows_finite(rows)
    return GradientFeatures(rows=rows, unit_kind="sample")


def batch_aggregate(features, batch_size, shuffle_seed=0):
    """Shuffle units, chunk into consecutive batches, and sum each chunk.

    The last chunk may be smaller. Output index_map holds the underlying
    sample indices of every chunk; the total row sum is conserved.
    """
    if batch_size < 1:
        raise DimensionError("batch_size must be >= 1")
    perm = np.random.default_rng(np.random.SeedSequence([int(shuffle_seed), 0xba7c])).permutation(features.m)
    chunks = [perm[i:i + batch_size] for i in range(0, features.m, batch_size)]
    rows = np.empty((len(chunks), features.p))
    index_map = []
    for j, chunk in enumerate(chunks):
        rows[j] = features.rows[chunk].sum(axis=0)
        index_map.append(np.concatenate([features.index_map[u] for u in chunk]))
    return GradientFeatures(rows=rows, unit_kind="batch", index_map=index_map)


def save_features(path, features):
    """Flat binary layout: header, row-major f64 rows, length-prefixed index lists."""
    kind = 0 if features.unit_kind == "sample" else 1
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IIIB", _VERSION, features.m, features.p, kind))
        fh.write(np.ascontiguousarray(features.rows, dtype="<f8").tobytes())
        for ix in features.index_map:
            fh.write(struct.pack("<I", len(ix)))
            fh.write(np.asarray(ix, dtype="<u4").tobytes())


def load_features(path):
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise DimensionError("not a gradient-features file (bad magic)")
        version, m, p, kind = struct.unpack("<IIIB", fh.read(13))
        if version != _VERSION:
            raise DimensionError(f"unsupported feature-file version {version}")
        rows = np.frombuffer(fh.read(8 * m * p), dtype="<f8").reshape(m, p).copy()
        index_map = []
        for _ in range(m):
            (count,) = struct.unpack("<I", fh.read(4))
            index_map.append(np.frombuffer(fh.read(4 * count), dtype="<u4").astype(np.int64))
    return GradientFeatures(rows=rows, unit_kind="sample" if kind == 0 else "batch",
                            index_map=index_map)
