"""Dense feedforward softmax classifier with exact backprop.

All arithmetic is float64. Every function here is a pure function of its
inputs, so concurrent calls on shared read-only arrays are safe.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import CacheError, DimensionError, NumericError

ACTIVATIONS = ("relu", "identity")


@dataclass
class Dataset:
    """Feature matrix plus integer labels.

    features: (n, d) float64, labels: (n,) ints in [0, k).
    """

    features: np.ndarray
    labels: np.ndarray
    k: int

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.labels.ndim != 1:
            raise DimensionError("features must be (n, d) and labels (n,)")
        if self.features.shape[0] != self.labels.shape[0]:
            raise DimensionError("features and labels disagree on n")
        if self.n < 1 or self.d < 1 or self.k < 2:
            raise DimensionError("need n >= 1, d >= 1, k >= 2")
        if not np.all(np.isfinite(self.features)):
            raise NumericError("dataset features contain NaN/Inf")
        if self.labels.min() < 0 or self.labels.max() >= self.k:
            raise DimensionError("labels must lie in [0, k)")

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def d(self):
        return self.features.shape[1]


@dataclass
class ModelParams:
    """Per-layer weights/biases of an L-layer feedforward softmax classifier.

    weights[l] has shape (sizes[l], sizes[l+1]); hidden layers use
    `activation`, the final layer is linear (logits).
    """

    weights: list = field(default_factory=list)
    biases: list = field(default_factory=list)
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise DimensionError(f"unknown activation {self.activation!r}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise DimensionError("need one bias vector per weight matrix")
        self.weights = [np.ascontiguousarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.ascontiguousarray(b, dtype=np.float64) for b in self.biases]
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.ndim != 1 or b.shape[0] != w.shape[1]:
                raise DimensionError(f"layer {l}: weight/bias shapes inconsistent")
            if l > 0 and w.shape[0] != self.weights[l - 1].shape[1]:
                raise DimensionError(f"layer {l}: input dim does not chain")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise NumericError(f"layer {l}: non-finite parameters")

    @property
    def layer_sizes(self):
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def n_layers(self):
        return len(self.weights)

    @property
    def last_layer_param_count(self):
        h, k = self.weights[-1].shape
        return (h + 1) * k

    @classmethod
    def random(cls, layer_sizes, activation="relu", seed=0, scale=None):
        """He-style Gaussian init, deterministic under `seed`."""
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x6d6f64]))
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            s = scale if scale is not None else np.sqrt(2.0 / fan_in)
            weights.append(rng.standard_normal((fan_in, fan_out)) * s)
            biases.append(np.zeros(fan_out))
        return cls(weights=weights, biases=biases, activation=activation)

    @classmethod
    def zeros(cls, layer_sizes, activation="relu"):
        weights = [np.zeros((i, o)) for i, o in zip(layer_sizes[:-1], layer_sizes[1:])]
        biases = [np.zeros(o) for o in layer_sizes[1:]]
        return cls(weights=weights, biases=biases, activation=activation)

    def copy(self):
        return ModelParams(
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            activation=self.activation,
        )

    def flat(self):
        return np.concatenate([a.ravel() for a in self.weights + self.biases])


@dataclass
class ForwardCache:
    """Per-layer intermediates of one forward pass (batch-major)."""

    inputs: np.ndarray          # (B, d)
    pre_activations: list       # z per layer, each (B, sizes[l+1])
    activations: list           # post-activation per hidden layer
    logits: np.ndarray          # (B, k)
    probs: np.ndarray           # (B, k), rows sum to 1
    log_probs: np.ndarray       # (B, k)

    @property
    def batch_size(self):
        return self.inputs.shape[0]

    @property
    def penultimate(self):
        """Input to the final linear layer."""
        return self.activations[-1] if self.activations else self.inputs


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def _as_batch(x, d):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != d:
        raise DimensionError(f"input must be (B, {d}), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise NumericError("non-finite input batch")
    return x


def _target_matrix(target, batch, k):
    """Hard labels or soft rows -> (B, k) float matrix."""
    t = np.asarray(target)
    if t.ndim == 1 and np.issubdtype(t.dtype, np.integer):
        if t.shape[0] != batch:
            raise DimensionError("label vector length != batch size")
        if t.min() < 0 or t.max() >= k:
            raise DimensionError("label out of range")
        out = np.zeros((batch, k))
        out[np.arange(batch), t] = 1.0
        return out
    t = np.asarray(t, dtype=np.float64)
    if t.shape != (batch, k):
        raise DimensionError(f"soft target must be ({batch}, {k}), got {t.shape}")
    if not np.all(np.isfinite(t)):
        raise NumericError("non-finite soft target")
    if not np.allclose(t.sum(axis=1), 1.0, atol=1e-6):
        raise DimensionError("soft target rows must sum to 1")
    return t


def forward(params, x):
    """Forward pass only; returns a ForwardCache."""
    a = _as_batch(x, params.layer_sizes[0])
    inputs = a
    pre, acts = [], []
    last = params.n_layers - 1
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ w + b
        pre.append(z)
        if l < last:
            a = np.maximum(z, 0.0) if params.activation == "relu" else z
            acts.append(a)
    logits = pre[-1]
    return ForwardCache(
        inputs=inputs,
        pre_activations=pre,
        activations=acts,
        logits=logits,
        probs=softmax(logits),
        log_probs=log_softmax(logits),
    )


def forward_loss(params, x, target):
    """Mean cross-entropy of the batch; also returns the cache for backward.

    `target` is either a length-B integer label vector or a (B, k) matrix of
    soft target rows summing to 1.
    """
    cache = forward(params, x)
    t = _target_matrix(target, cache.batch_size, cache.logits.shape[1])
    loss = float(-(t * cache.log_probs).sum() / cache.batch_size)
    return loss, cache


def per_sample_losses(cache, target):
    """Length-B vector of per-sample cross-entropies for a cached forward."""
    t = _target_matrix(target, cache.batch_size, cache.logits.shape[1])
    return -(t * cache.log_probs).sum(axis=1)


def _check_cache(params, cache):
    if cache.inputs.shape[1] != params.layer_sizes[0]:
        raise CacheError("cache input width does not match params")
    if cache.logits.shape[1] != params.layer_sizes[-1]:
        raise CacheError("cache logit width does not match params")
    if len(cache.pre_activations) != params.n_layers:
        raise CacheError("cache depth does not match params")
    for l, z in enumerate(cache.pre_activations):
        if z.shape[1] != params.layer_sizes[l + 1]:
            raise CacheError(f"cache layer {l} width does not match params")


def _backprop(params, cache, dz):
    """Backprop an upstream logit gradient dz (B, k) to parameter space.

    Returns (grads: ModelParams-shaped, input_grads: (B, d)).
    """
    gw = [None] * params.n_layers
    gb = [None] * params.n_layers
    for l in range(params.n_layers - 1, -1, -1):
        a_prev = cache.activations[l - 1] if l > 0 else cache.inputs
        gw[l] = a_prev.T @ dz
        gb[l] = dz.sum(axis=0)
        da = dz @ params.weights[l].T
        if l > 0:
            z_prev = cache.pre_activations[l - 1]
            if params.activation == "relu":
                dz = da * (z_prev > 0.0)
            else:
                dz = da
        else:
            dx = da
    grads = ModelParams(weights=gw, biases=gb, activation=params.activation)
    return grads, dx


def backward_grads(params, cache, target):
    """Exact gradient of the mean batch loss w.r.t. every parameter."""
    _check_cache(params, cache)
    t = _target_matrix(target, cache.batch_size, cache.logits.shape[1])
    dz = (cache.probs - t) / cache.batch_size
    grads, _ = _backprop(params, cache, dz)
    return grads


def per_sample_input_grads(params, cache, target):
    """(B, d) gradients of each sample's own loss w.r.t. its input row."""
    _check_cache(params, cache)
    t = _target_matrix(target, cache.batch_size, cache.logits.shape[1])
    _, dx = _backprop(params, cache, cache.probs - t)
    return dx


def last_layer_rows(dz, penultimate):
    """Assemble per-sample last-layer gradient rows from logit deltas.

    Row i = [outer(penultimate_i, dz_i) row-major, dz_i], length (h+1)*k.
    """
    batch = dz.shape[0]
    wpart = np.einsum("bh,bk->bhk", penultimate, dz).reshape(batch, -1)
    return np.concatenate([wpart, dz], axis=1)


def per_sample_last_layer_grad(params, x, target):
    """(B, p) matrix; row i is sample i's loss gradient on the final layer.

    p = (h + 1) * k with the bias block appended after the flattened
    weight block.
    """
    cache = forward(params, x)
    t = _target_matrix(target, cache.batch_size, cache.logits.shape[1])
    return last_layer_rows(cache.probs - t, cache.penultimate)


def finite_diff_grad(params, x, target, step=1e-5):
    """Central finite-difference estimate of the mean-loss gradient.

    Test oracle: O(P) forward passes, exact to O(step^2) on smooth regions.
    """
    if not step > 0:
        raise DimensionError("step must be > 0")
    work = params.copy()
    gw, gb = [], []
    for arrays, grads in ((work.weights, gw), (work.biases, gb)):
        for arr in arrays:
            g = np.zeros_like(arr)
            it = np.nditer(arr, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                orig = arr[idx]
                arr[idx] = orig + step
                lp, _ = forward_loss(work, x, target)
                arr[idx] = orig - step
                lm, _ = forward_loss(work, x, target)
                arr[idx] = orig
                g[idx] = (lp - lm) / (2.0 * step)
            grads.append(g)
    return ModelParams(weights=gw, biases=gb, activation=params.activation)


def grad_arrays(grads):
    """Flatten a ModelParams-shaped gradient into one vector (weights, biases)."""
    return grads.flat()


def max_rel_error(a, b, floor=1e-12):
    """max |a-b| / max(|a|_inf, |b|_inf, floor) over two flat vectors."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    scale = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), floor)
    return float(np.abs(a - b).max(initial=0.0) / scale)
