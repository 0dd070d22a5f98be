"""Inner-maximization solvers: FGSM/PGD under l-inf and l2 balls, the
TRADES inner problem, and an exact linear-model adversary used as an oracle.

Attacks are deterministic given (inputs, config, seed): every random draw
comes from a generator derived from (seed, sample id, restart index), so
serial and parallel execution produce identical bytes.
"""

from dataclasses import dataclass

import numpy as np

from . import model
from .errors import DegenerateProblemError, DimensionError, NumericError

NORMS = ("linf", "l2")


@dataclass(frozen=True)
class AttackConfig:
    norm: str = "linf"
    epsilon: float = 0.1
    step_size: float = 0.025
    iterations: int = 10
    restarts: int = 1
    random_init: bool = False
    seed: int = 0
    clip_min: float | None = None   # optional input-domain clipping
    clip_max: float | None = None

    def __post_init__(self):
        if self.norm not in NORMS:
            raise DimensionError(f"norm must be one of {NORMS}")
        if self.epsilon < 0:
            raise DimensionError("epsilon must be >= 0")
        if not self.step_size > 0:
            raise DimensionError("step_size must be > 0")
        if self.iterations < 0 or self.restarts < 1:
            raise DimensionError("need iterations >= 0 and restarts >= 1")
        if self.seed < 0:
            raise DimensionError("seed must be >= 0")
        if (self.clip_min is None) != (self.clip_max is None):
            raise DimensionError("clip_min/clip_max must be set together")


@dataclass
class AdvBatch:
    """Best-iterate attack result: inputs, their losses, steps taken."""

    x_adv: np.ndarray
    losses: np.ndarray
    iterations: int


def project(delta, norm, epsilon):
    """Project perturbation rows onto the epsilon-ball of the given norm.

    l-inf: elementwise clamp to [-eps, eps]. l2: rows with norm > eps are
    rescaled to norm exactly eps, shorter rows pass through unchanged.
    """
    if epsilon < 0:
        raise DimensionError("epsilon must be >= 0")
    delta = np.asarray(delta, dtype=np.float64)
    if norm == "linf":
        return np.clip(delta, -epsilon, epsilon)
    if norm == "l2":
        norms = np.linalg.norm(delta, axis=-1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            factor = np.where(norms > epsilon, epsilon / np.where(norms > 0, norms, 1.0), 1.0)
        return delta * factor
    raise DimensionError(f"norm must be one of {NORMS}")


def _ascent_direction(grads, norm):
    if norm == "linf":
        return np.sign(grads)
    norms = np.linalg.norm(grads, axis=1, keepdims=True)
    # zero gradient -> zero direction (no step), avoids 0/0
    return np.where(norms > 0, grads / np.where(norms > 0, norms, 1.0), 0.0)


def _random_delta(cfg, sample_ids, restart, d):
    """Per-sample init drawn from streams keyed by (seed, sample id, restart)."""
    delta = np.empty((len(sample_ids), d))
    for row, sid in enumerate(sample_ids):
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, int(sid), restart]))
        if cfg.norm == "linf":
            delta[row] = rng.uniform(-cfg.epsilon, cfg.epsilon, size=d)
        else:
            direction = rng.standard_normal(d)
            dn = np.linalg.norm(direction)
            radius = cfg.epsilon * rng.uniform() ** (1.0 / d)
            delta[row] = direction / dn * radius if dn > 0 else 0.0
    return delta


def pgd_attack(params, x, target, cfg, loss_kind="hard-ce", sample_ids=None):
    """Projected gradient ascent with best-iterate tracking.

    Tracks the highest-loss point visited per sample, the clean input
    included, over all restarts. `loss_kind` selects hard-label or
    soft-target cross-entropy; for soft, `target` is a (B, k) row-stochastic
    matrix used as a fixed target throughout.
    """
    if loss_kind not in ("hard-ce", "soft-ce"):
        raise DimensionError("loss_kind must be 'hard-ce' or 'soft-ce'")
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if not np.all(np.isfinite(x)):
        raise NumericError("non-finite attack input")
    batch, d = x.shape
    if sample_ids is None:
        sample_ids = np.arange(batch)

    def batch_losses(points):
        cache = model.forward(params, points)
        return model.per_sample_losses(cache, target), cache

    best_loss, _ = batch_losses(x)
    best_x = x.copy()

    def consider(points):
        nonlocal best_loss, best_x
        losses, cache = batch_losses(points)
        better = losses > best_loss
        if np.any(better):
            best_x[better] = points[better]
            best_loss = np.where(better, losses, best_loss)
        return cache

    steps = 0
    for restart in range(cfg.restarts):
        if cfg.random_init:
            delta = _random_delta(cfg, sample_ids, restart, d)
        else:
            delta = np.zeros_like(x)
        current = _apply_clip(x + delta, cfg)
        cache = consider(current)
        for _ in range(cfg.iterations):
            grads = model.per_sample_input_grads(params, cache, target)
            direction = _ascent_direction(grads, cfg.norm)
            delta = project((current - x) + cfg.step_size * direction, cfg.norm, cfg.epsilon)
            current = _apply_clip(x + delta, cfg)
            cache = consider(current)
            steps += 1

    if squeeze:
        return AdvBatch(x_adv=best_x[0], losses=best_loss[:1], iterations=steps)
    return AdvBatch(x_adv=best_x, losses=best_loss, iterations=steps)


def _apply_clip(points, cfg):
    if cfg.clip_min is None:
        return points
    return np.clip(points, cfg.clip_min, cfg.clip_max)


def trades_inner_max(params, x, cfg):
    """Inner TRADES problem: maximize CE(f(x~), softmax(f(x))) over the ball.

    Soft targets are the clean-point probabilities, computed once and frozen
    for the whole inner loop. The caller applies any 1/lambda factor; it does
    not change the maximizer.
    """
    cache = model.forward(params, x)
    return pgd_attack(params, x, cache.probs, cfg, loss_kind="soft-ce")


def logistic_loss(w, b, x, y):
    """Binary logistic loss log(1 + exp(-y (w.x + b))) with y in {-1, +1}."""
    margin = np.asarray(x, dtype=np.float64) @ np.asarray(w, dtype=np.float64) + b
    t = -np.asarray(y, dtype=np.float64) * margin
    # stable softplus
    return np.logaddexp(0.0, t)


def closed_form_linear_adversary(w, b, x, y, epsilon, norm):
    """Exact loss maximizer over the ball for a binary linear-logistic model.

    Logistic loss is monotone decreasing in the margin y(w.x + b), so the
    maximizer minimizes the margin: x - eps*y*sign(w) (l-inf) or
    x - eps*y*w/||w|| (l2). Under l-inf a zero coordinate of w makes the
    maximizer set non-unique.
    """
    w = np.asarray(w, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if norm not in NORMS:
        raise DimensionError(f"norm must be one of {NORMS}")
    if epsilon < 0:
        raise DimensionError("epsilon must be >= 0")
    if norm == "linf":
        if epsilon > 0 and np.any(w == 0.0):
            raise DegenerateProblemError("zero weight coordinate under l-inf")
        step = np.sign(w)
    else:
        wn = np.linalg.norm(w)
        if epsilon > 0 and wn == 0.0:
            raise DegenerateProblemError("zero weight vector under l2")
        step = w / wn if wn > 0 else np.zeros_like(w)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim == 2:
        return x - epsilon * y[:, None] * step[None, :]
    return x - epsilon * float(y) * step
