"""Warm-start training loop with periodic adversarial coreset selection.

Epoch plan: the first round(kappa * E * k) epochs train on the full data;
the first post-warm epoch selects a coreset, which is refreshed every
`selection_period` epochs and reused in between.

Every random stream is derived statelessly from (master seed, epoch,
purpose), so evaluation never perturbs training randomness and runs are
bit-reproducible; checkpoints only need (seed, epoch, coreset) to resume.
"""

import json
import struct
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import attacks, features as features_mod, model, solvers, verifier
from .attacks import AttackConfig
from .errors import DimensionError, NumericError
from .features import ObjectiveKind
from .model import ModelParams
from .solvers import Coreset, SolverConfig

_CKPT_MAGIC = b"ACSC"
_CKPT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    total_epochs: int = 10
    warm_start_coeff: float = 0.5         # kappa in [0, 1]
    selection_period: int = 5             # T
    coreset_fraction: float = 0.5         # k in (0, 1]
    sgd_batch_size: int = 128
    selection_batch_size: int = 20
    lr: float = 0.1
    lr_decay_epochs: tuple = ()
    lr_decay_factor: float = 0.1
    weight_decay: float = 0.0
    objective: ObjectiveKind = ObjectiveKind()
    attack_cfg: AttackConfig = AttackConfig()
    attack_cfg_sel: AttackConfig | None = None   # None -> mirror attack_cfg
    solver_cfg: SolverConfig = SolverConfig()
    model_hidden: tuple = (32,)
    activation: str = "relu"
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.coreset_fraction <= 1.0:
            raise DimensionError("coreset_fraction must lie in (0, 1]")
        if not 0.0 <= self.warm_start_coeff <= 1.0:
            raise DimensionError("warm_start_coeff must lie in [0, 1]")
        if self.selection_period < 1 or self.total_epochs < 1:
            raise DimensionError("need selection_period >= 1 and total_epochs >= 1")
        if self.sgd_batch_size < 1 or self.selection_batch_size < 1:
            raise DimensionError("batch sizes must be >= 1")
        decays = tuple(self.lr_decay_epochs)
        if any(b <= a for a, b in zip(decays, decays[1:])) or any(
            e >= self.total_epochs for e in decays
        ):
            raise DimensionError("decay epochs must be strictly increasing and < total_epochs")

    @property
    def warm_epochs(self):
        x = self.warm_start_coeff * self.total_epochs * self.coreset_fraction
        return int(np.floor(x + 0.5))

    def selection_attack(self):
        return self.attack_cfg_sel if self.attack_cfg_sel is not None else self.attack_cfg

    def learning_rate(self, epoch):
        drops = sum(1 for e in self.lr_decay_epochs if epoch >= e)
        return self.lr * self.lr_decay_factor ** drops

    def digest(self):
        import hashlib

        return hashlib.sha256(repr(self).encode()).hexdigest()[:12]


@dataclass
class TrainState:
    params: ModelParams
    epoch: int = 0
    coreset: Coreset | None = None
    train_grad_samples: int = 0
    selection_grad_samples: int = 0
    selection_seconds: float = 0.0
    attack_seconds: float = 0.0
    step_seconds: float = 0.0


@dataclass
class MetricsRecord:
    epoch: int
    loss: float
    clean_acc: float | None = None
    robust_acc: float | None = None
    gamma: float | None = None
    epoch_seconds: float = 0.0
    coreset_samples: int = 0

    def json_line(self):
        payload = {
            "epoch": self.epoch,
            "loss": self.loss,
            "clean_acc": self.clean_acc,
            "robust_acc": self.robust_acc,
            "gamma": self.gamma,
            "epoch_seconds": self.epoch_seconds,
            "coreset_samples": self.coreset_samples,
        }
        return json.dumps(payload)


# --- stateless stream derivation -------------------------------------------

def init_seed(seed):
    return int(np.random.SeedSequence([int(seed), 0x1417]).generate_state(1)[0])

def shuffle_rng(seed, epoch):
    return np.random.default_rng(np.random.SeedSequence([int(seed), 0x5f1e, int(epoch)]))

def attack_seed(seed, epoch):
    return int(np.random.SeedSequence([int(seed), 0xa77c, int(epoch)]).generate_state(1)[0])

def selection_seed(seed, epoch):
    return int(np.random.SeedSequence([int(seed), 0x5e1c, int(epoch)]).generate_state(1)[0])


def epoch_plan(cfg, epoch):
    """'warm' | 'select' | 'reuse' for 1-based epoch numbers."""
    if not 1 <= epoch <= cfg.total_epochs:
        raise DimensionError("epoch out of range")
    warm = cfg.warm_epochs
    if epoch <= warm:
        return "warm"
    if (epoch - (warm + 1)) % cfg.selection_period == 0:
        return "select"
    return "reuse"


def full_coreset(n):
    return Coreset(indices=np.arange(n), weights=np.ones(n), provenance="warm-start full data")


def select_coreset(state, data, cfg, epoch=None):
    """Fresh selection with the current parameters. Returns the sample-level
    coreset and its gradient approximation error."""
    sel_attack = replace(cfg.selection_attack(), seed=attack_seed(cfg.seed, epoch or 0))
    feats = features_mod.adv_grad_features(state.params, data, cfg.objective, sel_attack)
    state.selection_grad_samples += data.n
    batched = features_mod.batch_aggregate(
        feats, cfg.selection_batch_size, shuffle_seed=selection_seed(cfg.seed, epoch or 0)
    )
    solver_cfg = replace(
        cfg.solver_cfg,
        budget=float(cfg.coreset_fraction),
        seed=selection_seed(cfg.seed, (epoch or 0) + 1),
    )
    units = solvers.select(batched, solver_cfg, epoch=epoch)
    coreset = solvers.expand_coreset(units, batched.index_map)
    gamma = verifier.gamma_error(feats, coreset)
    return coreset, gamma


def weighted_objective_grads(params, xb, yb, wb, objective, attack_cfg, sample_ids=None):
    """Weighted-mean objective value and its exact parameter gradient.

    The per-sample objectives are weighted by wb and normalized by sum(wb),
    so uniformly rescaling the weights leaves the result unchanged.
    Returns (loss, grads, attack_seconds).
    """
    wb = np.asarray(wb, dtype=np.float64)
    wsum = wb.sum()
    if not wsum > 0:
        raise DimensionError("batch weights must have positive mass")
    attack_time = 0.0

    if objective.tag == "vanilla":
        cache = model.forward(params, xb)
        t = np.zeros_like(cache.probs)
        t[np.arange(len(yb)), yb] = 1.0
        loss = float((model.per_sample_losses(cache, yb) * wb).sum() / wsum)
        grads, _ = model._backprop(params, cache, (cache.probs - t) * wb[:, None])
    elif objective.tag == "adversarial-ce":
        t0 = time.perf_counter()
        adv = attacks.pgd_attack(params, xb, yb, attack_cfg, "hard-ce", sample_ids=sample_ids)
        attack_time = time.perf_counter() - t0
        cache = model.forward(params, adv.x_adv)
        t = np.zeros_like(cache.probs)
        t[np.arange(len(yb)), yb] = 1.0
        loss = float((model.per_sample_losses(cache, yb) * wb).sum() / wsum)
        grads, _ = model._backprop(params, cache, (cache.probs - t) * wb[:, None])
    elif objective.tag == "trades":
        clean = model.forward(params, xb)
        p_clean = clean.probs
        t0 = time.perf_counter()
        adv = attacks.pgd_attack(params, xb, p_clean, attack_cfg, "soft-ce", sample_ids=sample_ids)
        attack_time = time.perf_counter() - t0
        adv_cache = model.forward(params, adv.x_adv)
        p_adv, log_p_adv = adv_cache.probs, adv_cache.log_probs
        onehot = np.zeros_like(p_clean)
        onehot[np.arange(len(yb)), yb] = 1.0
        inv_lambda = 1.0 / objective.trades_lambda
        phi = model.per_sample_losses(clean, yb) + inv_lambda * adv.losses
        loss = float((phi * wb).sum() / wsum)
        inner = (p_clean * log_p_adv).sum(axis=1, keepdims=True)
        dz_clean = (p_clean - onehot) + inv_lambda * p_clean * (inner - log_p_adv)
        dz_adv = inv_lambda * (p_adv - p_clean)
        grads, _ = model._backprop(params, clean, dz_clean * wb[:, None])
        grads_adv, _ = model._backprop(params, adv_cache, dz_adv * wb[:, None])
        for gw, gw2 in zip(grads.weights, grads_adv.weights):
            gw += gw2
        for gb, gb2 in zip(grads.biases, grads_adv.biases):
            gb += gb2
    else:
        raise DimensionError(f"unknown objective tag {objective.tag!r}")

    for arr in grads.weights + grads.biases:
        arr /= wsum
    return loss, grads, attack_time


def sgd_step(params, grads, lr, weight_decay=0.0):
    for w, g in zip(params.weights, grads.weights):
        w -= lr * (g + weight_decay * w)
    for b, g in zip(params.biases, grads.biases):
        b -= lr * (g + weight_decay * b)


def weighted_sgd_epoch(state, data, coreset, cfg, epoch):
    """One pass of weighted mini-batch SGD over the coreset samples."""
    if coreset.size == 0:
        raise DimensionError("coreset is empty")
    start = time.perf_counter()
    order = shuffle_rng(cfg.seed, epoch).permutation(coreset.size)
    lr = cfg.learning_rate(epoch)
    acfg = replace(cfg.attack_cfg, seed=attack_seed(cfg.seed, epoch))
    loss_mass = 0.0
    weight_mass = 0.0
    for lo in range(0, coreset.size, cfg.sgd_batch_size):
        pos = order[lo:lo + cfg.sgd_batch_size]
        ids = coreset.indices[pos]
        wb = coreset.weights[pos]
        loss, grads, attack_time = weighted_objective_grads(
            state.params, data.features[ids], data.labels[ids], wb,
            cfg.objective, acfg, sample_ids=ids,
        )
        if not np.isfinite(loss):
            raise NumericError(f"non-finite loss at epoch {epoch}")
        sgd_step(state.params, grads, lr, cfg.weight_decay)
        state.attack_seconds += attack_time
        state.train_grad_samples += len(ids)
        loss_mass += loss * wb.sum()
        weight_mass += wb.sum()
    elapsed = time.perf_counter() - start
    state.step_seconds += elapsed
    state.epoch = epoch
    return loss_mass / weight_mass, elapsed


def evaluate(params, data, attack_cfg):
    """(clean accuracy, robust accuracy) under the given attack."""
    cache = model.forward(params, data.features)
    clean = float(np.mean(np.argmax(cache.logits, axis=1) == data.labels))
    adv = attacks.pgd_attack(params, data.features, data.labels, attack_cfg,
                             "hard-ce", sample_ids=np.arange(data.n))
    adv_cache = model.forward(params, adv.x_adv)
    robust = float(np.mean(np.argmax(adv_cache.logits, axis=1) == data.labels))
    return clean, robust


def train(cfg, data, eval_data=None, out_dir=None, timing="wall", metrics_path=None,
          resume_from=None):
    """Run the full schedule; returns (params, records, summary).

    Writes JSON-lines metrics and binary checkpoints under out_dir when
    given. timing='none' records 0.0 wall times so identically-seeded runs
    produce byte-identical metrics files. resume_from continues an
    interrupted run from a checkpoint; all random streams are derived from
    (seed, epoch), so a resumed run matches an uninterrupted one bit for
    bit.
    """
    if eval_data is None:
        eval_data = data
    sizes = [data.d, *cfg.model_hidden, data.k]
    state = TrainState(params=ModelParams.random(sizes, cfg.activation, seed=init_seed(cfg.seed)))
    records = []
    coreset = None
    first_epoch = 1
    if resume_from is not None:
        snapshot = load_checkpoint(resume_from)
        if snapshot["config_digest"] != cfg.digest():
            raise DimensionError("checkpoint was produced by a different config")
        state.params = snapshot["params"]
        coreset = snapshot["coreset"]
        first_epoch = snapshot["epoch"] + 1
    run_start = time.perf_counter()
    metrics_file = None
    if out_dir is not None:
        from pathlib import Path

        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        metrics_file = open(metrics_path or out / "metrics.jsonl", "a", encoding="utf-8")

    def clock(value):
        return 0.0 if timing == "none" else value

    try:
        for epoch in range(first_epoch, cfg.total_epochs + 1):
            plan = epoch_plan(cfg, epoch)
            gamma = None
            sel_time = 0.0
            try:
                if plan == "warm":
                    coreset = full_coreset(data.n)
                elif plan == "select":
                    t0 = time.perf_counter()
                    coreset, gamma = select_coreset(state, data, cfg, epoch=epoch)
                    sel_time = time.perf_counter() - t0
                    state.selection_seconds += sel_time
                    if out_dir is not None:
                        # epoch field counts completed epochs; resuming re-runs
                        # this epoch (the selection is deterministic)
                        save_checkpoint(out / f"checkpoint_epoch{epoch:04d}.bin",
                                        state.params, cfg.digest(), cfg.seed,
                                        epoch - 1, coreset)
                loss, step_time = weighted_sgd_epoch(state, data, coreset, cfg, epoch)
            except Exception:
                # snapshot at failure; resuming re-runs the failed epoch
                if out_dir is not None:
                    save_checkpoint(out / "checkpoint_diagnostic.bin",
                                    state.params, cfg.digest(), cfg.seed,
                                    epoch - 1, coreset)
                raise
            clean, robust = evaluate(state.params, eval_data, cfg.attack_cfg)
            record = MetricsRecord(
                epoch=epoch,
                loss=loss,
                clean_acc=clean,
                robust_acc=robust,
                gamma=gamma,
                epoch_seconds=clock(sel_time + step_time),
                coreset_samples=coreset.size,
            )
            records.append(record)
            if metrics_file is not None:
                metrics_file.write(record.json_line() + "\n")
                metrics_file.flush()
    finally:
        if metrics_file is not None:
            metrics_file.close()

    summary = {
        "total_seconds": clock(time.perf_counter() - run_start),
        "selection_seconds": clock(state.selection_seconds),
        "attack_seconds": clock(state.attack_seconds),
        "train_grad_samples": state.train_grad_samples,
        "selection_grad_samples": state.selection_grad_samples,
    }
    if out_dir is not None:
        save_checkpoint(out / "checkpoint_final.bin", state.params, cfg.digest(),
                        cfg.seed, cfg.total_epochs, coreset)
    return state.params, records, summary


# --- checkpoints ------------------------------------------------------------

def save_checkpoint(path, params, cfg_digest, seed, epoch, coreset=None):
    act = 0 if params.activation == "relu" else 1
    sizes = params.layer_sizes
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<I", _CKPT_VERSION))
        digest = cfg_digest.encode()
        fh.write(struct.pack("<B", len(digest)))
        fh.write(digest)
        fh.write(struct.pack("<IB", len(sizes), act))
        fh.write(np.asarray(sizes, dtype="<u4").tobytes())
        for w, b in zip(params.weights, params.biases):
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())
        fh.write(struct.pack("<QI", int(seed), int(epoch)))
        core = coreset if coreset is not None else Coreset(np.empty(0, dtype=np.int64), np.empty(0))
        fh.write(struct.pack("<I", core.size))
        fh.write(np.asarray(core.indices, dtype="<u4").tobytes())
        fh.write(np.asarray(core.weights, dtype="<f8").tobytes())
        prov = core.provenance.encode()
        fh.write(struct.pack("<I", len(prov)))
        fh.write(prov)


def load_checkpoint(path):
    with open(path, "rb") as fh:
        if fh.read(4) != _CKPT_MAGIC:
            raise DimensionError("not a checkpoint file (bad magic)")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != _CKPT_VERSION:
            raise DimensionError(f"unsupported checkpoint version {version}")
        (dlen,) = struct.unpack("<B", fh.read(1))
        digest = fh.read(dlen).decode()
        n_sizes, act = struct.unpack("<IB", fh.read(5))
        sizes = np.frombuffer(fh.read(4 * n_sizes), dtype="<u4").astype(int).tolist()
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            weights.append(np.frombuffer(fh.read(8 * fan_in * fan_out), dtype="<f8")
                           .reshape(fan_in, fan_out).copy())
            biases.append(np.frombuffer(fh.read(8 * fan_out), dtype="<f8").copy())
        seed, epoch = struct.unpack("<QI", fh.read(12))
        (count,) = struct.unpack("<I", fh.read(4))
        indices = np.frombuffer(fh.read(4 * count), dtype="<u4").astype(np.int64)
        cweights = np.frombuffer(fh.read(8 * count), dtype="<f8").copy()
        (plen,) = struct.unpack("<I", fh.read(4))
        provenance = fh.read(plen).decode()
    params = ModelParams(weights=weights, biases=biases,
                         activation="relu" if act == 0 else "identity")
    coreset = Coreset(indices=indices, weights=cweights, provenance=provenance) if count else None
    return {"params": params, "config_digest": digest, "seed": int(seed),
            "epoch": int(epoch), "coreset": coreset}
