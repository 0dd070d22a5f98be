"""Flat `key = value` run configuration.

Dotted keys, `#` comments, blank lines allowed. Unknown keys are rejected
and any referenced file must exist at parse time. Parsing then serializing
then parsing again yields an identical mapping.
"""

import os
from dataclasses import replace

from .attacks import AttackConfig
from .errors import ConfigError
from .features import ObjectiveKind
from .solvers import SolverConfig
from .trainer import TrainConfig

_INT = "int"
_FLOAT = "float"
_BOOL = "bool"
_STR = "str"
_INT_LIST = "int_list"
_BUDGET = "budget"     # int count or float fraction

# key -> (type, default)
SCHEMA = {
    "dataset.kind": (_STR, "gaussian-blobs"),
    "dataset.path": (_STR, ""),
    "dataset.n": (_INT, 2000),
    "dataset.d": (_INT, 20),
    "dataset.k": (_INT, 4),
    "dataset.margin": (_FLOAT, 4.0),
    "dataset.seed": (_INT, 0),
    "dataset.eval_n": (_INT, 500),
    "model.hidden": (_INT_LIST, (32,)),
    "model.activation": (_STR, "relu"),
    "objective.kind": (_STR, "adversarial-ce"),
    "objective.trades_lambda": (_FLOAT, 6.0),
    "attack.norm": (_STR, "linf"),
    "attack.epsilon": (_FLOAT, 0.1),
    "attack.step_size": (_FLOAT, 0.025),
    "attack.iterations": (_INT, 10),
    "attack.restarts": (_INT, 1),
    "attack.random_init": (_BOOL, True),
    "attack.seed": (_INT, 0),
    "attack_sel.iterations": (_INT, -1),     # -1 -> mirror attack.iterations
    "attack_sel.step_size": (_FLOAT, -1.0),  # -1 -> mirror attack.step_size
    "solver.method": (_STR, "gradmatch-omp"),
    "solver.budget": (_BUDGET, 0.5),
    "solver.lambda": (_FLOAT, 0.0),
    "solver.tolerance": (_FLOAT, 0.0),
    "solver.seed": (_INT, 0),
    "train.epochs": (_INT, 12),
    "train.warm_coeff": (_FLOAT, 0.5),
    "train.period": (_INT, 5),
    "train.fraction": (_FLOAT, 0.5),
    "train.batch_size": (_INT, 128),
    "train.sel_batch_size": (_INT, 20),
    "train.lr": (_FLOAT, 0.1),
    "train.lr_decay_epochs": (_INT_LIST, ()),
    "train.lr_decay_factor": (_FLOAT, 0.1),
    "train.weight_decay": (_FLOAT, 0.0),
    "train.seed": (_INT, 0),
    "verify.seeds": (_INT, 3),
    "verify.n": (_INT, 200),
    "verify.d": (_INT, 5),
    "verify.margin": (_FLOAT, 1.0),
    "verify.iterations": (_INT, 100),
    "verify.fraction": (_FLOAT, 0.5),
    "verify.epsilon": (_FLOAT, 0.05),
    "verify.norm": (_STR, "linf"),
    "verify.mu": (_FLOAT, 0.1),
    "verify.solver": (_STR, "gradmatch-omp"),
    "verify.danskin_instances": (_INT, 50),
    "verify.lemma_seeds": (_INT, 10),
    "verify.lemma_pairs": (_INT, 1000),
}


def _parse_value(key, text):
    kind, _ = SCHEMA[key]
    text = text.strip()
    try:
        if kind == _INT:
            return int(text)
        if kind == _FLOAT:
            return float(text)
        if kind == _BOOL:
            if text.lower() in ("true", "1", "yes"):
                return True
            if text.lower() in ("false", "0", "no"):
                return False
            raise ValueError(text)
        if kind == _INT_LIST:
            if not text:
                return ()
            return tuple(int(v) for v in text.split(","))
        if kind == _BUDGET:
            return int(text) if "." not in text and "e" not in text.lower() else float(text)
        return text
    except ValueError:
        raise ConfigError(f"cannot parse value {text!r} for key {key!r}") from None


def _format_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def default_config():
    return {key: default for key, (_, default) in SCHEMA.items()}


def parse_config(text, base_dir="."):
    cfg = default_config()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        cfg[key] = _parse_value(key, value)
    path = cfg["dataset.path"]
    if cfg["dataset.kind"] == "csv":
        if not path:
            raise ConfigError("dataset.kind=csv requires dataset.path")
        resolved = path if os.path.isabs(path) else os.path.join(base_dir, path)
        if not os.path.exists(resolved):
            raise ConfigError(f"referenced file does not exist: {resolved}")
    return cfg


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), base_dir=os.path.dirname(os.path.abspath(path)))


def serialize_config(cfg):
    lines = [f"{key} = {_format_value(cfg[key])}" for key in sorted(cfg)]
    return "\n".join(lines) + "\n"


def apply_overrides(cfg, pairs):
    """Apply --set key=value overrides (same syntax as config lines)."""
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, value = (part.strip() for part in pair.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"unknown key {key!r}")
        cfg[key] = _parse_value(key, value)
    return cfg


# --- dataclass builders -----------------------------------------------------

def attack_config(cfg, selection=False):
    base = AttackConfig(
        norm=cfg["attack.norm"],
        epsilon=cfg["attack.epsilon"],
        step_size=cfg["attack.step_size"],
        iterations=cfg["attack.iterations"],
        restarts=cfg["attack.restarts"],
        random_init=cfg["attack.random_init"],
        seed=cfg["attack.seed"],
    )
    if not selection:
        return base
    updates = {}
    if cfg["attack_sel.iterations"] >= 0:
        updates["iterations"] = cfg["attack_sel.iterations"]
    if cfg["attack_sel.step_size"] >= 0:
        updates["step_size"] = cfg["attack_sel.step_size"]
    return replace(base, **updates) if updates else base


def objective_kind(cfg):
    return ObjectiveKind(tag=cfg["objective.kind"], trades_lambda=cfg["objective.trades_lambda"])


def solver_config(cfg):
    return SolverConfig(
        method=cfg["solver.method"],
        budget=cfg["solver.budget"],
        omp_lambda=cfg["solver.lambda"],
        tolerance=cfg["solver.tolerance"],
        seed=cfg["solver.seed"],
    )


def train_config(cfg):
    return TrainConfig(
        total_epochs=cfg["train.epochs"],
        warm_start_coeff=cfg["train.warm_coeff"],
        selection_period=cfg["train.period"],
        coreset_fraction=cfg["train.fraction"],
        sgd_batch_size=cfg["train.batch_size"],
        selection_batch_size=cfg["train.sel_batch_size"],
        lr=cfg["train.lr"],
        lr_decay_epochs=cfg["train.lr_decay_epochs"],
        lr_decay_factor=cfg["train.lr_decay_factor"],
        weight_decay=cfg["train.weight_decay"],
        objective=objective_kind(cfg),
        attack_cfg=attack_config(cfg),
        attack_cfg_sel=attack_config(cfg, selection=True),
        solver_cfg=solver_config(cfg),
        model_hidden=cfg["model.hidden"],
        activation=cfg["model.activation"],
        seed=cfg["train.seed"],
    )
