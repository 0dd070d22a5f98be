"""Command-line surface: synth, train, select, attack-eval, verify.

Exit codes: 0 success, 1 usage error, 2 runtime error (or an inconclusive
verification), 3 verification FAIL.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import data as data_mod
from . import features as features_mod
from . import solvers, trainer, verifier
from .errors import AdvCoresetError


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser():
    parser = _Parser(prog="advcoreset",
                     description="Adversarial coreset selection for efficient robust training.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key")
        p.add_argument("--seed", type=int, help="override the command's master seed")
        p.add_argument("--out", default=".", help="output directory")

    for name in ("synth", "train", "select", "attack-eval", "verify"):
        p = sub.add_parser(name)
        common(p)
        if name == "train":
            p.add_argument("--timing", choices=("wall", "none"), default="wall",
                           help="'none' writes 0.0 wall times for byte-stable metrics")
        if name in ("select", "attack-eval"):
            p.add_argument("--checkpoint", required=True, help="checkpoint file to load")
        if name == "attack-eval":
            p.add_argument("--split", choices=("eval", "train"), default="eval")
    return parser


def _load_config(args):
    if args.config:
        cfg = config_mod.load_config(args.config)
    else:
        cfg = config_mod.default_config()
    config_mod.apply_overrides(cfg, args.set)
    return cfg


def _datasets(cfg):
    """(train set, eval set) exactly as the trainer derives them."""
    if cfg["dataset.kind"] == "csv":
        ds = data_mod.load_csv(cfg["dataset.path"])
        return ds, ds
    train = data_mod.synth_dataset(cfg["dataset.kind"], cfg["dataset.n"], cfg["dataset.d"],
                                   cfg["dataset.k"], cfg["dataset.margin"], seed=cfg["dataset.seed"])
    eval_ds = data_mod.synth_dataset(cfg["dataset.kind"], cfg["dataset.eval_n"], cfg["dataset.d"],
                                     cfg["dataset.k"], cfg["dataset.margin"],
                                     seed=cfg["dataset.seed"] + 1)
    return train, eval_ds


def _cmd_synth(args, cfg):
    if args.seed is not None:
        cfg["dataset.seed"] = args.seed
    ds = data_mod.synth_dataset(cfg["dataset.kind"], cfg["dataset.n"], cfg["dataset.d"],
                                cfg["dataset.k"], cfg["dataset.margin"], seed=cfg["dataset.seed"])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "dataset.csv"
    data_mod.save_csv(path, ds)
    print(json.dumps({"written": str(path), "n": ds.n, "d": ds.d, "k": ds.k}))
    return 0


def _cmd_train(args, cfg):
    if args.seed is not None:
        cfg["train.seed"] = args.seed
    train_ds, eval_ds = _datasets(cfg)
    tcfg = config_mod.train_config(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(config_mod.serialize_config(cfg), encoding="utf-8")
    params, records, summary = trainer.train(tcfg, train_ds, eval_ds, out_dir=out,
                                             timing=args.timing)
    last = records[-1]
    print(json.dumps({
        "final_clean_acc": last.clean_acc,
        "final_robust_acc": last.robust_acc,
        "epochs": len(records),
        "total_seconds": summary["total_seconds"],
        "selection_seconds": summary["selection_seconds"],
    }))
    return 0


def _cmd_select(args, cfg):
    if args.seed is not None:
        cfg["solver.seed"] = args.seed
        cfg["attack.seed"] = args.seed
    state = trainer.load_checkpoint(args.checkpoint)
    train_ds, _ = _datasets(cfg)
    feats = features_mod.adv_grad_features(
        state["params"], train_ds, config_mod.objective_kind(cfg),
        config_mod.attack_config(cfg, selection=True))
    batched = features_mod.batch_aggregate(feats, cfg["train.sel_batch_size"],
                                           shuffle_seed=cfg["solver.seed"])
    units = solvers.select(batched, config_mod.solver_config(cfg), epoch=state["epoch"])
    coreset = solvers.expand_coreset(units, batched.index_map)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "coreset.txt"
    solvers.save_coreset(path, coreset)
    gamma = verifier.gamma_error(feats, coreset)
    print(json.dumps({"written": str(path), "units": units.size,
                      "samples": coreset.size, "gamma": gamma}))
    return 0


def _cmd_attack_eval(args, cfg):
    if args.seed is not None:
        cfg["attack.seed"] = args.seed
    state = trainer.load_checkpoint(args.checkpoint)
    train_ds, eval_ds = _datasets(cfg)
    ds = eval_ds if args.split == "eval" else train_ds
    clean, robust = trainer.evaluate(state["params"], ds, config_mod.attack_config(cfg))
    result = {"clean_acc": clean, "robust_acc": robust, "split": args.split, "n": ds.n}
    out = Path(args.out)
    if args.out != ".":
        out.mkdir(parents=True, exist_ok=True)
        (out / "eval.json").write_text(json.dumps(result) + "\n", encoding="utf-8")
    print(json.dumps(result))
    return 0


def _cmd_verify(args, cfg):
    base_seed = args.seed if args.seed is not None else 0
    reports = []
    failed = inconclusive = False
    lines = []

    for seed in range(base_seed, base_seed + cfg["verify.seeds"]):
        probe_data = data_mod.synth_dataset("gaussian-blobs", cfg["verify.n"], cfg["verify.d"],
                                            2, cfg["verify.margin"], seed=seed)
        probe_cfg = verifier.BoundProbeConfig(
            iterations=cfg["verify.iterations"], fraction=cfg["verify.fraction"],
            solver=cfg["verify.solver"], epsilon=cfg["verify.epsilon"],
            norm=cfg["verify.norm"], mu=cfg["verify.mu"], seed=seed)
        for part in ("part1", "part2"):
            report = verifier.theorem1_check(part, probe_data, probe_cfg)
            reports.append(json.loads(report.json()))
            lines.append(
                f"theorem1 {part} seed={seed}: {report.status.upper()} "
                f"(lhs={report.lhs:.6g}, rhs={report.rhs:.6g}, slack={report.slack:.6g})")
            failed |= report.status == "fail"
            inconclusive |= report.status == "inconclusive"

    worst = {"linf": 0.0, "l2": 0.0}
    rng = np.random.default_rng(np.random.SeedSequence([base_seed, 0xda25]))
    for _ in range(cfg["verify.danskin_instances"]):
        d = 4
        w = rng.uniform(0.2, 1.5, size=d) * rng.choice([-1.0, 1.0], size=d)
        b = float(rng.normal())
        x = rng.normal(size=d)
        y = float(rng.choice([-1.0, 1.0]))
        for norm in ("linf", "l2"):
            err = verifier.danskin_check(w, b, x, y, 0.1, norm, fd_step=1e-5)
            worst[norm] = max(worst[norm], err)
    danskin_ok = all(v < 1e-4 for v in worst.values())
    failed |= not danskin_ok
    lines.append(f"danskin: {'PASS' if danskin_ok else 'FAIL'} "
                 f"(max rel err linf={worst['linf']:.3g}, l2={worst['l2']:.3g})")

    lemma = verifier.lemma_probes(seed_count=cfg["verify.lemma_seeds"],
                                  pairs_per_seed=cfg["verify.lemma_pairs"])
    failed |= not lemma.clean
    lines.append(f"lemmas: {'PASS' if lemma.clean else 'FAIL'} "
                 f"({lemma.pairs} pairs, max violation {lemma.max_violation:.3g})")

    for line in lines:
        print(line)
    if args.out != ".":
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        payload = {"theorem1": reports, "danskin_max_rel_err": worst,
                   "lemma_pairs": lemma.pairs, "lemma_clean": lemma.clean}
        (out / "verify.json").write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    if failed:
        return 3
    if inconclusive:
        return 2
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "train": _cmd_train,
    "select": _cmd_select,
    "attack-eval": _cmd_attack_eval,
    "verify": _cmd_verify,
}


def run_cli(argv):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except SystemExit as exc:   # argparse -h
        return 0 if exc.code in (0, None) else 1
    try:
        cfg = _load_config(args)
        return _COMMANDS[args.command](args, cfg)
    except AdvCoresetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(run_cli(sys.argv[1:]))


if __name__ == "__main__":
    main()
