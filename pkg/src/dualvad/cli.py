"""Command line entry point: ``dualvad {gen-data,train,eval,score,ablate}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .backbone import VARIANTS, ModelVariant
from .config import ConfigError, RunConfig, load_config
from .data import ClipTensorDataset, load_dataset
from .scoring import evaluate, overall_auc, read_scores_csv, rescore, write_scores_csv
from .synthetic import generate_synthetic_scene
from .training import load_checkpoint, train

log = logging.getLogger("dualvad")

TABLE_COLUMNS = ("S_app", "S_motion", "M", "STC", "ASTFM")


def add_common(p: argparse.ArgumentParser):
    p.add_argument("-c", "--config", help="YAML run config")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config value, e.g. train.epochs=3 (repeatable)")
    p.add_argument("--seed", type=int, help="global seed")
    p.add_argument("--out", help="output directory")
    p.add_argument("--root", help="dataset root")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dualvad",
        description="Dual-stream video anomaly detection: data, training, scoring, ablation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic sprite scene with flow and labels")
    add_common(p)

    p = sub.add_parser("train", help="train the predictor on the normal training split")
    add_common(p)
    p.add_argument("--variant", choices=sorted(VARIANTS), help="ablation variant (default E)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--resume", help="checkpoint to continue from")

    p = sub.add_parser("eval", help="score the test split with a trained checkpoint")
    add_common(p)
    p.add_argument("--checkpoint", help="checkpoint file (default <out>/final.pt)")
    p.add_argument("--no-error-maps", action="store_true")

    p = sub.add_parser("score", help="recompute regularity and AUC from a score CSV")
    add_common(p)
    p.add_argument("--scores", help="input CSV (default <out>/scores.csv)")
    p.add_argument("--tau", type=float)

    p = sub.add_parser("ablate", help="train and evaluate variants A-E on the same data")
    add_common(p)
    p.add_argument("--seeds", type=int, nargs="+")
    p.add_argument("--epochs", type=int)
    return parser


def resolve(args) -> RunConfig:
    overrides = list(args.overrides)
    for flag, key in (("seed", "seed"), ("out", "output"), ("root", "data.root"),
                      ("variant", "variant"), ("epochs", "train.epochs"), ("tau", "scoring.tau"),
                      ("checkpoint", "scoring.checkpoint"), ("scores", "scoring.scores")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides.append(f"{key}={value}")
    if getattr(args, "seeds", None):
        overrides.append(f"ablate.seeds={list(args.seeds)}")
    if getattr(args, "no_error_maps", False):
        overrides.append("scoring.error_maps=false")
    return load_config(args.config, overrides)


def cmd_gen_data(cfg: RunConfig, args):
    root = Path(cfg.data.root)
    scene = generate_synthetic_scene(cfg.scene, root, cfg.data.clip_length, cfg.data.stride)
    cfg.freeze(root)
    print(f"wrote {len(scene.train.videos)} train and {len(scene.test.videos)} test videos to {root}")


def datasets(cfg: RunConfig, split: str):
    ds = load_dataset(cfg.data.root, split, cfg.data.clip_length, cfg.data.stride, cfg.data.resolution)
    return ClipTensorDataset(ds)


def run_training(cfg: RunConfig, out_dir: Path, variant: ModelVariant, seed=None, resume=None,
                 train_clips=None):
    tcfg = cfg.train
    if seed is not None:
        tcfg = type(tcfg)(**{**tcfg.to_dict(), "seed": seed})
    clips = train_clips if train_clips is not None else datasets(cfg, "train")
    return train(clips, cfg.network, tcfg, variant, out_dir=out_dir, resume=resume)


def cmd_train(cfg: RunConfig, args):
    out = cfg.freeze()
    result = run_training(cfg, out, cfg.variant, resume=args.resume)
    last = result.history[-1] if result.history else {}
    print(f"checkpoint {result.checkpoint} after {last.get('step', 0)} steps, "
          f"final loss {last.get('total', float('nan')):.6f}")


def write_summary(out: Path, series, auc):
    summary = {"auc": auc, "videos": len(series), "frames": sum(len(s.psnr) for s in series)}
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return summary


def run_eval(cfg: RunConfig, model, out: Path, test_clips=None):
    clips = test_clips if test_clips is not None else datasets(cfg, "test")
    return evaluate(model, clips, out_dir=out, tau=cfg.scoring.tau,
                    distance_reduce=cfg.scoring.distance_reduce,
                    error_maps=cfg.scoring.error_maps, flow_scale=cfg.train.flow_scale,
                    batch_size=cfg.scoring.batch_size)


def cmd_eval(cfg: RunConfig, args):
    out = cfg.freeze()
    ckpt = cfg.scoring.checkpoint or out / "final.pt"
    model, _ = load_checkpoint(ckpt)
    result = run_eval(cfg, model, out)
    write_summary(out, result.series, result.auc)
    if result.auc is None:
        print("labels missing: scores written, AUC skipped")
    else:
        print(f"frame-level AUC {result.auc:.4f}")


def cmd_score(cfg: RunConfig, args):
    out = cfg.freeze()
    src = Path(cfg.scoring.scores or out / "scores.csv")
    series = read_scores_csv(src)
    rescore(series, cfg.scoring.tau)
    write_scores_csv(out / "rescored.csv", series)
    auc = overall_auc(series)
    write_summary(out, series, auc)
    print("labels missing: AUC skipped" if auc is None else f"frame-level AUC {auc:.4f}")


def variant_flags(name: str) -> dict:
    v = VARIANTS[name]
    return {
        "S_app": True,
        "S_motion": v["use_motion_stream"],
        "M": v["use_memory"],
        "STC": v["use_interaction"],
        "ASTFM": v["use_astfm"],
    }


def ablation_table(aucs: dict) -> str:
    """Markdown table: one row per variant, flag columns, per-seed and mean AUC."""
    seeds = sorted({s for per in aucs.values() for s in per})
    head = ["Model", *TABLE_COLUMNS, *(f"AUC seed {s}" for s in seeds), "AUC mean"]
    lines = ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
    for name in sorted(aucs):
        flags = variant_flags(name)
        per = aucs[name]
        cells = [name, *("x" if flags[c] else "" for c in TABLE_COLUMNS),
                 *(f"{per[s]:.4f}" for s in seeds), f"{np.mean(list(per.values())):.4f}"]
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def cmd_ablate(cfg: RunConfig, args):
    out = cfg.freeze()
    train_clips, test_clips = datasets(cfg, "train"), datasets(cfg, "test")
    aucs: dict[str, dict[int, float]] = {}
    for seed in cfg.ablate.seeds:
        for name in cfg.ablate.variants:
            name = name.upper()
            run_dir = out / f"seed_{seed}" / name
            result = run_training(cfg, run_dir, ModelVariant.named(name), seed=seed,
                                  train_clips=train_clips)
            ev = run_eval(cfg, result.model, run_dir, test_clips)
            write_summary(run_dir, ev.series, ev.auc)
            aucs.setdefault(name, {})[seed] = ev.auc
            log.info("variant %s seed %d AUC %.4f", name, seed, ev.auc)
    table = ablation_table(aucs)
    (out / "ablation.md").write_text(table)
    with open(out / "ablation.csv", "w") as f:
        f.write("model," + ",".join(TABLE_COLUMNS) + ",seed,auc\n")
        for name in sorted(aucs):
            flags = variant_flags(name)
            for seed, auc in sorted(aucs[name].items()):
                f.write(f"{name}," + ",".join(str(int(flags[c])) for c in TABLE_COLUMNS)
                        + f",{seed},{auc!r}\n")
    print(table, end="")


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "score": cmd_score,
    "ablate": cmd_ablate,
}


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args)
        COMMANDS[args.command](cfg, args)
    except (ConfigError, FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
