"""Command-line entry point.

    cidfd gen-data --config exp.toml            # Stripe MNIST + Stripes to <out>/data
    cidfd train    --config exp.toml --stage both
    cidfd eval     --config exp.toml            # <out>/metrics.json
    cidfd analyze  --config exp.toml            # <out>/analysis/*.csv, summary JSON

Every command writes the resolved config to ``<out>/resolved_config.toml``
and exits 0 only when its outputs exist.
"""
import argparse
import json
import logging
import sys
from pathlib import Path

import torch

from . import analysis, cluster_eval
from .config import ConfigError, dump_config, load_config, train_config
from .data import build_stripe_mnist, load_image_dir, save_dataset
from .trainer import (
    NDJSONLogger,
    StageOrderError,
    extract_features,
    init_state,
    load_checkpoint,
    save_checkpoint,
    train_background,
    train_target,
)

log = logging.getLogger("cidfd")


class CommandError(Exception):
    """Expected failure; reported on stderr with exit code 1."""


def _paths(cfg):
    out = Path(cfg["out_dir"])
    ds = cfg["dataset"]
    return {
        "out": out,
        "target": Path(ds["target_dir"]) if ds["target_dir"] else out / "data" / "target",
        "background": Path(ds["background_dir"]) if ds["background_dir"] else out / "data" / "background",
        "ckpt": out / "checkpoints",
        "log": out / "logs" / "train.ndjson",
        "metrics": out / "metrics.json",
        "analysis": out / "analysis",
    }


def _load(path, role, cfg):
    if not (Path(path) / "manifest.csv").exists():
        raise CommandError(f"no {role} dataset at {path}; run `cidfd gen-data` first "
                           f"or set dataset.{role}_dir")
    size = cfg["dataset"].get("image_size")
    return load_image_dir(path, role=role, image_size=tuple(size) if size else None)


def cmd_gen_data(cfg) -> list:
    ds = cfg["dataset"]
    mnist = Path(ds["mnist_path"])
    if not mnist.is_dir():
        raise CommandError(f"MNIST path not found: {mnist}")
    target, background = build_stripe_mnist(mnist, ds["data_seed"], ds["scale"],
                                            ds["stripe_amplitude"])
    p = _paths(cfg)
    outputs = [save_dataset(target, p["out"] / "data" / "target"),
               save_dataset(background, p["out"] / "data" / "background")]
    log.info("wrote %d target and %d background images", len(target), len(background))
    return outputs


def _checkpoint_hook(cfg, tc, stage):
    every = tc.checkpoint_every
    ckpt = _paths(cfg)["ckpt"]

    def hook(state):
        epoch = state.epoch_f if stage == 1 else state.epoch_g
        if every and epoch % every == 0:
            save_checkpoint(state, ckpt / f"{'bg' if stage == 1 else 'tg'}_epoch{epoch:04d}", tc)
    return hook


def cmd_train(cfg, stage: str) -> list:
    tc = train_config(cfg)
    p = _paths(cfg)
    torch.manual_seed(tc.seed)
    # a target-only rerun keeps the background records of the earlier run
    keep = (lambda r: r.get("stage") == 1) if stage == "tg" else None
    logger = NDJSONLogger(p["log"], keep)
    outputs = []
    target = _load(p["target"], "target", cfg) if stage in ("tg", "both") else None

    if stage in ("bg", "both") and not tc.idfd_baseline:
        background = _load(p["background"], "background", cfg)
        n_target = len(target) if target is not None else _target_size(p["target"])
        state = init_state(tc, cfg["encoder"]["arch"], n_target, len(background))
        train_background(state, background, tc, logger, _checkpoint_hook(cfg, tc, 1))
        outputs.append(save_checkpoint(state, p["ckpt"] / "bg", tc))

    if stage in ("tg", "both"):
        if tc.idfd_baseline:
            state = init_state(tc, cfg["encoder"]["arch"], len(target), 1)
        else:
            bg_ckpt = p["ckpt"] / "bg"
            if not bg_ckpt.with_suffix(".json").exists():
                raise StageOrderError(f"stage tg needs a completed background stage; "
                                      f"{bg_ckpt.with_suffix('.json')} not found (run --stage bg)")
            state, _ = load_checkpoint(bg_ckpt)
        train_target(state, target, tc, logger, _checkpoint_hook(cfg, tc, 2))
        outputs.append(save_checkpoint(state, p["ckpt"] / "tg", tc,
                                       {"idfd_baseline": tc.idfd_baseline}))
    return outputs


def _target_size(path):
    manifest = Path(path) / "manifest.csv"
    if not manifest.exists():
        raise CommandError(f"no target dataset at {path}; run `cidfd gen-data` first")
    return sum(1 for _ in open(manifest)) - 1


def _target_features(cfg, checkpoint):
    p = _paths(cfg)
    ckpt = Path(checkpoint) if checkpoint else p["ckpt"] / "tg"
    if not ckpt.with_suffix(".json").exists():
        raise CommandError(f"checkpoint not found: {ckpt.with_suffix('.json')}")
    state, _ = load_checkpoint(ckpt)
    target = _load(p["target"], "target", cfg)
    return extract_features(state.g, target).double().numpy(), target


def cmd_eval(cfg, checkpoint=None) -> list:
    feats, target = _target_features(cfg, checkpoint)
    if target.target_labels is None:
        raise CommandError("evaluation needs target labels in the manifest")
    k = cfg["eval"]["k"] or target.spec.num_classes
    report = cluster_eval.evaluate(feats, target.target_labels, k, cfg["training"]["seed"],
                                   cfg["eval"]["restarts"])
    path = _paths(cfg)["metrics"]
    path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    log.info("acc %.4f nmi %.4f ari %.4f", report["acc"], report["nmi"], report["ari"])
    return [path]


def cmd_analyze(cfg, checkpoint=None) -> list:
    feats, target = _target_features(cfg, checkpoint)
    if target.target_labels is None or target.background_labels is None:
        raise CommandError("analyze needs both target_label and background_label columns "
                           "in the target manifest (synthetic or annotated data)")
    a = cfg["analysis"]
    stats = analysis.pair_similarity_stats(feats, target.target_labels, target.background_labels,
                                           a["bins"], a["block_size"])
    out = _paths(cfg)["analysis"]
    out.mkdir(parents=True, exist_ok=True)
    summary = out / "pair_similarity_summary.json"
    summary.write_text(json.dumps({"pair_types": stats.summary(),
                                   "gap": analysis.similarity_gap(stats)},
                                  indent=2, sort_keys=True) + "\n")
    points = analysis.project_2d(feats, a["projection"], cfg["training"]["seed"])
    return [summary, analysis.export_histograms(stats, out / "pair_similarity_hist.csv"),
            analysis.export_projection(points, out / "projection.csv",
                                       target.target_labels, target.background_labels)]


def build_parser():
    ap = argparse.ArgumentParser(prog="cidfd", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=Path, help="TOML experiment config")
        p.add_argument("--seed", type=int, help="root seed (training, k-means)")
        p.add_argument("--out", type=Path, help="output directory")
        p.add_argument("--scale", type=float, help="dataset scale factor in (0, 1]")
        return p

    common(sub.add_parser("gen-data", help="build Stripe MNIST target + Stripes background"))
    p = common(sub.add_parser("train", help="two-stage training"))
    p.add_argument("--stage", choices=("bg", "tg", "both"), default="both")
    p.add_argument("--idfd-baseline", action="store_true",
                   help="force all background weights to 1 (IDFD ablation)")
    for name, text in (("eval", "k-means on target features, ACC/NMI/ARI"),
                       ("analyze", "pair-type similarity histograms + 2-D projection")):
        p = common(sub.add_parser(name, help=text))
        p.add_argument("--checkpoint", type=Path, help="checkpoint stem (default <out>/checkpoints/tg)")
    return ap


def _overrides(args) -> dict:
    o = {}
    if args.out is not None:
        o["out_dir"] = str(args.out)
    if args.scale is not None:
        o.setdefault("dataset", {})["scale"] = args.scale
    if args.seed is not None:
        o.setdefault("training", {})["seed"] = args.seed
    if getattr(args, "idfd_baseline", False):
        o.setdefault("training", {})["idfd_baseline"] = True
    return o


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        cfg = load_config(args.config, _overrides(args))
        out = Path(cfg["out_dir"])
        out.mkdir(parents=True, exist_ok=True)
        dump_config(cfg, out / "resolved_config.toml")
        if args.command == "gen-data":
            outputs = cmd_gen_data(cfg)
        elif args.command == "train":
            outputs = cmd_train(cfg, args.stage)
        elif args.command == "eval":
            outputs = cmd_eval(cfg, args.checkpoint)
        else:
            outputs = cmd_analyze(cfg, args.checkpoint)
    except (CommandError, ConfigError, StageOrderError, FileNotFoundError, ValueError) as exc:
        print(f"cidfd {args.command}: error: {exc}", file=sys.stderr)
        return 1
    missing = [str(o) for o in outputs if not Path(o).exists()]
    if missing:
        print(f"cidfd {args.command}: error: outputs missing: {', '.join(missing)}", file=sys.stderr)
        return 1
    for o in outputs:
        print(o)
    return 0


if __name__ == "__main__":
    sys.exit(main())
