"""Command-line entry point: ``fabrictouch <subcommand> [options]``."""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import multiprocessing
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from functools import partial
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from . import __version__, report, synth
from .config import ExperimentConfig
from .dataset import (
    DOWNSAMPLED_SHAPE, NATIVE_SHAPE, find_trials, load_trial, split_by_trial, validation_split, write_trial,
)
from .errors import FabricTouchError
from .evaluate import CHANCE, evaluate_confusion, evaluate_properties, export_latents, noisy_trial, paired_pvalues
from .features import TrialFeatures, cached_features, extract_features
from .ingest import ingest
from .neural.checkpoint import load_checkpoint, save_checkpoint
from .stats import mean_sd, paired_by_sequence, wilcoxon_signed_rank
from .train import (
    AblationRow, SequenceSet, Splits, TrainResult, bandwidth_grid, modality_grid, noise_grid, property_configs,
    single_modality_grid, train,
)

log = logging.getLogger("fabrictouch")

MAX_CLASSIFICATION_ID = 20


# -- run directory ------------------------------------------------------------


def sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(cfg: ExperimentConfig, command: str, outputs: Sequence[Path]) -> Path:
    """Record the resolved config and output hashes for ``command`` in ``run_dir/manifest.json``."""
    run = cfg.run_dir
    run.mkdir(parents=True, exist_ok=True)
    path = run / "manifest.json"
    manifest = json.loads(path.read_text()) if path.exists() else {}
    manifest["version"] = __version__
    manifest.setdefault("commands", {})[command] = {
        "config": cfg.raw,
        "outputs": {str(p.relative_to(run) if p.is_relative_to(run) else p): sha256(p) for p in sorted(outputs)},
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def write_text(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return path


# -- data ---------------------------------------------------------------------


def _extract_one(trial_dir: Path, cache_root: Path, params) -> TrialFeatures:
    return cached_features(trial_dir, cache_root, params)


def load_features(cfg: ExperimentConfig) -> list[TrialFeatures]:
    dirs = find_trials(cfg.data_root)
    if not dirs:
        raise FabricTouchError(f"no trials found below {cfg.data_root}")
    work = partial(_extract_one, cache_root=cfg.cache_dir, params=cfg.extraction_params())
    jobs = int(cfg["jobs"])
    if jobs > 1:
        with ProcessPoolExecutor(jobs, mp_context=multiprocessing.get_context("fork")) as pool:
            return list(pool.map(work, dirs))
    return [work(d) for d in dirs]


def resolve_classes(cfg: ExperimentConfig, feats: Sequence[TrialFeatures]) -> ExperimentConfig:
    """Default the fabric head size to the classification ids present (at most 0-20)."""
    if "fabric_classes" not in cfg["model"]:
        ids = [f.fabric.id for f in feats if f.fabric.id <= MAX_CLASSIFICATION_ID]
        cfg.set("model.fabric_classes", max(ids) + 1 if ids else 21)
    return cfg


def classification_splits(cfg: ExperimentConfig, feats: Sequence[TrialFeatures]) -> Splits:
    k = cfg["model"]["fabric_classes"]
    usable = [f for f in feats if f.fabric.id < k]
    split = split_by_trial(usable, cfg.split_policy())
    train_part, val = split.train, []
    if cfg["split"]["val_per_class"]:
        inner = validation_split(split.train, int(cfg["split"]["val_per_class"]))
        train_part, val = inner.train, inner.test
    if not train_part or not split.test:
        raise FabricTouchError("empty train or test split; check split.train_tags / split.test_tags")
    return Splits(list(train_part), list(split.test), list(val))


def _train_seed(seed: int, model_cfg, data, tc) -> TrainResult:
    torch.set_num_threads(1)
    return train(model_cfg, data, [seed], tc)


def run_seeds(cfg: ExperimentConfig, model_cfg, data: Splits) -> TrainResult:
    tc = cfg.train_config()
    jobs = int(cfg["jobs"])
    if jobs > 1 and len(cfg.seeds) > 1:
        work = partial(_train_seed, model_cfg=model_cfg, data=data, tc=tc)
        with ProcessPoolExecutor(jobs, mp_context=multiprocessing.get_context("fork")) as pool:
            parts = list(pool.map(work, cfg.seeds))
        return TrainResult(model_cfg, [r for p in parts for r in p.runs])
    return train(model_cfg, data, cfg.seeds, tc)


# -- subcommands --------------------------------------------------------------


def cmd_ingest(cfg: ExperimentConfig, args) -> list[Path]:
    written = ingest(args.raw, args.out or cfg.data_root)
    listing = write_text(cfg.run_dir / "ingested.txt", "".join(f"{p}\n" for p in written))
    print(f"ingested {len(written)} trials into {args.out or cfg.data_root}")
    return [listing]


def cmd_synth(cfg: ExperimentConfig, args) -> list[Path]:
    s = cfg["synth"]
    if s["property_set"]:
        specs = synth.property_fabric_set(seed=int(s["seed"]))
    else:
        specs = synth.make_fabric_set(int(s["classes"]), s["separation"], seed=int(s["seed"]))
    shape = NATIVE_SHAPE if s["native_frames"] else DOWNSAMPLED_SHAPE
    out = Path(args.out or cfg.data_root)
    ids = []
    for plan in synth.plan_dataset(specs, int(s["train_trials"]), int(s["test_trials"]), int(s["seed"])):
        trial = synth.run_plan(plan, int(s["samples"]), frame_shape=shape)
        write_trial(trial, out / trial.trial_id)
        ids.append(trial.trial_id)
    listing = write_text(cfg.run_dir / "synth_trials.txt", "".join(f"{i}\n" for i in ids))
    print(f"wrote {len(ids)} synthetic trials to {out}")
    return [listing]


def cmd_extract(cfg: ExperimentConfig, args) -> list[Path]:
    feats = load_features(cfg)
    rows = [f"{f.trial_id},{f.fabric.id},{f.session_tag},{len(f)}\n" for f in feats]
    path = write_text(cfg.run_dir / "features.csv", "trial_id,fabric_id,session_tag,steps\n" + "".join(rows))
    print(f"features ready for {len(feats)} trials (cache: {cfg.cache_dir})")
    return [path]


def _result_rows(result: TrainResult) -> str:
    heads = list(result.runs[0].test_accuracy)
    lines = ["seed," + ",".join(f"test_{h}" for h in heads) + "," + ",".join(f"val_{h}" for h in heads)]
    for r in result.runs:
        lines.append(",".join([str(r.seed), *(repr(r.test_accuracy[h]) for h in heads),
                               *(repr(r.val_accuracy.get(h, float("nan"))) for h in heads)]))
    return "\n".join(lines) + "\n"


def cmd_train(cfg: ExperimentConfig, args) -> list[Path]:
    feats = load_features(cfg)
    resolve_classes(cfg, feats)
    data = classification_splits(cfg, feats)
    model_cfg = cfg.model_config()
    result = run_seeds(cfg, model_cfg, data)
    outputs = []
    _ckpt_dir(cfg).mkdir(parents=True, exist_ok=True)
    for r in result.runs:
        outputs.append(save_checkpoint(r.state, _ckpt_dir(cfg) / f"seed{r.seed}.ckpt"))
    outputs.append(write_text(cfg.run_dir / "train_results.csv", _result_rows(result)))
    lines = [f"model: {model_cfg.label()} ({model_cfg.backbone})",
             f"train/val/test sequences: {len(SequenceSet(data.train, model_cfg.seq_len))}/"
             f"{len(SequenceSet(data.val, model_cfg.seq_len))}/{len(SequenceSet(data.test, model_cfg.seq_len))}"]
    for h in result.runs[0].test_accuracy:
        m, s = result.mean_sd(h)
        lines.append(f"{h} test accuracy [%]: {report.pct(m, s)} over {len(result.runs)} seeds")
    text = "\n".join(lines) + "\n"
    outputs.append(write_text(cfg.run_dir / "train_report.txt", text))
    print(text, end="")
    return outputs


def _ckpt_dir(cfg: ExperimentConfig) -> Path:
    return cfg.run_dir / "checkpoints"


def _checkpoints(cfg: ExperimentConfig, given: Sequence[str] | None) -> list[Path]:
    paths = [Path(p) for p in given] if given else sorted(_ckpt_dir(cfg).glob("*.ckpt"))
    if not paths:
        raise FabricTouchError(f"no checkpoints given and none found in {_ckpt_dir(cfg)}")
    return paths


def cmd_evaluate(cfg: ExperimentConfig, args) -> list[Path]:
    feats = load_features(cfg)
    outputs, lines = [], []
    for path in _checkpoints(cfg, args.checkpoint):
        state = load_checkpoint(path)
        model = state.build()
        cfg.set("model.fabric_classes", state.config.fabric_classes)
        test = SequenceSet(classification_splits(cfg, feats).test, state.config.seq_len)
        for head, k in state.config.head_spec.items():
            cm = evaluate_confusion(model, test, head)
            out = cfg.run_dir / "evaluation" / f"{path.stem}_{head}_confusion.csv"
            out.parent.mkdir(parents=True, exist_ok=True)
            with open(out, "w", newline="") as f:
                w = csv.writer(f)
                w.writerow(["true\\pred", *range(k)])
                for i, row in enumerate(cm):
                    w.writerow([i, *row.tolist()])
            outputs.append(out)
            lines.append(f"{path.name} {head}: accuracy {report.pct(np.trace(cm) / cm.sum())} on {cm.sum()} sequences")
    outputs.append(write_text(cfg.run_dir / "evaluation" / "summary.txt", "\n".join(lines) + "\n"))
    print("\n".join(lines))
    return outputs


def cmd_ablate(cfg: ExperimentConfig, args) -> list[Path]:
    feats = load_features(cfg)
    resolve_classes(cfg, feats)
    data = classification_splits(cfg, feats)
    base = cfg.model_config()
    if args.grid == "bandwidth":
        grid = bandwidth_grid(base)
    elif args.modalities:
        grid = single_modality_grid(base, args.modalities.split(","))
    else:
        grid = modality_grid(base)
    rows = [AblationRow(c, run_seeds(cfg, c, data)) for c in grid]
    table = report.bandwidth_table(rows) if args.grid == "bandwidth" else report.modality_table(rows)
    name = f"ablation_{args.grid}"
    csv_path = cfg.run_dir / f"{name}.csv"
    cfg.run_dir.mkdir(parents=True, exist_ok=True)
    report.write_rows_csv(csv_path, rows)
    print(table, end="")
    return [write_text(cfg.run_dir / f"{name}.txt", table), csv_path]


def _noisy_test(cfg: ExperimentConfig, feats: Sequence[TrialFeatures], test: Sequence[TrialFeatures]) -> list[TrialFeatures]:
    tags = set(cfg["noise"]["test_tags"])
    recorded = [f for f in feats if f.session_tag in tags and f.fabric.id < cfg["model"]["fabric_classes"]]
    if recorded:
        return recorded
    dirs = {d.name: d for d in find_trials(cfg.data_root)}
    params = replace(cfg.extraction_params(), image=False, flow=False)
    noisy = []
    for k, f in enumerate(test):
        trial = load_trial(dirs[f.trial_id]) if f.trial_id in dirs else None
        if trial is None:
            raise FabricTouchError(f"trial directory for {f.trial_id} not found")
        n = noisy_trial(trial, int(cfg["noise"]["seed"]) + k, float(cfg["noise"]["increase_db"]),
                        float(cfg["noise"]["internal_attenuation"]))
        noisy.append(extract_features(n, params))
    return noisy


def cmd_noise_eval(cfg: ExperimentConfig, args) -> list[Path]:
    feats = load_features(cfg)
    resolve_classes(cfg, feats)
    data = classification_splits(cfg, feats)
    noisy = Splits(data.train, _noisy_test(cfg, feats, data.test), data.val)
    grid = noise_grid(cfg.model_config())
    results = [run_seeds(cfg, c, noisy) for c in grid]
    pairing = args.pairing or cfg["noise"]["pairing"]
    if pairing == "seed":
        pvalues = paired_pvalues(results)
    else:
        labels = SequenceSet(noisy.test, grid[0].seq_len).labels("fabric")
        pvalues = [None]
        for prev, cur in zip(results, results[1:]):
            a, b = paired_by_sequence(np.stack([r.test_predictions["fabric"] for r in cur.runs]),
                                      np.stack([r.test_predictions["fabric"] for r in prev.runs]), labels)
            try:
                pvalues.append(wilcoxon_signed_rank(a, b))
            except (ValueError, ArithmeticError):
                pvalues.append(None)
    rows = [AblationRow(c, r) for c, r in zip(grid, results)]
    table = report.noise_table(rows, pvalues)
    csv_path = cfg.run_dir / "noise_eval.csv"
    cfg.run_dir.mkdir(parents=True, exist_ok=True)
    report.write_rows_csv(csv_path, rows)
    print(table, end="")
    return [write_text(cfg.run_dir / "noise_eval.txt", table), csv_path]


def cmd_properties(cfg: ExperimentConfig, args) -> list[Path]:
    feats = load_features(cfg)
    holdout_ids = set(int(i) for i in cfg["properties"]["holdout"])
    policy = cfg.split_policy()
    known = [f for f in feats if f.fabric.id not in holdout_ids]
    held = [f for f in feats if f.fabric.id in holdout_ids]
    if not held:
        raise FabricTouchError(f"no trials of holdout fabrics {sorted(holdout_ids)}")
    split = split_by_trial(known, policy)
    data = Splits(list(split.train), list(split.test))
    results, csv_rows = {}, []
    for model_cfg in property_configs(cfg.model_config()):
        tr = run_seeds(cfg, model_cfg, data)
        per_seed = [evaluate_properties(r.state.build(), data.test, held, model_cfg.seq_len) for r in tr.runs]
        label = model_cfg.label()
        results[label] = {}
        for prop in CHANCE:
            entry = {"chance": CHANCE[prop]}
            for group in ("training", "holdout"):
                m, s = mean_sd([p[prop][group] for p in per_seed])
                entry[group] = m
                csv_rows.append([label, prop, group, repr(m), repr(s)])
            results[label][prop] = entry
    table = report.property_table(results)
    csv_path = write_text(cfg.run_dir / "properties.csv", "model,property,group,mean,sd\n"
                          + "".join(",".join(r) + "\n" for r in csv_rows))
    print(table, end="")
    return [write_text(cfg.run_dir / "properties.txt", table), csv_path]


def cmd_latents(cfg: ExperimentConfig, args) -> list[Path]:
    feats = load_features(cfg)
    path = _checkpoints(cfg, [args.checkpoint] if args.checkpoint else None)[0]
    model = load_checkpoint(path).build()
    out = cfg.run_dir / f"latents_{path.stem}.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    export_latents(model, feats, out, model.cfg.seq_len)
    print(f"wrote {len(feats)} latent rows to {out}")
    return [out]


COMMANDS = {
    "ingest": cmd_ingest, "synth": cmd_synth, "extract-features": cmd_extract, "train": cmd_train,
    "evaluate": cmd_evaluate, "ablate": cmd_ablate, "noise-eval": cmd_noise_eval,
    "properties": cmd_properties, "latents": cmd_latents,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML experiment config")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config value, e.g. --set model.backbone=tcn")
    common.add_argument("--data-root", help="trial directory root (overrides config and $FABRICTOUCH_DATA_ROOT)")
    common.add_argument("--run-dir", help="directory for all result artifacts")
    common.add_argument("--seeds", type=int, help="train seeds 0..N-1")
    common.add_argument("--jobs", type=int, help="worker processes for extraction and per-seed training")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="fabrictouch", description="Multimodal tactile fabric classification pipeline.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    p = sub.add_parser("ingest", parents=[common], help="convert raw recordings to the canonical layout")
    p.add_argument("--raw", required=True, help="root of raw trial directories")
    p.add_argument("--out", help="output root (default: data root)")
    p = sub.add_parser("synth", parents=[common], help="write a synthetic dataset")
    p.add_argument("--out", help="output root (default: data root)")
    sub.add_parser("extract-features", parents=[common], help="compute and cache PSD / image / flow features")
    sub.add_parser("train", parents=[common], help="train one model config for every seed")
    p = sub.add_parser("evaluate", parents=[common], help="confusion matrices for trained checkpoints")
    p.add_argument("--checkpoint", action="append", help="checkpoint file (repeatable; default: run dir)")
    p = sub.add_parser("ablate", parents=[common], help="modality or bandwidth ablation table")
    p.add_argument("--grid", choices=("modality", "bandwidth"), default="modality")
    p.add_argument("--modalities", help="comma-separated single-modality rows instead of the full grid, "
                                        "e.g. internal,flow,proprio")
    p = sub.add_parser("noise-eval", parents=[common], help="noise robustness table with Wilcoxon p-values")
    p.add_argument("--pairing", choices=("seed", "sequence"), help="pairing unit for the p-values")
    sub.add_parser("properties", parents=[common], help="property heads on training and holdout fabrics")
    p = sub.add_parser("latents", parents=[common], help="export mean latent vector per trial")
    p.add_argument("--checkpoint", help="checkpoint file (default: first in run dir)")
    return parser


def resolve_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config, args.set)
    if args.data_root:
        cfg.set("data_root", args.data_root)
    if args.run_dir:
        cfg.set("run_dir", args.run_dir)
    if args.seeds is not None:
        if args.seeds < 1:
            raise FabricTouchError("--seeds must be at least 1")
        cfg.set("seeds", list(range(args.seeds)))
    if args.jobs is not None:
        cfg.set("jobs", args.jobs)
    return cfg


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    torch.set_num_threads(1)
    torch.use_deterministic_algorithms(True)
    try:
        cfg = resolve_config(args)
        outputs = COMMANDS[args.command](cfg, args)
        write_manifest(cfg, args.command, outputs)
    except (FabricTouchError, ValueError, OSError) as e:
        print(f"fabrictouch {args.command}: error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
