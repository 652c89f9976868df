"""Command-line surface: synth, ingest, train, infer, eval, gradcheck.

Exit codes: 0 on success, 2 on validation or configuration errors, 3 on
numerical failures (NaN loss, failed gradient check).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import List, Optional, Tuple

import numpy as np

from .errors import (
    ConfigurationError,
    ContractError,
    DimensionError,
    NumericalError,
    ValidationError,
)
from .evaluate import evaluate_multi, evaluate_single, select_eval_points, sliding_infer
from .graph import StgSequence, load_stgs, save_stgs
from .ingest import ingest_cad120_file
from .gradcheck import check_model_gradients
from .model import ModelConfig, StgcnModel
from .synth import SynthConfig, generate_dataset, synth_generate
from .training import TrainConfig, load_checkpoint, save_checkpoint, train, write_curve


def _load_json(path: str) -> dict:
    with open(path) as fh:
        return json.load(fh)


def _refuse_overwrite(path: str, force: bool) -> None:
    if force:
        return
    if os.path.isdir(path) and os.listdir(path):
        raise ValidationError(f"output directory {path!r} is not empty (use --force)")
    if os.path.isfile(path):
        raise ValidationError(f"output file {path!r} exists (use --force)")


def _load_manifest(path: str, split: Optional[str]) -> List[Tuple[str, StgSequence]]:
    manifest = _load_json(path)
    root = os.path.join(os.path.dirname(path), manifest.get("root", "."))
    out = []
    for entry in manifest["sequences"]:
        if split is not None and entry.get("split") != split:
            continue
        seq_path = os.path.join(root, entry["path"])
        out.append((entry["path"], load_stgs(seq_path)))
    if not out:
        raise ValidationError(f"no sequences for split {split!r} in {path}")
    return out


def cmd_synth(args) -> int:
    cfg_doc = _load_json(args.config)
    cfg = SynthConfig.from_dict(cfg_doc.get("synth", cfg_doc))
    train_count = int(cfg_doc.get("train_count", cfg_doc.get("count", 20)))
    test_count = int(cfg_doc.get("test_count", 0))
    _refuse_overwrite(args.out, args.force)
    os.makedirs(args.out, exist_ok=True)
    seqs, oracle = generate_dataset(cfg, args.seed, train_count + test_count)
    entries = []
    for i, seq in enumerate(seqs):
        name = f"seq_{i:04d}"
        save_stgs(seq, os.path.join(args.out, name))
        entries.append(
            {"path": name, "split": "train" if i < train_count else "test"}
        )
    with open(os.path.join(args.out, "manifest.json"), "w") as fh:
        json.dump({"root": ".", "sequences": entries}, fh, indent=1, sort_keys=True)
    with open(os.path.join(args.out, "oracle.json"), "w") as fh:
        json.dump(oracle, fh, sort_keys=True)
    print(f"wrote {len(seqs)} sequences to {args.out}")
    return 0


def cmd_ingest(args) -> int:
    seq = ingest_cad120_file(args.input)
    _refuse_overwrite(args.out, args.force)
    save_stgs(seq, args.out)
    print(f"ingested {seq.num_tracks} tracks x {seq.num_steps} segments -> {args.out}")
    return 0


def cmd_train(args) -> int:
    model_cfg = ModelConfig.from_dict(_load_json(args.model_config))
    tc = _load_json(args.train_config)
    tc["seed"] = args.seed
    train_cfg = TrainConfig.from_dict(tc)
    data = [seq for _, seq in _load_manifest(args.manifest, "train")]
    os.makedirs(args.out, exist_ok=True)
    model, curve = train(data, model_cfg, train_cfg, out_dir=args.out)
    print(f"trained {train_cfg.epochs} epochs; final loss {curve[-1].loss:.6f}")
    return 0


def cmd_infer(args) -> int:
    model, train_cfg, _, _ = load_checkpoint(args.checkpoint)
    data = _load_manifest(args.manifest, args.split)
    result = []
    for path, seq in data:
        timeline = sliding_infer(seq, model, window=args.window, hop=args.hop)
        result.append(
            {
                "path": path,
                "scores": timeline.scores.tolist(),
                "coverage": timeline.coverage.tolist(),
            }
        )
    with open(args.out, "w") as fh:
        json.dump({"sequences": result}, fh)
    print(f"wrote fused score timelines for {len(result)} sequences to {args.out}")
    return 0


def cmd_eval(args) -> int:
    model, train_cfg, _, _ = load_checkpoint(args.checkpoint)
    data = _load_manifest(args.manifest, args.split)
    seqs = [seq for _, seq in data]
    mode = seqs[0].mode
    if mode == "single":
        metrics = evaluate_single(
            seqs, model, window=args.window, hop=args.hop, per_frame=args.per_frame
        )
    else:
        metrics = evaluate_multi(seqs, model, window=args.window, hop=args.hop)
        # multi mode also reports raw score timelines and the sampled points
        details = []
        for path, seq in data:
            timeline = sliding_infer(seq, model, window=args.window, hop=args.hop)
            available = np.flatnonzero(seq.label_mask)
            points = [int(available[i]) for i in select_eval_points(len(available))]
            details.append(
                {
                    "path": path,
                    "eval_points": points,
                    "point_scores": timeline.scores[points].tolist(),
                    "full_scores": timeline.scores.tolist(),
                }
            )
        metrics["sequences"] = details
    with open(args.out, "w") as fh:
        json.dump(metrics, fh)
    key = "macro_f1" if mode == "single" else "mAP"
    print(f"{key}: {metrics[key]:.4f} -> {args.out}")
    return 0


def cmd_gradcheck(args) -> int:
    if args.model_config:
        model_cfg = ModelConfig.from_dict(_load_json(args.model_config))
        synth_cfg = SynthConfig(
            num_classes=model_cfg.num_classes,
            cluster_feature_lens=model_cfg.cluster_feature_lens,
            t_range=(8, 8),
            temporal_span=model_cfg.span,
            mode=model_cfg.head_mode,
        )
    else:
        model_cfg = ModelConfig(
            cluster_feature_lens=(4, 6),
            num_classes=3,
            d_model=8,
            levels=2,
            stack_depth=2,
            span=3,
        )
        synth_cfg = SynthConfig(
            num_classes=3, cluster_feature_lens=(4, 6), t_range=(8, 8), mode="single"
        )
    seq, _ = synth_generate(synth_cfg, args.seed)
    model = StgcnModel(model_cfg, seed=args.seed)
    reports = check_model_gradients(model, seq, model_cfg.head_mode, seed=args.seed)
    failed = [r for r in reports if not r.passed]
    for r in reports:
        status = "ok" if r.passed else "FAIL"
        print(
            f"{status:4s} {r.name}: {r.rel_ok}/{r.checked} within relative tolerance, "
            f"max abs err {r.max_abs_err:.2e}"
        )
    if failed:
        raise NumericalError(f"{len(failed)} parameter(s) failed the gradient check")
    print(f"all {len(reports)} parameters passed")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stacked-stgcn",
        description="Stacked hourglass spatio-temporal GCN for action segmentation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="convert a feature table to STGS")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train a model on a dataset manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--model-config", required=True)
    p.add_argument("--train-config", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="sliding-window inference")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--window", type=int, default=50)
    p.add_argument("--hop", type=int, default=10)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="evaluate a checkpoint (F1 or mAP)")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--window", type=int, default=50)
    p.add_argument("--hop", type=int, default=10)
    p.add_argument("--per-frame", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--model-config")
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, ConfigurationError, ContractError, DimensionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
