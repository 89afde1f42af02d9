"""Command-line entry point: ``thyrofna <verb> ...``.

Exit codes: 0 success, 1 validation error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .augmentation import augment_record, export_augmented
from .config import load_config
from .core import (
    ImageRecord,
    PredictionVector,
    Split,
    SplitSpec,
    canonical_resize,
    load_image,
    load_manifest,
    model_input_resize,
    split_dataset,
    write_manifest,
)
from .curriculum import build_epoch
from .errors import CheckpointMismatch, MalformedManifest, MissingFile, ThyroFNAError, ValidationError
from .proposals import make_proposer, write_external_proposals
from .runlog import RunManifest

log = logging.getLogger("thyrofna")

RUNS_ENV = "THYROFNA_RUNS_DIR"
# Deployment figure quoted for context only: 1000 cases in 30 s on a 12-core desktop CPU.
REFERENCE_THROUGHPUT = 1000 / 30


def runs_root() -> Path:
    return Path(os.environ.get(RUNS_ENV, "runs"))


# ---------------------------------------------------------------- verbs


def cmd_synth_corpus(args) -> int:
    from .synth import synth_corpus

    run = RunManifest("synth-corpus", config={"n_per_class": args.n_per_class, "seed": args.seed})
    manifest, records = synth_corpus(args.n_per_class, args.seed, args.out)
    run.add_outputs(args.out, "*.png")
    run.add_output(manifest)
    run.write(args.out)
    print(f"wrote {len(records)} images and {manifest}")
    return 0


def cmd_split(args) -> int:
    run = RunManifest("split", config={"seed": args.seed, "ratios": args.ratios})
    run.add_input(args.manifest)
    records = load_manifest(args.manifest)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    split = split_dataset(records, SplitSpec(args.seed, tuple(args.ratios)))
    write_manifest(split, out)
    run.add_output(out)
    counts = {s.value: sum(r.split is s for r in split) for s in (Split.TRAIN, Split.VAL, Split.TEST)}
    run.metrics["counts"] = counts
    run.write(out.parent)
    print(f"wrote {out}: {counts}")
    return 0


def cmd_augment_preview(args) -> int:
    cfg = load_config(args.config)
    run = RunManifest("augment-preview", config=cfg.raw)
    run.add_input(cfg.manifest)
    from .pipeline import canonical, ensure_split

    records = ensure_split(load_manifest(cfg.manifest), cfg)
    train = [r for r in records if r.split is Split.TRAIN][: args.limit]
    proposer = make_proposer(cfg.proposer)
    out = Path(args.out)
    samples, table = [], {}
    for rec in train:
        image = canonical(rec)
        props = proposer.propose(image, rec.id)
        table[rec.id] = props
        rec_samples = augment_record(rec, props, cfg.augment_seed, image=image)
        export_augmented(rec_samples, out)
        rec_samples[0].images.release()
        samples.extend(rec_samples)
    out.mkdir(parents=True, exist_ok=True)
    write_external_proposals(table, out / "proposals.csv")
    (out / "schedule_epoch0.json").write_text(build_epoch(samples, 0, cfg.schedule_seed).to_json(), encoding="utf-8")
    run.add_outputs(out)
    run.write(out)
    print(f"exported {len(samples)} samples from {len(train)} records to {out}")
    return 0


def _run_dir(cfg, args) -> Path:
    return runs_root() / (args.run_id or f"run-{cfg.digest()[:12]}")


def cmd_train(args) -> int:
    from .pipeline import prepare, run_basic, run_premium, write_json

    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, train=replace(cfg.train, seed=args.seed), raw={**cfg.raw, "_seed_override": args.seed})
    run_dir = _run_dir(cfg, args)
    records = load_manifest(cfg.manifest)
    have_basic = (run_dir / "weights.bin").is_file() and (run_dir / "report.json").is_file()
    run = RunManifest(f"train --mode {args.mode}", config=cfg.raw)
    run.add_input(cfg.manifest)
    if args.mode == "basic" or not have_basic:
        t0 = time.perf_counter()
        data = prepare(records, cfg)
        run.timings["prepare_seconds"] = time.perf_counter() - t0
        run_dir.mkdir(parents=True, exist_ok=True)
        write_manifest(data.records, run_dir / "splits.csv")
        t0 = time.perf_counter()
        _, report, ev = run_basic(cfg, data, run_dir)
        run.timings["train_seconds"] = time.perf_counter() - t0
        print(f"basic: best epoch {report.best_epoch} ({report.stop_reason}); test macro-F1 {ev.macro_f1:.4f}, accuracy {ev.accuracy:.4f}")
        run.metrics["basic"] = ev.to_dict()
    else:
        data = prepare(records, cfg, augment=False)
    out_dir = run_dir
    if args.mode == "premium":
        out_dir = run_dir / "premium"
        t0 = time.perf_counter()
        _, report, ev = run_premium(cfg, data, run_dir, out_dir)
        run.timings["premium_seconds"] = time.perf_counter() - t0
        print(f"premium: best epoch {report.best_epoch} ({report.stop_reason}); test macro-F1 {ev.macro_f1:.4f}, accuracy {ev.accuracy:.4f}")
        run.metrics["premium"] = ev.to_dict()
    run.add_outputs(out_dir, "*.json")
    run.add_outputs(out_dir, "*.csv")
    run.write(out_dir)
    print(f"run directory: {out_dir}")
    return 0


def read_inference_manifest(path) -> list[tuple[str, Path]]:
    """``id`` and ``path`` columns only; labels are never read."""
    path = Path(path)
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if not reader.fieldnames or "id" not in reader.fieldnames or "path" not in reader.fieldnames:
            raise MalformedManifest(f"{path}: needs id and path columns")
        for row in reader:
            p = (path.parent / row["path"].strip()).resolve()
            if not p.is_file():
                raise MissingFile(row["id"], p)
            rows.append((row["id"].strip(), p))
    return rows


def _load_predictor(checkpoint: Path, mode: str):
    from .aggregator import load_premium
    from .training import load_backbone, predict_proba

    is_premium = (checkpoint / "aggregator_config.json").is_file()
    if mode == "premium" and not is_premium and (checkpoint / "premium" / "aggregator_config.json").is_file():
        checkpoint, is_premium = checkpoint / "premium", True
    if is_premium != (mode == "premium"):
        kind = "an aggregator" if is_premium else "a backbone-only"
        raise CheckpointMismatch(f"{checkpoint} is {kind} checkpoint but --mode {mode} was requested")
    if not (checkpoint / "weights.bin").is_file():
        raise MissingFile("checkpoint", checkpoint / "weights.bin")
    if is_premium:
        clf = load_premium(checkpoint)
        return (lambda canon: clf.predict(canon)), clf.backbone, checkpoint
    model, _ = load_backbone(checkpoint)
    return (lambda canon: PredictionVector.from_array(predict_proba(model, model_input_resize(canon)[None])[0])), model, checkpoint


def cmd_infer(args) -> int:
    from .explain import explain_case
    from .core import save_image

    cfg_extra = {"mode": args.mode, "explain": args.explain, "bench": args.bench, "workers": args.workers}
    run = RunManifest("infer", config=cfg_extra)
    predict, backbone, ckpt = _load_predictor(Path(args.checkpoint), args.mode)
    run.add_input(ckpt / "weights.bin")
    run.add_input(args.manifest)
    rows = read_inference_manifest(args.manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    torch.set_grad_enabled(False)

    def one(item):
        _, path = item
        return predict(canonical_resize(load_image(path)))

    t0 = time.perf_counter()
    if args.workers > 1:
        with ThreadPoolExecutor(args.workers) as pool:
            preds = list(pool.map(one, rows))
    else:
        preds = [one(r) for r in rows]
    elapsed = time.perf_counter() - t0
    torch.set_grad_enabled(True)

    pred_path = out / "predictions.csv"
    with open(pred_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "p_benign", "p_indet", "p_malignant", "decision"])
        for (rec_id, _), p in zip(rows, preds):
            w.writerow([rec_id, *(f"{v:.8f}" for v in p.as_tuple()), p.decision().name])
    run.add_output(pred_path)

    if args.explain:
        ex_dir = out / "explain"
        ex_dir.mkdir(exist_ok=True)
        for (rec_id, path), p in zip(rows, preds):
            _, comp = explain_case(canonical_resize(load_image(path)), backbone, p)
            save_image(comp, ex_dir / f"{rec_id}.png")
            run.add_output(ex_dir / f"{rec_id}.png")
    if args.bench:
        run.metrics["bench"] = {
            "images": len(rows),
            "seconds": elapsed,
            "images_per_sec": len(rows) / elapsed if elapsed > 0 else float("inf"),
            "workers": args.workers,
            "torch_threads": torch.get_num_threads(),
            "reference_images_per_sec": REFERENCE_THROUGHPUT,
            "note": "throughput is hardware-specific; reported, not gated",
        }
        print(f"throughput: {run.metrics['bench']['images_per_sec']:.2f} images/sec over {len(rows)} images")
    run.timings["predict_seconds"] = elapsed
    run.write(out)
    print(f"wrote {pred_path}")
    return 0


def cmd_verify_tables(args) -> int:
    from .reference_tables import verify_tables

    run = RunManifest("verify-tables")
    checks = verify_tables()
    for c in checks:
        print(c.line())
    ok = all(c.passed for c in checks)
    run.metrics["checks"] = [{"name": c.name, "observed": c.observed, "expected": c.expected, "passed": c.passed} for c in checks]
    run.metrics["all_passed"] = ok
    run.write(Path(args.out) if args.out else runs_root() / "verify-tables")
    print("ALL PASS" if ok else "FAILURES")
    return 0 if ok else 1


def cmd_compare(args) -> int:
    from .pipeline import run_model_comparison
    from .training import TrainConfig

    cfg = load_config(args.config)
    configs = [replace(cfg.train, backbone_name=name) for name in args.backbones]
    out = runs_root() / (args.run_id or f"compare-{cfg.digest()[:12]}")
    run = RunManifest("compare", config=cfg.raw)
    rows = run_model_comparison(configs, load_manifest(cfg.manifest), cfg, True, out)
    for r in rows:
        print(f"{r.backbone}: no_aug {r.f1_no_aug:.4f}  aug {r.f1_aug:.4f}  delta {r.delta:+.4f}")
    run.add_output(out / "comparison.csv")
    run.write(out)
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="thyrofna", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("synth-corpus", help="generate a separable synthetic corpus")
    p.add_argument("--n-per-class", type=int, default=30)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth_corpus)

    p = sub.add_parser("split", help="stratified TRAIN/VAL/TEST split of a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--ratios", type=float, nargs=3, default=[0.70, 0.15, 0.15])
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("augment-preview", help="export augmented samples for inspection")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--limit", type=int, default=2)
    p.set_defaults(func=cmd_augment_preview)

    p = sub.add_parser("train", help="split, augment, schedule, train and evaluate")
    p.add_argument("--config", required=True)
    p.add_argument("--mode", choices=["basic", "premium"], default="basic")
    p.add_argument("--seed", type=int)
    p.add_argument("--run-id")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="batch prediction from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=["basic", "premium"], default="basic")
    p.add_argument("--explain", action="store_true")
    p.add_argument("--bench", action="store_true")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("verify-tables", help="recompute F1 from the published confusion matrices")
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify_tables)

    p = sub.add_parser("compare", help="with/without augmentation comparison across backbones")
    p.add_argument("--config", required=True)
    p.add_argument("--backbones", nargs="+", default=["reference_cnn"])
    p.add_argument("--run-id")
    p.set_defaults(func=cmd_compare)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ThyroFNAError, OSError) as exc:
        print(f"failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
