"""Acceptance criteria, one test per criterion.

Each test records a PASS/FAIL line that is printed in the pytest terminal
summary.  Run alone with ``pytest tests/test_acceptance.py -v``.
"""
import csv
import hashlib
import itertools
import json
import math
import time
from collections import Counter
from pathlib import Path

import numpy as np
import pytest
import torch

from thyrofna.aggregator import Aggregator, AggregatorConfig, aggregate_predict, decompose, identity_aggregator, tokenize
from thyrofna.augmentation import SetTag, augment_record, generate_grid, grid_geometry, reassemble_grid
from thyrofna.cli import main
from thyrofna.core import ClassLabel, ImageRecord, Split, model_input_resize
from thyrofna.curriculum import build_epoch
from thyrofna.explain import grad_cam
from thyrofna.models import ReferenceCNN
from thyrofna.proposals import RegionProposal
from thyrofna.reference_tables import verify_tables
from thyrofna.synth import blob_views
from thyrofna.training import (
    ClassWeights,
    TrainConfig,
    class_weights_from_counts,
    fit,
    predict_logits,
    softmax64,
    weighted_ce_from_logits,
    weighted_cross_entropy,
)

from conftest import ACCEPTANCE_RESULTS, blob_mass, finite_difference_grads, random_canonical, relative_error, train_blob_backbone

E2E_TRAIN = {"learning_rate": 0.001, "batch_size": 32, "max_epochs": 15, "patience": 10, "seed": 0}
E2E_AGG = {"num_encoder_layers": 2, "train": {"learning_rate": 0.0005, "batch_size": 16, "max_epochs": 15}}


def record(n, name, ok, detail):
    ACCEPTANCE_RESULTS[n] = (name, bool(ok), detail)
    assert ok, f"criterion {n} ({name}) failed: {detail}"


def sha(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def infer_manifest(corpus: Path, out: Path, limit=None) -> Path:
    rows = list(csv.DictReader(open(corpus / "manifest.csv")))[:limit]
    with open(out, "w") as fh:
        fh.write("id,path\n")
        for r in rows:
            fh.write(f"{r['id']},{(corpus / r['path']).resolve()}\n")
    return out


def write_cfg(path: Path, manifest: Path, train=E2E_TRAIN, aggregator=E2E_AGG) -> Path:
    cfg = {"data": {"manifest": str(manifest), "split_seed": 42}, "augmentation": {"seed": 0}, "schedule": {"seed": 0},
           "train": train, "aggregator": aggregator}
    path.write_text(json.dumps(cfg))
    return path


# ---------------------------------------------------------------- 1


def test_01_table_arithmetic():
    t0 = time.perf_counter()
    checks = verify_tables()
    elapsed = time.perf_counter() - t0
    detail = "; ".join(f"{c.name}={c.observed:.4f}" for c in checks) + f"; {elapsed * 1e3:.1f} ms"
    record(1, "table arithmetic oracle", all(c.passed for c in checks) and elapsed < 1.0, detail)


# ---------------------------------------------------------------- 2


def test_02_augmentation_cardinality():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    bad = 0
    want = {SetTag.A: 1, SetTag.B: 1, SetTag.C: 8, SetTag.D: 12, SetTag.E: 12}
    for i in range(50):
        n_props = (0, 3, 8, 15)[i % 4]
        props = []
        for _ in range(n_props):
            w, h = (int(v) for v in rng.integers(32, 400, 2))
            props.append(RegionProposal(int(rng.integers(0, 1024 - w)), int(rng.integers(0, 768 - h)), w, h, float(rng.random())))
        rec = ImageRecord(f"img{i}", "/unused.png", ClassLabel(i % 3), Split.TRAIN)
        samples = augment_record(rec, props, seed=i, image=random_canonical(i))
        for s in samples[2:10]:
            assert s.raster().shape[:2] == (s.box[3], s.box[2])
        if len(samples) != 34 or Counter(s.set_tag for s in samples) != want:
            bad += 1
    elapsed = time.perf_counter() - t0
    record(2, "augmentation cardinality", bad == 0 and elapsed < 30, f"50 records, {bad} off-spec, {elapsed:.2f} s")


# ---------------------------------------------------------------- 3


def test_03_grid_partition():
    rects = grid_geometry()
    disjoint = all(
        a[0] + a[2] <= b[0] or b[0] + b[2] <= a[0] or a[1] + a[3] <= b[1] or b[1] + b[3] <= a[1]
        for a, b in itertools.combinations(rects, 2)
    )
    covers = sum(w * h for _, _, w, h in rects) == 1024 * 768 and all(
        0 <= x and x + w <= 1024 and 0 <= y and y + h <= 768 and (w, h) == (256, 256) for x, y, w, h in rects
    )
    identical = 0
    for seed in range(100):
        img = random_canonical(10_000 + seed)
        identical += np.array_equal(reassemble_grid(generate_grid(img)), img)
    record(3, "grid partition", disjoint and covers and identical == 100, f"disjoint={disjoint}, covers={covers}, {identical}/100 reassembled")


# ---------------------------------------------------------------- 4


def test_04_curriculum_ordering():
    problems = []
    for n, seed in itertools.product((1, 5, 37), (0, 11)):
        samples = []
        for i in range(n):
            samples += augment_record(ImageRecord(f"s{seed}r{i}", "/u.png", ClassLabel(i % 3), Split.TRAIN), [], seed)
        perm = np.random.default_rng(seed).permutation(len(samples))
        shuffled = [samples[i] for i in perm]
        e0, e0b, e1 = build_epoch(shuffled, 0, seed), build_epoch(samples, 0, seed), build_epoch(samples, 1, seed)
        runs = [(k, len(list(g))) for k, g in itertools.groupby(e0.tags())]
        if runs != list(zip([SetTag.E, SetTag.D, SetTag.C, SetTag.B, SetTag.A], (12 * n, 12 * n, 8 * n, n, n))):
            problems.append(f"N={n}: runs {runs}")
        if sorted(s.key for s in e0) != sorted(s.key for s in samples):
            problems.append(f"N={n}: not a permutation")
        if e0 != e0b:
            problems.append(f"N={n}: same seed differs")
        if e1.tags() != e0.tags() or any(
            {s.key for s in e0 if s.set_tag is t} != {s.key for s in e1 if s.set_tag is t} for t in SetTag
        ):
            problems.append(f"N={n}: epochs differ beyond within-block order")
        if n >= 2 and [s.key for s in e0] == [s.key for s in e1]:
            problems.append(f"N={n}: epochs 0 and 1 identical")
    record(4, "curriculum ordering", not problems, "; ".join(problems) or "N in {1,5,37} x 2 seeds")


# ---------------------------------------------------------------- 5


def test_05_loss_correctness():
    ex = [
        (weighted_cross_entropy([(0.0, 0.0, 1.0)], [2], ClassWeights(1.5, 2.0, 0.5)), 0.0),
        (weighted_cross_entropy([(1 / 3, 1 / 3, 1 / 3)], [0], ClassWeights.uniform()), math.log(3)),
        (weighted_cross_entropy([(0.5, 0.3, 0.2), (0.5, 0.25, 0.25)], [0, 2], ClassWeights(1.2, 1.0, 0.8)),
         -0.5 * (1.2 * math.log(0.5) + 0.8 * math.log(0.25))),
    ]
    worked = max(abs(a - b) for a, b in ex)
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(1, 33))
        logits = torch.from_numpy(rng.normal(scale=2.0, size=(n, 3)))
        y = torch.from_numpy(rng.integers(0, 3, n))
        ref = float(torch.nn.functional.cross_entropy(logits, y))
        worst = max(worst, abs(weighted_cross_entropy(torch.softmax(logits, 1).numpy(), y.numpy(), ClassWeights.uniform()) - ref))
    w = class_weights_from_counts((482, 541, 781)).as_array()
    wdev = float(np.abs(w - [1.24758, 1.11152, 0.76996]).max())
    ok = worked < 1e-9 and worst < 1e-12 and wdev < 1e-5
    record(5, "loss correctness", ok, f"worked examples max err {worked:.1e}; unit-weight CE max err {worst:.1e}; weights {np.round(w, 5).tolist()}")


# ---------------------------------------------------------------- 6


def test_06_gradient_checks():
    t0 = time.perf_counter()
    torch.manual_seed(6)
    cnn = ReferenceCNN(width=2, dropout=0.0).double().train()
    x = torch.randn(3, 3, 32, 32, dtype=torch.float64)
    y = torch.tensor([0, 1, 2])
    w = ClassWeights(1.24758, 1.11152, 0.76996).tensor(torch.float64)
    params = list(cnn.parameters())
    cnn.zero_grad()
    weighted_ce_from_logits(cnn(x), y, w).backward()
    err_cnn = relative_error([p.grad.clone() for p in params], finite_difference_grads(lambda: weighted_ce_from_logits(cnn(x), y, w), params))

    cfg = AggregatorConfig(d_model=8, num_encoder_layers=1, num_heads=2, head_hidden_dims=(8,), dropout=0.0)
    agg = Aggregator(5, cfg).double().train()
    raw = torch.randn(4, 13, 5, dtype=torch.float64)
    ya = torch.tensor([2, 0, 1, 1])
    params = list(agg.parameters())
    agg.zero_grad()
    weighted_ce_from_logits(agg(raw), ya, w).backward()
    err_agg = relative_error([p.grad.clone() for p in params], finite_difference_grads(lambda: weighted_ce_from_logits(agg(raw), ya, w), params))
    elapsed = time.perf_counter() - t0
    ok = err_cnn < 1e-4 and err_agg < 1e-4 and elapsed < 120
    record(6, "gradient checks", ok, f"backbone rel err {err_cnn:.2e}, aggregator rel err {err_agg:.2e}, {elapsed:.1f} s")


# ---------------------------------------------------------------- 7


def test_07_premium_reduction():
    torch.manual_seed(7)
    backbone = ReferenceCNN(width=8).double().eval()
    backbone.trained = True
    agg = identity_aggregator(torch.float64)
    mismatches = 0
    for i in range(20):
        img = random_canonical(700 + i)
        tiles, full = decompose(img)
        premium = aggregate_predict(tokenize(tiles, full, backbone, agg), agg).as_array()
        basic = softmax64(predict_logits(backbone, model_input_resize(img)[None], dtype=torch.float64))[0]
        mismatches += not np.array_equal(premium, basic)
    record(7, "premium reduction", mismatches == 0, f"{20 - mismatches}/20 bit-identical at float64")


# ---------------------------------------------------------------- 8 and 12 share one trained corpus


@pytest.fixture(scope="module")
def e2e(tmp_path_factory):
    root = tmp_path_factory.mktemp("e2e")
    mp = pytest.MonkeyPatch()
    mp.setenv("THYROFNA_RUNS_DIR", str(root / "runs"))
    t0 = time.perf_counter()
    rc = [main(["synth-corpus", "--n-per-class", "30", "--seed", "1", "--out", str(root / "corpus")])]
    cfg = write_cfg(root / "cfg.json", root / "corpus" / "manifest.csv")
    rc.append(main(["train", "--config", str(cfg), "--run-id", "smoke", "--mode", "basic"]))
    rc.append(main(["train", "--config", str(cfg), "--run-id", "smoke", "--mode", "premium"]))
    elapsed = time.perf_counter() - t0
    mp.undo()
    return root, root / "runs" / "smoke", rc, elapsed


@pytest.mark.slow
def test_08_end_to_end_smoke(e2e):
    root, run, rc, elapsed = e2e
    basic = json.loads((run / "eval.json").read_text())
    premium = json.loads((run / "premium" / "eval.json").read_text())
    epochs = json.loads((run / "report.json").read_text())["epochs"]
    ok = rc == [0, 0, 0] and basic["accuracy"] >= 0.90 and premium["macro_f1"] >= basic["macro_f1"] - 0.02 and len(epochs) <= 15 and elapsed < 600
    record(8, "end-to-end smoke", ok,
           f"basic acc {basic['accuracy']:.3f} F1 {basic['macro_f1']:.3f}; premium F1 {premium['macro_f1']:.3f}; {len(epochs)} epochs; {elapsed:.0f} s")


# ---------------------------------------------------------------- 9


def test_09_early_stopping():
    results = []
    for k in (1, 2, 5, 23):
        losses = [5.0 - 0.1 * i for i in range(k)] + [5.0 + i for i in range(1, 100)]
        seen = []

        def validate(m, epoch):
            seen.append(epoch)
            return losses[epoch - 1], 0.5

        model = torch.nn.Linear(1, 3)
        fit(model, model.parameters(), TrainConfig(max_epochs=100, patience=10), lambda e: iter([(torch.zeros(1, 1), torch.tensor([0]))]),
            ClassWeights.uniform(), validate)
        results.append((k, seen[-1]))
    ok = all(last == k + 10 for k, last in results)
    record(9, "early stopping", ok, ", ".join(f"k={k}->halt {last}" for k, last in results))


# ---------------------------------------------------------------- 10


def test_10_gradcam_locality():
    model = train_blob_backbone()
    images, labels, boxes = blob_views(40, 99)
    masses, in_range = [], True
    for img, box in zip(images, boxes):
        for target in (ClassLabel.MALIGNANT, ClassLabel.BENIGN):
            s = grad_cam(img, model, target)
            in_range &= bool(s.values.min() >= 0 and s.values.max() <= 1 and (s.values.max() == 1 or not s.values.any()))
        if box is not None:
            masses.append(blob_mass(grad_cam(img, model, ClassLabel.MALIGNANT), box))
    ok = in_range and min(masses) >= 0.5
    record(10, "Grad-CAM locality", ok, f"{len(masses)} blob views, mass in box min {min(masses):.3f} mean {np.mean(masses):.3f}; normalized={in_range}")


# ---------------------------------------------------------------- 11


@pytest.mark.slow
def test_11_determinism(tmp_path, monkeypatch):
    monkeypatch.setenv("THYROFNA_RUNS_DIR", str(tmp_path / "runs"))
    corpus = tmp_path / "corpus"
    assert main(["synth-corpus", "--n-per-class", "8", "--seed", "4", "--out", str(corpus)]) == 0
    train = {"learning_rate": 0.001, "batch_size": 32, "max_epochs": 2, "seed": 3, "backbone_kwargs": {"width": 8}}
    cfg = write_cfg(tmp_path / "cfg.json", corpus / "manifest.csv", train=train, aggregator={"num_encoder_layers": 2})
    manifest = infer_manifest(corpus, tmp_path / "infer.csv")
    digests = []
    for rep in ("a", "b"):
        assert main(["train", "--config", str(cfg), "--run-id", rep]) == 0
        assert main(["augment-preview", "--config", str(cfg), "--out", str(tmp_path / f"aug_{rep}"), "--limit", "3"]) == 0
        assert main(["infer", "--checkpoint", str(tmp_path / "runs" / rep), "--manifest", str(manifest), "--out", str(tmp_path / f"pred_{rep}")]) == 0
        aug = tmp_path / f"aug_{rep}"
        digests.append({
            "splits": sha(tmp_path / "runs" / rep / "splits.csv"),
            "geometry": sorted(sha(p) for p in aug.glob("aug/*/geometry.json")),
            "schedule": sha(aug / "schedule_epoch0.json"),
            "losses": [e["train_loss"] for e in json.loads((tmp_path / "runs" / rep / "report.json").read_text())["epochs"]],
            "predictions": sha(tmp_path / f"pred_{rep}" / "predictions.csv"),
        })
    same = {k: digests[0][k] == digests[1][k] for k in digests[0]}
    record(11, "determinism", all(same.values()), ", ".join(f"{k}={'same' if v else 'DIFFERENT'}" for k, v in same.items()))


# ---------------------------------------------------------------- 12


@pytest.mark.slow
def test_12_throughput_report(e2e, tmp_path):
    root, run, _, _ = e2e
    bench = tmp_path / "bench"
    assert main(["synth-corpus", "--n-per-class", "34", "--seed", "12", "--out", str(bench)]) == 0
    manifest = infer_manifest(bench, tmp_path / "bench.csv", limit=100)
    out = tmp_path / "out"
    rc = main(["infer", "--checkpoint", str(run), "--manifest", str(manifest), "--out", str(out), "--bench"])
    metrics = json.loads((out / "run_manifest.json").read_text())["metrics"]["bench"]
    ok = rc == 0 and metrics["images"] == 100 and metrics["images_per_sec"] > 0
    record(12, "throughput report", ok,
           f"{metrics['images_per_sec']:.1f} images/s on 100 images (reference figure {metrics['reference_images_per_sec']:.1f}/s, not gated)")


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-v"]))
