"""Synthetic stand-in corpora.

``synth_corpus`` draws 1024x768 "slides": a light stained background with
scattered single cells and a class-dependent number of dense cell clusters
whose stain hue also depends on the class, so the three classes are
separable by construction. ``blob_views`` draws 224x224 views where only the
MALIGNANT class carries a dark blob at a known location.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .core import CANONICAL_SIZE, ClassLabel, ImageRecord, Split, write_manifest

# (cluster count range, cluster RGB, background RGB)
CLASS_STYLE = {
    ClassLabel.BENIGN: ((1, 2), (70, 60, 150), (236, 222, 236)),
    ClassLabel.INDET_SUS: ((4, 5), (120, 40, 120), (232, 214, 220)),
    ClassLabel.MALIGNANT: ((8, 10), (80, 25, 50), (226, 208, 206)),
}


def _cluster(draw: ImageDraw.ImageDraw, rng: np.random.Generator, cx: int, cy: int, color) -> None:
    rx, ry = rng.integers(48, 76), rng.integers(42, 66)
    draw.ellipse([cx - rx, cy - ry, cx + rx, cy + ry], fill=tuple(int(c) for c in color))
    # nuclei texture inside the cluster
    for _ in range(int(rng.integers(25, 45))):
        a, r = rng.uniform(0, 2 * np.pi), rng.uniform(0, 0.85)
        x, y = cx + r * rx * np.cos(a), cy + r * ry * np.sin(a)
        s = rng.uniform(4, 8)
        shade = tuple(int(max(0, c - rng.integers(15, 40))) for c in color)
        draw.ellipse([x - s, y - s, x + s, y + s], fill=shade)


def synth_image(label: ClassLabel, rng: np.random.Generator) -> np.ndarray:
    (lo, hi), cluster_rgb, bg_rgb = CLASS_STYLE[label]
    w, h = CANONICAL_SIZE
    img = Image.new("RGB", (w, h), bg_rgb)
    draw = ImageDraw.Draw(img)
    for _ in range(int(rng.integers(30, 60))):  # isolated cells, far below cluster size
        x, y, s = rng.integers(0, w), rng.integers(0, h), rng.uniform(3, 6)
        draw.ellipse([x - s, y - s, x + s, y + s], fill=tuple(int(c) for c in np.array(cluster_rgb) + 60))
    n = int(rng.integers(lo, hi + 1))
    for _ in range(n):
        _cluster(draw, rng, int(rng.integers(80, w - 80)), int(rng.integers(80, h - 80)), cluster_rgb)
    arr = np.asarray(img).astype(np.int16)
    arr += rng.integers(-8, 9, size=arr.shape, dtype=np.int16)
    return np.clip(arr, 0, 255).astype(np.uint8)


def synth_corpus(n_per_class: int, seed: int, out_dir) -> tuple[Path, list[ImageRecord]]:
    """Write ``images/*.png`` and ``manifest.csv`` (labels set, splits empty)."""
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    records = []
    for label in ClassLabel:
        for i in range(n_per_class):
            rng = np.random.default_rng([seed, int(label), i])
            rec_id = f"{label.name.lower()}_{i:04d}"
            path = out / "images" / f"{rec_id}.png"
            Image.fromarray(synth_image(label, rng)).save(path, format="PNG")
            w, h = CANONICAL_SIZE
            records.append(ImageRecord(rec_id, path.resolve(), label, Split.UNSPLIT, w, h))
    manifest = write_manifest(records, out / "manifest.csv")
    return manifest, records


def blob_views(n: int, seed: int, size: int = 224, radius: tuple[int, int] = (48, 64)):
    """Views where MALIGNANT means "contains one dark blob"; BENIGN has none.

    Returns ``(images, labels, boxes)`` with ``boxes[i] = (x, y, w, h)`` of the
    blob or ``None``.
    """
    rng = np.random.default_rng(seed)
    images, labels, boxes = [], [], []
    for i in range(n):
        label = ClassLabel.MALIGNANT if i % 2 else ClassLabel.BENIGN
        img = Image.new("RGB", (size, size), (232, 214, 224))
        draw = ImageDraw.Draw(img)
        for _ in range(12):
            x, y, s = rng.integers(0, size), rng.integers(0, size), rng.uniform(2, 4)
            draw.ellipse([x - s, y - s, x + s, y + s], fill=(170, 120, 170))
        box = None
        if label is ClassLabel.MALIGNANT:
            r = int(rng.integers(*radius))
            cx, cy = (int(v) for v in rng.integers(r + 4, size - r - 4, size=2))
            draw.ellipse([cx - r, cy - r, cx + r, cy + r], fill=(70, 25, 60))
            box = (cx - r, cy - r, 2 * r + 1, 2 * r + 1)
        arr = np.asarray(img).astype(np.int16) + rng.integers(-6, 7, size=(size, size, 3), dtype=np.int16)
        images.append(np.clip(arr, 0, 255).astype(np.uint8))
        labels.append(label)
        boxes.append(box)
    return np.stack(images), labels, boxes
