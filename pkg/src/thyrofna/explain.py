"""Grad-CAM saliency for the full image and each of the 12 grid tiles."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .augmentation import GRID_COLS, GRID_ROWS, generate_grid
from .core import ClassLabel, PredictionVector, as_rgb, model_input_resize
from .errors import UntrainedBackbone, ValidationError
from .models import Backbone, to_tensor
from .proposals import _check_canonical

# Composite layout: full view on the left, 4x3 tile grid on the right.
PANEL_W, PANEL_H = 768, 576
TILE_PANEL = PANEL_W // GRID_COLS  # 192
GAP = 16
COMPOSITE_SIZE = (2 * PANEL_W + GAP, PANEL_H)
OVERLAY_ALPHA = 0.4
COLORMAP = "inferno"


@dataclass(frozen=True)
class SaliencyMap:
    values: np.ndarray  # (H, W) in [0, 1]
    target_class: ClassLabel
    source: str  # "FULL" or "REGION(i)"

    def __post_init__(self):
        v = self.values
        if v.ndim != 2 or np.any(v < 0) or np.any(v > 1):
            raise ValueError("saliency values must be a 2-D grid in [0, 1]")


def grad_cam(view, backbone: Backbone, target_class: ClassLabel, source: str = "FULL") -> SaliencyMap:
    """Gradient-weighted activation of ``backbone.cam_layer`` for ``target_class``.

    Channel weights are spatially averaged gradients of the target logit.
    The rectified map is upsampled to the view's size and divided by its max.
    """
    if not getattr(backbone, "trained", False):
        raise UntrainedBackbone("Grad-CAM needs a trained (or loaded) backbone")
    layer = getattr(backbone, "cam_layer", None)
    if layer is None:
        raise ValidationError(f"{type(backbone).__name__} has no convolutional feature map for Grad-CAM")
    arr = as_rgb(view)
    h, w = arr.shape[:2]
    dtype = next(backbone.parameters()).dtype
    x = to_tensor(model_input_resize(arr), dtype)

    store = {}

    def hook(module, inputs, output):
        output.retain_grad()
        store["act"] = output

    handle = layer.register_forward_hook(hook)
    was_training = backbone.training
    backbone.eval()
    try:
        with torch.enable_grad():
            logits = backbone(x)
            backbone.zero_grad(set_to_none=True)
            logits[0, int(target_class)].backward()
    finally:
        handle.remove()
        backbone.train(was_training)
    act = store["act"].detach()
    grad = store["act"].grad.detach()
    weights = grad.mean(dim=(2, 3), keepdim=True)
    cam = F.relu((weights * act).sum(dim=1, keepdim=True))
    cam = F.interpolate(cam.to(torch.float64), size=(h, w), mode="bilinear", align_corners=False)[0, 0]
    cam = cam.clamp_min(0).numpy()
    peak = cam.max()
    cam = cam / peak if peak > 0 else np.zeros_like(cam)
    return SaliencyMap(np.clip(cam, 0.0, 1.0), ClassLabel(int(target_class)), source)


def heat_overlay(image: np.ndarray, saliency: SaliencyMap, alpha: float = OVERLAY_ALPHA) -> np.ndarray:
    from matplotlib import colormaps

    rgb = colormaps[COLORMAP](saliency.values)[..., :3] * 255.0
    out = (1 - alpha) * as_rgb(image).astype(np.float64) + alpha * rgb
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def _fit(image: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    return np.asarray(Image.fromarray(image).resize(size, Image.Resampling.BILINEAR))


def composite(image: np.ndarray, maps: list[SaliencyMap]) -> np.ndarray:
    canvas = np.full((COMPOSITE_SIZE[1], COMPOSITE_SIZE[0], 3), 255, dtype=np.uint8)
    canvas[:, :PANEL_W] = _fit(heat_overlay(image, maps[0]), (PANEL_W, PANEL_H))
    tiles = generate_grid(image)
    for i, (tile, m) in enumerate(zip(tiles, maps[1:])):
        r, c = divmod(i, GRID_COLS)
        y0, x0 = r * TILE_PANEL, PANEL_W + GAP + c * TILE_PANEL
        canvas[y0 : y0 + TILE_PANEL, x0 : x0 + TILE_PANEL] = _fit(heat_overlay(tile, m), (TILE_PANEL, TILE_PANEL))
    return canvas


def explain_case(image, backbone: Backbone, predicted: PredictionVector) -> tuple[list[SaliencyMap], np.ndarray]:
    """One full-image map and 12 tile maps for the predicted class, plus the composite."""
    arr = _check_canonical(image)
    target = predicted.decision()
    maps = [grad_cam(arr, backbone, target, "FULL")]
    maps += [grad_cam(t, backbone, target, f"REGION({i})") for i, t in enumerate(generate_grid(arr))]
    assert len(maps) == 1 + GRID_ROWS * GRID_COLS
    return maps, composite(arr, maps)
