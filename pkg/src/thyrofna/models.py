"""Backbone registry.

Every backbone maps a ``(B, 3, 224, 224)`` float tensor to 3 logits and
exposes the penultimate embedding through ``embed`` plus the layer whose
output Grad-CAM reads (``cam_layer``; ``None`` for non-convolutional models).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import torch
from torch import nn

from .core import NUM_CLASSES
from .errors import UnknownBackbone

# ImageNet statistics; inputs are uint8 RGB scaled to [0, 1] first.
PIXEL_MEAN = (0.485, 0.456, 0.406)
PIXEL_STD = (0.229, 0.224, 0.225)


class Backbone(nn.Module):
    embedding_dim: int
    cam_layer: nn.Module | None

    def __init__(self, embedding_dim: int, dropout: float):
        super().__init__()
        self.embedding_dim = embedding_dim
        self.dropout = nn.Dropout(dropout)
        self.classifier = nn.Linear(embedding_dim, NUM_CLASSES)

    def embed(self, x: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError

    def classify(self, embedding: torch.Tensor) -> torch.Tensor:
        return self.classifier(self.dropout(embedding))

    def forward(self, x):
        return self.classify(self.embed(x))


def _conv_bn(cin, cout, k, stride):
    return nn.Sequential(
        nn.Conv2d(cin, cout, k, stride=stride, padding=k // 2, bias=False),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
    )


class ReferenceCNN(Backbone):
    """Four-stage strided CNN, ~0.1M parameters at width 16, ~0.4M at width 32."""

    def __init__(self, width: int = 32, dropout: float = 0.2):
        super().__init__(8 * width, dropout)
        self.features = nn.Sequential(
            _conv_bn(3, width, 5, 4),
            _conv_bn(width, 2 * width, 3, 2),
            _conv_bn(2 * width, 4 * width, 3, 2),
            _conv_bn(4 * width, 8 * width, 3, 1),
        )
        self.cam_layer = self.features[-1]
        self.pool = nn.AdaptiveAvgPool2d(1)

    def embed(self, x):
        return self.pool(self.features(x)).flatten(1)


class MobileNetV1(Backbone):
    _cfg = [(64, 1), (128, 2), (128, 1), (256, 2), (256, 1), (512, 2)] + [(512, 1)] * 5 + [(1024, 2), (1024, 1)]

    def __init__(self, dropout: float = 0.2, width_mult: float = 1.0):
        c = lambda n: max(8, int(n * width_mult))  # noqa: E731
        super().__init__(c(1024), dropout)
        layers = [_conv_bn(3, c(32), 3, 2)]
        cin = c(32)
        for cout, stride in self._cfg:
            layers.append(nn.Sequential(
                nn.Conv2d(cin, cin, 3, stride, 1, groups=cin, bias=False),
                nn.BatchNorm2d(cin),
                nn.ReLU(inplace=True),
                nn.Conv2d(cin, c(cout), 1, bias=False),
                nn.BatchNorm2d(c(cout)),
                nn.ReLU(inplace=True),
            ))
            cin = c(cout)
        self.features = nn.Sequential(*layers)
        self.cam_layer = self.features[-1]
        self.pool = nn.AdaptiveAvgPool2d(1)

    def embed(self, x):
        return self.pool(self.features(x)).flatten(1)


class TorchvisionBackbone(Backbone):
    """Wraps a torchvision model whose own head was replaced by ``Identity``."""

    def __init__(self, body: nn.Module, embedding_dim: int, cam_layer: nn.Module | None, dropout: float):
        super().__init__(embedding_dim, dropout)
        self.body = body
        self.cam_layer = cam_layer

    def embed(self, x):
        return self.body(x)


def _tv(builder_name: str, strip: Callable[[nn.Module], tuple[int, nn.Module | None]]):
    def factory(dropout: float = 0.2, **kwargs) -> Backbone:
        import torchvision.models as tvm

        body = getattr(tvm, builder_name)(weights=None, **kwargs)
        dim, cam = strip(body)
        return TorchvisionBackbone(body, dim, cam, dropout)

    return factory


def _strip_classifier_seq(m):
    dim = m.classifier[-1].in_features
    m.classifier = nn.Identity()
    return dim, m.features[-1]


def _strip_fc(m):
    dim = m.fc.in_features
    m.fc = nn.Identity()
    return dim, m.layer4


def _strip_densenet(m):
    dim = m.classifier.in_features
    m.classifier = nn.Identity()
    return dim, m.features


def _strip_vgg(m):
    dim = m.classifier[-1].in_features
    m.classifier[-1] = nn.Identity()
    return dim, m.features[-2]


def _strip_vit(m):
    dim = m.heads.head.in_features
    m.heads = nn.Identity()
    return dim, None


def _strip_mnv3(m):
    dim = m.classifier[0].out_features
    m.classifier = m.classifier[:-1]  # keep the hidden projection, drop the 1000-way layer
    return dim, m.features[-1]


@dataclass(frozen=True)
class BackboneSpec:
    name: str
    constructor: Callable[..., Backbone]
    family: str
    _count: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def parameter_count(self) -> int:
        if "n" not in self._count:
            self._count["n"] = count_parameters(self.constructor())
        return self._count["n"]

    def build(self, dropout: float = 0.2, **kwargs) -> Backbone:
        return self.constructor(dropout=dropout, **kwargs)


REGISTRY: dict[str, BackboneSpec] = {}


def register(name: str, constructor, family: str) -> BackboneSpec:
    REGISTRY[name] = spec = BackboneSpec(name, constructor, family)
    return spec


register("reference_cnn", ReferenceCNN, "reference")
register("mobilenet_v1", MobileNetV1, "mobilenet")
register("mobilenet_v3_large", _tv("mobilenet_v3_large", _strip_mnv3), "mobilenet")
register("efficientnet_b0", _tv("efficientnet_b0", _strip_classifier_seq), "efficientnet")
register("efficientnet_b7", _tv("efficientnet_b7", _strip_classifier_seq), "efficientnet")
register("vgg16", _tv("vgg16", _strip_vgg), "vgg")
register("vgg19", _tv("vgg19", _strip_vgg), "vgg")
register("resnet18", _tv("resnet18", _strip_fc), "resnet")
register("resnet152", _tv("resnet152", _strip_fc), "resnet")
register("densenet121", _tv("densenet121", _strip_densenet), "densenet")
register("densenet201", _tv("densenet201", _strip_densenet), "densenet")
register("vit_b_16", _tv("vit_b_16", _strip_vit), "vit")
register("vit_l_16", _tv("vit_l_16", _strip_vit), "vit")


def get_spec(name: str) -> BackboneSpec:
    try:
        return REGISTRY[name]
    except KeyError:
        raise UnknownBackbone(f"unknown backbone {name!r}; registered: {sorted(REGISTRY)}") from None


def build_backbone(name: str, dropout: float = 0.2, **kwargs) -> Backbone:
    return get_spec(name).build(dropout=dropout, **kwargs)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def check_contract(model: Backbone, size: int = 224) -> tuple[int, int]:
    """Run a probe batch and return ``(n_logits, embedding_dim)``."""
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            probe = torch.zeros(2, 3, size, size, dtype=next(model.parameters()).dtype)
            emb = model.embed(probe)
            logits = model.classify(emb)
    finally:
        model.train(was_training)
    if emb.shape != (2, model.embedding_dim) or logits.shape != (2, NUM_CLASSES):
        raise ValueError(f"contract violated: embedding {tuple(emb.shape)}, logits {tuple(logits.shape)}")
    return logits.shape[1], emb.shape[1]


def to_tensor(images, dtype=torch.float32) -> torch.Tensor:
    """Stack ``HxWx3`` uint8 rasters into a normalized ``(B, 3, H, W)`` tensor."""
    arr = np.stack([np.asarray(im) for im in images]) if isinstance(images, (list, tuple)) else np.asarray(images)
    if arr.ndim == 3:
        arr = arr[None]
    if not arr.flags.writeable or not arr.flags.c_contiguous:
        arr = np.array(arr, copy=True, order="C")
    t = torch.from_numpy(arr).permute(0, 3, 1, 2).to(dtype) / 255.0
    mean = torch.tensor(PIXEL_MEAN, dtype=dtype).view(1, 3, 1, 1)
    std = torch.tensor(PIXEL_STD, dtype=dtype).view(1, 3, 1, 1)
    return (t - mean) / std
