"""Multi-region aggregation head ("Premium" model).

The canonical image is cut into the 4x3 grid of 256 px tiles. Each tile and
the full image go through the trained backbone; the outputs are projected to
``d_model`` and the full-image token seeds the class position. A stack of
self-attention encoder layers refines the sequence and the class position
feeds a small feed-forward classifier.
"""
from __future__ import annotations

import dataclasses
import enum
import json
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .augmentation import NUM_TILES, generate_grid
from .core import NUM_CLASSES, PredictionVector, model_input_resize
from .errors import ConfigError, DimensionMismatch, MissingBaseCheckpoint, UnloadedParameters
from .models import Backbone, to_tensor
from .proposals import _check_canonical
from .training import (
    ClassWeights,
    TrainConfig,
    TrainingReport,
    fit,
    load_backbone,
    seed_everything,
    softmax64,
    weighted_ce_from_logits,
)
from .evaluation import evaluate

NUM_TOKENS = NUM_TILES + 1
LAYER_RANGE = (2, 5)


class TokenSource(enum.Enum):
    EMBEDDING = "EMBEDDING"
    LOGITS = "LOGITS"


@dataclass(frozen=True)
class AggregatorConfig:
    d_model: int = 256
    num_encoder_layers: int = 5
    num_heads: int = 4
    head_hidden_dims: tuple[int, ...] = (128,)
    dropout: float = 0.2
    token_source: TokenSource = TokenSource.EMBEDDING
    ff_dim: int | None = None  # encoder feed-forward width, default 2 * d_model
    expansion: str = "linear"  # or "identity" (token dim must equal d_model)
    positional: bool = True
    head: str = "ffnn"  # or "softmax_only" (d_model must be 3)
    fine_tune_backbone: bool = False

    def __post_init__(self):
        if isinstance(self.token_source, str):
            object.__setattr__(self, "token_source", TokenSource(self.token_source))
        object.__setattr__(self, "head_hidden_dims", tuple(self.head_hidden_dims))
        if not isinstance(self.d_model, int) or self.d_model < 1:
            raise ConfigError("aggregator.d_model", "must be a positive integer")
        if not isinstance(self.num_encoder_layers, int) or self.num_encoder_layers < 0:
            raise ConfigError("aggregator.num_encoder_layers", "must be a non-negative integer")
        if not isinstance(self.num_heads, int) or self.num_heads < 1 or self.d_model % self.num_heads:
            raise ConfigError("aggregator.num_heads", f"must divide d_model={self.d_model}")
        if not 0 <= self.dropout < 1:
            raise ConfigError("aggregator.dropout", "must lie in [0, 1)")
        if self.expansion not in ("linear", "identity"):
            raise ConfigError("aggregator.expansion", "must be 'linear' or 'identity'")
        if self.head not in ("ffnn", "softmax_only"):
            raise ConfigError("aggregator.head", "must be 'ffnn' or 'softmax_only'")
        if self.head == "softmax_only" and self.d_model != NUM_CLASSES:
            raise ConfigError("aggregator.head", f"softmax_only needs d_model={NUM_CLASSES}")

    @classmethod
    def from_dict(cls, data: dict) -> "AggregatorConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"aggregator.{sorted(unknown)[0]}", "unknown key")
        return cls(**data)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["token_source"] = self.token_source.value
        d["head_hidden_dims"] = list(self.head_hidden_dims)
        return d

    def validate_for_training(self) -> None:
        lo, hi = LAYER_RANGE
        if not lo <= self.num_encoder_layers <= hi:
            raise ConfigError("aggregator.num_encoder_layers", f"must lie in [{lo}, {hi}], got {self.num_encoder_layers}")


@dataclass
class TokenSequence:
    class_token: torch.Tensor  # (d_model,)
    region_tokens: torch.Tensor  # (12, d_model)
    provenance: str | None = None

    def __post_init__(self):
        if self.region_tokens.shape[0] != NUM_TILES or self.region_tokens.shape[1:] != self.class_token.shape:
            raise DimensionMismatch(
                f"need 1 class + {NUM_TILES} region tokens of equal width, got "
                f"{tuple(self.class_token.shape)} and {tuple(self.region_tokens.shape)}"
            )

    def stacked(self) -> torch.Tensor:
        return torch.cat([self.class_token[None], self.region_tokens], dim=0)

    def __len__(self):
        return 1 + len(self.region_tokens)


def decompose(image) -> tuple[list[np.ndarray], np.ndarray]:
    """12 row-major 256x256 tiles plus the full canonical image."""
    arr = _check_canonical(image)
    return generate_grid(arr), arr


def view_batch(image) -> np.ndarray:
    """Model-input rasters for the 13 views, full image first."""
    tiles, full = decompose(image)
    return np.stack([model_input_resize(full)] + [model_input_resize(t) for t in tiles])


def raw_tokens(views: np.ndarray, backbone: Backbone, source: TokenSource, dtype=None) -> torch.Tensor:
    """Backbone outputs for the 13 views, shape ``(13, token_dim)``.

    The full image runs as its own batch so its output is bit-identical to a
    standalone full-image prediction.
    """
    dtype = dtype or next(backbone.parameters()).dtype

    def run(x):
        emb = backbone.embed(to_tensor(x, dtype))
        return emb if source is TokenSource.EMBEDDING else backbone.classify(emb)

    return torch.cat([run(views[:1]), run(views[1:])], dim=0)


class EncoderLayer(nn.Module):
    """Pre-norm self-attention block."""

    def __init__(self, d_model: int, num_heads: int, ff_dim: int, dropout: float):
        super().__init__()
        self.norm1 = nn.LayerNorm(d_model)
        self.attn = nn.MultiheadAttention(d_model, num_heads, dropout=dropout, batch_first=True)
        self.norm2 = nn.LayerNorm(d_model)
        self.ff = nn.Sequential(
            nn.Linear(d_model, ff_dim), nn.GELU(), nn.Dropout(dropout), nn.Linear(ff_dim, d_model)
        )
        self.drop = nn.Dropout(dropout)

    def forward(self, x):
        h = self.norm1(x)
        x = x + self.drop(self.attn(h, h, h, need_weights=False)[0])
        return x + self.drop(self.ff(self.norm2(x)))


class Aggregator(nn.Module):
    def __init__(self, token_dim: int, config: AggregatorConfig):
        super().__init__()
        self.config = config
        self.token_dim = token_dim
        d = config.d_model
        if config.expansion == "identity":
            if token_dim != d:
                raise DimensionMismatch(f"identity expansion needs token_dim == d_model ({token_dim} != {d})")
            self.expand = nn.Identity()
        else:
            self.expand = nn.Linear(token_dim, d)
        self.pos = nn.Parameter(torch.zeros(NUM_TOKENS, d)) if config.positional else None
        if self.pos is not None:
            nn.init.trunc_normal_(self.pos, std=0.02)
        ff = config.ff_dim or 2 * d
        self.layers = nn.ModuleList(
            EncoderLayer(d, config.num_heads, ff, config.dropout) for _ in range(config.num_encoder_layers)
        )
        self.norm = nn.LayerNorm(d) if config.num_encoder_layers else nn.Identity()
        if config.head == "softmax_only":
            self.head = nn.Identity()
        else:
            dims = [d, *config.head_hidden_dims]
            mods: list[nn.Module] = []
            for a, b in zip(dims, dims[1:]):
                mods += [nn.Linear(a, b), nn.ReLU(), nn.Dropout(config.dropout)]
            mods.append(nn.Linear(dims[-1], NUM_CLASSES))
            self.head = nn.Sequential(*mods)
        self.loaded = True

    def tokenize(self, raw: torch.Tensor, provenance: str | None = None) -> TokenSequence:
        if raw.shape[-1] != self.token_dim or raw.shape[0] != NUM_TOKENS:
            raise DimensionMismatch(f"expected ({NUM_TOKENS}, {self.token_dim}) raw tokens, got {tuple(raw.shape)}")
        # row by row, so equal inputs give bit-equal tokens regardless of GEMM blocking
        t = torch.cat([self.expand(row[None]) for row in raw])
        return TokenSequence(t[0], t[1:], provenance)

    def encode(self, tokens: torch.Tensor) -> torch.Tensor:
        """(B, 13, d_model) expanded tokens -> (B, 3) logits."""
        x = tokens if self.pos is None else tokens + self.pos
        for layer in self.layers:
            x = layer(x)
        return self.head(self.norm(x)[:, 0])

    def forward(self, raw: torch.Tensor) -> torch.Tensor:
        """(B, 13, token_dim) raw backbone outputs -> (B, 3) logits."""
        return self.encode(self.expand(raw))


def identity_aggregator(dtype=torch.float64) -> Aggregator:
    """Degenerate configuration whose output is the full-image backbone softmax."""
    cfg = AggregatorConfig(
        d_model=NUM_CLASSES, num_encoder_layers=0, num_heads=1, head_hidden_dims=(),
        token_source=TokenSource.LOGITS, expansion="identity", positional=False, head="softmax_only",
    )
    return Aggregator(NUM_CLASSES, cfg).to(dtype)


def tokenize(regions: Sequence[np.ndarray], full: np.ndarray, backbone: Backbone, aggregator: Aggregator, provenance=None) -> TokenSequence:
    views = np.stack([model_input_resize(full)] + [model_input_resize(r) for r in regions])
    if len(views) != NUM_TOKENS:
        raise DimensionMismatch(f"need {NUM_TILES} regions, got {len(regions)}")
    backbone.eval()
    aggregator.eval()
    with torch.no_grad():
        raw = raw_tokens(views, backbone, aggregator.config.token_source)
        return aggregator.tokenize(raw.to(next(aggregator.parameters(), raw).dtype), provenance)


def aggregate_predict(tokens: TokenSequence, aggregator: Aggregator | None) -> PredictionVector:
    if aggregator is None or not getattr(aggregator, "loaded", False):
        raise UnloadedParameters("aggregator parameters are not loaded")
    aggregator.eval()
    with torch.no_grad():
        logits = aggregator.encode(tokens.stacked()[None])
    return PredictionVector.from_array(softmax64(logits)[0])


class PremiumClassifier:
    """Backbone + aggregator, operating on canonical images."""

    def __init__(self, backbone: Backbone, aggregator: Aggregator):
        self.backbone = backbone.eval()
        self.aggregator = aggregator.eval()

    def raw(self, image) -> torch.Tensor:
        with torch.no_grad():
            return raw_tokens(view_batch(image), self.backbone, self.aggregator.config.token_source)

    def predict(self, image) -> PredictionVector:
        with torch.no_grad():
            logits = self.aggregator(self.raw(image)[None])
        return PredictionVector.from_array(softmax64(logits)[0])


# ---------------------------------------------------------------- training


def token_bank(images, backbone: Backbone, source: TokenSource) -> torch.Tensor:
    """Raw tokens for an iterable of canonical images, ``(N, 13, token_dim)``."""
    backbone.eval()
    with torch.no_grad():
        rows = [raw_tokens(view_batch(im), backbone, source) for im in images]
    return torch.stack(rows) if rows else torch.empty(0)


class _JointModel(nn.Module):
    """Backbone and aggregator trained together on stacked view batches."""

    def __init__(self, backbone: Backbone, aggregator: Aggregator):
        super().__init__()
        self.backbone = backbone
        self.aggregator = aggregator

    def forward(self, views: torch.Tensor) -> torch.Tensor:
        b = views.shape[0]
        emb = self.backbone.embed(views.flatten(0, 1))
        if self.aggregator.config.token_source is TokenSource.LOGITS:
            emb = self.backbone.classify(emb)
        return self.aggregator(emb.view(b, NUM_TOKENS, -1))


def train_premium(
    base_run: Path,
    config: AggregatorConfig,
    train_config: TrainConfig,
    train_images,
    train_labels: Sequence[int],
    val_images,
    val_labels: Sequence[int],
    weights: ClassWeights,
    run_dir: Path | None = None,
) -> tuple[PremiumClassifier, TrainingReport]:
    """Train the aggregator on full TRAIN images.

    With the backbone frozen (default) the 13 backbone outputs per image are
    computed once and reused every epoch.
    """
    base_run = Path(base_run)
    if not (base_run / "weights.bin").is_file() or not (base_run / "config.json").is_file():
        raise MissingBaseCheckpoint(f"no trained backbone under {base_run}")
    config.validate_for_training()
    backbone, base_cfg = load_backbone(base_run)
    token_dim = backbone.embedding_dim if config.token_source is TokenSource.EMBEDDING else NUM_CLASSES
    y_train = torch.tensor([int(v) for v in train_labels], dtype=torch.long)
    y_val = np.array([int(v) for v in val_labels])

    seed_everything(train_config.seed)
    agg = Aggregator(token_dim, config)
    if config.fine_tune_backbone:
        model: nn.Module = _JointModel(backbone, agg)
        train_x = torch.stack([to_tensor(view_batch(im)) for im in train_images])
        val_x = torch.stack([to_tensor(view_batch(im)) for im in val_images])
    else:
        for p in backbone.parameters():
            p.requires_grad_(False)
        model = agg
        train_x = token_bank(train_images, backbone, config.token_source)
        val_x = token_bank(val_images, backbone, config.token_source)

    def epoch_batches(epoch):
        g = np.random.default_rng([train_config.seed, epoch])
        order = g.permutation(len(y_train))
        for start in range(0, len(order), train_config.batch_size):
            idx = torch.from_numpy(order[start : start + train_config.batch_size])
            yield train_x[idx], y_train[idx]

    w = weights.tensor()

    def validate(m, epoch):
        m.eval()
        with torch.no_grad():
            logits = torch.cat([m(val_x[i : i + 32]) for i in range(0, len(val_x), 32)])
        loss = float(weighted_ce_from_logits(logits, torch.from_numpy(y_val), w))
        return loss, evaluate(y_val, softmax64(logits)).macro_f1

    params = [p for p in model.parameters() if p.requires_grad]
    report = fit(model, params, train_config, epoch_batches, weights, validate, None)
    if run_dir is not None:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        torch.save(agg.state_dict(), run_dir / "weights.bin")
        report.checkpoint = str(run_dir / "weights.bin")
        save_premium(run_dir, base_run, backbone, base_cfg, config, train_config, report)
    return PremiumClassifier(backbone, agg), report


def save_premium(run_dir: Path, base_run: Path, backbone: Backbone, base_cfg: TrainConfig, config: AggregatorConfig, train_config: TrainConfig, report: TrainingReport) -> None:
    run_dir = Path(run_dir)
    bb = run_dir / "backbone"
    bb.mkdir(parents=True, exist_ok=True)
    torch.save(backbone.state_dict(), bb / "weights.bin")
    shutil.copyfile(base_run / "config.json", bb / "config.json")
    with open(run_dir / "aggregator_config.json", "w", encoding="utf-8") as fh:
        json.dump(config.to_dict(), fh, indent=2)
    with open(run_dir / "config.json", "w", encoding="utf-8") as fh:
        json.dump({"train": train_config.to_dict(), "base_run": str(base_run), "backbone": base_cfg.backbone_name}, fh, indent=2)
    report.write(run_dir)


def load_premium(run_dir: Path) -> PremiumClassifier:
    run_dir = Path(run_dir)
    with open(run_dir / "aggregator_config.json", encoding="utf-8") as fh:
        config = AggregatorConfig.from_dict(json.load(fh))
    backbone, _ = load_backbone(run_dir / "backbone")
    state = torch.load(run_dir / "weights.bin", weights_only=True)
    token_dim = backbone.embedding_dim if config.token_source is TokenSource.EMBEDDING else NUM_CLASSES
    agg = Aggregator(token_dim, config)
    agg.load_state_dict(state)
    return PremiumClassifier(backbone, agg)
