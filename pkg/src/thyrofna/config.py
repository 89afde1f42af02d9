"""JSON run configuration, validated against the bundled schema."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema

from .aggregator import AggregatorConfig
from .core import SplitSpec
from .errors import ConfigError, ValidationError
from .proposals import Backend, ProposerConfig
from .training import TrainConfig


def schema() -> dict:
    return json.loads(resources.files(__package__).joinpath("config_schema.json").read_text(encoding="utf-8"))


@dataclass(frozen=True)
class PipelineConfig:
    manifest: Path
    split: SplitSpec = SplitSpec()
    proposer: ProposerConfig = ProposerConfig()
    augment: bool = True
    augment_seed: int = 0
    curriculum: bool = True
    schedule_seed: int = 0
    train: TrainConfig = TrainConfig()
    aggregator: AggregatorConfig = AggregatorConfig()
    aggregator_train: TrainConfig = TrainConfig()
    explain_alpha: float = 0.4
    explain_colormap: str = "inferno"
    raw: dict = field(default_factory=dict, compare=False)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.raw, sort_keys=True).encode()).hexdigest()


def _key_path(error: jsonschema.ValidationError) -> str:
    parts = [str(p) for p in error.absolute_path]
    if error.validator == "additionalProperties":
        extra = sorted(set(error.instance) - set(error.schema.get("properties", {})))
        parts += extra[:1]
    elif error.validator == "required":
        parts.append(error.message.split("'")[1])
    return ".".join(parts) or "<root>"


def parse_config(data: dict, base_dir: Path = Path(".")) -> PipelineConfig:
    errors = sorted(jsonschema.Draft202012Validator(schema()).iter_errors(data), key=lambda e: list(e.absolute_path))
    if errors:
        raise ConfigError(_key_path(errors[0]), errors[0].message)
    d = data["data"]
    try:
        split = SplitSpec(d.get("split_seed", 42), tuple(d.get("ratios", (0.70, 0.15, 0.15))))
    except ValidationError as exc:
        raise ConfigError("data.ratios", str(exc)) from None
    p = dict(data.get("proposer", {}))
    if "backend" in p:
        p["backend"] = Backend(p["backend"])
    if "proposal_file" in p:
        p["proposal_file"] = (base_dir / p["proposal_file"]).resolve()
    try:
        proposer = ProposerConfig(**p)
    except ValidationError as exc:
        raise ConfigError("proposer", str(exc)) from None
    agg = dict(data.get("aggregator", {}))
    agg_train = agg.pop("train", {})
    train_section = data.get("train", {})
    return PipelineConfig(
        manifest=(base_dir / d["manifest"]).resolve(),
        split=split,
        proposer=proposer,
        augment=data.get("augmentation", {}).get("enabled", True),
        augment_seed=data.get("augmentation", {}).get("seed", 0),
        curriculum=data.get("schedule", {}).get("curriculum", True),
        schedule_seed=data.get("schedule", {}).get("seed", 0),
        train=TrainConfig.from_dict(train_section),
        aggregator=AggregatorConfig.from_dict(agg),
        aggregator_train=TrainConfig.from_dict({**train_section, **agg_train}, prefix="aggregator.train"),
        explain_alpha=data.get("explain", {}).get("alpha", 0.4),
        explain_colormap=data.get("explain", {}).get("colormap", "inferno"),
        raw=data,
    )


def load_config(path) -> PipelineConfig:
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError("<root>", f"invalid JSON: {exc}") from None
    return parse_config(data, path.parent)
