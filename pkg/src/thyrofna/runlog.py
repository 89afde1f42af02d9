"""Per-invocation run manifest (command, config, digests, timings)."""
from __future__ import annotations

import hashlib
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    argv: list[str] = field(default_factory=lambda: sys.argv[1:])
    config: dict = field(default_factory=dict)
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)
    timings: dict[str, float] = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    tool_version: str = __version__
    _t0: float = field(default_factory=time.perf_counter, repr=False)

    def add_input(self, path) -> None:
        p = Path(path)
        if p.is_file():
            self.inputs[str(p)] = file_digest(p)

    def add_output(self, path) -> None:
        p = Path(path)
        if p.is_file():
            self.outputs[str(p)] = file_digest(p)

    def add_outputs(self, root, pattern: str = "*") -> None:
        for p in sorted(Path(root).rglob(pattern)):
            if p.is_file() and p.name != "run_manifest.json":
                self.add_output(p)

    def write(self, out_dir) -> Path:
        self.timings.setdefault("total_seconds", time.perf_counter() - self._t0)
        out = Path(out_dir) / "run_manifest.json"
        out.parent.mkdir(parents=True, exist_ok=True)
        body = {k: v for k, v in self.__dict__.items() if not k.startswith("_")}
        with open(out, "w", encoding="utf-8") as fh:
            json.dump(body, fh, indent=2, sort_keys=True)
        return out
