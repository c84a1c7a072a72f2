"""Service configuration: which encoder backs each embedding space."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

SPACES = ("question", "image", "joint")

DEFAULT_ENCODERS = {space: "hashed" for space in SPACES}


@dataclass(frozen=True)
class ServiceConfig:
    encoders: dict[str, str] = field(default_factory=lambda: dict(DEFAULT_ENCODERS))
    dimension: int = 384  # hashed-family dimension; real models bring their own
    max_batch: int = 64

    @classmethod
    def load(cls, path) -> "ServiceConfig":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        unknown = set(raw) - {"encoders", "dimension", "max_batch"}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        encoders = dict(DEFAULT_ENCODERS)
        encoders.update(raw.get("encoders", {}))
        bad_spaces = set(encoders) - set(SPACES)
        if bad_spaces:
            raise ValueError(f"unknown embedding spaces in config: {sorted(bad_spaces)}")
        return cls(
            encoders=encoders,
            dimension=int(raw.get("dimension", 384)),
            max_batch=int(raw.get("max_batch", 64)),
        )
