"""Single JSON run configuration with strict key checking.

A run config has five sections plus the seed; unknown keys anywhere are
rejected so a typo cannot silently fall back to a default. The effective
(fully defaulted) form is serialized into every stage report, and its hash
identifies the run.

  {
    "seed": 0,
    "data":        { SyntheticSpec fields },
    "space":       { "num_cells": 1, "steps_per_cell": 2, "hidden_dim": 16 },
    "contrastive": { ContrastiveConfig fields },
    "search":      { SearchConfig fields, minus seed },
    "pipeline":    { PipelineConfig fields }
  }
"""

from __future__ import annotations

import dataclasses
import json
import subprocess
from dataclasses import dataclass, field

from . import __version__
from .bilevel import SearchConfig
from .contrastive import ContrastiveConfig
from .data import SyntheticSpec
from .pipeline import PipelineConfig
from .searchspace import SearchSpaceConfig
from .util import canonical_json, short_hash


class ConfigError(ValueError):
    pass


def _build(cls, section: dict, path: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(section) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) {unknown} in config section {path!r}")
    try:
        return cls(**section)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid config section {path!r}: {e}") from e


@dataclass(frozen=True)
class SpaceSection:
    """Search-space knobs; feature dims always come from the dataset."""

    num_cells: int = 1
    steps_per_cell: int = 2
    hidden_dim: int = 16

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    data: SyntheticSpec = field(default_factory=SyntheticSpec)
    space: SpaceSection = field(default_factory=SpaceSection)
    contrastive: ContrastiveConfig = field(default_factory=ContrastiveConfig)
    search: SearchConfig = field(default_factory=SearchConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {"seed", "data", "space", "contrastive", "search", "pipeline"}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown top-level config key(s) {unknown}")
        search_section = dict(d.get("search", {}))
        if "seed" in search_section:
            raise ConfigError("set the run seed at the top level, not under 'search'")
        return cls(
            seed=int(d.get("seed", 0)),
            data=_build(SyntheticSpec, dict(d.get("data", {})), "data"),
            space=_build(SpaceSection, dict(d.get("space", {})), "space"),
            contrastive=_build(ContrastiveConfig, dict(d.get("contrastive", {})), "contrastive"),
            search=_build(SearchConfig, search_section, "search"),
            pipeline=_build(PipelineConfig, dict(d.get("pipeline", {})), "pipeline"),
        )

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        try:
            with open(path) as fh:
                d = json.load(fh)
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {path} is not valid JSON: {e}") from e
        if not isinstance(d, dict):
            raise ConfigError("config file must hold a JSON object")
        return cls.from_dict(d)

    def with_seed(self, seed: int) -> "RunConfig":
        return dataclasses.replace(self, seed=int(seed))

    def to_dict(self) -> dict:
        d = self.search.to_dict()
        d.pop("seed")
        return {
            "seed": self.seed,
            "data": self.data.to_dict(),
            "space": self.space.to_dict(),
            "contrastive": self.contrastive.to_dict(),
            "search": d,
            "pipeline": self.pipeline.to_dict(),
        }

    def hash(self) -> str:
        return short_hash(self.to_dict())

    def canonical(self) -> str:
        return canonical_json(self.to_dict())

    def space_config(self, image_dims, text_dims) -> SearchSpaceConfig:
        return SearchSpaceConfig(
            modality_names=("image", "text"),
            features_per_modality=(tuple(image_dims), tuple(text_dims)),
            num_cells=self.space.num_cells,
            steps_per_cell=self.space.steps_per_cell,
            hidden_dim=self.space.hidden_dim,
        )

    def search_config(self) -> SearchConfig:
        return SearchConfig(**{**self.search.to_dict(), "seed": self.seed})


def build_id() -> str:
    """Version plus the working-tree descriptor when git is available."""
    base = f"mmnas-{__version__}"
    try:
        desc = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True,
            text=True,
            timeout=5,
            check=False,
        )
        if desc.returncode == 0 and desc.stdout.strip():
            return f"{base}+{desc.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return base
