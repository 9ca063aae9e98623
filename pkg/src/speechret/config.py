"""Experiment configuration: one dataclass tree, a flat text file format,
and key-path overrides.

Config files hold ``section.key = value`` lines (``#`` comments allowed).
Key paths mirror the dataclass tree, e.g.::

    corpus.num_items = 2000
    train.weights.vis = 0.35
    train.contrastive.margin = 0.4
    model.conv_channels = 32,64,128
    sweep.fractions = 0.01,0.05,0.25,1.0
    out_dir = runs

Command-line ``--set key=value`` overrides beat the file; dedicated flags
beat both.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field

from .corpus import CorpusConfig
from .errors import ConfigError
from .model import ModelArch
from .tagger import TaggerConfig
from .training import TrainConfig

OUTPUT_ROOT_ENV = "SPEECHRET_OUT"

SYSTEMS = ("textual-baseline", "visual-baseline", "mtl")


@dataclass
class SweepConfig:
    fractions: tuple[float, ...] = (0.01, 0.05, 0.1, 0.25, 0.5, 1.0)
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    systems: tuple[str, ...] = SYSTEMS

    def validate(self) -> None:
        if not self.fractions:
            raise ConfigError("sweep: need at least one fraction")
        for f in self.fractions:
            if not 0.0 < f <= 1.0:
                raise ConfigError(f"sweep: fraction {f} outside (0, 1]")
        if not self.seeds:
            raise ConfigError("sweep: need at least one seed")
        for s in self.systems:
            if s not in SYSTEMS:
                raise ConfigError(f"sweep: unknown system {s!r}")


@dataclass
class ExperimentConfig:
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    tagger: TaggerConfig = field(default_factory=TaggerConfig)
    model: ModelArch = field(default_factory=ModelArch)
    train: TrainConfig = field(default_factory=TrainConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    n_vis: int = 40
    out_dir: str = "runs"

    def validate(self) -> None:
        self.corpus.validate()
        self.train.validate()
        self.sweep.validate()
        if self.n_vis < 1:
            raise ConfigError("n_vis must be >= 1")


def _parse_like(current, raw: str, path: str):
    raw = raw.strip()
    if isinstance(current, bool):
        low = raw.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"{path}: expected a boolean, got {raw!r}")
    if isinstance(current, int):
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{path}: expected an integer, got {raw!r}") from None
    if isinstance(current, float):
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{path}: expected a number, got {raw!r}") from None
    if isinstance(current, tuple):
        parts = [p for p in raw.split(",") if p.strip()]
        sample = current[0] if current else 0.0
        return tuple(_parse_like(sample, p, path) for p in parts)
    if isinstance(current, str):
        return raw
    raise ConfigError(f"{path}: field cannot be set from text")


def _with_override(obj, parts: list[str], raw: str, path: str):
    names = {f.name for f in dataclasses.fields(obj)}
    if parts[0] not in names:
        raise ConfigError(f"unknown config key {path!r} "
                          f"(no field {parts[0]!r} on {type(obj).__name__})")
    current = getattr(obj, parts[0])
    if len(parts) == 1:
        if dataclasses.is_dataclass(current):
            raise ConfigError(f"{path}: names a section, not a value")
        value = _parse_like(current, raw, path)
    else:
        if not dataclasses.is_dataclass(current):
            raise ConfigError(f"{path}: {parts[0]} has no sub-keys")
        value = _with_override(current, parts[1:], raw, path)
    return dataclasses.replace(obj, **{parts[0]: value})


def apply_overrides(config: ExperimentConfig,
                    overrides: dict[str, str]) -> ExperimentConfig:
    for path, raw in overrides.items():
        config = _with_override(config, path.split("."), raw, path)
    return config


def parse_flat_file(path) -> dict[str, str]:
    overrides: dict[str, str] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, _, value = stripped.partition("=")
            overrides[key.strip()] = value.strip()
    return overrides


def load_experiment_config(config_path=None,
                           sets: list[str] | None = None) -> ExperimentConfig:
    """File first, then --set overrides (later entries win)."""
    config = ExperimentConfig()
    if config_path is not None:
        config = apply_overrides(config, parse_flat_file(config_path))
    for item in sets or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        config = apply_overrides(config, {key.strip(): value.strip()})
    return config


def resolve_output_path(path) -> str:
    """Relative outputs land under $SPEECHRET_OUT when it is set."""
    path = str(path)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not os.path.isabs(path):
        return os.path.join(root, path)
    return path


def paper_scale_experiment() -> ExperimentConfig:
    """Preset mirroring the published operating point: 800-frame padding,
    1000 visual tags, 1024-wide embedding, 2048-unit tagger layers. Far
    beyond desk-scale runtime; provided for completeness."""
    from .model import paper_scale_arch

    config = ExperimentConfig()
    config = dataclasses.replace(
        config,
        corpus=dataclasses.replace(config.corpus, t_max=800),
        tagger=dataclasses.replace(config.tagger,
                                   hidden=(2048, 2048, 2048, 2048)),
        model=paper_scale_arch(),
        n_vis=1000,
    )
    return dataclasses.replace(
        config, train=dataclasses.replace(config.train, n_bow=1000))
