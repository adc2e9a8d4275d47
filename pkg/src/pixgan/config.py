"""Flat ``key = value`` configuration files.

Blank lines and ``#`` comments are ignored. Values are coerced to the type of
the matching dataclass field; unknown keys are errors.
"""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass
from pathlib import Path


class ConfigError(ValueError):
    """Unknown key, bad value, or unresolvable reference in a config."""


def _coerce(raw: str, kind, key: str):
    origin = typing.get_origin(kind)
    if origin is tuple or kind is tuple:
        args = typing.get_args(kind)
        inner = args[0] if args else str
        parts = [p for p in raw.replace(",", " ").split() if p]
        return tuple(_coerce(p, inner, key) for p in parts)
    try:
        if kind is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind.__name__}") from None
    return raw


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_pairs(text: str) -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def from_pairs(cls, pairs: dict, **overrides):
    hints = typing.get_type_hints(cls)
    known = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, raw in pairs.items():
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        kwargs[key] = _coerce(raw, hints[key], key)
    kwargs.update({k: v for k, v in overrides.items() if v is not None})
    return cls(**kwargs)


def dump(obj) -> str:
    lines = [f"{f.name} = {_format(getattr(obj, f.name))}" for f in dataclasses.fields(obj)]
    return "\n".join(lines) + "\n"


def load(cls, path, **overrides):
    return from_pairs(cls, parse_pairs(Path(path).read_text()), **overrides)


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce a run.

    ``dataset`` is ``shapes``, ``texture``, ``subsurface`` (synthetic
    generators) or a path to an ``.npy``/``.npz`` archive or PNG directory.
    ``data_seed`` fixes the dataset and its constraint maps; ``seed`` drives
    initialisation and training, so a sweep over seeds shares one dataset.
    """

    dataset: str = "shapes"
    dataset_size: int = 512
    validation_size: int = 64
    test_size: int = 64
    texture_source: str = ""
    arch: str = "dcgan16"
    lam: float = 1.0
    constraint_density: float = 0.005
    noise_sigma: float = 0.0
    latent_distribution: str = "uniform"
    batch_size: int = 32
    epochs: int = 10
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    optimizer: str = "adam"
    pac: int = 1
    pac_generator_step: str = "paired"
    loss_variant: str = "saturating"
    conditional_d: bool = False
    d_input_noise: float = 0.1
    seed: int = 0
    data_seed: int = 0
    backend: str = "random-projection"
    backend_dim: int = 16
    max_lag: int = 64
    diversity_pairs: int = 8
    lambda_grid: tuple[float, ...] = (0.0, 1.0, 10.0)
    seeds: tuple[int, ...] = (0, 1, 2)
    out_dir: str = "runs"

    def __post_init__(self):
        from .zoo import ARCHITECTURES

        if self.arch not in ARCHITECTURES:
            raise ConfigError(f"arch: unknown architecture {self.arch!r}; "
                              f"choose from {', '.join(sorted(ARCHITECTURES))}")
        if self.lam < 0:
            raise ConfigError("lam: must be >= 0")
        if self.pac not in (1, 2):
            raise ConfigError("pac: must be 1 or 2")
        if self.backend not in ("random-projection", "cnn"):
            raise ConfigError(f"backend: unknown feature backend {self.backend!r}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be >= 1")


# full-protocol sweep: 10 repetitions per lambda
PAPER_SWEEP_SEEDS = tuple(range(10))
