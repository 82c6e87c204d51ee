"""Flat key=value experiment configuration.

One schema covers corpus, model, training, smoothing, and evaluation settings.
Files hold ``key=value`` lines (UTF-8, # comments allowed); command-line
overrides use the same keys. Unknown keys are fatal. The canonical text
(sorted keys) is hashed into a fingerprint that report tables carry.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .errors import ConfigError
from .mixup import parse_lambda_dist

_POLICIES = ("random", "easy_to_hard", "hard_to_easy")
_VARIANTS = ("embed", "hidden", "span")
_SMOOTHING = ("none", "uniform_ls", "ils")
_FORMATS = ("tsv", "jsonl")


@dataclass(frozen=True)
class RunConfig:
    data_path: str = ""
    data_format: str = "tsv"
    test_path: str = ""
    test_format: str = "tsv"
    shots_per_class: int = 10
    dev_fraction: float = 0.25
    min_freq: int = 1
    max_len: int = 128
    embed_dim: int = 64
    num_blocks: int = 2
    hidden_dim: int = 64
    batch_size: int = 32
    stage1_lr: float = 1e-3
    stage2_lr: float = 2e-4
    weight_decay: float = 1e-4
    warmup_fraction: float = 0.10
    stage1_epochs: int = 30
    stage2_epochs: int = 20
    selection_policy: str = "easy_to_hard"
    mix_variant: str = "embed"
    mix_layer: int = 1
    lambda_dist: str = "beta(0.2)"
    smoothing: str = "ils"
    alpha: float = 0.1
    rescore_every_epoch: bool = False
    append_originals: bool = False
    seed: int = 1
    seeds: str = "1,2,3,4,5"
    run_name: str = "run"
    prepared_dir: str = ""

    def __post_init__(self):
        _check(self.data_format in _FORMATS, f"data_format must be one of {_FORMATS}")
        _check(self.test_format in _FORMATS, f"test_format must be one of {_FORMATS}")
        _check(self.shots_per_class >= 1, "shots_per_class must be >= 1")
        _check(0.0 < self.dev_fraction < 1.0, "dev_fraction must be in (0, 1)")
        _check(self.min_freq >= 1, "min_freq must be >= 1")
        for key in ("max_len", "embed_dim", "num_blocks", "hidden_dim"):
            _check(getattr(self, key) >= 1, f"{key} must be >= 1")
        _check(self.embed_dim == self.hidden_dim, "embed_dim must equal hidden_dim")
        _check(self.batch_size >= 1, "batch_size must be >= 1")
        _check(self.stage1_lr > 0 and self.stage2_lr > 0, "learning rates must be > 0")
        _check(self.weight_decay >= 0, "weight_decay must be >= 0")
        _check(0.0 <= self.warmup_fraction < 1.0, "warmup_fraction must be in [0, 1)")
        _check(self.stage1_epochs >= 0 and self.stage2_epochs >= 0, "epochs must be >= 0")
        _check(self.selection_policy in _POLICIES, f"selection_policy must be one of {_POLICIES}")
        _check(self.mix_variant in _VARIANTS, f"mix_variant must be one of {_VARIANTS}")
        _check(0 <= self.mix_layer <= self.num_blocks, "mix_layer must be in [0, num_blocks]")
        _check(self.smoothing in _SMOOTHING, f"smoothing must be one of {_SMOOTHING}")
        _check(0.0 <= self.alpha <= 1.0, "alpha must be in [0, 1]")
        _check(self.seed >= 0, "seed must be >= 0")
        parse_lambda_dist(self.lambda_dist)
        self.seed_list()  # validates

    def seed_list(self) -> list[int]:
        try:
            out = [int(s) for s in self.seeds.split(",") if s.strip()]
        except ValueError as exc:
            raise ConfigError(f"seeds must be a comma list of integers, got {self.seeds!r}") from exc
        if not out or any(s < 0 for s in out):
            raise ConfigError(f"seeds must be non-negative integers, got {self.seeds!r}")
        return out

    def to_text(self) -> str:
        lines = []
        for f in sorted(fields(self), key=lambda f: f.name):
            lines.append(f"{f.name}={_format_value(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    def fingerprint(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()[:12]

    def with_overrides(self, overrides: dict[str, str]) -> "RunConfig":
        typed = {key: _parse_value(key, raw) for key, raw in overrides.items()}
        try:
            return replace(self, **typed)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


def _check(ok: bool, message: str) -> None:
    if not ok:
        raise ConfigError(message)


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def known_keys() -> list[str]:
    return sorted(_FIELD_TYPES)


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_value(key: str, raw: str):
    if key not in _FIELD_TYPES:
        raise ConfigError(f"unknown config key: {key}")
    kind = _FIELD_TYPES[key]
    raw = raw.strip()
    if kind == "bool":
        lowered = raw.lower()
        if lowered in ("true", "1", "yes", "on"):
            return True
        if lowered in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"{key}: expected {kind}, got {raw!r}") from exc
    return raw


def parse_config_text(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, _, value = stripped.partition("=")
        out[key.strip()] = value.strip()
    return out


def load_config(path=None, overrides: dict[str, str] | None = None) -> RunConfig:
    """Defaults, then the file, then overrides; every key schema-checked."""
    cfg = RunConfig()
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        cfg = cfg.with_overrides(parse_config_text(text))
    if overrides:
        cfg = cfg.with_overrides(overrides)
    return cfg
