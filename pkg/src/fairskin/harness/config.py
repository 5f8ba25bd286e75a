"""Experiment configuration: parsing, method mapping, canonical hashing.

Configs are line-oriented ``key = value`` text with ``#`` comment lines.
Every key can also be overridden on the command line by a flag of the same
name.  A config resolves to a canonical text form (fixed key order,
method-determined fields filled in), and the run identity is the SHA-256
prefix of that text, so reordering a config file never changes the hash.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace

from ..data import RACES, Race
from ..errors import ConfigError
from ..resampling import Scheme

METHODS = ("none", "vanilla", "cbrs", "sqrs", "cbdm", "fairskin-c", "fairskin-s")

# method -> (level-1 scheme, gamma default, level-3 reweighting)
_METHOD_MAP: dict[str, tuple[Scheme | None, float, bool]] = {
    "none": (None, 0.0, False),
    "vanilla": (Scheme.UNIFORM, 0.0, False),
    "cbrs": (Scheme.CBRS, 0.0, False),
    "sqrs": (Scheme.SQRS, 0.0, False),
    "cbdm": (Scheme.UNIFORM, 0.1, False),
    "fairskin-c": (Scheme.CBRS, 0.1, True),
    "fairskin-s": (Scheme.SQRS, 0.1, True),
}
_GAMMA_POSITIVE = ("cbdm", "fairskin-c", "fairskin-s")


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    method: str = "vanilla"
    height: int = 16
    width: int = 16
    manifest: str = ""
    image_dir: str = ""
    t_steps: int = 100
    dm_steps: int = 20000
    dm_batch: int = 32
    dm_lr: float = 1e-3
    weight_mode: str = "sample"
    gamma: float = -1.0  # sentinel; resolved from method when unset
    aug_total: int = 1500
    aug_proportions: str = ""
    clf_epochs: int = 10
    clf_batch: int = 64
    clf_lr: float = 1e-3
    reweight_mode: str = "loss"
    feature_source: str = "classifier"
    fid_grouping: str = "race"
    eval_split: str = "validation"

    @property
    def scheme(self) -> Scheme | None:
        return _METHOD_MAP[self.method][0]

    @property
    def reweight(self) -> bool:
        return _METHOD_MAP[self.method][2]

    @property
    def uses_dm(self) -> bool:
        return self.method != "none"

    def race_proportions(self) -> dict[Race, float] | None:
        """Parsed ``aug_proportions`` (African:Asian:Caucasian), or None."""
        if not self.aug_proportions:
            return None
        parts = self.aug_proportions.split(":")
        if len(parts) != 3:
            raise ConfigError(
                f"aug_proportions {self.aug_proportions!r} must be three ':'-separated numbers"
            )
        try:
            vals = [float(p) for p in parts]
        except ValueError as exc:
            raise ConfigError(f"aug_proportions {self.aug_proportions!r} is not numeric") from exc
        return {Race.AFRICAN: vals[0], Race.ASIAN: vals[1], Race.CAUCASIAN: vals[2]}

    def canonical(self) -> str:
        """Canonical text form: every key, fixed order, resolved values."""
        lines = []
        for key, (_, kind) in _SCHEMA.items():
            value = getattr(self, key)
            if kind is float:
                value = repr(float(value))
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"

    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:12]


_SCHEMA: dict[str, tuple[object, type]] = {
    "seed": (0, int),
    "method": ("vanilla", str),
    "height": (16, int),
    "width": (16, int),
    "manifest": ("", str),
    "image_dir": ("", str),
    "t_steps": (100, int),
    "dm_steps": (20000, int),
    "dm_batch": (32, int),
    "dm_lr": (1e-3, float),
    "weight_mode": ("sample", str),
    "gamma": (-1.0, float),
    "aug_total": (1500, int),
    "aug_proportions": ("", str),
    "clf_epochs": (10, int),
    "clf_batch": (64, int),
    "clf_lr": (1e-3, float),
    "reweight_mode": ("loss", str),
    "feature_source": ("classifier", str),
    "fid_grouping": ("race", str),
    "eval_split": ("validation", str),
}

_CHOICES = {
    "method": METHODS,
    "weight_mode": ("sample", "loss"),
    "reweight_mode": ("loss", "resample"),
    "feature_source": ("classifier", "projection"),
    "fid_grouping": ("race", "subcategory"),
    "eval_split": ("validation", "test"),
}


def parse_config_text(text: str) -> dict[str, str]:
    """Raw key -> value strings from ``key = value`` lines."""
    out: dict[str, str] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {line_no}: expected 'key = value', got {raw!r}")
        key = key.strip()
        if key not in _SCHEMA:
            raise ConfigError(f"line {line_no}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"line {line_no}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def build_config(raw: dict[str, str]) -> ExperimentConfig:
    """Typed, validated, method-resolved config from raw string values."""
    values: dict = {}
    for key, value in raw.items():
        if key not in _SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        _, kind = _SCHEMA[key]
        if kind is str:
            values[key] = value
        else:
            try:
                values[key] = kind(value)
            except ValueError as exc:
                raise ConfigError(f"key {key!r}: cannot parse {value!r} as {kind.__name__}") from exc
    cfg = ExperimentConfig(**values)
    return resolve(cfg, gamma_given="gamma" in raw)


def resolve(cfg: ExperimentConfig, gamma_given: bool) -> ExperimentConfig:
    """Apply the method mapping and validate field consistency."""
    if cfg.method not in METHODS:
        raise ConfigError(f"unknown method {cfg.method!r}; choose from {', '.join(METHODS)}")
    for key, choices in _CHOICES.items():
        if getattr(cfg, key) not in choices:
            raise ConfigError(f"key {key!r} must be one of {', '.join(choices)}")
    for key in ("height", "width"):
        if getattr(cfg, key) < 8:
            raise ConfigError(f"{key} must be >= 8")
    for key in ("t_steps", "dm_steps", "dm_batch", "clf_epochs", "clf_batch"):
        if getattr(cfg, key) <= 0:
            raise ConfigError(f"{key} must be positive")
    for key in ("dm_lr", "clf_lr"):
        if getattr(cfg, key) <= 0:
            raise ConfigError(f"{key} must be positive")
    if cfg.aug_total < 0:
        raise ConfigError("aug_total must be >= 0")
    gamma_default = _METHOD_MAP[cfg.method][1]
    if not gamma_given:
        gamma = gamma_default
    else:
        gamma = cfg.gamma
        if gamma < 0:
            raise ConfigError("gamma must be >= 0")
        if cfg.method in _GAMMA_POSITIVE and gamma <= 0:
            raise ConfigError(f"method {cfg.method!r} requires gamma > 0")
        if cfg.method not in _GAMMA_POSITIVE and gamma != 0:
            raise ConfigError(f"method {cfg.method!r} fixes gamma = 0")
    updates: dict = {"gamma": gamma}
    if cfg.method == "none":
        updates |= {"aug_total": 0, "aug_proportions": "", "weight_mode": "sample"}
    cfg = replace(cfg, **updates)
    if cfg.aug_proportions:
        props = cfg.race_proportions()
        total = sum(props.values())
        if abs(total - 1.0) > 1e-9:
            raise ConfigError(f"aug_proportions sum to {total}, expected 1")
    if bool(cfg.manifest) != bool(cfg.image_dir):
        raise ConfigError("manifest and image_dir must be given together")
    return cfg


def load_config(path=None, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    """Config from a file (optional) plus CLI overrides (optional)."""
    raw: dict[str, str] = {}
    if path is not None:
        with open(path) as fh:
            raw = parse_config_text(fh.read())
    for key, value in (overrides or {}).items():
        if value is not None:
            raw[key] = str(value)
    return build_config(raw)


def make_config(**kwargs) -> ExperimentConfig:
    """Resolved config from keyword fields; unknown keys are rejected."""
    for key in kwargs:
        if key not in _SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
    return resolve(ExperimentConfig(**kwargs), gamma_given="gamma" in kwargs)


def config_keys() -> list[str]:
    return list(_SCHEMA)
