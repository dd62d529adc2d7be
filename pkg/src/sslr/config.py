"""Run configuration: a strict flat-sectioned key-value file format.

Example::

    # lines starting with # are comments
    include = base.cfg

    [data]
    path = signs.jsonl

    [train]
    epochs = 80
    learning_rate = 0.002

Sections and keys are fixed by the schema below; an unknown section or
key is a fatal error, so typos cannot silently change an experiment.
``include`` (before the first section) pulls in another file first; later
assignments win. Command-line overrides use the same ``section.key``
addressing.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from sslr.data import JointLayout
from sslr.model import ModelConfig
from sslr.preprocess import AugmentationConfig, NormalizationConfig
from sslr.pseudolabel import SslConfig
from sslr.training import TrainConfig


class ConfigError(ValueError):
    """Invalid configuration: unknown key, bad value, or missing file."""


def _bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("true", "yes", "1", "on"):
        return True
    if lowered in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _list_of(cast):
    def parse(raw: str):
        items = [part.strip() for part in raw.split(",") if part.strip()]
        if not items:
            raise ValueError("empty list")
        return [cast(item) for item in items]

    return parse


_PARSERS = {
    "str": str,
    "int": int,
    "float": float,
    "bool": _bool,
    "list_int": _list_of(int),
    "list_float": _list_of(float),
    "list_str": _list_of(str),
}

# section -> key -> (type name, default, help)
SCHEMA: dict[str, dict[str, tuple[str, Any, str]]] = {
    "data": {
        "path": ("str", "", "pose dataset file (JSON lines)"),
    },
    "split": {
        "seed": ("int", 0, "seed for the train/val/test split and label masking"),
        "fraction": ("float", 1.0, "labeled fraction of the training pool, in (0, 1]"),
        "classes": ("int", 0, "keep only the first N classes; 0 keeps all"),
    },
    "model": {
        "hidden_dim": ("int", 108, "transformer width"),
        "num_heads": ("int", 9, "attention heads (must divide hidden_dim)"),
        "encoder_blocks": ("int", 6, "encoder depth"),
        "decoder_blocks": ("int", 6, "decoder depth"),
        "ffn_dim": ("int", 0, "feed-forward width; 0 means 2x hidden_dim"),
        "max_sequence_len": ("int", 204, "frames beyond this are truncated"),
    },
    "train": {
        "epochs": ("int", 100, "training epochs"),
        "learning_rate": ("float", 0.001, "SGD learning rate"),
        "patience": ("int", 15, "early-stop patience on validation accuracy; 0 disables"),
        "seed": ("int", 0, "training seed (shuffling, init, augmentation)"),
    },
    "ssl": {
        "inner_epochs": ("int", 60, "retraining epochs per pseudo-label cycle"),
        "max_cycles": ("int", 1000, "hard cycle limit"),
        "stall_cycles": ("int", 0, "stop after this many non-improving cycles; 0 disables"),
        "warm_start": ("bool", True, "retrain from current parameters each cycle"),
        "selection": ("str", "per_class", "per_class or global_max"),
    },
    "normalize": {
        "enabled": ("bool", True, "project into signing space"),
        "signing_space_scale": ("float", 3.0, "body box side, in head heights"),
    },
    "augment": {
        "noise": ("bool", True, "Gaussian coordinate jitter"),
        "noise_sigma": ("float", 0.001, "jitter scale (unit coordinates)"),
        "rotation": ("bool", True, "in-plane rotation"),
        "max_rotation_deg": ("float", 13.0, "rotation bound, degrees"),
        "arm_rotation": ("bool", True, "per-arm rotation about the shoulder"),
        "arm_rotation_deg": ("float", 4.0, "arm rotation bound, degrees"),
        "shear": ("bool", True, "projective squeeze of the frame"),
        "max_shear_fraction": ("float", 0.15, "squeeze bound per side"),
    },
    "matrix": {
        "fractions": ("list_float", [0.01, 0.05, 0.10, 0.25, 0.50, 0.75],
                      "labeled fractions to sweep"),
        "class_counts": ("list_int", [5, 20, 40, 60, 80, 100], "class subsets to sweep"),
        "seeds": ("list_int", [0, 1, 2], "seeds per cell; the median is reported"),
        "modes": ("list_str", ["fsl", "ssl"], "training modes to pair"),
        "workers": ("int", 1, "parallel cell workers"),
    },
    "output": {
        "dir": ("str", "out", "output directory"),
    },
}


def default_config() -> dict[str, dict[str, Any]]:
    return {
        section: {key: copy.deepcopy(spec[1]) for key, spec in keys.items()}
        for section, keys in SCHEMA.items()
    }


def _coerce(section: str, key: str, raw: str) -> Any:
    if section not in SCHEMA:
        raise ConfigError(f"unknown config section [{section}]")
    if key not in SCHEMA[section]:
        raise ConfigError(f"unknown config key {section}.{key}")
    type_name = SCHEMA[section][key][0]
    try:
        return _PARSERS[type_name](raw)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"bad value for {section}.{key}: {raw!r} ({exc})") from None


def _parse_file(path: Path, values: dict, stack: tuple[Path, ...]) -> None:
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    resolved = path.resolve()
    if resolved in stack:
        raise ConfigError(f"config include cycle through {path}")
    section: str | None = None
    for line_no, raw_line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw_line.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in SCHEMA:
                raise ConfigError(f"{path}:{line_no}: unknown config section [{section}]")
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{line_no}: expected 'key = value', got {line!r}")
        key, _, raw_value = line.partition("=")
        key = key.strip()
        raw_value = raw_value.strip()
        if section is None:
            if key == "include":
                include_path = (path.parent / raw_value).resolve()
                _parse_file(include_path, values, stack + (resolved,))
                continue
            raise ConfigError(
                f"{path}:{line_no}: key {key!r} outside any section"
                " (only 'include' is allowed there)"
            )
        values[section][key] = _coerce(section, key, raw_value)


@dataclass
class RunConfig:
    """Fully resolved configuration with typed accessors for the pipeline."""

    values: dict[str, dict[str, Any]]

    def __getitem__(self, section: str) -> dict[str, Any]:
        return self.values[section]

    def get(self, section: str, key: str) -> Any:
        return self.values[section][key]

    def set(self, dotted_key: str, raw_value: str) -> None:
        """Apply a ``section.key=value`` override with schema validation."""
        if "." not in dotted_key:
            raise ConfigError(f"override key must be section.key, got {dotted_key!r}")
        section, _, key = dotted_key.partition(".")
        self.values.setdefault(section, {})
        self.values[section][key] = _coerce(section, key, raw_value)

    def to_dict(self) -> dict:
        return copy.deepcopy(self.values)

    # -- typed views -----------------------------------------------------

    def model_config(self, num_classes: int) -> ModelConfig:
        m = self.values["model"]
        return ModelConfig(
            num_classes=num_classes,
            hidden_dim=m["hidden_dim"],
            num_heads=m["num_heads"],
            num_encoder_blocks=m["encoder_blocks"],
            num_decoder_blocks=m["decoder_blocks"],
            ffn_dim=m["ffn_dim"] or None,
            max_sequence_len=m["max_sequence_len"],
        )

    def normalization_config(self, layout: JointLayout | None = None) -> NormalizationConfig:
        n = self.values["normalize"]
        return NormalizationConfig(
            enabled=n["enabled"],
            signing_space_scale=n["signing_space_scale"],
            layout=layout or JointLayout(),
        )

    def augmentation_config(self, layout: JointLayout | None = None) -> AugmentationConfig:
        a = self.values["augment"]
        return AugmentationConfig(
            enable_noise=a["noise"],
            noise_sigma=a["noise_sigma"],
            enable_rotation=a["rotation"],
            max_rotation_deg=a["max_rotation_deg"],
            enable_arm_rotation=a["arm_rotation"],
            arm_rotation_deg=a["arm_rotation_deg"],
            enable_shear=a["shear"],
            max_shear_fraction=a["max_shear_fraction"],
            seed=self.values["train"]["seed"],
            layout=layout or JointLayout(),
        )

    def train_config(self) -> TrainConfig:
        t = self.values["train"]
        return TrainConfig(
            epochs=t["epochs"],
            learning_rate=t["learning_rate"],
            seed=t["seed"],
            patience=t["patience"],
            augmentation=self.augmentation_config(),
            normalization=self.normalization_config(),
        )

    def ssl_config(self) -> SslConfig:
        s = self.values["ssl"]
        return SslConfig(
            train=self.train_config(),
            inner_epochs=s["inner_epochs"],
            max_cycles=s["max_cycles"],
            stall_cycles=s["stall_cycles"] or None,
            warm_start=s["warm_start"],
            selection=s["selection"],
            seed=self.values["train"]["seed"],
        )


def load_config(path: str | Path | None = None,
                overrides: list[str] | None = None) -> RunConfig:
    """Defaults, then the file (with includes), then ``--set`` overrides."""
    values = default_config()
    if path is not None:
        _parse_file(Path(path), values, stack=())
    cfg = RunConfig(values=values)
    for override in overrides or []:
        if "=" not in override:
            raise ConfigError(f"--set expects section.key=value, got {override!r}")
        dotted, _, raw = override.partition("=")
        cfg.set(dotted.strip(), raw.strip())
    return cfg
