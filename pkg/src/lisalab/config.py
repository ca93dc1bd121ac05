"""Run configuration: a strict, versioned YAML schema.

Unknown keys are errors at every level (this catches silent hyperparameter
typos), method-specific sections must be present exactly when the method
needs them, and the parsed snapshot hashes canonically for the manifest.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path

import yaml

from .data import DatasetDescriptor
from .errors import ConfigError
from .instrument import MODEL_PRESETS
from .lora import LoRAConfig
from .model import ModelConfig
from .optim import MOMENT_POLICIES, AdamWConfig

SCHEMA_VERSION = 1
OUTPUT_ROOT_ENV = "LISALAB_OUTPUT_ROOT"

# Desk-scale model presets; the named paper-scale presets live in
# instrument.MODEL_PRESETS and are shared here.
DESK_PRESETS = {
    "desk-small": ModelConfig(64, 32, 64, 4, 4),
    "desk-8block": ModelConfig(64, 32, 64, 4, 8),
    # Vocabulary-dominated variant: preserves the vocab >> 12*dim regime of
    # real GPT-2 checkpoints, where embedding/head tables dwarf a block.
    "desk-bigvocab": ModelConfig(28000, 64, 32, 4, 4),
}

METHODS = ("full", "lora", "lisa")


@dataclass(frozen=True)
class ScheduleSection:
    mode: str = "fixed_gamma"
    gamma: int = 2
    period: int = 10
    moment_policy: str = "discard"
    seed: int | None = None  # defaults to the run seed
    always_active: tuple[int, ...] | None = None

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "gamma": self.gamma,
            "period": self.period,
            "moment_policy": self.moment_policy,
            "seed": self.seed,
            "always_active": list(self.always_active) if self.always_active else None,
        }


@dataclass(frozen=True)
class InstrumentSection:
    norm_every: int = 1
    bytes_per_param: int = 8

    def to_dict(self) -> dict:
        return {"norm_every": self.norm_every, "bytes_per_param": self.bytes_per_param}


@dataclass(frozen=True)
class RunConfig:
    method: str
    seed: int
    steps: int
    batch_size: int
    output_dir: str
    model: ModelConfig
    data: DatasetDescriptor
    optimizer: AdamWConfig
    lora: LoRAConfig | None = None
    schedule: ScheduleSection | None = None
    instrument: InstrumentSection = InstrumentSection()

    def snapshot(self) -> dict:
        return {
            "config_version": SCHEMA_VERSION,
            "method": self.method,
            "seed": self.seed,
            "steps": self.steps,
            "batch_size": self.batch_size,
            "output_dir": self.output_dir,
            "model": self.model.to_dict(),
            "data": self.data.to_dict(),
            "optimizer": self.optimizer.to_dict(),
            "lora": self.lora.to_dict() if self.lora else None,
            "schedule": self.schedule.to_dict() if self.schedule else None,
            "instrument": self.instrument.to_dict(),
        }

    def config_hash(self) -> str:
        canon = json.dumps(self.snapshot(), sort_keys=True)
        return hashlib.sha256(canon.encode()).hexdigest()

    def resolved_output_dir(self) -> Path:
        root = os.environ.get(OUTPUT_ROOT_ENV)
        if root:
            return Path(root) / self.output_dir
        return Path(self.output_dir)


def _require(mapping: dict, key: str, where: str):
    if key not in mapping:
        raise ConfigError(f"{where}: missing required key {key!r}")
    return mapping[key]


def _check_keys(mapping: dict, allowed: set[str], where: str) -> None:
    unknown = set(mapping) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")


def _as_int(value, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{where}: expected an integer, got {value!r}")
    return value


def _coerce_floats(section: dict, keys: set[str], where: str) -> dict:
    # YAML 1.1 reads dot-less scientific notation ("5e-05") as a string.
    out = dict(section)
    for key in keys & set(out):
        val = out[key]
        if isinstance(val, str):
            try:
                out[key] = float(val)
            except ValueError:
                raise ConfigError(
                    f"{where}.{key}: expected a number, got {val!r}"
                ) from None
    return out


def parse_model_section(section, where: str = "model") -> ModelConfig:
    if isinstance(section, str):
        presets = {**MODEL_PRESETS, **DESK_PRESETS}
        if section not in presets:
            raise ConfigError(
                f"{where}: unknown preset {section!r}; available: {sorted(presets)}"
            )
        return presets[section]
    if not isinstance(section, dict):
        raise ConfigError(f"{where}: expected a preset name or a mapping")
    if "preset" in section:
        _check_keys(section, {"preset"}, where)
        return parse_model_section(section["preset"], where)
    allowed = {
        "vocab_size", "max_seq_len", "model_dim", "num_heads",
        "num_blocks", "mlp_ratio", "tie_embeddings",
    }
    _check_keys(section, allowed, where)
    try:
        return ModelConfig(**section)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _parse_data(section, where: str = "data") -> DatasetDescriptor:
    if not isinstance(section, dict):
        raise ConfigError(f"{where}: expected a mapping")
    allowed = {
        "kind", "vocab_size", "seq_len", "num_samples", "seed",
        "path", "vocab_policy", "train_fraction",
    }
    _check_keys(section, allowed, where)
    _require(section, "kind", where)
    try:
        return DatasetDescriptor(**section)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _parse_optimizer(section, where: str = "optimizer") -> AdamWConfig:
    if section is None:
        return AdamWConfig()
    if not isinstance(section, dict):
        raise ConfigError(f"{where}: expected a mapping")
    allowed = {"lr", "beta1", "beta2", "eps", "weight_decay", "decay_matrices_only"}
    _check_keys(section, allowed, where)
    section = _coerce_floats(
        section, {"lr", "beta1", "beta2", "eps", "weight_decay"}, where
    )
    try:
        return AdamWConfig(**section)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _parse_lora(section, where: str = "lora") -> LoRAConfig:
    if not isinstance(section, dict):
        raise ConfigError(f"{where}: expected a mapping")
    _check_keys(section, {"rank", "alpha", "include_head"}, where)
    section = _coerce_floats(section, {"alpha"}, where)
    try:
        return LoRAConfig(**section)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _parse_schedule(section, where: str = "schedule") -> ScheduleSection:
    if not isinstance(section, dict):
        raise ConfigError(f"{where}: expected a mapping")
    allowed = {"mode", "gamma", "period", "moment_policy", "seed", "always_active"}
    _check_keys(section, allowed, where)
    mode = section.get("mode", "fixed_gamma")
    if mode not in ("fixed_gamma", "bernoulli"):
        raise ConfigError(f"{where}: unknown mode {mode!r}")
    policy = section.get("moment_policy", "discard")
    if policy not in MOMENT_POLICIES:
        raise ConfigError(f"{where}: unknown moment_policy {policy!r}")
    aa = section.get("always_active")
    return ScheduleSection(
        mode=mode,
        gamma=_as_int(section.get("gamma", 2), f"{where}.gamma"),
        period=_as_int(section.get("period", 10), f"{where}.period"),
        moment_policy=policy,
        seed=section.get("seed"),
        always_active=tuple(aa) if aa is not None else None,
    )


def _parse_instrument(section, where: str = "instrument") -> InstrumentSection:
    if section is None:
        return InstrumentSection()
    if not isinstance(section, dict):
        raise ConfigError(f"{where}: expected a mapping")
    _check_keys(section, {"norm_every", "bytes_per_param"}, where)
    return InstrumentSection(
        norm_every=_as_int(section.get("norm_every", 1), f"{where}.norm_every"),
        bytes_per_param=_as_int(
            section.get("bytes_per_param", 8), f"{where}.bytes_per_param"
        ),
    )


def parse_run_config(raw: dict, source: str = "<config>") -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    allowed = {
        "config_version", "method", "seed", "steps", "batch_size", "output_dir",
        "model", "data", "optimizer", "lora", "schedule", "instrument",
    }
    _check_keys(raw, allowed, source)
    version = _require(raw, "config_version", source)
    if version != SCHEMA_VERSION:
        raise ConfigError(
            f"{source}: config_version {version!r} unsupported (expected {SCHEMA_VERSION})"
        )
    method = _require(raw, "method", source)
    if method not in METHODS:
        raise ConfigError(f"{source}: method must be one of {METHODS}, got {method!r}")
    steps = _as_int(_require(raw, "steps", source), f"{source}.steps")
    if steps < 1:
        raise ConfigError(f"{source}: steps must be >= 1")
    batch = _as_int(raw.get("batch_size", 8), f"{source}.batch_size")
    if batch < 1:
        raise ConfigError(f"{source}: batch_size must be >= 1")
    seed = _as_int(raw.get("seed", 0), f"{source}.seed")

    if method == "lora" and "lora" not in raw:
        raise ConfigError(f"{source}: method 'lora' requires a lora section")
    if method == "lisa" and "schedule" not in raw:
        raise ConfigError(f"{source}: method 'lisa' requires a schedule section")
    if method != "lora" and raw.get("lora") is not None:
        raise ConfigError(f"{source}: lora section only valid for method 'lora'")
    if method != "lisa" and raw.get("schedule") is not None:
        raise ConfigError(f"{source}: schedule section only valid for method 'lisa'")

    model = parse_model_section(_require(raw, "model", source))
    data = _parse_data(_require(raw, "data", source))
    if data.kind != "text_file" and data.vocab_size > model.vocab_size:
        raise ConfigError(
            f"{source}: data vocab {data.vocab_size} exceeds model vocab "
            f"{model.vocab_size}"
        )
    if data.seq_len > model.max_seq_len:
        raise ConfigError(
            f"{source}: data seq_len {data.seq_len} exceeds model max_seq_len "
            f"{model.max_seq_len}"
        )
    cfg = RunConfig(
        method=method,
        seed=seed,
        steps=steps,
        batch_size=batch,
        output_dir=str(_require(raw, "output_dir", source)),
        model=model,
        data=data,
        optimizer=_parse_optimizer(raw.get("optimizer")),
        lora=_parse_lora(raw["lora"]) if method == "lora" else None,
        schedule=_parse_schedule(raw["schedule"]) if method == "lisa" else None,
        instrument=_parse_instrument(raw.get("instrument")),
    )
    if cfg.schedule is not None and not 0 <= cfg.schedule.gamma <= model.num_blocks:
        raise ConfigError(
            f"{source}: gamma {cfg.schedule.gamma} out of range "
            f"[0, {model.num_blocks}]"
        )
    return cfg


def load_run_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML: {exc}") from exc
    return parse_run_config(raw, source=str(path))
