"""Pipeline configuration: flat INI-style key/value file with sections.

Every key has a default, so ``pipeline --preset toy`` runs with zero edits.
Precedence: defaults < preset < config file < command-line overrides. The
config hash over the canonical dump goes into the run manifest.
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError


@dataclass
class PipelineConfig:
    # [data]
    records_train: str = ""
    records_val: str = ""
    records_test: str = ""
    lexicon: str = ""
    stopwords: str = ""  # empty -> packaged default list
    outdir: str = "out"
    # [toy] synthetic-corpus generation when the data paths are empty
    toy_train_size: int = 50
    toy_val_size: int = 20
    toy_test_size: int = 20
    toy_vocab_size: int = 10
    toy_filler_variants: int = 1
    toy_noise: float = 0.05
    # [miner]
    k: int = 30
    tau_merge: float = 0.0
    association_floor: float = float("-inf")
    delta: float = 0.5
    # [model]
    d_v: int = 64
    hidden_size: int = 512
    num_heads: int = 8
    ffn_size: int = 512
    dropout: float = 0.1
    planner_enc_layers: int = 3
    planner_dec_layers: int = 3
    graph_layers: int = 2
    align_layers: int = 3
    dec_blocks: int = 3
    trr_blocks: int = 1
    max_visual: int = 64
    max_plan: int = 32
    # [planner]
    alpha: float = 0.5
    planner_epochs: int = 15
    planner_lr: float = 1e-4
    # [generator]
    beta: float = 2.0
    generator_epochs: int = 15
    generator_lr: float = 1e-4
    train_plans: str = "gold"  # or "predicted"
    use_plan: bool = True
    # [beam]
    beam_size: int = 4
    max_steps: int = 64
    length_norm: float = 0.0
    # [train]
    seed: int = 0
    batch_size: int = 32
    vocab_min_count: int = 1

    def validate(self) -> None:
        if self.train_plans not in ("gold", "predicted"):
            raise ConfigError(f"train_plans must be gold|predicted, got {self.train_plans}")
        for name in ("records_train", "records_val", "records_test", "lexicon",
                     "stopwords"):
            value = getattr(self, name)
            if value and not Path(value).exists():
                raise ConfigError(f"{name} path does not exist: {value}")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


_SECTIONS = {
    "data": ("records_train", "records_val", "records_test", "lexicon",
             "stopwords", "outdir"),
    "toy": ("toy_train_size", "toy_val_size", "toy_test_size", "toy_vocab_size",
            "toy_filler_variants", "toy_noise"),
    "miner": ("k", "tau_merge", "association_floor", "delta"),
    "model": ("d_v", "hidden_size", "num_heads", "ffn_size", "dropout",
              "planner_enc_layers", "planner_dec_layers", "graph_layers",
              "align_layers", "dec_blocks", "trr_blocks", "max_visual", "max_plan"),
    "planner": ("alpha", "planner_epochs", "planner_lr"),
    "generator": ("beta", "generator_epochs", "generator_lr", "train_plans",
                  "use_plan"),
    "beam": ("beam_size", "max_steps", "length_norm"),
    "train": ("seed", "batch_size", "vocab_min_count"),
}
_KEY_TO_SECTION = {key: sec for sec, keys in _SECTIONS.items() for key in keys}

# dataset presets: decode length / pruning weight / epoch count bundles
PRESETS: dict[str, dict] = {
    "iu": {
        "max_steps": 64, "beta": 2.0, "planner_epochs": 15, "generator_epochs": 15,
    },
    "mimic": {
        "max_steps": 104, "beta": 5.0, "planner_epochs": 3, "generator_epochs": 5,
    },
    "toy": {
        "max_steps": 32, "beta": 2.0,
        "d_v": 12, "hidden_size": 32, "num_heads": 2, "ffn_size": 32,
        "dropout": 0.0, "planner_enc_layers": 1, "planner_dec_layers": 1,
        "graph_layers": 1, "align_layers": 1, "dec_blocks": 1, "trr_blocks": 1,
        "max_visual": 8, "max_plan": 16,
        "planner_epochs": 30, "planner_lr": 3e-3,
        "generator_epochs": 40, "generator_lr": 2e-3,
        "k": 8, "batch_size": 8, "beam_size": 4,
    },
}


def _coerce(name: str, raw: str, target_type: type):
    if target_type is bool:
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{name}: expected boolean, got {raw!r}")
    try:
        return target_type(raw)
    except ValueError as exc:
        raise ConfigError(f"{name}: cannot parse {raw!r} as {target_type.__name__}") from exc


def load_config(path=None, preset: str | None = None,
                overrides: dict[str, str] | None = None) -> PipelineConfig:
    cfg = PipelineConfig()
    type_map = {f.name: type(getattr(cfg, f.name)) for f in fields(cfg)}

    def apply(name: str, value) -> None:
        if name not in type_map:
            raise ConfigError(f"unknown config key: {name}")
        if isinstance(value, str):
            value = _coerce(name, value, type_map[name])
        setattr(cfg, name, value)

    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        for name, value in PRESETS[preset].items():
            apply(name, value)
    if path is not None:
        parser = configparser.ConfigParser()
        read = parser.read(path)
        if not read:
            raise ConfigError(f"config file not found: {path}")
        for section in parser.sections():
            if section not in _SECTIONS:
                raise ConfigError(f"unknown config section [{section}]")
            for key, raw in parser.items(section):
                if _KEY_TO_SECTION.get(key) != section:
                    raise ConfigError(f"key {key!r} does not belong in [{section}]")
                apply(key, raw)
    for key, raw in (overrides or {}).items():
        apply(key, raw)
    cfg.validate()
    return cfg


def dump_config(cfg: PipelineConfig) -> str:
    lines = []
    for section, keys in _SECTIONS.items():
        lines.append(f"[{section}]")
        for key in keys:
            lines.append(f"{key} = {getattr(cfg, key)}")
        lines.append("")
    return "\n".join(lines)


def config_hash(cfg: PipelineConfig) -> str:
    return hashlib.sha256(dump_config(cfg).encode("utf-8")).hexdigest()


def default_stopwords_path() -> Path:
    return Path(__file__).parent / "data" / "stopwords.txt"
