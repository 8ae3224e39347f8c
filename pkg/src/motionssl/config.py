"""Run configuration: model/training/generation dataclasses plus the
key=value config-file format and dotted-key command-line overrides.

Config files are plain text, one ``section.key = value`` per line, with
``#`` comments.  Sections are ``model``, ``train``, ``generate``.  The
same dotted keys work as ``--set`` overrides.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path


class ConfigError(ValueError):
    """Bad config file, unknown key, or unparseable value."""


@dataclasses.dataclass
class ModelConfig:
    width: int = 256
    heads: int = 8
    window: int | None = 32
    ff_hidden: int = 1024
    agent_depth: int = 3
    lane_depth: int = 6
    light_depth: int = 1
    latent_count: int = 128          # early-fusion latent tokens
    early_self_depth: int = 2        # self-attention blocks among latents
    decoder_depth: int = 3           # pre-training reconstruction decoder blocks
    projector_hidden: int = 2048
    projector_out: int = 256
    k_modes: int = 6
    head_depth: int = 2

    def __post_init__(self):
        if self.width % self.heads:
            raise ConfigError(f"model.width {self.width} not divisible by model.heads {self.heads}")
        if self.k_modes < 1:
            raise ConfigError("model.k_modes must be >= 1")


@dataclasses.dataclass
class TrainConfig:
    fusion: str = "late"                                  # late | early
    objectives: tuple[str, ...] = ("similarity", "reconstruction")
    similarity_weight: float = 0.01
    redundancy_weight: float = 0.005
    epsilon_std: float = 1e-5
    recon_agent_weight: float = 1.0
    recon_lane_weight: float = 1.0
    recon_light_weight: float = 1.0
    mask_ratio: float = 0.6
    huber_delta: float = 1.0
    loss_scope: str = "masked"                            # masked | all
    conf_weight: float = 1.0
    redundancy_threshold: float = 2.0
    redundancy_penalty: float = 0.5
    lr: float = 1e-4
    weight_decay: float = 0.01
    clip_norm: float = 1.0
    lr_decay: float = 0.5
    lr_step_epochs: int = 25
    batch_size: int = 32
    epochs: int = 20
    seed: int = 0
    checkpoint_every: int = 0                             # epochs; 0 = final only

    def __post_init__(self):
        if self.fusion not in ("late", "early"):
            raise ConfigError(f"train.fusion must be 'late' or 'early', got {self.fusion!r}")
        bad = set(self.objectives) - {"similarity", "reconstruction"}
        if bad:
            raise ConfigError(f"unknown objectives {sorted(bad)}; valid: similarity, reconstruction")
        if self.loss_scope not in ("masked", "all"):
            raise ConfigError(f"train.loss_scope must be 'masked' or 'all', got {self.loss_scope!r}")
        if not 0.0 <= self.mask_ratio < 1.0:
            raise ConfigError("train.mask_ratio must be in [0, 1)")
        if self.lr <= 0:
            raise ConfigError("train.lr must be positive")
        for name in ("similarity_weight", "redundancy_weight", "recon_agent_weight",
                     "recon_lane_weight", "recon_light_weight", "conf_weight"):
            if getattr(self, name) < 0:
                raise ConfigError(f"train.{name} must be >= 0")
        if self.epsilon_std <= 0:
            raise ConfigError("train.epsilon_std must be > 0")
        if self.batch_size < 2:
            raise ConfigError("train.batch_size must be >= 2 (correlation needs a batch)")


@dataclasses.dataclass
class GenerateConfig:
    dialect: str = "dialect-W"
    scenes: int = 512
    seed: int = 0
    agents: int = 4
    lanes: int = 6
    lights: int = 2
    lane_points: int = 10
    overwrite: bool = False

    def __post_init__(self):
        if self.scenes < 1:
            raise ConfigError("generate.scenes must be >= 1")
        if self.agents < 1 or self.lanes < 1 or self.lights < 0:
            raise ConfigError("generate counts must be >= (1 agent, 1 lane, 0 lights)")


_SECTIONS = {"model": ModelConfig, "train": TrainConfig, "generate": GenerateConfig}


def _coerce(section: str, key: str, raw: str):
    cls = _SECTIONS[section]
    fields = {f.name: f for f in dataclasses.fields(cls)}
    if key not in fields:
        raise ConfigError(f"unknown config key {section}.{key}")
    raw = raw.strip()
    ftype = fields[key].type
    if key == "objectives":
        parts = tuple(p.strip() for p in raw.split(",") if p.strip())
        return parts
    if key == "window":
        return None if raw.lower() in ("none", "null") else int(raw)
    try:
        if ftype == "int":
            return int(raw)
        if ftype == "float":
            return float(raw)
        if ftype == "bool":
            if raw.lower() in ("true", "1", "yes", "on"):
                return True
            if raw.lower() in ("false", "0", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        return raw
    except ValueError as e:
        raise ConfigError(f"bad value for {section}.{key}: {e}") from None


def _parse_line(line: str, where: str) -> tuple[str, str, str] | None:
    text = line.split("#", 1)[0].strip()
    if not text:
        return None
    if "=" not in text:
        raise ConfigError(f"{where}: expected 'section.key = value', got {line.strip()!r}")
    dotted, value = text.split("=", 1)
    dotted = dotted.strip()
    if "." not in dotted:
        raise ConfigError(f"{where}: key {dotted!r} needs a section prefix (model./train./generate.)")
    section, key = dotted.split(".", 1)
    if section not in _SECTIONS:
        raise ConfigError(f"{where}: unknown section {section!r}")
    return section, key, value


def load_config(path=None, overrides: list[str] | None = None
                ) -> tuple[ModelConfig, TrainConfig, GenerateConfig]:
    """Build configs from defaults, an optional file, then overrides.

    Overrides are ``section.key=value`` strings (the CLI's --set values)
    and win over the file.
    """
    values: dict[str, dict] = {s: {} for s in _SECTIONS}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        for lineno, line in enumerate(p.read_text().splitlines(), 1):
            parsed = _parse_line(line, f"{p}:{lineno}")
            if parsed:
                section, key, value = parsed
                values[section][key] = _coerce(section, key, value)
    for ov in overrides or []:
        parsed = _parse_line(ov, f"override {ov!r}")
        if parsed is None:
            raise ConfigError(f"empty override {ov!r}")
        section, key, value = parsed
        values[section][key] = _coerce(section, key, value)
    try:
        return (ModelConfig(**values["model"]),
                TrainConfig(**values["train"]),
                GenerateConfig(**values["generate"]))
    except TypeError as e:
        raise ConfigError(str(e)) from None


def config_to_dict(cfg) -> dict:
    return dataclasses.asdict(cfg)


def model_config_from_dict(d: dict) -> ModelConfig:
    d = dict(d)
    if d.get("window") is not None:
        d["window"] = int(d["window"])
    return ModelConfig(**d)


def train_config_from_dict(d: dict) -> TrainConfig:
    d = dict(d)
    d["objectives"] = tuple(d.get("objectives", ()))
    return TrainConfig(**d)
