import copy
import logging
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence

import yaml
from dotenv import load_dotenv

from errors import ConfigError

ROUTINGS = ("fixed", "literal")
FUSION_MODES = ("jfm", "concat")
MODALITIES = ("text_audio", "text", "audio")
AUDIO_POSITIONS = ("none", "sinusoidal")

# Keys whose defaults are artifact decisions rather than published values.
DECISION_DEFAULT_KEYS = ("icl.tau", "icl.lambda", "icl.normalize")


@dataclass
class ModelConfig:
    model_dim: int = 64
    heads: int = 4
    ff_multiplier: int = 4
    init_std: float = 0.02


@dataclass
class AudioConfig:
    sample_rate: int = 16000
    frame_len: int = 400
    hop: int = 160
    fft_size: int = 512
    n_mels: int = 80
    f_min: float = 0.0
    f_max: Optional[float] = None
    patch_time: int = 4
    patch_freq: int = 16
    positions: str = "none"


@dataclass
class TextConfig:
    max_tokens: int = 64
    extractor_layers: int = 2
    extractor_heads: int = 8
    source_dim: int = 768
    use_adapter: bool = True
    embeddings: Optional[str] = None


@dataclass
class FusionConfig:
    blocks: int = 2
    joint_length: int = 4
    routing: str = "fixed"


@dataclass
class ICLConfig:
    tau: float = 0.07
    lambda_icl: float = 1.0
    normalize: bool = True
    raw_similarity: bool = False

    @property
    def use_normalization(self) -> bool:
        return self.normalize and not self.raw_similarity


@dataclass
class OptimConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class TrainConfig:
    batch_size: int = 32
    epochs: int = 30
    seed: int = 0
    stop_at_train_accuracy: Optional[float] = None
    loss_window: int = 20
    loss_warmup: int = 10
    loss_smoothing: float = 0.8


@dataclass
class AblationConfig:
    no_jfm: bool = False
    no_joint: bool = False
    no_icl: bool = False
    fusion_mode: str = "jfm"
    modality: str = "text_audio"


@dataclass
class DataConfig:
    classes: List[str] = field(default_factory=lambda: ["neutral", "happy", "sad", "angry"])
    split: List[float] = field(default_factory=lambda: [0.8, 0.1, 0.1])


@dataclass
class SweepConfig:
    blocks_grid: List[int] = field(default_factory=lambda: [1, 2, 3, 4, 5])
    joint_grid: List[int] = field(default_factory=lambda: [1, 2, 4, 8, 16, 24, 32])


@dataclass
class SynthConfig:
    n: int = 1000
    class_weights: List[float] = field(default_factory=lambda: [0.55, 0.25, 0.12, 0.08])
    min_seconds: float = 0.2
    max_seconds: float = 0.45
    seed: int = 7


@dataclass
class RunConfig:
    """Main config object holding every section of a run."""
    model: ModelConfig = field(default_factory=ModelConfig)
    audio: AudioConfig = field(default_factory=AudioConfig)
    text: TextConfig = field(default_factory=TextConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    icl: ICLConfig = field(default_factory=ICLConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)
    data: DataConfig = field(default_factory=DataConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    overridden: List[str] = field(default_factory=list, compare=False)

    @property
    def effective_joint_length(self) -> int:
        return 0 if self.ablation.no_joint else self.fusion.joint_length

    @property
    def icl_active(self) -> bool:
        return not self.ablation.no_icl and self.icl.lambda_icl > 0.0

    @property
    def uses_jfm(self) -> bool:
        return not self.ablation.no_jfm and self.ablation.fusion_mode == "jfm"

    def validate(self) -> "RunConfig":
        """Check every module precondition before any work starts."""
        problems = []
        d = self.model.model_dim
        if d < 1 or self.model.heads < 1 or d % self.model.heads:
            problems.append(f"model.model_dim {d} must be divisible by model.heads {self.model.heads}")
        if self.text.extractor_heads < 1 or d % self.text.extractor_heads:
            problems.append(f"model.model_dim {d} must be divisible by text.extractor_heads "
                            f"{self.text.extractor_heads}")
        if self.text.extractor_layers < 1:
            problems.append("text.extractor_layers must be at least 1")
        if self.text.max_tokens < 1:
            problems.append("text.max_tokens must be at least 1")
        if self.uses_jfm and self.fusion.blocks < 1:
            problems.append("fusion.blocks must be >= 1 on the JFM path (use ablation.no_jfm for late fusion)")
        if self.fusion.joint_length < 0:
            problems.append("fusion.joint_length must be >= 0")
        if self.fusion.routing not in ROUTINGS:
            problems.append(f"fusion.routing must be one of {ROUTINGS}")
        if self.ablation.fusion_mode not in FUSION_MODES:
            problems.append(f"ablation.fusion_mode must be one of {FUSION_MODES}")
        if self.ablation.modality not in MODALITIES:
            problems.append(f"ablation.modality must be one of {MODALITIES}")
        if self.ablation.no_jfm and self.ablation.fusion_mode == "concat":
            problems.append("ablation.no_jfm and ablation.fusion_mode=concat select different fusion paths")
        if not self.uses_jfm and self.ablation.modality != "text_audio":
            problems.append("single-modality runs need the JFM path (ablation.modality=text_audio otherwise)")
        if self.audio.positions not in AUDIO_POSITIONS:
            problems.append(f"audio.positions must be one of {AUDIO_POSITIONS}")
        if self.audio.frame_len > self.audio.fft_size or self.audio.hop < 1:
            problems.append("audio.frame_len must be <= audio.fft_size and audio.hop >= 1")
        if self.audio.patch_time < 1 or self.audio.patch_freq < 1:
            problems.append("audio.patch_time and audio.patch_freq must be >= 1")
        if self.icl.tau <= 0:
            problems.append(f"icl.tau must be > 0, got {self.icl.tau}")
        if self.icl.lambda_icl < 0:
            problems.append(f"icl.lambda must be >= 0, got {self.icl.lambda_icl}")
        if self.optim.lr <= 0:
            problems.append("optim.lr must be > 0")
        if self.train.batch_size < 1 or self.train.epochs < 1:
            problems.append("train.batch_size and train.epochs must be >= 1")
        if len(self.data.classes) < 2 or len(set(self.data.classes)) != len(self.data.classes):
            problems.append("data.classes must hold at least two distinct names")
        if len(self.data.split) != 3 or min(self.data.split) < 0 or abs(sum(self.data.split) - 1.0) > 1e-9:
            problems.append(f"data.split must be three non-negative fractions summing to 1, got {self.data.split}")
        if problems:
            raise ConfigError("invalid configuration: " + "; ".join(problems))
        return self

    def to_dict(self) -> Dict[str, Any]:
        raw = asdict(self)
        raw.pop("overridden", None)
        raw["icl"]["lambda"] = raw["icl"].pop("lambda_icl")
        return raw

    def with_overrides(self, overrides: Mapping[str, Any]) -> "RunConfig":
        """Return a validated copy with dotted-key overrides applied."""
        merged = self.to_dict()
        for dotted, value in overrides.items():
            _assign_dotted(merged, dotted, value)
        config = dict_to_run_config(merged)
        config.overridden = sorted(set(self.overridden) | set(overrides))
        return config.validate()

    def decision_defaults_in_use(self) -> List[str]:
        return [key for key in DECISION_DEFAULT_KEYS if key not in self.overridden]


_SECTIONS = {
    "model": ModelConfig, "audio": AudioConfig, "text": TextConfig, "fusion": FusionConfig,
    "icl": ICLConfig, "optim": OptimConfig, "train": TrainConfig, "ablation": AblationConfig,
    "data": DataConfig, "sweep": SweepConfig, "synth": SynthConfig,
}


def _assign_dotted(target: Dict[str, Any], dotted: str, value: Any) -> None:
    parts = dotted.split(".")
    node = target
    for part in parts[:-1]:
        if not isinstance(node.get(part), dict):
            raise ConfigError(f"unknown configuration section in '{dotted}'")
        node = node[part]
    node[parts[-1]] = value


def _build_section(cls, data: Mapping[str, Any], section: str):
    values = dict(data or {})
    if cls is ICLConfig and "lambda" in values:
        values["lambda_icl"] = values.pop("lambda")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown keys in section '{section}': {unknown}")
    return cls(**values)


def dict_to_run_config(config_dict: Mapping[str, Any]) -> RunConfig:
    """Convert configuration dictionary to typed RunConfig dataclass."""
    unknown = sorted(set(config_dict) - set(_SECTIONS))
    if unknown:
        raise ConfigError(f"unknown configuration sections: {unknown}")
    sections = {name: _build_section(cls, config_dict.get(name, {}), name) for name, cls in _SECTIONS.items()}
    return RunConfig(**sections)


def parse_override(assignment: str) -> Dict[str, Any]:
    """Parse ``dotted.key=value``; the value is read as YAML (numbers, bools, lists)."""
    if "=" not in assignment:
        raise ConfigError(f"override '{assignment}' must look like section.key=value")
    key, raw_value = assignment.split("=", 1)
    try:
        return {key.strip(): yaml.safe_load(raw_value)}
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse value of override '{assignment}': {exc}") from exc


class ConfigManager:
    """
    @brief Layered configuration loader
    @details Precedence (lowest first): config/defaults.yaml, config/<env>.yaml
    for ``JFERC_ENV`` (from the environment or a ``.env`` file), an optional
    user file (JSON or YAML), then explicit dotted overrides.
    """

    def __init__(self, environment: Optional[str] = None, config_dir: Optional[Path] = None):
        load_dotenv()
        self.environment = environment or os.getenv('JFERC_ENV', 'production')
        self.config_dir = Path(config_dir) if config_dir else Path(__file__).resolve().parent.parent.parent / 'config'

    def load(self, user_file: Optional[str] = None, overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
        base_config_path = self.config_dir / 'defaults.yaml'
        if not base_config_path.exists():
            raise FileNotFoundError(f"Base configuration file not found at {base_config_path}")
        config_data = self._read(base_config_path) or {}

        env_config_path = self.config_dir / f'{self.environment}.yaml'
        if self.environment != 'production' and env_config_path.exists():
            config_data = self._merge_configs(config_data, self._read(env_config_path) or {})

        overridden: List[str] = []
        if user_file:
            user_data = self._read(Path(user_file)) or {}
            config_data = self._merge_configs(config_data, user_data)
            overridden.extend(_flatten_keys(user_data))

        for dotted, value in (overrides or {}).items():
            _assign_dotted(config_data, dotted, value)
            overridden.append(dotted)

        config = dict_to_run_config(config_data)
        config.overridden = sorted(set(overridden))
        logging.debug(f"Loaded configuration for environment '{self.environment}'")
        return config.validate()

    @staticmethod
    def _read(path: Path) -> Dict[str, Any]:
        if not path.exists():
            raise FileNotFoundError(f"Configuration file not found at {path}")
        try:
            with open(path, 'r', encoding='utf-8') as f:
                return yaml.safe_load(f)
        except yaml.YAMLError as exc:
            raise ConfigError(f"Failed to parse configuration {path}: {exc}") from exc

    def _merge_configs(self, base: dict, override: dict) -> dict:
        """Deep merge configuration dictionaries."""
        base = copy.deepcopy(base)
        for key, value in override.items():
            if isinstance(value, dict) and key in base and isinstance(base[key], dict):
                base[key] = self._merge_configs(base[key], value)
            else:
                base[key] = value
        return base


def _flatten_keys(data: Mapping[str, Any], prefix: str = "") -> Sequence[str]:
    keys = []
    for key, value in data.items():
        dotted = f"{prefix}{key}"
        if isinstance(value, dict):
            keys.extend(_flatten_keys(value, dotted + "."))
        else:
            keys.append(dotted)
    return keys


def load_config(user_file: Optional[str] = None, overrides: Optional[Mapping[str, Any]] = None,
                environment: Optional[str] = None) -> RunConfig:
    """Convenience wrapper around ConfigManager().load()."""
    return ConfigManager(environment=environment).load(user_file=user_file, overrides=overrides)
