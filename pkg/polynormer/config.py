"""
Configuration models and the flat key=value run-config format.

Process-level settings are read from the environment (optionally via a
.env file) with os.getenv defaults.
"""
from enum import Enum
from pathlib import Path
from typing import Dict, Optional, Tuple, Union
import logging
import os

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError

logger = logging.getLogger(__name__)

load_dotenv()

LOG_LEVEL = os.getenv("POLYNORMER_LOG_LEVEL", "INFO")
DEFAULT_SEED = int(os.getenv("POLYNORMER_SEED", "0"))
VERIFY_WORKERS = int(os.getenv("POLYNORMER_VERIFY_WORKERS", "4"))
MAX_DENSE_NODES = int(os.getenv("POLYNORMER_MAX_DENSE_NODES", "2000"))


class Activation(str, Enum):
    NONE = "none"
    RELU = "relu"


class Variant(str, Enum):
    V1 = "v1"
    V2 = "v2"


class LocalKind(str, Enum):
    GAT = "gat"
    GCN = "gcn"


class Scheme(str, Enum):
    LOCAL_TO_GLOBAL = "local-to-global"
    LOCAL_AND_GLOBAL = "local-and-global"


class Stage(str, Enum):
    WARMUP = "warmup"
    FULL = "full"


class Metric(str, Enum):
    ACCURACY = "accuracy"
    AUC = "auc"


class ModelConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    input_dim: int = Field(..., gt=0, description="Input feature dimension d_in")
    hidden_dim: int = Field(..., gt=0, description="Hidden width d")
    local_layers: int = Field(..., ge=1, description="Number of local attention layers L1")
    global_layers: int = Field(0, ge=0, description="Number of global attention layers L2")
    heads: int = Field(1, ge=1, description="Attention heads H")
    num_classes: int = Field(..., ge=2, description="Class count c")
    dropout: float = Field(0.0, ge=0.0, lt=1.0)
    activation: Activation = Activation.NONE
    variant: Variant = Variant.V1
    local_kind: LocalKind = LocalKind.GAT
    scheme: Scheme = Scheme.LOCAL_TO_GLOBAL

    @model_validator(mode="after")
    def check_heads(self):
        if self.hidden_dim % self.heads != 0:
            raise ValueError(f"hidden_dim {self.hidden_dim} is not divisible by heads {self.heads}")
        return self

    @property
    def head_dim(self) -> int:
        return self.hidden_dim // self.heads

    def to_text(self) -> str:
        return "\n".join(f"{k}={_plain(v)}" for k, v in self.model_dump().items())


class TrainConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    warmup_epochs: int = Field(0, ge=0)
    main_epochs: int = Field(100, ge=0)
    learning_rate: float = Field(0.001, gt=0.0)
    dropout: Optional[float] = Field(None, ge=0.0, lt=1.0, description="Overrides the model's dropout")
    batch_parts: int = Field(1, ge=1, description="Random partitions per epoch; 1 is full batch")
    seed: int = 0
    beta1: float = Field(0.9, ge=0.0, lt=1.0)
    beta2: float = Field(0.999, ge=0.0, lt=1.0)
    adam_eps: float = Field(1e-8, gt=0.0)
    metric: Metric = Metric.ACCURACY


def _plain(value) -> str:
    return value.value if isinstance(value, Enum) else str(value)


_MODEL_KEYS = ("hidden_dim", "local_layers", "global_layers", "heads", "dropout",
               "activation", "variant", "local_kind", "scheme")
_TRAIN_KEYS = ("warmup_epochs", "main_epochs", "learning_rate", "batch_parts", "seed",
               "beta1", "beta2", "adam_eps", "metric")
REQUIRED_TRAIN_KEYS = ("hidden_dim", "local_layers", "global_layers", "heads", "main_epochs")


class RunConfig(BaseModel):
    """Flat experiment configuration; keys mirror the per-dataset hyperparameter table"""
    model_config = ConfigDict(extra="forbid")

    hidden_dim: Optional[int] = Field(None, gt=0)
    local_layers: Optional[int] = Field(None, ge=1)
    global_layers: Optional[int] = Field(None, ge=0)
    heads: Optional[int] = Field(None, ge=1)
    dropout: float = Field(0.0, ge=0.0, lt=1.0)
    activation: Activation = Activation.NONE
    variant: Variant = Variant.V1
    local_kind: LocalKind = LocalKind.GAT
    scheme: Scheme = Scheme.LOCAL_TO_GLOBAL
    warmup_epochs: int = Field(0, ge=0)
    main_epochs: Optional[int] = Field(None, ge=0)
    learning_rate: float = Field(0.001, gt=0.0)
    batch_parts: int = Field(1, ge=1)
    seed: Optional[int] = None
    beta1: float = Field(0.9, ge=0.0, lt=1.0)
    beta2: float = Field(0.999, ge=0.0, lt=1.0)
    adam_eps: float = Field(1e-8, gt=0.0)
    metric: Metric = Metric.ACCURACY

    @field_validator("activation", "variant", "local_kind", "scheme", "metric", mode="before")
    @classmethod
    def lower_enums(cls, v):
        return v.strip().lower() if isinstance(v, str) else v

    def require(self, keys: Tuple[str, ...] = REQUIRED_TRAIN_KEYS) -> None:
        for key in keys:
            if getattr(self, key) is None:
                raise ConfigError(f"missing required key '{key}'", key=key)

    def model_config_for(self, input_dim: int, num_classes: int) -> ModelConfig:
        self.require(REQUIRED_TRAIN_KEYS)
        values = {k: getattr(self, k) for k in _MODEL_KEYS}
        try:
            return ModelConfig(input_dim=input_dim, num_classes=num_classes, **values)
        except ValidationError as exc:
            raise ConfigError(_first_error(exc)) from exc

    def train_config(self, seed: Optional[int] = None) -> TrainConfig:
        self.require(REQUIRED_TRAIN_KEYS)
        values = {k: getattr(self, k) for k in _TRAIN_KEYS}
        if seed is not None:
            values["seed"] = seed
        elif values["seed"] is None:
            values["seed"] = DEFAULT_SEED
        return TrainConfig(dropout=self.dropout, **values)


def _first_error(exc: ValidationError) -> str:
    err = exc.errors()[0]
    loc = ".".join(str(p) for p in err.get("loc", ()))
    return f"{loc}: {err.get('msg', 'invalid value')}" if loc else err.get("msg", "invalid value")


def parse_key_values(text: str) -> Dict[str, str]:
    pairs: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got '{line}'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in pairs:
            raise ConfigError(f"line {lineno}: duplicate key '{key}'", key=key)
        pairs[key] = value
    return pairs


def load_run_config(path: Union[str, Path]) -> RunConfig:
    return parse_run_config(Path(path).read_text(encoding="utf-8"))


def parse_run_config(text: str) -> RunConfig:
    """Parse key=value text into a RunConfig"""
    pairs = parse_key_values(text)
    try:
        return RunConfig(**pairs)
    except ValidationError as exc:
        err = exc.errors()[0]
        key = str(err["loc"][0]) if err.get("loc") else None
        if err.get("type") == "extra_forbidden":
            raise ConfigError(f"unknown key '{key}'", key=key) from exc
        raise ConfigError(_first_error(exc), key=key) from exc
