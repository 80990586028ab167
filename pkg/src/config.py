"""Runtime settings: defaults, YAML file, PETRI_* environment variables and CLI flags."""

from pathlib import Path
from typing import Any, ClassVar, Dict, Literal, Optional, Tuple, Type, Union

import structlog
import yaml
from pydantic import Field, model_validator
from pydantic.fields import FieldInfo
from pydantic_settings import BaseSettings, PydanticBaseSettingsSource, SettingsConfigDict

from .models import MaskMode

logger = structlog.get_logger()

DEFAULT_CONFIG_FILE = Path("configs/runtime.yaml")

ProducerKind = Literal["scripted", "synthetic", "remote"]


class YamlSettingsSource(PydanticBaseSettingsSource):
    """Settings source reading a flat YAML mapping."""

    def __init__(self, settings_cls: Type[BaseSettings], path: Optional[Path]):
        super().__init__(settings_cls)
        self.path = path
        self.data = self._load()

    def _load(self) -> Dict[str, Any]:
        if self.path is None or not self.path.exists():
            return {}
        data = yaml.safe_load(self.path.read_text(encoding="utf-8")) or {}
        if not isinstance(data, dict):
            raise ValueError(f"config file {self.path} must contain a mapping")
        logger.debug(f"Loaded settings from {self.path}: {sorted(data)}")
        return data

    def get_field_value(self, field: FieldInfo, field_name: str) -> Tuple[Any, str, bool]:
        return self.data.get(field_name), field_name, False

    def __call__(self) -> Dict[str, Any]:
        return dict(self.data)


class RuntimeSettings(BaseSettings):
    """Policy flags, worker limits and producer selection."""

    model_config = SettingsConfigDict(env_prefix="PETRI_", extra="forbid")

    yaml_file: ClassVar[Optional[Path]] = None

    single_conclusion: bool = True
    chain_cap: int = Field(10, ge=0, description="Maximum chains kept after de-duplication; 0 = unlimited")
    strict_dedup: bool = True
    workers: int = Field(4, ge=1)
    producer: ProducerKind = "synthetic"
    endpoint: Optional[str] = None
    remote_timeout_seconds: float = Field(30.0, gt=0)
    max_tokens: int = Field(256, ge=1)
    seed: int = 0
    step_tokens_min: int = Field(50, ge=1)
    step_tokens_max: int = Field(200, ge=1)
    mask_mode: MaskMode = MaskMode.LAYER

    @model_validator(mode="after")
    def check_consistency(self) -> "RuntimeSettings":
        if self.step_tokens_min > self.step_tokens_max:
            raise ValueError("step_tokens_min must not exceed step_tokens_max")
        if self.producer == "remote" and not self.endpoint:
            raise ValueError("producer 'remote' requires an endpoint")
        return self

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: Type[BaseSettings],
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ) -> Tuple[PydanticBaseSettingsSource, ...]:
        return (init_settings, env_settings, YamlSettingsSource(settings_cls, cls.yaml_file))


def load_settings(path: Optional[Union[str, Path]] = None, **flags: Any) -> RuntimeSettings:
    """Resolve settings with precedence flags > environment > file > defaults.

    Flags set to None are treated as not given.
    """
    config_path = Path(path) if path is not None else None

    class _FileBackedSettings(RuntimeSettings):
        yaml_file: ClassVar[Optional[Path]] = config_path

    overrides = {key: value for key, value in flags.items() if value is not None}
    settings = _FileBackedSettings(**overrides)
    logger.debug(f"Resolved settings (file={config_path}, flags={sorted(overrides)})")
    return settings
