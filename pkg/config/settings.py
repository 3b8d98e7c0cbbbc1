"""
Process-level configuration for the multi-domain restoration framework.

Settings are read from environment variables (prefix ``RESTORE_``) and an
optional ``.env`` file. Experiment-level settings (architecture, training,
grid search) live in YAML experiment files, see ``lib.utils.config``.
"""

from enum import Enum
from pathlib import Path
from typing import Any, Dict, Optional

from dotenv import load_dotenv
from pydantic import AliasChoices, Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from lib.utils.errors import ConfigurationError

load_dotenv()

CONFIG_DIR = Path(__file__).parent


class Environment(str, Enum):
    """Supported environments."""
    DEVELOPMENT = "development"
    STAGING = "staging"
    PRODUCTION = "production"


class LogLevel(str, Enum):
    """Supported log levels."""
    DEBUG = "DEBUG"
    INFO = "INFO"
    WARNING = "WARNING"
    ERROR = "ERROR"
    CRITICAL = "CRITICAL"


class ApplicationSettings(BaseSettings):
    """Main application settings."""

    environment: Environment = Field(Environment.DEVELOPMENT, description="Environment")
    debug: bool = Field(False, description="Force DEBUG logging in the command-line tools")
    log_level: LogLevel = Field(LogLevel.INFO, description="Log level")
    enable_json_logs: bool = Field(False, description="Render logs as JSON")

    sentry_dsn: Optional[str] = Field(
        None,
        validation_alias=AliasChoices("RESTORE_SENTRY_DSN", "SENTRY_DSN"),
        description="Sentry DSN for error tracking",
    )

    num_workers: int = Field(
        0,
        description="Cap on input-pipeline and grid-evaluation parallelism (RESTORE_NUM_WORKERS)",
    )
    device: str = Field("auto", description="Torch device: cpu, cuda or auto")
    experiment_file: Path = Field(
        CONFIG_DIR / "experiment.yaml",
        description="Default experiment configuration file",
    )

    model_config = SettingsConfigDict(
        env_prefix="RESTORE_",
        env_file='.env',
        env_file_encoding='utf-8',
        case_sensitive=False,
        extra='ignore',
        populate_by_name=True,
    )

    @field_validator('num_workers')
    @classmethod
    def validate_num_workers(cls, v):
        """Validate worker cap."""
        if v < 0:
            raise ValueError('RESTORE_NUM_WORKERS must be >= 0')
        return v

    @field_validator('device')
    @classmethod
    def validate_device(cls, v):
        """Validate device name."""
        if v not in ('cpu', 'cuda', 'auto') and not v.startswith('cuda:'):
            raise ValueError("device must be 'cpu', 'cuda', 'cuda:<n>' or 'auto'")
        return v

    def is_production(self) -> bool:
        """Check if running in production environment."""
        return self.environment == Environment.PRODUCTION

    def resolve_device(self) -> str:
        """Resolve ``auto`` to a concrete torch device string."""
        if self.device != 'auto':
            return self.device
        import torch
        return 'cuda' if torch.cuda.is_available() else 'cpu'

    def get_sentry_config(self) -> Dict[str, Any]:
        """Get Sentry configuration for error tracking."""
        if not self.sentry_dsn:
            return {}
        return {
            "dsn": self.sentry_dsn,
            "environment": self.environment.value,
            "traces_sample_rate": 0.1 if self.is_production() else 1.0,
        }

    def validate_required_settings(self) -> bool:
        """Validate that the settings are usable before running a command."""
        if not self.experiment_file.exists():
            raise ConfigurationError(
                f"Experiment file not found: {self.experiment_file}",
                field="experiment_file",
            )
        if self.device.startswith('cuda'):
            import torch
            if not torch.cuda.is_available():
                raise ConfigurationError(f"Requested device {self.device} is unavailable", field="device")
        return True


# Global settings instance
settings = ApplicationSettings()
