"""
Configuration and logging setup for flow-edit-lab.

Experiment parameters live in the run-config document (see flow_edit_lab.schemas.run);
the settings below only change how runs are observed, never what they compute.
"""

import logging
import sys
from contextvars import ContextVar

from pydantic_settings import BaseSettings, SettingsConfigDict
from pythonjsonlogger import jsonlogger

# Set by RunIdMiddleware for the duration of a run
current_run_id: ContextVar[str] = ContextVar("current_run_id", default="")


# Settings configuration
class Settings(BaseSettings):
    """Operational settings loaded from .env or FLOW_EDIT_LAB_* environment variables."""

    log_level: str = "INFO"
    log_json: bool = True
    # Write <output_dir>/metrics.prom after every run
    metrics_textfile: bool = True

    model_config = SettingsConfigDict(env_file=".env", env_prefix="FLOW_EDIT_LAB_", extra="ignore")


settings = Settings()


# Structured JSON logging configuration
class CustomJsonFormatter(jsonlogger.JsonFormatter):
    """Custom JSON formatter with additional fields."""

    def add_fields(self, log_record: dict, record: logging.LogRecord, message_dict: dict) -> None:  # type: ignore[override]
        """Add custom fields to log records."""
        super().add_fields(log_record, record, message_dict)
        log_record["service"] = "flow-edit-lab"
        log_record["level"] = record.levelname
        log_record["run_id"] = current_run_id.get()


def configure_logging(level: str | None = None, json_format: bool | None = None) -> logging.Logger:
    """
    (Re)configure the package logger.

    Args:
        level: Log level name; defaults to settings.log_level.
        json_format: Emit JSON records; defaults to settings.log_json.

    Returns:
        logging.Logger: The configured "flow_edit_lab" logger.
    """
    use_json = settings.log_json if json_format is None else json_format
    handler = logging.StreamHandler(sys.stderr)
    if use_json:
        handler.setFormatter(
            CustomJsonFormatter(
                "%(asctime)s %(level)s %(name)s %(message)s",
                datefmt="%Y-%m-%d %H:%M:%S",
            )
        )
    else:
        handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s %(message)s"))

    configured = logging.getLogger("flow_edit_lab")
    for existing in list(configured.handlers):
        configured.removeHandler(existing)
    configured.setLevel((level or settings.log_level).upper())
    configured.addHandler(handler)
    configured.propagate = False
    return configured


logger = configure_logging()
