"""
Logging configuration for the multi-domain restoration framework
"""
import logging
import sys
from typing import Optional

import sentry_sdk
import structlog
from sentry_sdk.integrations.logging import LoggingIntegration

ROOT_LOGGER = "multidomain_restore"

# Third-party loggers that flood DEBUG output during plotting and NIfTI import
QUIET_LOGGERS = ("matplotlib", "PIL", "nibabel")


def setup_logging(
    level: str = "INFO",
    enable_json: bool = True,
    sentry_config: Optional[dict] = None,
) -> structlog.stdlib.BoundLogger:
    """
    Route stdlib logging and structlog events to stderr

    Args:
        level: Logging level (DEBUG, INFO, WARNING, ERROR)
        enable_json: One JSON object per event; key=value console lines otherwise
        sentry_config: Keyword arguments for sentry_sdk.init, ignored without a DSN

    Returns:
        The package root logger
    """
    log_level = getattr(logging, level.upper(), logging.INFO)

    # stdout carries command results
    logging.basicConfig(level=log_level, stream=sys.stderr, format="%(message)s", force=True)
    for name in QUIET_LOGGERS:
        logging.getLogger(name).setLevel(max(log_level, logging.WARNING))

    if sentry_config and sentry_config.get("dsn"):
        sentry_sdk.init(
            integrations=[LoggingIntegration(level=logging.INFO, event_level=logging.ERROR)],
            **sentry_config
        )

    renderer = (
        structlog.processors.JSONRenderer()
        if enable_json
        else structlog.dev.ConsoleRenderer(colors=False)
    )
    structlog.configure(
        processors=[
            structlog.stdlib.filter_by_level,
            structlog.stdlib.add_logger_name,
            structlog.stdlib.add_log_level,
            structlog.processors.TimeStamper(fmt="iso"),
            structlog.processors.format_exc_info,
            renderer,
        ],
        wrapper_class=structlog.stdlib.BoundLogger,
        logger_factory=structlog.stdlib.LoggerFactory(),
        # module-level loggers must pick up a later reconfiguration
        cache_logger_on_first_use=False,
    )

    logger = get_logger()
    logger.debug("logging_configured", level=level, json=enable_json, sentry=bool(sentry_config))
    return logger


def get_logger(name: Optional[str] = None) -> structlog.stdlib.BoundLogger:
    """Namespaced structlog logger, e.g. get_logger(__name__)"""
    return structlog.get_logger(f"{ROOT_LOGGER}.{name}" if name else ROOT_LOGGER)
