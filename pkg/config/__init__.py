"""
Configuration package for the multi-domain restoration framework.

This package provides process-level settings loaded from environment
variables, plus the default YAML experiment file.
"""

from .settings import (
    ApplicationSettings,
    settings,
    Environment,
    LogLevel,
    CONFIG_DIR,
)

__all__ = [
    'ApplicationSettings',
    'settings',
    'Environment',
    'LogLevel',
    'CONFIG_DIR',
]
