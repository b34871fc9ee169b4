"""
Configuration for IsoFormer.

Runtime settings come from the environment; experiment settings resolve
from defaults, key=value files and command-line flags.
"""

from .run_config import (
    ResolvedConfig,
    dump_config_text,
    flatten,
    format_value,
    load_model_config,
    parse_config_text,
    resolve_config,
    unflatten,
)
from .settings import Settings, configure_logging, get_settings

__all__ = [
    'ResolvedConfig',
    'Settings',
    'configure_logging',
    'dump_config_text',
    'flatten',
    'format_value',
    'get_settings',
    'load_model_config',
    'parse_config_text',
    'resolve_config',
    'unflatten',
]
