"""Network and operator surface: HTTP service, CLI, config, field cache."""

from .cache import FieldDefCache
from .config import ConfigError, PrincipalSpec, ServiceConfig, load_config
from .service import create_app

__all__ = [
    "ConfigError",
    "FieldDefCache",
    "PrincipalSpec",
    "ServiceConfig",
    "create_app",
    "load_config",
]
