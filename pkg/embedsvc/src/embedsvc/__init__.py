"""embedsvc: text/image/joint embedding HTTP service and offline populator."""

__version__ = "0.1.0"

from .config import ServiceConfig
from .service import create_app

__all__ = ["ServiceConfig", "create_app"]
