"""HTTP forecasting service over frozen checkpoints."""

from .app import create_app

__all__ = ["create_app"]
