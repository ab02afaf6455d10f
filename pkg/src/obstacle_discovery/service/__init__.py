"""HTTP service exposing the pipeline stages."""

from .app import app

__all__ = ["app"]
