"""HTTP service exposing the quoting engine."""

from .app import create_app

__all__ = ["create_app"]
