"""Minimal HTTP service scoring (query, sql) pairs with a cross-encoder."""

from .app import create_app, set_backend
from .backend import DEFAULT_MODEL, CrossEncoderBackend

__version__ = "0.1.0"
