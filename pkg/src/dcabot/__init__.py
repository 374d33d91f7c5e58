"""
This file exposes 'app' to the module.
"""

from .cli import app, run_cli
from .core import ExitCodes, print_json, state
from .errors import DcaBotError

__all__ = [
    "app",
    "run_cli",
    "ExitCodes",
    "print_json",
    "state",
    "DcaBotError",
]
