"""Shared rich console and logging setup"""

import logging

from rich.console import Console
from rich.logging import RichHandler

console = Console(stderr=True)  # Use stderr for progress/info so stdout remains clean

LOGGER_NAME = "gdfm_vol"


def get_logger(name: str) -> logging.Logger:
    """Child logger under the package namespace"""
    return logging.getLogger(f"{LOGGER_NAME}.{name}")


def setup_logging(verbose: bool = False) -> None:
    """Route package logs through the shared console"""
    root = logging.getLogger(LOGGER_NAME)
    root.setLevel(logging.DEBUG if verbose else logging.INFO)
    if not any(isinstance(h, RichHandler) for h in root.handlers):
        handler = RichHandler(console=console, show_path=False, markup=True, rich_tracebacks=True)
        handler.setFormatter(logging.Formatter("%(message)s"))
        root.addHandler(handler)
