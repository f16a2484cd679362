"""Utility modules for rgi."""

from .response import Response, create_response, error_info
from .log import setup_logging

__all__ = ["Response", "create_response", "error_info", "setup_logging"]
