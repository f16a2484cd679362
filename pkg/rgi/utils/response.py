"""Standardized command responses."""

import json
import sys
import traceback
from dataclasses import dataclass
from typing import Any, Optional


@dataclass
class Response:
    payload: dict
    exit_code: int

    def emit(self, stream=None) -> int:
        """Write the payload as JSON and hand back the exit code."""
        stream = stream or sys.stdout
        stream.write(json.dumps(self.payload, indent=2, default=_jsonable) + "\n")
        stream.flush()
        return self.exit_code


def create_response(
    content: Optional[Any] = None,
    messages: Optional[list[str]] = None,
    error: Optional[Any] = None,
    exit_code: int = 0,
) -> Response:
    """
    Create a standardized command response with content, messages, and error handling.

    Args:
        content: The main result data (dict or any JSON-serializable type)
        messages: List of informational messages
        error: Error information (string or dict with message and traceback)
        exit_code: Process exit code reported by the command line

    Returns:
        Response carrying the payload and the exit code
    """
    response_data = {
        "content": content,
        "messages": messages or [],
        "error": error,
    }
    return Response(payload=response_data, exit_code=exit_code)


def error_info(exc: BaseException) -> dict:
    """Describe an exception the same way for every subcommand."""
    return {
        "message": str(exc),
        "traceback": traceback.format_exc(),
        "type": type(exc).__name__,
    }


def _jsonable(value):
    # numpy scalars and arrays end up in content dicts
    if hasattr(value, "tolist"):
        return value.tolist()
    return str(value)
