"""Exception hierarchy shared by every rgi module.

Each error carries the exit code the command line reports for it.
"""

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NON_FINITE = 4
EXIT_FORMAT = 5


class RgiError(Exception):
    """Base class for all rgi errors."""

    exit_code = 1


# Geometry / simulation
class DegeneratePolygon(RgiError):
    exit_code = EXIT_CONFIG


class MicOutsideRoom(RgiError):
    exit_code = EXIT_CONFIG


# Configuration and I/O
class InvalidConfig(RgiError):
    exit_code = EXIT_CONFIG


class IoFailure(RgiError):
    exit_code = EXIT_IO


class TruncatedFile(RgiError):
    exit_code = EXIT_IO


class BadMagic(RgiError):
    exit_code = EXIT_FORMAT


class VersionMismatch(RgiError):
    exit_code = EXIT_FORMAT


# Numerics
class AllZeroInput(RgiError):
    exit_code = EXIT_CONFIG


class ShapeMismatch(RgiError):
    exit_code = EXIT_FORMAT


class CacheMismatch(RgiError):
    pass


class BothZero(RgiError):
    pass


class NonFiniteGradient(RgiError):
    exit_code = EXIT_NON_FINITE


# Metrics
class EmptyDataset(RgiError):
    exit_code = EXIT_CONFIG


class NoPredictedWalls(RgiError):
    pass


class ZeroNormalEstimate(RgiError):
    pass


def exit_code_for(exc: BaseException) -> int:
    """Map an exception raised inside a subcommand to its exit code."""
    if isinstance(exc, RgiError):
        return exc.exit_code
    if isinstance(exc, OSError):
        return EXIT_IO
    return 1
