"""Compositional multi-task module networks.

The heavy lifting lives in the C++ extension; this package re-exports the
main entry points.
"""

from ._core import (  # noqa: F401
    Engine,
    IoError,
    LevelViolation,
    ShapeError,
    ValueError,
    normalize_config,
    __version__,
)

__all__ = [
    "Engine",
    "normalize_config",
    "ShapeError",
    "ValueError",
    "LevelViolation",
    "IoError",
    "__version__",
]
