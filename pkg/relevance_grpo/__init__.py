import sys

from .exceptions import (  # noqa: F401 # imported but unused
    BackendError,
    DataError,
    InputError,
    RelevanceGrpoError,
    ShortfallError,
    TrainingDivergedError,
    UndefinedMetricError,
    ValidationError,
)

name = "relevance_grpo"
PY_VERSION = (sys.version_info.major, sys.version_info.minor)
PY_38 = (3, 8)

if PY_VERSION < PY_38:
    raise ImportError("Python 3.8 or higher is required by relevance_grpo")


__version__ = "0.0.0"
