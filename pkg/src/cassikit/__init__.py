"""Snapshot spectral compressive imaging toolkit."""

try:
    # the workload is thousands of small matmuls: multithreaded BLAS only adds
    # synchronisation cost, and a single thread keeps reductions bit-stable
    from threadpoolctl import threadpool_limits as _threadpool_limits

    _threadpool_limits(limits=1, user_api="blas")
except Exception:  # pragma: no cover - best effort
    pass

from .errors import (
    CassikitError,
    ConfigError,
    DataFormatError,
    NumericError,
    ShapeError,
    UsageError,
)
from .tensor import Tape, Tensor

__version__ = "0.1.0"

__all__ = [
    "CassikitError",
    "ConfigError",
    "DataFormatError",
    "NumericError",
    "ShapeError",
    "UsageError",
    "Tape",
    "Tensor",
    "__version__",
]
