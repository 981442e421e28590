"""teebench: throughput, per-call overhead and energy benchmarks for
applications forced to do all I/O through an emulated trusted-execution
boundary (shared-memory hand-off plus relay agent).

Units follow the usual networking convention: bit rates are decimal
(1 Mbit/s = 10^6 bit/s), buffer and payload sizes are binary
(1 KiB = 1024 B).
"""

from .core import (
    ConfigError,
    Execution,
    Mode,
    Protocol,
    RunConfig,
    ServerMetrics,
    SharedMode,
    TransferMetrics,
    derive_throughput,
    validate_config,
)
from . import boundary
from .boundary import tas as _builtin_tas  # noqa: F401  (registers built-in TAs)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "Execution",
    "Mode",
    "Protocol",
    "RunConfig",
    "ServerMetrics",
    "SharedMode",
    "TransferMetrics",
    "boundary",
    "derive_throughput",
    "validate_config",
]
