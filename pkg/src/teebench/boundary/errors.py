"""Exception types raised by the emulated TEE boundary."""

from __future__ import annotations


class BoundaryError(Exception):
    """Base for boundary lifecycle and transport failures."""


class RegionFault(BoundaryError):
    """Out-of-window or revoked shared-region access; never truncated."""


class RegionAllocationError(BoundaryError):
    """Region size/offset invalid or context allocation cap exceeded."""


class SessionStateError(BoundaryError):
    """Operation on a closed/busy session or a busy context."""


class TaNotFoundError(BoundaryError):
    """open_session named an unknown trusted application."""


class TaMemoryError(MemoryError):
    """Trusted-side allocation beyond the runtime heap budget."""


class TeeSocketError(OSError):
    """Socket facade failure, carrying the OS errno surfaced verbatim."""

    def __init__(self, errno_: int, msg: str = ""):
        super().__init__(errno_, msg or f"tee socket error (errno {errno_})")
