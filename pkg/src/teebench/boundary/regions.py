"""Shared-memory regions with mode, access-window and lifetime semantics.

Regions are backed by mmap'd files under /dev/shm (tmpfs) so the trusted
process can attach the same bytes by path. The owning (normal-world) side
has unrestricted access to its own buffer; the trusted side only ever
sees the access window, addressed window-relative, and loses access when
the region is revoked (invocation return for temporary regions, session
close for session-bound ones).
"""

from __future__ import annotations

import enum
import mmap
import os
import tempfile
from dataclasses import dataclass

from ..core import SharedMode
from .errors import RegionAllocationError, RegionFault

_SHM_DIR = "/dev/shm" if os.path.isdir("/dev/shm") else None


class Lifetime(enum.Enum):
    SESSION_BOUND = "session"
    INVOCATION_BOUND = "invocation"


LIFETIME_FOR_MODE = {
    SharedMode.WHOLE: Lifetime.SESSION_BOUND,
    SharedMode.PARTIAL: Lifetime.SESSION_BOUND,
    SharedMode.TEMPORARY: Lifetime.INVOCATION_BOUND,
}

_MODE_CODE = {SharedMode.WHOLE: 1, SharedMode.PARTIAL: 2, SharedMode.TEMPORARY: 3}
_CODE_MODE = {v: k for k, v in _MODE_CODE.items()}


@dataclass(frozen=True)
class RegionDescriptor:
    """Everything the trusted side needs to attach and police a region."""

    region_id: int
    path: str
    size: int
    mode: SharedMode
    window_offset: int
    window_length: int

    @property
    def lifetime(self) -> Lifetime:
        return LIFETIME_FOR_MODE[self.mode]

    def mode_code(self) -> int:
        return _MODE_CODE[self.mode]

    @staticmethod
    def mode_from_code(code: int) -> SharedMode:
        return _CODE_MODE[code]


def _check_window(size: int, mode: SharedMode, offset: int, length: int | None):
    if size < 1:
        raise RegionAllocationError("region size must be >= 1")
    if mode is SharedMode.WHOLE and offset != 0:
        raise RegionAllocationError("whole regions take no offset")
    if offset < 0 or offset >= size:
        raise RegionAllocationError(
            f"offset {offset} leaves an empty window in a {size}-byte region"
        )
    if length is None:
        length = size - offset
    if length < 1 or offset + length > size:
        raise RegionAllocationError(
            f"window [{offset}, {offset + length}) not within [0, {size})"
        )
    return length


class SharedRegion:
    """Normal-world handle to one shared memory area.

    ``read``/``write`` address the whole underlying buffer;
    ``window_read``/``window_write`` use the same window-relative
    coordinates the trusted side sees.
    """

    def __init__(self, region_id: int, size: int, mode: SharedMode,
                 offset: int = 0, length: int | None = None):
        length = _check_window(size, mode, offset, length)
        self.region_id = region_id
        self.size = size
        self.mode = mode
        self.window_offset = offset
        self.window_length = length
        self.lifetime = LIFETIME_FOR_MODE[mode]
        fd, self._path = tempfile.mkstemp(prefix="teebench-shm-", dir=_SHM_DIR)
        try:
            os.ftruncate(fd, size)
            self._map = mmap.mmap(fd, size)
        finally:
            os.close(fd)
        self._released = False

    @property
    def descriptor(self) -> RegionDescriptor:
        return RegionDescriptor(
            region_id=self.region_id,
            path=self._path,
            size=self.size,
            mode=self.mode,
            window_offset=self.window_offset,
            window_length=self.window_length,
        )

    @property
    def released(self) -> bool:
        return self._released

    def _check_open(self):
        if self._released:
            raise RegionFault(f"region {self.region_id} already released")

    def write(self, offset: int, data) -> None:
        self._check_open()
        data = bytes(data)
        if offset < 0 or offset + len(data) > self.size:
            raise RegionFault(
                f"write [{offset}, {offset + len(data)}) outside region of {self.size} B"
            )
        self._map[offset:offset + len(data)] = data

    def read(self, offset: int, length: int) -> bytes:
        self._check_open()
        if offset < 0 or length < 0 or offset + length > self.size:
            raise RegionFault(
                f"read [{offset}, {offset + length}) outside region of {self.size} B"
            )
        return bytes(self._map[offset:offset + length])

    def window_read(self, offset: int, length: int) -> bytes:
        if offset < 0 or length < 0 or offset + length > self.window_length:
            raise RegionFault("window read outside the shared window")
        return self.read(self.window_offset + offset, length)

    def window_write(self, offset: int, data) -> None:
        data = bytes(data)
        if offset < 0 or offset + len(data) > self.window_length:
            raise RegionFault("window write outside the shared window")
        self.write(self.window_offset + offset, data)

    def release(self) -> None:
        """Unmap and delete the backing segment; idempotent."""
        if self._released:
            return
        self._released = True
        self._map.close()
        try:
            os.unlink(self._path)
        except FileNotFoundError:
            pass

    def __del__(self):  # best-effort; the contract is explicit release()
        try:
            self.release()
        except Exception:
            pass


class TrustedRegionView:
    """Trusted-side view of a region: window-restricted and revocable.

    All offsets are relative to the window. Any access outside
    [0, window_length) or after revocation raises RegionFault.
    """

    def __init__(self, desc: RegionDescriptor):
        self.descriptor = desc
        fd = os.open(desc.path, os.O_RDWR)
        try:
            self._map = mmap.mmap(fd, desc.size)
        finally:
            os.close(fd)
        self._revoked = False

    @property
    def window_length(self) -> int:
        return self.descriptor.window_length

    @property
    def revoked(self) -> bool:
        return self._revoked

    def _check(self, offset: int, length: int):
        if self._revoked:
            raise RegionFault(
                f"region {self.descriptor.region_id} no longer shared "
                f"({self.descriptor.lifetime.value} lifetime expired)"
            )
        if offset < 0 or length < 0 or offset + length > self.descriptor.window_length:
            raise RegionFault(
                f"access [{offset}, {offset + length}) outside window of "
                f"{self.descriptor.window_length} B"
            )

    def read(self, offset: int, length: int) -> bytes:
        self._check(offset, length)
        base = self.descriptor.window_offset + offset
        return bytes(self._map[base:base + length])

    def write(self, offset: int, data) -> None:
        data = bytes(data)
        self._check(offset, len(data))
        base = self.descriptor.window_offset + offset
        self._map[base:base + len(data)] = data

    def revoke(self) -> None:
        if not self._revoked:
            self._revoked = True
            self._map.close()
