"""Trusted-side runtime: application registry, execution environment and
the dispatch loop shared by both transports.

Trusted application code never touches the OS directly. Everything it may
use hangs off the TrustedEnv handed to its entry points: heap accounting
against the runtime budget, the relayed socket facade, shared-region
views and the monotonic clock.
"""

from __future__ import annotations

import enum
from typing import Callable

from .. import clock
from ..core import Protocol
from .errors import RegionFault, TaMemoryError, TeeSocketError
from .protocol import (
    Command,
    IoctlCode,
    NOOP_COMMAND,
    TeeResult,
    SocketProtocolCode,
    pack_ioctl_body,
    pack_sock_open_body,
)
from .regions import Lifetime, RegionDescriptor, TrustedRegionView
from .supplicant import DISCARD_HANDLE

_TA_FACTORIES: dict[str, Callable[[], "object"]] = {}


def register_ta(name: str):
    """Class decorator adding a trusted application to the registry."""

    def wrap(cls):
        _TA_FACTORIES[name] = cls
        return cls

    return wrap


def ta_factory(name: str):
    return _TA_FACTORIES.get(name)


class SocketState(enum.Enum):
    OPEN = "open"
    CLOSED = "closed"
    ERROR = "error"


_FATAL_ERRNOS = {9, 32, 104, 107}  # EBADF, EPIPE, ECONNRESET, ENOTCONN


class TeeSocket:
    """Trusted-side socket whose every operation is relayed outward.

    Payloads are staged through the session scratch region; each relayed
    call costs two world crossings. Operations on a CLOSED or ERROR
    socket fail deterministically without crossing the boundary.
    """

    def __init__(self, env: "TrustedEnv", handle: int, protocol: Protocol):
        self._env = env
        self.handle = handle
        self.protocol = protocol
        self.state = SocketState.OPEN
        self._last_errno = 0

    def _check_usable(self):
        if self.state is not SocketState.OPEN:
            raise TeeSocketError(9, f"socket is {self.state.value}")

    def _fail(self, err: int):
        self._last_errno = err
        if err in _FATAL_ERRNOS:
            self.state = SocketState.ERROR
        raise TeeSocketError(err)

    def send(self, data) -> int:
        self._check_usable()
        view = memoryview(data)
        scratch = self._env.scratch
        sent = 0
        while sent < len(view):
            piece = view[sent:sent + scratch.window_length]
            scratch.write(0, piece)
            status = self._env.relay(
                Command.SOCK_SEND,
                region_ref=(scratch.descriptor.region_id, 0, len(piece)),
                handle=self.handle,
            ).status
            if status < 0:
                self._fail(-status)
            sent += status
            if status < len(piece):
                break  # transport accepted less than staged; report actual
        return sent

    def recv(self, max_bytes: int) -> bytes:
        self._check_usable()
        scratch = self._env.scratch
        want = min(max_bytes, scratch.window_length)
        status = self._env.relay(
            Command.SOCK_RECV,
            region_ref=(scratch.descriptor.region_id, 0, want),
            handle=self.handle,
        ).status
        if status < 0:
            self._fail(-status)
        return scratch.read(0, status)

    def ioctl(self, code: IoctlCode, arg) -> None:
        self._check_usable()
        status = self._env.relay(
            Command.SOCK_IOCTL, body=pack_ioctl_body(code, arg), handle=self.handle
        ).status
        if status < 0:
            self._fail(-status)

    def error(self) -> int:
        """Last OS errno recorded for this socket by the supplicant.

        Usable in any state; querying the error is the one operation a
        failed socket still supports.
        """
        reply = self._env.relay(Command.SOCK_ERROR, handle=self.handle)
        return reply.status

    def close(self) -> None:
        if self.state is SocketState.CLOSED:
            raise TeeSocketError(9, "socket already closed")
        status = self._env.relay(Command.SOCK_CLOSE, handle=self.handle).status
        self.state = SocketState.CLOSED
        if status < 0:
            self._last_errno = -status
            raise TeeSocketError(-status)


class TrustedEnv:
    """Execution environment visible to trusted application code."""

    def __init__(self, relay_port, memory_cap: int):
        self._relay_port = relay_port
        self.memory_cap = memory_cap
        self._used = 0
        self.scratch: TrustedRegionView | None = None

    # -- heap accounting ----------------------------------------------------

    @property
    def memory_used(self) -> int:
        return self._used

    def alloc(self, nbytes: int) -> None:
        """Reserve nbytes of the runtime heap budget or fail with OOM."""
        if nbytes < 0:
            raise ValueError("negative allocation")
        if self._used + nbytes > self.memory_cap:
            raise TaMemoryError(
                f"allocation of {nbytes} B exceeds the {self.memory_cap} B runtime cap"
            )
        self._used += nbytes

    def free(self, nbytes: int) -> None:
        self._used = max(0, self._used - nbytes)

    # -- clock ---------------------------------------------------------------

    def monotonic(self) -> float:
        return clock.monotonic()

    # -- relayed sockets -----------------------------------------------------

    def relay(self, command, *, region_ref=None, body=b"", handle=0):
        return self._relay_port.rpc(
            command, region_ref=region_ref, body=body, handle=handle
        )

    def open_socket(self, host: str, port: int, protocol: Protocol) -> TeeSocket:
        code = (
            SocketProtocolCode.TCP
            if protocol is Protocol.TCP
            else SocketProtocolCode.UDP
        )
        status = self.relay(
            Command.SOCK_OPEN, body=pack_sock_open_body(code, host, port)
        ).status
        if status < 0:
            raise TeeSocketError(-status)
        return TeeSocket(self, status, protocol)

    def discard_socket(self) -> TeeSocket:
        """Socket bound to the supplicant's built-in byte sink (handle 0)."""
        return TeeSocket(self, DISCARD_HANDLE, Protocol.TCP)


class InvokeParams:
    """Regions and integer values passed along with one command."""

    def __init__(self, regions: list[TrustedRegionView], values: tuple[int, ...]):
        self.regions = regions
        self.values = values


class TrustedRuntime:
    """Dispatches session-protocol events onto one application instance.

    Used directly by the inline transport and wrapped by the pipe loop in
    the spawned process; the semantics (region caching, temporary
    revocation, error-to-status mapping) are identical in both.
    """

    def __init__(self, ta_name: str, relay_port, memory_cap: int):
        factory = ta_factory(ta_name)
        if factory is None:
            raise KeyError(ta_name)
        self.ta = factory()
        self.env = TrustedEnv(relay_port, memory_cap)
        self._views: dict[int, TrustedRegionView] = {}

    def _view_for(self, desc: RegionDescriptor) -> TrustedRegionView:
        if desc.lifetime is Lifetime.INVOCATION_BOUND:
            return TrustedRegionView(desc)  # fresh mapping per invocation
        view = self._views.get(desc.region_id)
        if view is None or view.revoked:
            view = TrustedRegionView(desc)
            self._views[desc.region_id] = view
        return view

    def handle_open(self, scratch_desc: RegionDescriptor,
                    region_descs: list[RegionDescriptor]) -> int:
        self.env.scratch = TrustedRegionView(scratch_desc)
        views = [self._view_for(d) for d in region_descs]
        temporaries = [v for v in views if v.descriptor.lifetime is Lifetime.INVOCATION_BOUND]
        try:
            on_open = getattr(self.ta, "on_open", None)
            if on_open is not None:
                on_open(self.env, views)
            return TeeResult.SUCCESS
        except Exception:
            return TeeResult.GENERIC
        finally:
            for view in temporaries:
                view.revoke()

    def handle_invoke(self, ta_command: int,
                      region_descs: list[RegionDescriptor],
                      values: tuple[int, ...]) -> tuple[int, tuple[int, ...]]:
        views = [self._view_for(d) for d in region_descs]
        temporaries = [v for v in views if v.descriptor.lifetime is Lifetime.INVOCATION_BOUND]
        try:
            if ta_command == NOOP_COMMAND:
                return TeeResult.SUCCESS, ()
            result = self.ta.on_invoke(self.env, ta_command, InvokeParams(views, values))
            if result is None:
                return TeeResult.SUCCESS, ()
            if isinstance(result, tuple):
                status, out = result
                return status, tuple(out)
            return int(result), ()
        except MemoryError:
            return TeeResult.OUT_OF_MEMORY, ()
        except RegionFault:
            return TeeResult.ACCESS_FAULT, ()
        except TeeSocketError:
            return TeeResult.GENERIC, ()
        finally:
            for view in temporaries:
                view.revoke()

    def handle_close(self) -> int:
        try:
            on_close = getattr(self.ta, "on_close", None)
            if on_close is not None:
                on_close(self.env)
        finally:
            for view in self._views.values():
                view.revoke()
            self._views.clear()
            if self.env.scratch is not None:
                self.env.scratch.revoke()
        return TeeResult.SUCCESS
