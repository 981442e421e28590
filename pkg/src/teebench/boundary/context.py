"""Normal-world lifecycle: contexts, sessions and crossing accounting.

A session runs its trusted application either in a forked process wired
up with a control pipe plus shared memory ("process" transport, the
default) or inline in the calling process with identical semantics
("inline", for CI and fast property tests). Pick with the ``transport``
argument or the TEEBENCH_BOUNDARY_TRANSPORT environment variable.

Every message crossing the control pipe counts as one world crossing and
one injection of ``switch_cost`` wall time at the receiving side, so a
relayed socket call costs two crossings and an open/invoke/close costs
two. The caller's thread stays blocked for the whole invocation; it is
the thread that services the trusted side's relayed calls.
"""

from __future__ import annotations

import dataclasses
import itertools
import os
import sys
import threading
from collections import namedtuple
from dataclasses import dataclass
from multiprocessing import get_context as _mp_get_context

from .. import clock
from ..core import SharedMode, TA_MEMORY_LIMIT
from .errors import (
    BoundaryError,
    RegionAllocationError,
    SessionStateError,
    TaNotFoundError,
)
from .protocol import (
    Command,
    Message,
    TeeResult,
    pack_invoke_body,
    pack_open_body,
    pack_values,
    read_message,
    unpack_invoke_body,
    unpack_open_body,
    unpack_values,
    write_message,
)
from .regions import SharedRegion
from .supplicant import Supplicant
from .trusted import TrustedRuntime

DEFAULT_REGION_CAP = 64 * 1024 * 1024
DEFAULT_SCRATCH_SIZE = TA_MEMORY_LIMIT

_context_ids = itertools.count(1)

Reply = namedtuple("Reply", "status body")


@dataclass
class BoundaryStats:
    """Counts and accumulated cost of world-boundary traffic."""

    crossings: int = 0              # secure->normal plus normal->secure
    injected_cost_total: float = 0.0
    rpc_count: int = 0              # relayed socket calls
    bytes_copied: int = 0           # payload bytes staged through shared memory

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


class InvokeResult(namedtuple("InvokeResult", "status values")):
    @property
    def ok(self) -> bool:
        return self.status == TeeResult.SUCCESS


def _transport_from_env() -> str:
    return os.environ.get("TEEBENCH_BOUNDARY_TRANSPORT", "process")


class Context:
    """Owner of shared regions, sessions and the boundary statistics."""

    def __init__(self, *, switch_cost: float = 0.0, transport: str | None = None,
                 ta_memory_cap: int = TA_MEMORY_LIMIT,
                 region_cap: int = DEFAULT_REGION_CAP,
                 scratch_size: int = DEFAULT_SCRATCH_SIZE):
        transport = transport or _transport_from_env()
        if transport not in ("process", "inline"):
            raise ValueError(f"unknown boundary transport {transport!r}")
        self.id = next(_context_ids)
        self.switch_cost = switch_cost
        self.transport = transport
        self.ta_memory_cap = ta_memory_cap
        self.region_cap = region_cap
        self.scratch_size = scratch_size
        self._regions: dict[int, SharedRegion] = {}
        self._sessions: list["Session"] = []
        self._region_ids = itertools.count(1)  # 0 means "no region" on the wire
        self._stats = BoundaryStats()
        self._lock = threading.Lock()
        self._finalized = False

    # -- statistics ----------------------------------------------------------

    @property
    def stats(self) -> BoundaryStats:
        with self._lock:
            return dataclasses.replace(self._stats)

    def _record(self, *, crossings: int = 0, rpcs: int = 0, copied: int = 0):
        with self._lock:
            self._stats.crossings += crossings
            self._stats.rpc_count += rpcs
            self._stats.bytes_copied += copied
            self._stats.injected_cost_total = self._stats.crossings * self.switch_cost

    # -- regions ---------------------------------------------------------------

    def allocate_shared_region(self, size: int, mode: SharedMode,
                               offset: int = 0,
                               length: int | None = None) -> SharedRegion:
        self._check_live()
        outstanding = sum(r.size for r in self._regions.values() if not r.released)
        if outstanding + size > self.region_cap:
            raise RegionAllocationError(
                f"allocating {size} B would exceed the {self.region_cap} B region cap"
            )
        region = SharedRegion(next(self._region_ids), size, mode, offset, length)
        self._regions[region.region_id] = region
        return region

    def release_region(self, region: SharedRegion) -> None:
        region.release()
        self._regions.pop(region.region_id, None)

    # -- sessions ----------------------------------------------------------------

    def open_session(self, ta_name: str, args_regions=()) -> "Session":
        """Bind a session to the named trusted application.

        ``args_regions`` are shared along with session creation; any
        temporary region among them is only valid while the open runs.
        """
        self._check_live()
        if isinstance(args_regions, SharedRegion):
            args_regions = (args_regions,)
        if self.transport == "process":
            session: Session = _ProcessSession(self, ta_name, tuple(args_regions))
        else:
            session = _InlineSession(self, ta_name, tuple(args_regions))
        self._sessions.append(session)
        return session

    def _session_closed(self, session: "Session"):
        if session in self._sessions:
            self._sessions.remove(session)

    # -- lifecycle ------------------------------------------------------------

    def _check_live(self):
        if self._finalized:
            raise SessionStateError("context already finalized")

    def finalize(self) -> None:
        """Tear the context down; fails while sessions or regions are live."""
        self._check_live()
        live_sessions = [s for s in self._sessions if not s.closed]
        live_regions = [r for r in self._regions.values() if not r.released]
        if live_sessions or live_regions:
            raise SessionStateError(
                f"context busy: {len(live_sessions)} open session(s), "
                f"{len(live_regions)} unreleased region(s)"
            )
        self._finalized = True


def initialize_context(**kwargs) -> Context:
    """Create an empty context with zeroed boundary statistics."""
    return Context(**kwargs)


class Session:
    """One bound trusted application; one in-flight invocation at a time."""

    def __init__(self, ctx: Context, ta_name: str):
        self._ctx = ctx
        self.ta_name = ta_name
        self.closed = False
        self._op_lock = threading.Lock()
        scratch_id = next(ctx._region_ids)
        self._scratch = SharedRegion(scratch_id, ctx.scratch_size, SharedMode.WHOLE)
        self._supplicant = Supplicant()
        self._known_regions: dict[int, SharedRegion] = {scratch_id: self._scratch}

    @property
    def supplicant(self) -> Supplicant:
        return self._supplicant

    def _begin_op(self):
        if self.closed:
            raise SessionStateError("session is closed")
        if not self._op_lock.acquire(blocking=False):
            raise SessionStateError("an invocation is already in flight")

    def _note_regions(self, regions):
        for region in regions:
            self._known_regions[region.region_id] = region

    def _service_rpc(self, msg: Message) -> tuple[int, bytes]:
        status, body = self._supplicant.service(msg, self._known_regions)
        copied = 0
        if msg.command in (Command.SOCK_SEND, Command.SOCK_RECV) and status > 0:
            copied = status
        self._ctx._record(rpcs=1, copied=copied)
        return status, body

    def invoke(self, command: int, regions=(), values=()) -> InvokeResult:
        raise NotImplementedError

    def close(self) -> None:
        raise NotImplementedError


# --------------------------------------------------------------------------
# process transport
# --------------------------------------------------------------------------


def _trusted_process_main(ta_name: str, rfd: int, wfd: int,
                          switch_cost: float, memory_cap: int) -> None:
    runtime = None
    port = _ChildRelayPort(rfd, wfd, switch_cost)
    while True:
        msg = read_message(rfd)
        if msg is None:
            break
        clock.inject_delay(switch_cost)
        if msg.command == Command.OPEN:
            name, scratch_desc, region_descs = unpack_open_body(msg.body)
            try:
                runtime = TrustedRuntime(name, port, memory_cap)
            except KeyError:
                write_message(wfd, Command.RETURN, status=TeeResult.NOT_FOUND)
                break
            status = runtime.handle_open(scratch_desc, region_descs)
            write_message(wfd, Command.RETURN, status=status)
        elif msg.command == Command.INVOKE:
            ta_command, region_descs, values = unpack_invoke_body(msg.body)
            try:
                status, out = runtime.handle_invoke(
                    ta_command, region_descs, tuple(values)
                )
            except Exception:
                import traceback

                traceback.print_exc(file=sys.stderr)
                status, out = TeeResult.GENERIC, ()
            write_message(wfd, Command.RETURN, status=status, body=pack_values(out))
        elif msg.command == Command.CLOSE:
            if runtime is not None:
                runtime.handle_close()
            write_message(wfd, Command.RETURN, status=TeeResult.SUCCESS)
            break
        else:
            write_message(wfd, Command.RETURN, status=TeeResult.NOT_SUPPORTED)
    os.close(rfd)
    os.close(wfd)


class _ChildRelayPort:
    """Trusted-process side of the socket relay: one RPC, one round trip."""

    def __init__(self, rfd: int, wfd: int, switch_cost: float):
        self._rfd = rfd
        self._wfd = wfd
        self._switch_cost = switch_cost

    def rpc(self, command, *, region_ref=None, body=b"", handle=0) -> Reply:
        region_id, offset, length = region_ref or (0, 0, 0)
        write_message(
            self._wfd, command, region_id=region_id, offset=offset,
            length=length, status=handle, body=body,
        )
        reply = read_message(self._rfd)
        if reply is None:
            raise BoundaryError("relay closed while waiting for a reply")
        clock.inject_delay(self._switch_cost)
        return Reply(reply.status, reply.body)


class _ProcessSession(Session):
    def __init__(self, ctx: Context, ta_name: str, args_regions):
        super().__init__(ctx, ta_name)
        self._note_regions(args_regions)
        to_child_r, to_child_w = os.pipe()
        to_parent_r, to_parent_w = os.pipe()
        mp = _mp_get_context("fork")
        self._proc = mp.Process(
            target=_trusted_process_main,
            args=(ta_name, to_child_r, to_parent_w, ctx.switch_cost,
                  ctx.ta_memory_cap),
            daemon=True,
        )
        self._proc.start()
        os.close(to_child_r)
        os.close(to_parent_w)
        self._wfd = to_child_w
        self._rfd = to_parent_r
        try:
            body = pack_open_body(
                ta_name, self._scratch.descriptor,
                [r.descriptor for r in args_regions],
            )
            self._send(Command.OPEN, body=body)
            reply = self._read_reply_servicing_rpcs()
            if reply.status == TeeResult.NOT_FOUND:
                raise TaNotFoundError(f"no trusted application named {ta_name!r}")
            if reply.status != TeeResult.SUCCESS:
                raise BoundaryError(
                    f"opening {ta_name!r} failed with {TeeResult(reply.status).name}"
                )
        except BaseException:
            self._teardown()
            self.closed = True
            ctx._session_closed(self)
            raise

    def _send(self, command, *, region_id=0, offset=0, length=0, status=0,
              body=b""):
        self._ctx._record(crossings=1)
        write_message(self._wfd, command, region_id=region_id, offset=offset,
                      length=length, status=status, body=body)

    def _read_reply_servicing_rpcs(self) -> Message:
        """Block until the trusted side returns, relaying its socket calls."""
        while True:
            msg = read_message(self._rfd)
            if msg is None:
                raise BoundaryError("trusted process terminated unexpectedly")
            self._ctx._record(crossings=1)
            clock.inject_delay(self._ctx.switch_cost)
            if msg.command == Command.RETURN:
                return msg
            status, body = self._service_rpc(msg)
            self._send(Command.RETURN, status=status, body=body)

    def invoke(self, command: int, regions=(), values=()) -> InvokeResult:
        self._begin_op()
        try:
            if isinstance(regions, SharedRegion):
                regions = (regions,)
            self._note_regions(regions)
            body = pack_invoke_body(
                command, [r.descriptor for r in regions], tuple(values)
            )
            self._send(Command.INVOKE, body=body)
            reply = self._read_reply_servicing_rpcs()
            return InvokeResult(TeeResult(reply.status), unpack_values(reply.body))
        finally:
            self._op_lock.release()

    def close(self) -> None:
        self._begin_op()
        try:
            self._send(Command.CLOSE)
            self._read_reply_servicing_rpcs()
        finally:
            self.closed = True
            self._teardown()
            self._ctx._session_closed(self)
            self._op_lock.release()

    def _teardown(self):
        for fd in (self._wfd, self._rfd):
            try:
                os.close(fd)
            except OSError:
                pass
        self._proc.join(timeout=5)
        if self._proc.is_alive():
            self._proc.terminate()
            self._proc.join(timeout=5)
        self._supplicant.close_all()
        self._scratch.release()


# --------------------------------------------------------------------------
# inline transport
# --------------------------------------------------------------------------


class _InlineRelayPort:
    """Same relay semantics without the pipe: direct supplicant calls."""

    def __init__(self, session: "_InlineSession"):
        self._session = session

    def rpc(self, command, *, region_ref=None, body=b"", handle=0) -> Reply:
        session = self._session
        ctx = session._ctx
        region_id, offset, length = region_ref or (0, 0, 0)
        msg = Message(command, region_id, offset, length, handle, body)
        ctx._record(crossings=1)           # secure -> normal
        clock.inject_delay(ctx.switch_cost)
        status, reply_body = session._service_rpc(msg)
        ctx._record(crossings=1)           # normal -> secure
        clock.inject_delay(ctx.switch_cost)
        return Reply(status, reply_body)


class _InlineSession(Session):
    def __init__(self, ctx: Context, ta_name: str, args_regions):
        super().__init__(ctx, ta_name)
        self._note_regions(args_regions)
        self._ctx._record(crossings=1)
        clock.inject_delay(ctx.switch_cost)
        try:
            self._runtime = TrustedRuntime(
                ta_name, _InlineRelayPort(self), ctx.ta_memory_cap
            )
        except KeyError:
            self._ctx._record(crossings=1)
            clock.inject_delay(ctx.switch_cost)
            self.closed = True
            ctx._session_closed(self)
            self._scratch.release()
            raise TaNotFoundError(f"no trusted application named {ta_name!r}") from None
        status = self._runtime.handle_open(
            self._scratch.descriptor, [r.descriptor for r in args_regions]
        )
        self._ctx._record(crossings=1)
        clock.inject_delay(ctx.switch_cost)
        if status != TeeResult.SUCCESS:
            self.closed = True
            ctx._session_closed(self)
            self._scratch.release()
            raise BoundaryError(f"opening {ta_name!r} failed")

    @property
    def runtime(self) -> TrustedRuntime:
        return self._runtime

    def invoke(self, command: int, regions=(), values=()) -> InvokeResult:
        self._begin_op()
        try:
            if isinstance(regions, SharedRegion):
                regions = (regions,)
            self._note_regions(regions)
            self._ctx._record(crossings=1)
            clock.inject_delay(self._ctx.switch_cost)
            status, out = self._runtime.handle_invoke(
                command, [r.descriptor for r in regions], tuple(values)
            )
            self._ctx._record(crossings=1)
            clock.inject_delay(self._ctx.switch_cost)
            return InvokeResult(TeeResult(status), tuple(out))
        finally:
            self._op_lock.release()

    def close(self) -> None:
        self._begin_op()
        try:
            self._ctx._record(crossings=1)
            clock.inject_delay(self._ctx.switch_cost)
            self._runtime.handle_close()
            self._ctx._record(crossings=1)
            clock.inject_delay(self._ctx.switch_cost)
        finally:
            self.closed = True
            self._supplicant.close_all()
            self._scratch.release()
            self._ctx._session_closed(self)
            self._op_lock.release()
