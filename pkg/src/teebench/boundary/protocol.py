"""Control-pipe wire protocol between the two worlds.

Every message starts with a fixed-width little-endian header::

    u32 command    one of Command below
    u32 region_id  region the payload lives in; 0 when none
    u64 offset     window-relative payload offset within that region
    u64 length     payload length, or body length when region_id == 0
    i64 status     requests: target socket handle for SOCK_* commands
                   replies:  result (TeeResult code, byte count, handle
                             or -errno, depending on the command)

When ``region_id == 0`` and ``length > 0``, exactly ``length`` bytes of
body follow the header; otherwise nothing does. Bulk payloads never ride
the pipe: they are staged in a shared region and referenced by
(region_id, offset, length). Each message delivered over the pipe is one
world crossing. An alternate supplicant that speaks this framing and the
SOCK_* command set below can replace the built-in one.
"""

from __future__ import annotations

import enum
import os
import struct
from dataclasses import dataclass

from .regions import RegionDescriptor

HEADER = struct.Struct("<IIQQq")
HEADER_SIZE = HEADER.size  # 32 bytes


class Command(enum.IntEnum):
    # session control, normal -> trusted
    OPEN = 1
    INVOKE = 2
    CLOSE = 3
    # completion of OPEN/INVOKE/CLOSE, trusted -> normal
    RETURN = 16
    # socket facade RPCs relayed to the supplicant, trusted -> normal
    SOCK_OPEN = 32
    SOCK_SEND = 33
    SOCK_RECV = 34
    SOCK_CLOSE = 35
    SOCK_IOCTL = 36
    SOCK_ERROR = 37


class TeeResult(enum.IntEnum):
    SUCCESS = 0
    GENERIC = 1
    BAD_PARAMETERS = 2
    OUT_OF_MEMORY = 3
    ACCESS_FAULT = 4
    NOT_FOUND = 5
    BAD_STATE = 6
    NOT_SUPPORTED = 7


class IoctlCode(enum.IntEnum):
    SET_BUF_SIZES = 1           # arg: (send_bytes, recv_bytes), TCP and UDP
    SET_PEER = 2                # arg: (host, port), UDP only


class SocketProtocolCode(enum.IntEnum):
    TCP = 1
    UDP = 2


# command id every trusted application answers without dispatching
NOOP_COMMAND = 0


@dataclass(frozen=True)
class Message:
    command: int
    region_id: int
    offset: int
    length: int
    status: int
    body: bytes = b""


def write_message(fd: int, command: int, *, region_id: int = 0, offset: int = 0,
                  length: int = 0, status: int = 0, body: bytes = b"") -> None:
    if body:
        if region_id != 0:
            raise ValueError("body and region reference are mutually exclusive")
        length = len(body)
    data = HEADER.pack(command, region_id, offset, length, status) + body
    view = memoryview(data)
    while view:
        n = os.write(fd, view)
        view = view[n:]


def _read_exact(fd: int, n: int) -> bytes | None:
    chunks = []
    got = 0
    while got < n:
        chunk = os.read(fd, n - got)
        if not chunk:
            return None
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


def read_message(fd: int) -> Message | None:
    """Read one framed message; None on clean EOF."""
    raw = _read_exact(fd, HEADER_SIZE)
    if raw is None:
        return None
    command, region_id, offset, length, status = HEADER.unpack(raw)
    body = b""
    if region_id == 0 and length > 0:
        body = _read_exact(fd, length) or b""
        if len(body) != length:
            return None
    return Message(command, region_id, offset, length, status, body)


# --- body packing helpers ------------------------------------------------

_REGION_DESC = struct.Struct("<IBQQQH")


def pack_region_descriptor(desc: RegionDescriptor) -> bytes:
    path = desc.path.encode()
    return _REGION_DESC.pack(
        desc.region_id, desc.mode_code(), desc.size,
        desc.window_offset, desc.window_length, len(path),
    ) + path


def unpack_region_descriptor(buf: bytes, pos: int) -> tuple[RegionDescriptor, int]:
    rid, mode_code, size, woff, wlen, plen = _REGION_DESC.unpack_from(buf, pos)
    pos += _REGION_DESC.size
    path = buf[pos:pos + plen].decode()
    pos += plen
    desc = RegionDescriptor(
        region_id=rid, path=path, size=size,
        mode=RegionDescriptor.mode_from_code(mode_code),
        window_offset=woff, window_length=wlen,
    )
    return desc, pos


def pack_open_body(ta_name: str, scratch: RegionDescriptor,
                   args_regions) -> bytes:
    name = ta_name.encode()
    out = struct.pack("<H", len(name)) + name
    out += pack_region_descriptor(scratch)
    out += struct.pack("<B", len(args_regions))
    for desc in args_regions:
        out += pack_region_descriptor(desc)
    return out


def unpack_open_body(body: bytes):
    (nlen,) = struct.unpack_from("<H", body, 0)
    pos = 2
    name = body[pos:pos + nlen].decode()
    pos += nlen
    scratch, pos = unpack_region_descriptor(body, pos)
    (nregions,) = struct.unpack_from("<B", body, pos)
    pos += 1
    regions = []
    for _ in range(nregions):
        desc, pos = unpack_region_descriptor(body, pos)
        regions.append(desc)
    return name, scratch, regions


def pack_invoke_body(ta_command: int, regions, values) -> bytes:
    out = struct.pack("<IB", ta_command, len(regions))
    for desc in regions:
        out += pack_region_descriptor(desc)
    out += struct.pack("<B", len(values))
    for v in values:
        out += struct.pack("<Q", v)
    return out


def unpack_invoke_body(body: bytes):
    ta_command, nregions = struct.unpack_from("<IB", body, 0)
    pos = 5
    regions = []
    for _ in range(nregions):
        desc, pos = unpack_region_descriptor(body, pos)
        regions.append(desc)
    (nvalues,) = struct.unpack_from("<B", body, pos)
    pos += 1
    values = []
    for _ in range(nvalues):
        (v,) = struct.unpack_from("<Q", body, pos)
        pos += 8
        values.append(v)
    return ta_command, regions, values


def pack_values(values) -> bytes:
    out = struct.pack("<B", len(values))
    for v in values:
        out += struct.pack("<Q", v)
    return out


def unpack_values(body: bytes) -> tuple[int, ...]:
    if not body:
        return ()
    (n,) = struct.unpack_from("<B", body, 0)
    return struct.unpack_from(f"<{n}Q", body, 1) if n else ()


def pack_sock_open_body(protocol_code: int, host: str, port: int) -> bytes:
    return struct.pack("<BH", protocol_code, port) + host.encode()


def unpack_sock_open_body(body: bytes) -> tuple[int, str, int]:
    code, port = struct.unpack_from("<BH", body, 0)
    return code, body[3:].decode(), port


def pack_ioctl_body(code: int, arg) -> bytes:
    if code == IoctlCode.SET_BUF_SIZES:
        send_size, recv_size = arg
        return struct.pack("<IQQ", code, send_size, recv_size)
    if code == IoctlCode.SET_PEER:
        host, port = arg
        return struct.pack("<IH", code, port) + host.encode()
    raise ValueError(f"unknown ioctl code {code}")


def unpack_ioctl_body(body: bytes):
    (code,) = struct.unpack_from("<I", body, 0)
    if code == IoctlCode.SET_BUF_SIZES:
        send_size, recv_size = struct.unpack_from("<QQ", body, 4)
        return code, (send_size, recv_size)
    if code == IoctlCode.SET_PEER:
        (port,) = struct.unpack_from("<H", body, 4)
        return code, (body[6:].decode(), port)
    return code, None
