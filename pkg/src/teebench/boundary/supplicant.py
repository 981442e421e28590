"""Relay agent performing real OS socket work on behalf of the trusted side.

One supplicant serves one session. Payload bytes move through the
session's scratch region; the supplicant never sees more than the
(region, offset, length) reference carried by the descriptor. Handle 0
is a built-in always-open discard sink that swallows sends and returns
EOF on recv, used by scripted crossing-accounting runs.
"""

from __future__ import annotations

import errno
import socket

from .protocol import (
    Command,
    IoctlCode,
    Message,
    SocketProtocolCode,
    unpack_ioctl_body,
    unpack_sock_open_body,
)

DISCARD_HANDLE = 0


class Supplicant:
    def __init__(self):
        self._sockets: dict[int, socket.socket] = {}
        self._last_errno: dict[int, int] = {DISCARD_HANDLE: 0}
        self._next_handle = 1

    def socket_for(self, handle: int):
        """Expose the live OS socket behind a handle (introspection/tests)."""
        return self._sockets.get(handle)

    def service(self, msg: Message, regions) -> tuple[int, bytes]:
        """Execute one relayed call; returns (status, reply_body).

        ``regions`` maps region_id to an object with window_read/window_write.
        Status is >= 0 on success (handle or byte count) and -errno on OS
        failure, surfaced verbatim.
        """
        cmd = msg.command
        if cmd == Command.SOCK_OPEN:
            return self._open(msg)
        if cmd == Command.SOCK_SEND:
            return self._send(msg, regions)
        if cmd == Command.SOCK_RECV:
            return self._recv(msg, regions)
        if cmd == Command.SOCK_CLOSE:
            return self._close(msg)
        if cmd == Command.SOCK_IOCTL:
            return self._ioctl(msg)
        if cmd == Command.SOCK_ERROR:
            return self._last_errno.get(msg.status, 0), b""
        return -errno.EINVAL, b""

    def close_all(self) -> None:
        for sock in self._sockets.values():
            try:
                sock.close()
            except OSError:
                pass
        self._sockets.clear()

    # -- individual commands ----------------------------------------------

    def _record(self, handle: int, err: int) -> int:
        self._last_errno[handle] = err
        return -err

    def _open(self, msg: Message) -> tuple[int, bytes]:
        code, host, port = unpack_sock_open_body(msg.body)
        try:
            if code == SocketProtocolCode.TCP:
                sock = socket.create_connection((host, port))
            else:
                sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
                sock.connect((host, port))
        except OSError as exc:
            return -(exc.errno or errno.EIO), b""
        handle = self._next_handle
        self._next_handle += 1
        self._sockets[handle] = sock
        self._last_errno[handle] = 0
        return handle, b""

    def _send(self, msg: Message, regions) -> tuple[int, bytes]:
        handle = msg.status
        if handle == DISCARD_HANDLE:
            # the copy out of shared memory still happens; bytes then vanish
            regions[msg.region_id].window_read(msg.offset, msg.length)
            return msg.length, b""
        sock = self._sockets.get(handle)
        if sock is None:
            return -errno.EBADF, b""
        data = regions[msg.region_id].window_read(msg.offset, msg.length)
        try:
            return sock.send(data), b""
        except OSError as exc:
            return self._record(handle, exc.errno or errno.EIO), b""

    def _recv(self, msg: Message, regions) -> tuple[int, bytes]:
        handle = msg.status
        if handle == DISCARD_HANDLE:
            return 0, b""
        sock = self._sockets.get(handle)
        if sock is None:
            return -errno.EBADF, b""
        try:
            data = sock.recv(msg.length)
        except OSError as exc:
            return self._record(handle, exc.errno or errno.EIO), b""
        if data:
            regions[msg.region_id].window_write(msg.offset, data)
        return len(data), b""

    def _close(self, msg: Message) -> tuple[int, bytes]:
        handle = msg.status
        if handle == DISCARD_HANDLE:
            return 0, b""
        sock = self._sockets.pop(handle, None)
        if sock is None:
            return -errno.EBADF, b""
        try:
            sock.close()
        except OSError as exc:
            return self._record(handle, exc.errno or errno.EIO), b""
        return 0, b""

    def _ioctl(self, msg: Message) -> tuple[int, bytes]:
        handle = msg.status
        if handle == DISCARD_HANDLE:
            return 0, b""
        sock = self._sockets.get(handle)
        if sock is None:
            return -errno.EBADF, b""
        code, arg = unpack_ioctl_body(msg.body)
        try:
            if code == IoctlCode.SET_BUF_SIZES:
                send_size, recv_size = arg
                sock.setsockopt(socket.SOL_SOCKET, socket.SO_SNDBUF, send_size)
                sock.setsockopt(socket.SOL_SOCKET, socket.SO_RCVBUF, recv_size)
                return 0, b""
            if code == IoctlCode.SET_PEER:
                if sock.type != socket.SOCK_DGRAM:
                    return -errno.EOPNOTSUPP, b""
                host, port = arg
                sock.connect((host, port))
                return 0, b""
        except OSError as exc:
            return self._record(handle, exc.errno or errno.EIO), b""
        return -errno.EINVAL, b""
