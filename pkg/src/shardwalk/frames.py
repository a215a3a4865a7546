"""Length-prefixed binary frames shared by the in-process and TCP transports.

Frame layout (all little-endian):

    u32  length of everything after this field
    u8   opcode
    u64  request id (echoed verbatim in the response)
    ...  opcode-specific payload

Vertex-id arrays are encoded as a u32 count followed by u64 ids; matrix rows
are raw row-major floats in the owning store's dtype. Responses reuse the
request's opcode and start their payload with a status byte.
"""

from __future__ import annotations

import struct

import numpy as np

OP_CREATE = 1
OP_GET = 2
OP_PUT = 3
OP_ADD = 4
OP_MULT = 5
OP_MULTADD = 6
OP_BARRIER = 7
OP_SHUTDOWN = 8

STATUS_OK = 0
STATUS_ERROR = 1
STATUS_ABORT = 2

# Barrier payload sub-kinds.
BARRIER_ARRIVE = 0
BARRIER_FLUSH = 1

DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
DTYPE_FROM_CODE = {0: np.dtype(np.float32), 1: np.dtype(np.float64)}

HEADER_BYTES = 4 + 1 + 8


def encode_frame(opcode: int, request_id: int, payload: bytes) -> bytes:
    return struct.pack("<IBQ", 9 + len(payload), opcode, request_id) + payload


def decode_frame(buf: bytes) -> tuple[int, int, bytes]:
    length, opcode, request_id = struct.unpack_from("<IBQ", buf, 0)
    if length != len(buf) - 4:
        raise ValueError(f"frame length {length} does not match buffer {len(buf) - 4}")
    return opcode, request_id, buf[13:]


def recv_frame(sock) -> bytes | None:
    """Read one complete frame from a socket; None on orderly close."""
    head = _recv_exact(sock, 4)
    if head is None:
        return None
    (length,) = struct.unpack("<I", head)
    body = _recv_exact(sock, length)
    if body is None:
        return None
    return head + body


def _recv_exact(sock, n: int) -> bytes | None:
    chunks = []
    got = 0
    while got < n:
        chunk = sock.recv(n - got)
        if not chunk:
            return None
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


class Reader:
    """Sequential decoder over a payload buffer."""

    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def u8(self) -> int:
        return self._unpack("<B", 1)

    def u32(self) -> int:
        return self._unpack("<I", 4)

    def u64(self) -> int:
        return self._unpack("<Q", 8)

    def f64(self) -> float:
        return self._unpack("<d", 8)

    def text(self) -> str:
        n = self._unpack("<H", 2)
        s = self.buf[self.pos : self.pos + n].decode("utf-8")
        self.pos += n
        return s

    def ids(self) -> np.ndarray:
        n = self.u32()
        out = np.frombuffer(self.buf, dtype="<u8", count=n, offset=self.pos).astype(np.int64)
        self.pos += 8 * n
        return out

    def rows(self, count: int, d: int, dtype: np.dtype) -> np.ndarray:
        dt = np.dtype(dtype).newbyteorder("<")
        out = np.frombuffer(self.buf, dtype=dt, count=count * d, offset=self.pos)
        self.pos += count * d * dt.itemsize
        return np.ascontiguousarray(out.reshape(count, d)).astype(dtype)

    def remainder(self) -> bytes:
        out = self.buf[self.pos :]
        self.pos = len(self.buf)
        return out

    def _unpack(self, fmt: str, size: int):
        (v,) = struct.unpack_from(fmt, self.buf, self.pos)
        self.pos += size
        return v


def pack_text(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


def pack_ids(ids: np.ndarray) -> bytes:
    ids = np.asarray(ids, dtype=np.int64)
    return struct.pack("<I", len(ids)) + ids.astype("<u8").tobytes()


def pack_rows(rows: np.ndarray, dtype: np.dtype) -> bytes:
    return np.ascontiguousarray(rows, dtype=np.dtype(dtype).newbyteorder("<")).tobytes()


def ok_response(extra: bytes = b"") -> bytes:
    return bytes([STATUS_OK]) + extra


def error_response(message: str) -> bytes:
    return bytes([STATUS_ERROR]) + pack_text(message)


def abort_response(message: str = "barrier aborted") -> bytes:
    return bytes([STATUS_ABORT]) + pack_text(message)
