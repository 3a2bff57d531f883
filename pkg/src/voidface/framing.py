"""Wire framing for out-of-process peers (external trainer bridge,
optional real-socket nodes).

Each frame is a 4-byte big-endian length prefix followed by a UTF-8
JSON body. Binary payloads (share or patch bytes) travel base64-encoded
inside the JSON.
"""

from __future__ import annotations

import base64
import json
import socket
import struct

from .errors import ConfigError

MAX_FRAME = 64 * 1024 * 1024


def encode_frame(message: dict) -> bytes:
    body = json.dumps(message, sort_keys=True).encode("utf-8")
    return struct.pack(">I", len(body)) + body


def decode_frame(data: bytes) -> tuple[dict, bytes]:
    """Parse one frame off the front of ``data``; returns (message, rest)."""
    if len(data) < 4:
        raise ConfigError("frame shorter than its length prefix")
    (length,) = struct.unpack(">I", data[:4])
    if length > MAX_FRAME:
        raise ConfigError(f"frame of {length} bytes exceeds limit")
    if len(data) < 4 + length:
        raise ConfigError("truncated frame")
    body = data[4 : 4 + length]
    return json.loads(body.decode("utf-8")), data[4 + length :]


def read_frame(sock: socket.socket) -> dict | None:
    """Blocking read of one frame; None on clean connection close."""
    header = _read_exact(sock, 4)
    if header is None:
        return None
    (length,) = struct.unpack(">I", header)
    if length > MAX_FRAME:
        raise ConfigError(f"frame of {length} bytes exceeds limit")
    body = _read_exact(sock, length)
    if body is None:
        raise ConfigError("connection closed mid-frame")
    return json.loads(body.decode("utf-8"))


def write_frame(sock: socket.socket, message: dict) -> None:
    sock.sendall(encode_frame(message))


def _read_exact(sock: socket.socket, n: int) -> bytes | None:
    chunks = b""
    while len(chunks) < n:
        chunk = sock.recv(n - len(chunks))
        if not chunk:
            return None if not chunks else chunks
        chunks += chunk
    return chunks


def b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def unb64(text: str) -> bytes:
    return base64.b64decode(text.encode("ascii"))
