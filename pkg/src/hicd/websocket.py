"""Minimal server-side WebSocket framing (text, ping/pong, close).

Just enough of RFC 6455 for the browser terminal: one JSON message per
text frame.  No extensions, no fragmentation of outgoing frames.
"""

from __future__ import annotations

import base64
import hashlib
import struct

_MAGIC = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"

OP_CONT = 0x0
OP_TEXT = 0x1
OP_BINARY = 0x2
OP_CLOSE = 0x8
OP_PING = 0x9
OP_PONG = 0xA


def accept_key(client_key: str) -> str:
    digest = hashlib.sha1((client_key + _MAGIC).encode("ascii")).digest()
    return base64.b64encode(digest).decode("ascii")


def handshake_response(client_key: str) -> bytes:
    return (
        "HTTP/1.1 101 Switching Protocols\r\n"
        "Upgrade: websocket\r\n"
        "Connection: Upgrade\r\n"
        f"Sec-WebSocket-Accept: {accept_key(client_key)}\r\n"
        "\r\n"
    ).encode("ascii")


def encode_frame(payload: bytes, opcode: int = OP_TEXT) -> bytes:
    head = bytes([0x80 | opcode])
    n = len(payload)
    if n < 126:
        head += bytes([n])
    elif n < 1 << 16:
        head += bytes([126]) + struct.pack(">H", n)
    else:
        head += bytes([127]) + struct.pack(">Q", n)
    return head + payload


def encode_text(text: str) -> bytes:
    return encode_frame(text.encode("utf-8"), OP_TEXT)


def encode_close(code: int = 1000) -> bytes:
    return encode_frame(struct.pack(">H", code), OP_CLOSE)


class FrameReader:
    """Incremental frame decoder over a recv-style callable."""

    def __init__(self, recv_exact):
        self._recv = recv_exact

    def next_frame(self) -> tuple[int, bytes] | None:
        """(opcode, payload) of the next complete message frame, or None on
        a clean close.  Reassembles client fragmentation."""
        opcode = None
        buffer = b""
        while True:
            head = self._recv(2)
            if head is None:
                return None
            fin = bool(head[0] & 0x80)
            op = head[0] & 0x0F
            masked = bool(head[1] & 0x80)
            length = head[1] & 0x7F
            if length == 126:
                ext = self._recv(2)
                if ext is None:
                    return None
                length = struct.unpack(">H", ext)[0]
            elif length == 127:
                ext = self._recv(8)
                if ext is None:
                    return None
                length = struct.unpack(">Q", ext)[0]
            mask = b""
            if masked:
                mask = self._recv(4)
                if mask is None:
                    return None
            payload = self._recv(length) if length else b""
            if payload is None:
                return None
            if masked:
                payload = bytes(b ^ mask[i % 4] for i, b in enumerate(payload))
            if op in (OP_CLOSE, OP_PING, OP_PONG):
                return op, payload
            if opcode is None:
                opcode = op
            buffer += payload
            if fin:
                return opcode, buffer
