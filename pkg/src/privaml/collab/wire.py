"""Binary wire format for the collaboration protocol.

Frames are {length: u32 big-endian}{type: u8}{version: u8}{payload}, where
length counts everything after itself (type + version + payload). All
integers inside payloads are little-endian; strings are u16 length plus
UTF-8 bytes; ciphertexts use the backend's fixed 26-byte encoding. See
protocol.md for byte layouts and golden fixtures.

Secret handles have no encoding: attempting to serialize one raises, which
is the structural guarantee that a server can never be handed decryption
capability through this protocol.
"""

from __future__ import annotations

import socket
import struct
from dataclasses import dataclass
from typing import Optional, Union

from ..errors import PipelineError
from ..fhe import (
    CIPHERTEXT_WIRE_BYTES,
    Ciphertext,
    SecretHandle,
    ciphertext_from_bytes,
    ciphertext_to_bytes,
)
from ..graphfeat import TIERS

PROTOCOL_VERSION = 1

MSG_REGISTER = 1
MSG_QUERY_INIT = 2
MSG_QUERY_FORWARD = 3
MSG_ENCRYPTED_BATCH = 4
MSG_COMPUTE_DONE = 5
MSG_ERROR = 6
MSG_ACK = 7

ERR_UNKNOWN_MODEL = 1
ERR_VERSION_MISMATCH = 2
ERR_SESSION_EXPIRED = 3
ERR_TIER_MISMATCH = 4
ERR_BAD_FRAME = 5
ERR_INTERNAL = 6

_FLAG_FINAL = 0x01

MAX_FRAME_BYTES = 16 * 1024 * 1024


class ProtocolError(PipelineError):
    """Base for protocol-level failures."""

    code = ERR_INTERNAL


class UnknownModel(ProtocolError):
    code = ERR_UNKNOWN_MODEL


class VersionMismatch(ProtocolError):
    code = ERR_VERSION_MISMATCH


class SessionExpired(ProtocolError):
    code = ERR_SESSION_EXPIRED


class TierMismatch(ProtocolError):
    code = ERR_TIER_MISMATCH


class BadFrame(ProtocolError):
    code = ERR_BAD_FRAME


_CODE_TO_ERROR = {
    ERR_UNKNOWN_MODEL: UnknownModel,
    ERR_VERSION_MISMATCH: VersionMismatch,
    ERR_SESSION_EXPIRED: SessionExpired,
    ERR_TIER_MISMATCH: TierMismatch,
    ERR_BAD_FRAME: BadFrame,
    ERR_INTERNAL: ProtocolError,
}


def error_for_code(code: int, detail: str) -> ProtocolError:
    return _CODE_TO_ERROR.get(code, ProtocolError)(detail)


# ---------------------------------------------------------------------------
# Message types


@dataclass(frozen=True)
class Session:
    session_id: bytes  # 16 bytes
    inquiry_id: str
    model_id: str
    tier: str
    public_key_id: bytes  # 16 bytes
    created_at: int


@dataclass(frozen=True)
class Register:
    institution_id: str


@dataclass(frozen=True)
class QueryInit:
    session: Session


@dataclass(frozen=True)
class QueryForward:
    session: Session


@dataclass(frozen=True)
class EncryptedBatch:
    session_id: bytes
    batch_seq: int
    rows: tuple[tuple[Ciphertext, ...], ...]
    final: bool = False


@dataclass(frozen=True)
class ComputeDone:
    session_id: bytes
    groups: tuple[tuple[str, tuple[Ciphertext, ...]], ...]


@dataclass(frozen=True)
class Error:
    session_id: bytes
    code: int
    detail: str


@dataclass(frozen=True)
class Ack:
    session_id: bytes
    batch_seq: int


Message = Union[Register, QueryInit, QueryForward, EncryptedBatch, ComputeDone, Error, Ack]


# ---------------------------------------------------------------------------
# Payload primitives


def _no_secrets(value) -> None:
    if isinstance(value, SecretHandle):
        raise TypeError("secret handles are not serializable")


def _pack_str(s: str) -> bytes:
    _no_secrets(s)
    raw = s.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise BadFrame("string field too long")
    return struct.pack("<H", len(raw)) + raw


def _pack_bytes16(b: bytes) -> bytes:
    _no_secrets(b)
    if not isinstance(b, (bytes, bytearray)) or len(b) != 16:
        raise BadFrame("expected a 16-byte identifier")
    return bytes(b)


def _pack_ct(ct: Ciphertext) -> bytes:
    _no_secrets(ct)
    if not isinstance(ct, Ciphertext):
        raise TypeError(f"expected a Ciphertext, got {type(ct).__name__}")
    return ciphertext_to_bytes(ct)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise BadFrame("payload truncated")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def string(self) -> str:
        return self.take(self.u16()).decode("utf-8")

    def ct(self) -> Ciphertext:
        return ciphertext_from_bytes(self.take(CIPHERTEXT_WIRE_BYTES))

    def done(self) -> None:
        if self.pos != len(self.buf):
            raise BadFrame("trailing bytes in payload")


def _tier_index(tier: str) -> int:
    try:
        return TIERS.index(tier)
    except ValueError:
        raise BadFrame(f"unknown tier {tier!r}")


def _pack_session(s: Session) -> bytes:
    return (
        _pack_bytes16(s.session_id)
        + _pack_str(s.inquiry_id)
        + _pack_str(s.model_id)
        + bytes([_tier_index(s.tier)])
        + _pack_bytes16(s.public_key_id)
        + struct.pack("<Q", s.created_at)
    )


def _read_session(r: _Reader) -> Session:
    session_id = r.take(16)
    inquiry_id = r.string()
    model_id = r.string()
    tier_idx = r.u8()
    if tier_idx >= len(TIERS):
        raise BadFrame(f"tier index {tier_idx} out of range")
    public_key_id = r.take(16)
    created_at = r.u64()
    return Session(
        session_id=session_id,
        inquiry_id=inquiry_id,
        model_id=model_id,
        tier=TIERS[tier_idx],
        public_key_id=public_key_id,
        created_at=created_at,
    )


def encode_payload(msg: Message) -> tuple[int, bytes]:
    """(message type byte, payload bytes) for one message."""
    _no_secrets(msg)
    if isinstance(msg, Register):
        return MSG_REGISTER, _pack_str(msg.institution_id)
    if isinstance(msg, QueryInit):
        return MSG_QUERY_INIT, _pack_session(msg.session)
    if isinstance(msg, QueryForward):
        return MSG_QUERY_FORWARD, _pack_session(msg.session)
    if isinstance(msg, EncryptedBatch):
        width = len(msg.rows[0]) if msg.rows else 0
        for row in msg.rows:
            if len(row) != width:
                raise BadFrame("ragged encrypted batch")
        body = (
            _pack_bytes16(msg.session_id)
            + struct.pack("<I", msg.batch_seq)
            + bytes([_FLAG_FINAL if msg.final else 0])
            + struct.pack("<HH", len(msg.rows), width)
        )
        for row in msg.rows:
            for ct in row:
                body += _pack_ct(ct)
        return MSG_ENCRYPTED_BATCH, body
    if isinstance(msg, ComputeDone):
        body = _pack_bytes16(msg.session_id) + struct.pack("<H", len(msg.groups))
        for institution_id, cts in msg.groups:
            body += _pack_str(institution_id) + struct.pack("<I", len(cts))
            for ct in cts:
                body += _pack_ct(ct)
        return MSG_COMPUTE_DONE, body
    if isinstance(msg, Error):
        return MSG_ERROR, _pack_bytes16(msg.session_id) + struct.pack("<H", msg.code) + _pack_str(
            msg.detail
        )
    if isinstance(msg, Ack):
        return MSG_ACK, _pack_bytes16(msg.session_id) + struct.pack("<I", msg.batch_seq)
    raise TypeError(f"cannot encode {type(msg).__name__}")


def decode_payload(msg_type: int, payload: bytes) -> Message:
    r = _Reader(payload)
    if msg_type == MSG_REGISTER:
        msg: Message = Register(institution_id=r.string())
    elif msg_type == MSG_QUERY_INIT:
        msg = QueryInit(session=_read_session(r))
    elif msg_type == MSG_QUERY_FORWARD:
        msg = QueryForward(session=_read_session(r))
    elif msg_type == MSG_ENCRYPTED_BATCH:
        session_id = r.take(16)
        batch_seq = r.u32()
        flags = r.u8()
        n_rows = r.u16()
        width = r.u16()
        rows = tuple(tuple(r.ct() for _ in range(width)) for _ in range(n_rows))
        msg = EncryptedBatch(
            session_id=session_id,
            batch_seq=batch_seq,
            rows=rows,
            final=bool(flags & _FLAG_FINAL),
        )
    elif msg_type == MSG_COMPUTE_DONE:
        session_id = r.take(16)
        n_groups = r.u16()
        groups = []
        for _ in range(n_groups):
            institution_id = r.string()
            n_results = r.u32()
            groups.append((institution_id, tuple(r.ct() for _ in range(n_results))))
        msg = ComputeDone(session_id=session_id, groups=tuple(groups))
    elif msg_type == MSG_ERROR:
        msg = Error(session_id=r.take(16), code=r.u16(), detail=r.string())
    elif msg_type == MSG_ACK:
        msg = Ack(session_id=r.take(16), batch_seq=r.u32())
    else:
        raise BadFrame(f"unknown message type {msg_type}")
    r.done()
    return msg


def encode_frame(msg: Message) -> bytes:
    msg_type, payload = encode_payload(msg)
    body = bytes([msg_type, PROTOCOL_VERSION]) + payload
    return struct.pack(">I", len(body)) + body


def decode_frame_body(body: bytes) -> Message:
    """Decode the post-length part of a frame, checking the version byte."""
    if len(body) < 2:
        raise BadFrame("frame too short")
    version = body[1]
    if version != PROTOCOL_VERSION:
        raise VersionMismatch(f"peer speaks version {version}, this side {PROTOCOL_VERSION}")
    return decode_payload(body[0], body[2:])


# ---------------------------------------------------------------------------
# Socket helpers


def _recv_exact(sock: socket.socket, n: int) -> Optional[bytes]:
    chunks = []
    remaining = n
    while remaining:
        chunk = sock.recv(remaining)
        if not chunk:
            return None
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def send_message(sock: socket.socket, msg: Message) -> None:
    sock.sendall(encode_frame(msg))


def recv_message(sock: socket.socket) -> Optional[Message]:
    """Read one frame; None on clean EOF. Raises ProtocolError subclasses
    on malformed or mismatched frames."""
    header = _recv_exact(sock, 4)
    if header is None:
        return None
    (length,) = struct.unpack(">I", header)
    if length < 2 or length > MAX_FRAME_BYTES:
        raise BadFrame(f"frame length {length} out of range")
    body = _recv_exact(sock, length)
    if body is None:
        raise BadFrame("connection closed mid-frame")
    return decode_frame_body(body)
