"""Client roles for the collaboration protocol.

``participate`` runs an institution that contributes encrypted feature rows
to whichever session the coordinator forwards. ``inquire`` opens a session,
optionally contributes its own rows, and decrypts the returned scores with
the only secret handle in the whole exchange.
"""

from __future__ import annotations

import math
import socket
import time
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from ..fhe import Ciphertext, KeyPair, PublicHandle, encrypt
from ..quant import QuantizedEnsemble
from . import wire

DEFAULT_BATCH_SIZE = 32
DEFAULT_TIMEOUT = 30.0


@dataclass(frozen=True)
class SubmissionReport:
    institution_id: str
    session_id: bytes
    rows_sent: int
    batches_sent: int
    acks_received: int


@dataclass(frozen=True)
class ScoredRow:
    institution_id: str
    row_index: int
    score: int
    probability: float
    label: int


@dataclass(frozen=True)
class InquiryResult:
    session_id: bytes
    rows: tuple[ScoredRow, ...]

    def by_institution(self, institution_id: str) -> tuple[ScoredRow, ...]:
        return tuple(r for r in self.rows if r.institution_id == institution_id)


def _connect(address: tuple[str, int], timeout: float) -> socket.socket:
    sock = socket.create_connection(address, timeout=timeout)
    sock.settimeout(timeout)
    return sock


def _expect(sock: socket.socket, kinds: tuple[type, ...]) -> wire.Message:
    msg = wire.recv_message(sock)
    if msg is None:
        raise wire.BadFrame("connection closed while waiting for a reply")
    if isinstance(msg, wire.Error):
        raise wire.error_for_code(msg.code, msg.detail)
    if not isinstance(msg, kinds):
        names = "/".join(k.__name__ for k in kinds)
        raise wire.BadFrame(f"expected {names}, got {type(msg).__name__}")
    return msg


def _encrypt_rows(
    rows: np.ndarray, n_bits: int, public_key_id: bytes
) -> list[tuple[Ciphertext, ...]]:
    pk = PublicHandle(public_key_id)
    out = []
    for row in np.asarray(rows, dtype=np.int64):
        out.append(tuple(encrypt(pk, int(v), bit_width=n_bits) for v in row))
    return out


def _send_batches(
    sock: socket.socket,
    session: wire.Session,
    rows: Sequence[tuple[Ciphertext, ...]],
    batch_size: int,
) -> tuple[int, int]:
    """Stream rows as final-flag-terminated batches; returns (batches, acks).
    An empty row set still sends one empty final batch so the coordinator
    knows this sender is done."""
    chunks = [rows[i : i + batch_size] for i in range(0, len(rows), batch_size)] or [[]]
    acks = 0
    for seq, chunk in enumerate(chunks):
        batch = wire.EncryptedBatch(
            session_id=session.session_id,
            batch_seq=seq,
            rows=tuple(chunk),
            final=seq == len(chunks) - 1,
        )
        wire.send_message(sock, batch)
        ack = _expect(sock, (wire.Ack,))
        if ack.batch_seq != seq:
            raise wire.BadFrame(f"ack for batch {ack.batch_seq}, expected {seq}")
        acks += 1
    return len(chunks), acks


def participate(
    address: tuple[str, int],
    institution_id: str,
    quantized_rows: np.ndarray,
    tier: str,
    model_n_bits: int,
    session_filter: Optional[Callable[[wire.Session], bool]] = None,
    batch_size: int = DEFAULT_BATCH_SIZE,
    timeout: float = DEFAULT_TIMEOUT,
) -> SubmissionReport:
    """Register with the coordinator, wait for one matching forwarded session,
    contribute local rows under the session's public handle, and return a
    submission report. Raises TierMismatch before any encryption if the
    session asks for a tier this institution did not prepare."""
    rows = np.asarray(quantized_rows, dtype=np.int64)
    if rows.ndim != 2:
        raise ValueError("quantized_rows must be 2-d (n_rows, n_features)")
    with _connect(address, timeout) as sock:
        wire.send_message(sock, wire.Register(institution_id))
        _expect(sock, (wire.Ack,))
        deadline = time.monotonic() + timeout
        while True:
            if time.monotonic() > deadline:
                raise TimeoutError("no session forwarded before timeout")
            fwd = _expect(sock, (wire.QueryForward,))
            session = fwd.session
            if session_filter is None or session_filter(session):
                break
        if session.tier != tier:
            raise wire.TierMismatch(
                f"session wants tier {session.tier!r}, local features are {tier!r}"
            )
        encrypted = _encrypt_rows(rows, model_n_bits, session.public_key_id)
        batches, acks = _send_batches(sock, session, encrypted, batch_size)
    return SubmissionReport(
        institution_id=institution_id,
        session_id=session.session_id,
        rows_sent=len(rows),
        batches_sent=batches if len(rows) else 0,  # the empty final frame is bookkeeping
        acks_received=acks,
    )


def inquire(
    address: tuple[str, int],
    inquiry_id: str,
    model_id: str,
    tier: str,
    keypair: KeyPair,
    model: QuantizedEnsemble,
    quantized_rows: Optional[np.ndarray] = None,
    threshold: float = 0.5,
    batch_size: int = DEFAULT_BATCH_SIZE,
    timeout: float = DEFAULT_TIMEOUT,
    session_id: Optional[bytes] = None,
) -> InquiryResult:
    """Open a scoring session, optionally contribute the inquirer's own rows,
    wait for the encrypted results, and decrypt them locally. ``model`` is
    the same quantized artifact the coordinator serves; it supplies the
    dequantization constants that turn integer scores into probabilities."""
    if session_id is None:
        session_id = keypair.public.key_id  # one keypair per session
    session = wire.Session(
        session_id=session_id,
        inquiry_id=inquiry_id,
        model_id=model_id,
        tier=tier,
        public_key_id=keypair.public.key_id,
        created_at=int(time.time()),
    )
    own_rows: Sequence[tuple[Ciphertext, ...]] = []
    if quantized_rows is not None:
        own_rows = _encrypt_rows(quantized_rows, model.n_bits, keypair.public.key_id)
    with _connect(address, timeout) as sock:
        wire.send_message(sock, wire.QueryInit(session))
        _expect(sock, (wire.Ack,))
        _send_batches(sock, session, own_rows, batch_size)
        done = _expect(sock, (wire.ComputeDone,))
    rows = []
    for institution_id, scores in done.groups:
        for index, ct in enumerate(scores):
            score = _decrypt_score(keypair, ct)
            margin = model.dequant_margin(score)
            probability = _sigmoid(margin)
            rows.append(
                ScoredRow(
                    institution_id=institution_id,
                    row_index=index,
                    score=score,
                    probability=probability,
                    label=int(probability >= threshold),
                )
            )
    return InquiryResult(session_id=session_id, rows=tuple(rows))


def _decrypt_score(keypair: KeyPair, ct: Ciphertext) -> int:
    from ..fhe import decrypt

    return decrypt(keypair.secret, ct)


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)
