"""Coordinator service for multi-party encrypted scoring.

One TCP server holds the quantized models and session state. Participating
institutions register on long-lived connections; an inquiring institution
opens a session naming a model and feature tier, the server forwards the
session record to every currently registered participant, everyone streams
encrypted feature batches, and the server evaluates the model homomorphically
and returns the still-encrypted scores to the inquirer, grouped per source
institution. The server never holds a secret handle, so it can compute on
the data but not read it.
"""

from __future__ import annotations

import socket
import threading
import time
from dataclasses import dataclass, field
from typing import Optional

from ..errors import PipelineError
from ..fhe import Ciphertext, EvalContext, eval_ensemble_encrypted
from ..quant import QuantizedEnsemble
from . import wire

ZERO_SESSION = bytes(16)


@dataclass
class _Peer:
    institution_id: str
    sock: socket.socket
    write_lock: threading.Lock = field(default_factory=threading.Lock)

    def send(self, msg: wire.Message) -> None:
        with self.write_lock:
            wire.send_message(self.sock, msg)


@dataclass
class _SessionState:
    session: wire.Session
    inquiry_peer: _Peer
    expected: tuple[str, ...]  # participant ids, registration order
    batches: dict[str, dict[int, tuple[tuple[Ciphertext, ...], ...]]] = field(default_factory=dict)
    finals: set = field(default_factory=set)
    done: bool = False
    lock: threading.Lock = field(default_factory=threading.Lock)
    timer: Optional[threading.Timer] = None

    def senders(self) -> tuple[str, ...]:
        """Inquirer first, then participants in registration order."""
        return (self.session.inquiry_id,) + self.expected

    def all_final(self) -> bool:
        return all(name in self.finals for name in self.senders())


class CollabServer:
    """Threaded coordinator. ``with CollabServer(models) as srv: ...`` binds
    an ephemeral localhost port; ``srv.address`` is (host, port)."""

    def __init__(
        self,
        models: dict[str, QuantizedEnsemble],
        host: str = "127.0.0.1",
        port: int = 0,
        batch_window: float = 10.0,
    ):
        self.models = dict(models)
        self.batch_window = batch_window
        self._listener = socket.create_server((host, port))
        # closing a socket does not wake a thread blocked in accept(); poll
        self._listener.settimeout(0.25)
        self.address = self._listener.getsockname()[:2]
        self._peers: list[_Peer] = []
        self._sessions: dict[bytes, _SessionState] = {}
        self._state_lock = threading.Lock()
        self._stopping = threading.Event()
        self._accept_thread: Optional[threading.Thread] = None
        self.eval_context = EvalContext()

    # -- lifecycle ----------------------------------------------------------

    def start(self) -> "CollabServer":
        self._accept_thread = threading.Thread(target=self._accept_loop, daemon=True)
        self._accept_thread.start()
        return self

    def stop(self) -> None:
        self._stopping.set()
        with self._state_lock:
            sessions = list(self._sessions.values())
            peers = list(self._peers)
        for state in sessions:
            if state.timer is not None:
                state.timer.cancel()
        self._listener.close()
        for peer in peers:
            try:
                peer.sock.close()
            except OSError:
                pass
        if self._accept_thread is not None:
            self._accept_thread.join(timeout=5)

    def __enter__(self) -> "CollabServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()

    def registered_institutions(self) -> tuple[str, ...]:
        """Institutions currently registered and awaiting a session, in
        registration order (which is also the result grouping order)."""
        with self._state_lock:
            return tuple(p.institution_id for p in self._peers)

    # -- connection handling --------------------------------------------------

    def _accept_loop(self) -> None:
        while not self._stopping.is_set():
            try:
                conn, _ = self._listener.accept()
            except TimeoutError:
                continue
            except OSError:
                return
            threading.Thread(target=self._serve_connection, args=(conn,), daemon=True).start()

    def _serve_connection(self, conn: socket.socket) -> None:
        peer = _Peer(institution_id="", sock=conn)
        try:
            while True:
                try:
                    msg = wire.recv_message(conn)
                except wire.ProtocolError as exc:
                    peer.send(wire.Error(ZERO_SESSION, exc.code, str(exc)))
                    continue
                except OSError:
                    return
                if msg is None:
                    return
                try:
                    self._dispatch(peer, msg)
                except wire.ProtocolError as exc:
                    session_id = getattr(msg, "session_id", ZERO_SESSION)
                    peer.send(wire.Error(session_id, exc.code, str(exc)))
        except OSError:
            return
        finally:
            self._drop_peer(peer)
            try:
                conn.close()
            except OSError:
                pass

    def _drop_peer(self, peer: _Peer) -> None:
        with self._state_lock:
            if peer in self._peers:
                self._peers.remove(peer)

    def _dispatch(self, peer: _Peer, msg: wire.Message) -> None:
        if isinstance(msg, wire.Register):
            peer.institution_id = msg.institution_id
            with self._state_lock:
                if peer not in self._peers:
                    self._peers.append(peer)
            peer.send(wire.Ack(ZERO_SESSION, 0))
        elif isinstance(msg, wire.QueryInit):
            self._open_session(peer, msg.session)
        elif isinstance(msg, wire.EncryptedBatch):
            self._accept_batch(peer, msg)
        else:
            raise wire.BadFrame(f"unexpected {type(msg).__name__} from client")

    # -- session lifecycle ----------------------------------------------------

    def _open_session(self, peer: _Peer, session: wire.Session) -> None:
        if session.model_id not in self.models:
            raise wire.UnknownModel(f"no model named {session.model_id!r}")
        peer.institution_id = session.inquiry_id
        with self._state_lock:
            if session.session_id in self._sessions:
                raise wire.BadFrame("session id already in use")
            expected = tuple(p.institution_id for p in self._peers if p is not peer)
            snapshot = list(p for p in self._peers if p is not peer)
            state = _SessionState(session=session, inquiry_peer=peer, expected=expected)
            self._sessions[session.session_id] = state
        for participant in snapshot:
            try:
                participant.send(wire.QueryForward(session))
            except OSError:
                pass
        state.timer = threading.Timer(self.batch_window, self._close_session, args=(state, True))
        state.timer.daemon = True
        state.timer.start()
        peer.send(wire.Ack(session.session_id, 0))

    def _accept_batch(self, peer: _Peer, batch: wire.EncryptedBatch) -> None:
        with self._state_lock:
            state = self._sessions.get(batch.session_id)
        if state is None:
            raise wire.SessionExpired("unknown session id")
        if not peer.institution_id:
            raise wire.BadFrame("batch from an unregistered connection")
        with state.lock:
            if state.done:
                raise wire.SessionExpired("session already completed")
            name = peer.institution_id
            if name not in state.senders():
                raise wire.BadFrame(f"{name!r} is not part of this session")
            per_sender = state.batches.setdefault(name, {})
            if batch.batch_seq in per_sender:
                raise wire.BadFrame(f"duplicate batch sequence {batch.batch_seq}")
            per_sender[batch.batch_seq] = batch.rows
            if batch.final:
                state.finals.add(name)
            complete = state.all_final()
        peer.send(wire.Ack(batch.session_id, batch.batch_seq))
        if complete:
            self._close_session(state, timed_out=False)

    def _close_session(self, state: _SessionState, timed_out: bool) -> None:
        with state.lock:
            if state.done:
                return
            state.done = True
        if state.timer is not None:
            state.timer.cancel()
        try:
            groups = self._evaluate_session(state)
        except PipelineError as exc:
            try:
                state.inquiry_peer.send(
                    wire.Error(state.session.session_id, wire.ERR_INTERNAL, str(exc))
                )
            except OSError:
                pass
            return
        try:
            state.inquiry_peer.send(wire.ComputeDone(state.session.session_id, groups))
        except OSError:
            pass

    def _evaluate_session(
        self, state: _SessionState
    ) -> tuple[tuple[str, tuple[Ciphertext, ...]], ...]:
        model = self.models[state.session.model_id]
        groups = []
        for name in state.senders():
            per_sender = state.batches.get(name, {})
            scores = []
            for seq in sorted(per_sender):
                for row in per_sender[seq]:
                    scores.append(eval_ensemble_encrypted(model, row, ctx=self.eval_context))
            groups.append((name, tuple(scores)))
        return tuple(groups)
