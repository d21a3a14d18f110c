"""Protocol and coordinator tests. Server tests bind an ephemeral localhost
TCP port per test and drive real client connections."""

import socket
import threading
import time

import numpy as np
import pytest

from privaml import fhe, quant
from privaml.collab import (
    CollabServer,
    SubmissionReport,
    inquire,
    participate,
)
from privaml.collab import wire
from privaml.quant import QuantParams, QuantTree, QuantizedEnsemble

SID = bytes.fromhex("00112233445566778899aabbccddeeff")
KEY = bytes.fromhex("000102030405060708090a0b0c0d0e0f")


def make_session(**kw):
    kw.setdefault("session_id", SID)
    kw.setdefault("inquiry_id", "inq")
    kw.setdefault("model_id", "aml")
    kw.setdefault("tier", "basic")
    kw.setdefault("public_key_id", KEY)
    kw.setdefault("created_at", 1700000000)
    return wire.Session(**kw)


def make_model(n_bits=4, n_features=2):
    params = QuantParams(
        n_bits=n_bits,
        mins=(0.0,) * n_features,
        maxs=(float((1 << n_bits) - 1),) * n_features,
        scales=(1.0,) * n_features,
        leaf_min=-1.0,
        leaf_max=1.0,
        leaf_scale=0.1,
    )
    tree = QuantTree(
        feature=(0, -1, -1), threshold=(7, 0, 0),
        left=(1, -1, -1), right=(2, -1, -1), value=(0, -8, 7),
    )
    return QuantizedEnsemble(
        trees=(tree,), base_int=0, n_bits=n_bits, n_features=n_features, params=params
    )


def wait_for_peers(server, n, timeout=5.0):
    # registration order decides result grouping, so tests sequence it
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if len(server.registered_institutions()) >= n:
            return
        time.sleep(0.005)
    raise AssertionError(f"server never saw {n} registered peers")


class TestGoldenFrames:
    def test_register(self):
        frame = wire.encode_frame(wire.Register("bankA"))
        assert frame.hex() == "000000090101050062616e6b41"

    def test_query_init(self):
        frame = wire.encode_frame(wire.QueryInit(make_session()))
        assert frame.hex() == (
            "00000035020100112233445566778899aabbccddeeff0300696e710300616d6c0000"
            "0102030405060708090a0b0c0d0e0f00f1536500000000"
        )

    def test_encrypted_batch(self):
        ct = fhe.Ciphertext(key_id=KEY, value=5, bit_width=4)
        frame = wire.encode_frame(
            wire.EncryptedBatch(session_id=SID, batch_seq=1, rows=((ct, ct),), final=True)
        )
        assert frame.hex() == (
            "0000004f040100112233445566778899aabbccddeeff0100000001010002000001020304"
            "05060708090a0b0c0d0e0f00040500000000000000000102030405060708090a0b0c0d0e"
            "0f00040500000000000000"
        )

    def test_compute_done(self):
        ct = fhe.Ciphertext(key_id=KEY, value=-3, bit_width=6, signed=True)
        frame = wire.encode_frame(wire.ComputeDone(session_id=SID, groups=(("inq", (ct,)),)))
        assert frame.hex() == (
            "00000037050100112233445566778899aabbccddeeff01000300696e71010000000001"
            "02030405060708090a0b0c0d0e0f0106fdffffffffffffff"
        )

    def test_error(self):
        frame = wire.encode_frame(wire.Error(bytes(16), wire.ERR_SESSION_EXPIRED, "gone"))
        assert frame.hex() == "0000001a06010000000000000000000000000000000003000400676f6e65"

    def test_ack(self):
        frame = wire.encode_frame(wire.Ack(SID, 7))
        assert frame.hex() == "000000160701" "00112233445566778899aabbccddeeff" "07000000"


class TestCodec:
    MESSAGES = [
        wire.Register("bankB"),
        wire.QueryInit(make_session()),
        wire.QueryForward(make_session(tier="multi_hop")),
        wire.EncryptedBatch(
            session_id=SID,
            batch_seq=3,
            rows=(
                (fhe.Ciphertext(KEY, 1, 4), fhe.Ciphertext(KEY, 15, 4)),
                (fhe.Ciphertext(KEY, 0, 4), fhe.Ciphertext(KEY, 9, 4)),
            ),
        ),
        wire.EncryptedBatch(session_id=SID, batch_seq=0, rows=(), final=True),
        wire.ComputeDone(
            session_id=SID,
            groups=(
                ("inq", (fhe.Ciphertext(KEY, -3, 6, signed=True),)),
                ("bankA", ()),
            ),
        ),
        wire.Error(SID, wire.ERR_INTERNAL, "boom"),
        wire.Ack(SID, 0),
    ]

    @pytest.mark.parametrize("msg", MESSAGES, ids=lambda m: type(m).__name__)
    def test_round_trip(self, msg):
        frame = wire.encode_frame(msg)
        assert wire.decode_frame_body(frame[4:]) == msg

    def test_version_is_checked(self):
        body = wire.encode_frame(wire.Register("x"))[4:]
        with pytest.raises(wire.VersionMismatch):
            wire.decode_frame_body(bytes([body[0], 2]) + body[2:])

    def test_truncated_payload(self):
        with pytest.raises(wire.BadFrame):
            wire.decode_payload(wire.MSG_REGISTER, b"\x05\x00ab")

    def test_trailing_bytes(self):
        _, payload = wire.encode_payload(wire.Ack(SID, 1))
        with pytest.raises(wire.BadFrame):
            wire.decode_payload(wire.MSG_ACK, payload + b"\x00")

    def test_unknown_message_type(self):
        with pytest.raises(wire.BadFrame):
            wire.decode_payload(99, b"")

    def test_ragged_batch_rejected(self):
        batch = wire.EncryptedBatch(
            session_id=SID,
            batch_seq=0,
            rows=((fhe.Ciphertext(KEY, 1, 4),), (fhe.Ciphertext(KEY, 1, 4),) * 2),
        )
        with pytest.raises(wire.BadFrame):
            wire.encode_payload(batch)

    def test_bad_tier_index(self):
        _, payload = wire.encode_payload(wire.QueryInit(make_session()))
        tier_at = 16 + 2 + 3 + 2 + 3  # session id + two length-prefixed strings
        assert payload[tier_at] == 0
        bad = payload[:tier_at] + b"\x09" + payload[tier_at + 1 :]
        with pytest.raises(wire.BadFrame):
            wire.decode_payload(wire.MSG_QUERY_INIT, bad)

    def test_bad_session_id_length(self):
        with pytest.raises(wire.BadFrame):
            wire.encode_payload(wire.Ack(b"short", 0))

    def test_error_code_mapping(self):
        assert isinstance(wire.error_for_code(wire.ERR_UNKNOWN_MODEL, "x"), wire.UnknownModel)
        assert isinstance(wire.error_for_code(wire.ERR_TIER_MISMATCH, "x"), wire.TierMismatch)
        assert isinstance(wire.error_for_code(250, "x"), wire.ProtocolError)
        assert wire.error_for_code(wire.ERR_BAD_FRAME, "x").code == wire.ERR_BAD_FRAME


class TestSecretBoundary:
    def test_secret_handle_never_serializes(self):
        sk = fhe.keygen(0).secret
        for msg in (
            wire.Register(institution_id=sk),
            wire.Ack(session_id=sk, batch_seq=0),
            wire.EncryptedBatch(session_id=SID, batch_seq=0, rows=((sk,),)),
        ):
            with pytest.raises(TypeError, match="not serializable"):
                wire.encode_frame(msg)

    def test_ciphertext_slot_rejects_other_types(self):
        batch = wire.EncryptedBatch(session_id=SID, batch_seq=0, rows=((42,),))
        with pytest.raises(TypeError):
            wire.encode_frame(batch)


class TestSocketFraming:
    def test_round_trip_over_socketpair(self):
        a, b = socket.socketpair()
        with a, b:
            wire.send_message(a, wire.Register("bankZ"))
            assert wire.recv_message(b) == wire.Register("bankZ")

    def test_clean_eof_returns_none(self):
        a, b = socket.socketpair()
        with b:
            a.close()
            assert wire.recv_message(b) is None

    def test_length_out_of_range(self):
        a, b = socket.socketpair()
        with a, b:
            a.sendall(b"\x00\x00\x00\x01\x00")
            with pytest.raises(wire.BadFrame):
                wire.recv_message(b)

    def test_mid_frame_close(self):
        a, b = socket.socketpair()
        with b:
            a.sendall(b"\x00\x00\x00\x0a\x01\x01")
            a.close()
            with pytest.raises(wire.BadFrame):
                wire.recv_message(b)


class TestSessions:
    def test_two_participants_full_round(self):
        model = make_model()
        rng = np.random.default_rng(0)
        rows = {
            "inq": rng.integers(0, 16, size=(3, 2)),
            "bankA": rng.integers(0, 16, size=(5, 2)),
            "bankB": rng.integers(0, 16, size=(2, 2)),
        }
        reports = {}

        def run_participant(name, batch_size=32):
            reports[name] = participate(
                server.address, name, rows[name], "basic", model.n_bits,
                batch_size=batch_size,
            )

        with CollabServer({"aml": model}) as server:
            ta = threading.Thread(target=run_participant, args=("bankA", 2))
            ta.start()
            wait_for_peers(server, 1)
            tb = threading.Thread(target=run_participant, args=("bankB",))
            tb.start()
            wait_for_peers(server, 2)
            result = inquire(
                server.address, "inq", "aml", "basic",
                fhe.keygen(42), model, quantized_rows=rows["inq"],
            )
            ta.join(timeout=10)
            tb.join(timeout=10)

        assert [r.institution_id for r in result.rows] == ["inq"] * 3 + ["bankA"] * 5 + [
            "bankB"
        ] * 2
        for name in ("inq", "bankA", "bankB"):
            scored = result.by_institution(name)
            scores, probs, labels = quant.batch_predictions(model, rows[name])
            assert [r.score for r in scored] == scores.tolist()
            assert [r.label for r in scored] == labels.tolist()
            for r, p in zip(scored, probs):
                assert r.probability == pytest.approx(p, rel=1e-12)
            assert [r.row_index for r in scored] == list(range(len(rows[name])))
        assert reports["bankA"] == SubmissionReport(
            institution_id="bankA",
            session_id=result.session_id,
            rows_sent=5,
            batches_sent=3,
            acks_received=3,
        )
        assert reports["bankB"].rows_sent == 2

    def test_unknown_model(self):
        with CollabServer({"aml": make_model()}) as server:
            with pytest.raises(wire.UnknownModel):
                inquire(server.address, "inq", "nope", "basic", fhe.keygen(1), make_model())

    def test_inquiry_without_participants_or_rows(self):
        with CollabServer({"aml": make_model()}) as server:
            result = inquire(server.address, "inq", "aml", "basic", fhe.keygen(2), make_model())
        assert result.rows == ()

    def test_tier_mismatch_is_raised_before_contributing(self):
        model = make_model()
        failure = []

        def run_participant():
            try:
                participate(server.address, "bankA", np.zeros((2, 2), dtype=int),
                            "multi_hop", model.n_bits)
            except wire.TierMismatch as exc:
                failure.append(exc)

        with CollabServer({"aml": model}, batch_window=0.4) as server:
            t = threading.Thread(target=run_participant)
            t.start()
            wait_for_peers(server, 1)
            result = inquire(
                server.address, "inq", "aml", "basic", fhe.keygen(3), model,
                quantized_rows=np.array([[1, 1]]),
            )
            t.join(timeout=10)
        assert len(failure) == 1
        assert result.by_institution("bankA") == ()  # window closed without it
        assert len(result.by_institution("inq")) == 1

    def test_batch_window_closes_silent_participants(self):
        model = make_model()
        with CollabServer({"aml": model}, batch_window=0.4) as server:
            silent = socket.create_connection(server.address, timeout=5)
            with silent:
                wire.send_message(silent, wire.Register("bankX"))
                assert isinstance(wire.recv_message(silent), wire.Ack)
                started = time.monotonic()
                result = inquire(
                    server.address, "inq", "aml", "basic", fhe.keygen(4), model,
                    quantized_rows=np.array([[9, 0], [2, 3]]),
                )
                elapsed = time.monotonic() - started
        assert elapsed >= 0.3
        assert result.by_institution("bankX") == ()
        assert len(result.by_institution("inq")) == 2

    def test_stale_session_batch(self):
        with CollabServer({"aml": make_model()}) as server:
            with socket.create_connection(server.address, timeout=5) as sock:
                wire.send_message(sock, wire.Register("bankA"))
                assert isinstance(wire.recv_message(sock), wire.Ack)
                wire.send_message(
                    sock, wire.EncryptedBatch(session_id=b"\xee" * 16, batch_seq=0, rows=())
                )
                reply = wire.recv_message(sock)
        assert isinstance(reply, wire.Error)
        assert reply.code == wire.ERR_SESSION_EXPIRED

    def test_duplicate_batch_sequence(self):
        model = make_model()
        kp = fhe.keygen(5)
        with CollabServer({"aml": model}) as server:
            with socket.create_connection(server.address, timeout=5) as sock:
                session = make_session(session_id=kp.public.key_id,
                                       public_key_id=kp.public.key_id)
                wire.send_message(sock, wire.QueryInit(session))
                assert isinstance(wire.recv_message(sock), wire.Ack)
                batch = wire.EncryptedBatch(session_id=session.session_id, batch_seq=0, rows=())
                wire.send_message(sock, batch)
                assert isinstance(wire.recv_message(sock), wire.Ack)
                wire.send_message(sock, batch)
                reply = wire.recv_message(sock)
        assert isinstance(reply, wire.Error)
        assert reply.code == wire.ERR_BAD_FRAME

    def test_garbage_frame_gets_error_reply(self):
        with CollabServer({"aml": make_model()}) as server:
            with socket.create_connection(server.address, timeout=5) as sock:
                sock.sendall(b"\x00\x00\x00\x02\x63\x01")  # unknown message type 0x63
                reply = wire.recv_message(sock)
        assert isinstance(reply, wire.Error)
        assert reply.code == wire.ERR_BAD_FRAME

    def test_results_unreadable_without_inquirer_secret(self):
        # raw exchange: the coordinator only ever sees public material,
        # and the returned scores decrypt solely under the inquirer's key
        model = make_model()
        kp = fhe.keygen(6)
        other = fhe.keygen(7)
        row = np.array([9, 4])
        with CollabServer({"aml": model}) as server:
            with socket.create_connection(server.address, timeout=5) as sock:
                session = make_session(session_id=kp.public.key_id,
                                       public_key_id=kp.public.key_id)
                wire.send_message(sock, wire.QueryInit(session))
                assert isinstance(wire.recv_message(sock), wire.Ack)
                cts = tuple(
                    fhe.encrypt(kp.public, int(v), model.n_bits) for v in row
                )
                wire.send_message(
                    sock,
                    wire.EncryptedBatch(
                        session_id=session.session_id, batch_seq=0, rows=(cts,), final=True
                    ),
                )
                assert isinstance(wire.recv_message(sock), wire.Ack)
                done = wire.recv_message(sock)
        assert isinstance(done, wire.ComputeDone)
        ((name, scores),) = done.groups
        assert name == "inq" and len(scores) == 1
        with pytest.raises(fhe.KeyMismatch):
            fhe.decrypt(other.secret, scores[0])
        got = fhe.decrypt(kp.secret, scores[0])
        assert got == quant.predict_quantized(model, row).score
