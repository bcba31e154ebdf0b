import json

import pytest

from pbc_bb84.bb84_frames import Basis, Frame, FrameClass, MeasurementRecord
from pbc_bb84.codebook import Codebook, MODE_COMPRESSED
from pbc_bb84 import commitment_protocol as proto
from pbc_bb84.commitment_protocol import (
    CheatStrategy,
    CommitMessage,
    InsufficientKeyError,
    KeyBuffer,
    MissingPayloadError,
    SessionConfig,
    UnveilSchedule,
    Verdict,
    bob_verify,
    otp_decrypt,
    otp_encrypt,
    relay_consistency_check,
    run_session,
    simulate_cheating_alice,
    try_commit,
)

R, D = Basis.RECTILINEAR, Basis.DIAGONAL


def make_buffer(bits):
    buf = KeyBuffer()
    buf.extend(bits)
    return buf


def make_frame(alice_bases, outcomes, bob_bases=None, bob_bits=None):
    bob_bases = bob_bases or alice_bases
    bob_bits = bob_bits if bob_bits is not None else outcomes
    records = [
        MeasurementRecord(i, alice_bases[i], outcomes[i], (bob_bases[i], bob_bits[i]))
        for i in range(len(alice_bases))
    ]
    n_quarter = len(records) // 4
    rect = sum(1 for b in alice_bases if b is R)
    cls = (
        FrameClass.COMMITMENT_CANDIDATE
        if rect == 2 * n_quarter
        else FrameClass.NORMAL
    )
    return Frame(records, cls)


class TestKeyBuffer:
    def test_fifo_offsets(self):
        buf = make_buffer([1, 0, 1, 1, 0, 0, 1, 0])
        _, off1 = otp_encrypt((0, 0, 0, 0), buf)
        _, off2 = otp_encrypt((1, 1, 1, 1), buf)
        assert (off1, off2) == (0, 4)
        assert buf.available == 0

    def test_zero_key(self):
        buf = make_buffer([0, 0, 0, 0])
        ct, _ = otp_encrypt((0, 0, 0, 0), buf)
        assert ct == (0, 0, 0, 0)

    def test_xor_involution(self):
        buf = make_buffer([1, 0, 1, 1, 0])
        plaintext = (1, 1, 0, 1, 0)
        ct, off = otp_encrypt(plaintext, buf)
        assert ct == (0, 1, 1, 0, 0)
        assert otp_decrypt(ct, buf, off) == plaintext

    def test_insufficient_key_no_partial_consumption(self):
        buf = make_buffer([1, 0])
        with pytest.raises(InsufficientKeyError):
            otp_encrypt((1, 1, 1), buf)
        assert buf.consumed == 0
        assert buf.available == 2

    def test_peek_does_not_consume(self):
        buf = make_buffer([1, 0, 1])
        assert buf.peek(0, 3) == (1, 0, 1)
        assert buf.consumed == 0
        with pytest.raises(ValueError):
            buf.peek(1, 3)


class TestTryCommit:
    def _buffers(self):
        return make_buffer([0] * 16), make_buffer([1] * 16)

    def test_commit_produced(self):
        frame = make_frame([R, R, D, R, D, R, D, D], [0, 1, 0, 1, 1, 0, 0, 1])
        # rect outcomes in record order: 0,1,1,0 -> balanced
        cb = Codebook(2, 6)
        b0, b1 = self._buffers()
        msgs = try_commit(frame, 0, cb, b0, b1, frame_id=7)
        assert msgs is not None
        msg0, msg1 = msgs
        assert msg0.channel == "p0" and msg1.channel == "p1"
        assert msg0.frame_id == 7
        assert otp_decrypt(msg0.payload_ciphertext, b0, msg0.key_offset) == (0, 1, 1, 0)
        assert otp_decrypt(msg1.payload_ciphertext, b1, msg1.key_offset) == (0, 1, 1, 0)

    def test_unbalanced_substring_falls_back(self):
        frame = make_frame([R, R, D, R, D, R, D, D], [0, 1, 0, 1, 1, 1, 0, 1])
        cb = Codebook(2, 6)
        assert try_commit(frame, 0, cb, *self._buffers()) is None

    def test_rank_cutoff(self):
        frame = make_frame([R, R, D, R, D, R, D, D], [0, 1, 0, 1, 1, 0, 0, 1])
        cb = Codebook(2, 2)  # rank(0110)=2 >= x
        assert try_commit(frame, 0, cb, *self._buffers()) is None

    def test_normal_frame_rejected(self):
        frame = make_frame([R, R, R, R, D, R, D, D], [0] * 8)
        with pytest.raises(ValueError):
            try_commit(frame, 0, Codebook(2, 6), *self._buffers())

    def test_insufficient_key_leaves_both_buffers(self):
        frame = make_frame([R, R, D, R, D, R, D, D], [0, 1, 0, 1, 1, 0, 0, 1])
        b0, b1 = make_buffer([0] * 16), make_buffer([1] * 2)
        with pytest.raises(InsufficientKeyError):
            try_commit(frame, 0, Codebook(2, 6), b0, b1)
        assert b0.consumed == 0 and b1.consumed == 0


class TestRelayConsistency:
    def test_identical(self):
        assert relay_consistency_check((0, 1, 1, 0), (0, 1, 1, 0))

    def test_one_bit_differs(self):
        assert not relay_consistency_check((0, 1, 1, 0), (0, 1, 1, 1))

    def test_missing(self):
        with pytest.raises(MissingPayloadError):
            relay_consistency_check((0, 1), None)


class TestBobVerify:
    def test_honest_accept0(self):
        frame = make_frame(
            [R, R, D, R, D, R, D, D],
            [0, 1, 0, 1, 1, 0, 0, 1],
        )  # bob mirrors alice: all same-basis, no errors
        disclosure = [r.alice_basis for r in frame.records]
        verdict, counts = bob_verify(
            frame.records, disclosure, (0, 1, 1, 0), n_tol=2, e_tol=0.25
        )
        assert verdict is Verdict.ACCEPT0
        assert counts.n_rect == 4 and counts.n_diag == 4
        assert counts.n_err_rect == 0

    def test_honest_accept1(self):
        frame = make_frame([D, D, R, D, R, D, R, R], [0, 1, 0, 1, 1, 0, 0, 1])
        disclosure = [r.alice_basis for r in frame.records]
        verdict, _ = bob_verify(
            frame.records, disclosure, (0, 1, 1, 0), n_tol=2, e_tol=0.25
        )
        assert verdict is Verdict.ACCEPT1

    def test_error_threshold(self):
        frame = make_frame([R, R, D, R, D, R, D, D], [0, 1, 0, 1, 1, 0, 0, 1])
        disclosure = [r.alice_basis for r in frame.records]
        # floor(e_tol * n_tol) = 0, so one injected error must reject
        verdict, counts = bob_verify(
            frame.records, disclosure, (1, 1, 1, 0), n_tol=2, e_tol=0.25
        )
        assert verdict is Verdict.REJECT
        assert counts.n_err_rect == 1

    def test_count_threshold(self):
        # only 1 same-basis rect record: n_rect = 1 < n_tol regardless of errors
        frame = make_frame(
            [R, R, D, R, D, R, D, D],
            [0, 1, 0, 1, 1, 0, 0, 1],
            bob_bases=[R, D, D, D, D, D, D, D],
        )
        disclosure = [r.alice_basis for r in frame.records]
        verdict, counts = bob_verify(
            frame.records, disclosure, (0, 1, 1, 0), n_tol=2, e_tol=0.25
        )
        assert verdict is Verdict.REJECT
        assert counts.n_rect == 1

    def test_claimed_bit_restricts_branch(self):
        frame = make_frame([R, R, D, R, D, R, D, D], [0, 1, 0, 1, 1, 0, 0, 1])
        disclosure = [r.alice_basis for r in frame.records]
        verdict, _ = bob_verify(
            frame.records, disclosure, (0, 1, 1, 0), 2, 0.25, claimed_bit=1
        )
        assert verdict in (Verdict.ACCEPT1, Verdict.REJECT)


class TestUnveilSchedule:
    def test_epoch_is_global_max(self):
        sched = UnveilSchedule.build(
            {"p0": 3, "p1": 5},
            {(0, "p0"): 2, (0, "p1"): 2, (4, "p0"): 6, (4, "p1"): 6},
        )
        assert sched.epoch == 11
        for (fid, ch), t in sched.send_times.items():
            assert sched.epoch >= t + sched.waits[ch]

    def test_invalid_epoch_rejected(self):
        with pytest.raises(ValueError):
            UnveilSchedule(waits={"p0": 3}, send_times={(0, "p0"): 2}, epoch=4)


class TestSessionConfig:
    def test_from_dict_rejects_unknown(self):
        with pytest.raises(ValueError, match="unknown config fields"):
            SessionConfig.from_dict({"n_quorter": 2})

    def test_field_named_errors(self):
        with pytest.raises(ValueError, match="flip_prob"):
            SessionConfig(flip_prob=0.6)
        with pytest.raises(ValueError, match="x:"):
            SessionConfig(n_quarter=2, x=7)


class TestRunSession:
    def test_honest_accept(self):
        transcript = run_session(SessionConfig(seed=1, frame_budget=200))
        assert transcript.status == "accept"
        assert transcript.verdict == "accept0"

    def test_commit_bit_one(self):
        transcript = run_session(
            SessionConfig(seed=1, frame_budget=200, commit_bit=1)
        )
        assert transcript.status == "accept"
        assert transcript.verdict == "accept1"

    def test_determinism(self):
        cfg = SessionConfig(seed=42, frame_budget=300, commit_all=True)
        a = json.dumps(run_session(cfg).to_json_dict(), sort_keys=True)
        b = json.dumps(run_session(cfg).to_json_dict(), sort_keys=True)
        assert a == b

    def test_no_commit_frame(self):
        transcript = run_session(SessionConfig(seed=0, frame_budget=1))
        assert transcript.status == "no_commit_frame"
        assert transcript.verdict is None
        assert transcript.commitments == []

    def test_tamper_rejected_by_relay_check(self):
        transcript = run_session(
            SessionConfig(seed=1, frame_budget=200, tamper_p1_bit=0)
        )
        assert transcript.status == "reject"
        assert transcript.commitments[0]["relay_consistent"] is False

    def test_key_accounting(self):
        transcript = run_session(
            SessionConfig(seed=9, frame_budget=500, commit_all=True)
        )
        n_commits = len(transcript.commitments)
        assert n_commits > 1
        payload_len = 4  # raw mode, 2N = 4
        consumed = sum(v["consumed"] for v in transcript.key_ledger.values())
        assert consumed == 2 * payload_len * n_commits
        # per-channel FIFO: offsets are consecutive, never overlapping
        for channel in ("p0", "p1"):
            offsets = [
                m["key_offset"]
                for entry in transcript.commitments
                for m in entry["messages"]
                if m["channel"] == channel
            ]
            assert offsets == [payload_len * i for i in range(len(offsets))]

    def test_schedule_invariant(self):
        transcript = run_session(
            SessionConfig(seed=9, frame_budget=500, commit_all=True)
        )
        sched = transcript.schedule
        for key, t in sched["send_times"].items():
            channel = key.split(":")[1]
            assert sched["epoch"] >= t + sched["waits"][channel]

    def test_compressed_payload_mode(self):
        transcript = run_session(
            SessionConfig(seed=1, frame_budget=200, payload_mode=MODE_COMPRESSED)
        )
        assert transcript.status == "accept"
        # ceil(log2 6) + 1 basis bit
        assert transcript.commitments[0]["messages"][0]["length"] == 4

    def test_eligible_frame_statistics(self):
        transcript = run_session(
            SessionConfig(seed=2, frame_budget=20_000, commit_all=True)
        )
        m = transcript.frames_total
        p = 420 / 4096
        import math as _m

        assert abs(transcript.eligible_frames - m * p) <= 6 * _m.sqrt(m * p * (1 - p))


class TestCheatingAlice:
    def test_trials_guard(self):
        with pytest.raises(ValueError):
            simulate_cheating_alice(
                CheatStrategy.CLAIM_OTHER_BASIS, SessionConfig(seed=0), 0
            )

    def test_strategy_guard(self):
        with pytest.raises(ValueError):
            simulate_cheating_alice("other", SessionConfig(seed=0), 10)

    def test_honest_side_near_one(self):
        p0, p1 = simulate_cheating_alice(
            CheatStrategy.CLAIM_OTHER_BASIS, SessionConfig(seed=3), 500
        )
        assert p0 == pytest.approx(1.0, abs=1e-9)  # noiseless honest unveiling
        assert p1 < 0.5  # luck only


class TestConcealment:
    def test_ciphertext_independent_of_bit(self):
        # quick smoke version of the acceptance chi-square: the ciphertext
        # bit distribution to P0 should look uniform for either bit
        from scipy.stats import chisquare

        for bit in (0, 1):
            transcript = run_session(
                SessionConfig(
                    seed=13, frame_budget=30_000, commit_all=True, commit_bit=bit
                )
            )
            ones = zeros = 0
            for entry in transcript.commitments:
                msg = entry["messages"][0]
                raw = bytes.fromhex(msg["ciphertext_hex"])
                from pbc_bb84.codebook import unpack_bits

                bits = unpack_bits(raw)
                ones += sum(bits)
                zeros += len(bits) - sum(bits)
            assert ones + zeros >= 4000
            _, p_value = chisquare([zeros, ones])
            assert p_value > 1e-3
