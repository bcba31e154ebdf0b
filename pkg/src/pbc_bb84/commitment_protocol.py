"""Commit / unveil / verify state machines between Alice, Bob and the two
trusted relays P0 and P1.

A session is a deterministic single-threaded loop over the frame stream:
Normal frames distill one-time-pad key into two per-channel buffers,
commitment frames (when their outcome substring is a codeword) send an
OTP-encrypted payload to each relay, and after the waiting-time schedule
elapses the relays cross-check and Bob verifies against his ground truth.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, asdict
from typing import Iterator

import numpy as np

from . import math_core
from .bb84_frames import (
    Basis,
    ChannelModel,
    Frame,
    FrameClass,
    MeasurementRecord,
    assemble_frames,
    prepare_pulses,
    sift_records,
    transmit_and_measure,
)
from .codebook import (
    Bits,
    Codebook,
    MODE_RAW,
    PAYLOAD_MODES,
    decode_payload,
    is_codeword,
    pack_bits,
    payload_bits,
)

CHANNEL_P0 = "p0"
CHANNEL_P1 = "p1"


class InsufficientKeyError(Exception):
    """Raised when a key buffer cannot cover a requested encryption."""


class MissingPayloadError(Exception):
    """Raised when a relay is asked to compare a payload it never got."""


class Verdict(enum.Enum):
    ACCEPT0 = "accept0"
    ACCEPT1 = "accept1"
    REJECT = "reject"


class CheatStrategy(enum.Enum):
    CLAIM_OTHER_BASIS = "claim_other_basis"


class KeyBuffer:
    """Ordered pool of one-time-pad key bits with consume-once accounting.

    Consumption is strictly FIFO; a bit index, once spent, is never handed
    out again.  Relays hold read (peek) access so they can decrypt without
    double-spending.
    """

    def __init__(self):
        self._bits: list[int] = []
        self._consumed = 0

    @property
    def total(self) -> int:
        return len(self._bits)

    @property
    def consumed(self) -> int:
        return self._consumed

    @property
    def available(self) -> int:
        return len(self._bits) - self._consumed

    def extend(self, bits) -> None:
        self._bits.extend(int(b) & 1 for b in bits)

    def consume(self, length: int) -> tuple[Bits, int]:
        """Next ``length`` unspent bits and their starting offset."""
        if length < 0:
            raise ValueError("length must be non-negative")
        if self.available < length:
            raise InsufficientKeyError(
                f"need {length} key bits, only {self.available} available"
            )
        offset = self._consumed
        out = tuple(self._bits[offset : offset + length])
        self._consumed += length
        return out, offset

    def peek(self, offset: int, length: int) -> Bits:
        """Read already-distributed key material without consuming it."""
        if offset < 0 or offset + length > len(self._bits):
            raise ValueError("peek range outside buffer")
        return tuple(self._bits[offset : offset + length])


@dataclass(frozen=True)
class CommitMessage:
    """OTP-encrypted commit payload for one relay channel."""

    frame_id: int
    channel: str
    payload_ciphertext: Bits
    key_offset: int


@dataclass(frozen=True)
class VerificationCounts:
    n_rect: int
    n_diag: int
    n_err_rect: int
    n_err_diag: int

    def __post_init__(self):
        if self.n_err_rect > self.n_rect or self.n_err_diag > self.n_diag:
            raise ValueError("error counts cannot exceed same-basis counts")


@dataclass(frozen=True)
class UnveilSchedule:
    """Waiting-time bookkeeping: every channel's decryption waits out its
    configured duration and all unveilings land on one global epoch."""

    waits: dict
    send_times: dict
    epoch: int

    def __post_init__(self):
        for (frame_id, channel), t in self.send_times.items():
            if self.epoch < t + self.waits[channel]:
                raise ValueError(
                    f"epoch {self.epoch} precedes completion of "
                    f"frame {frame_id} on {channel}"
                )

    @classmethod
    def build(cls, waits: dict, send_times: dict) -> "UnveilSchedule":
        epoch = max(
            (t + waits[ch] for (_, ch), t in send_times.items()), default=0
        )
        return cls(waits=waits, send_times=send_times, epoch=epoch)


def otp_encrypt(plaintext: Bits, buffer: KeyBuffer) -> tuple[Bits, int]:
    """XOR with the next unspent key bits; consumes them atomically."""
    key, offset = buffer.consume(len(plaintext))
    return tuple(p ^ k for p, k in zip(plaintext, key)), offset


def otp_decrypt(ciphertext: Bits, buffer: KeyBuffer, key_offset: int) -> Bits:
    """XOR back using peeked key material (no further consumption)."""
    key = buffer.peek(key_offset, len(ciphertext))
    return tuple(c ^ k for c, k in zip(ciphertext, key))


def _basis_for_bit(bit: int) -> Basis:
    return Basis.RECTILINEAR if bit == 0 else Basis.DIAGONAL


def try_commit(
    frame: Frame,
    bit: int,
    cb: Codebook,
    buffer_p0: KeyBuffer,
    buffer_p1: KeyBuffer,
    frame_id: int = 0,
    mode: str = MODE_RAW,
) -> tuple[CommitMessage, CommitMessage] | None:
    """Attempt to commit ``bit`` in a commitment-candidate frame.

    The 2N outcomes measured in the bit-selected basis (rectilinear for 0,
    diagonal for 1) must form a codeword; otherwise None is returned and
    the frame falls back to Normal handling.  Key is checked on both
    channels before either buffer is touched, so a failed attempt never
    half-consumes pad.
    """
    if frame.classification is not FrameClass.COMMITMENT_CANDIDATE:
        raise ValueError("frame is not a commitment candidate")
    if bit not in (0, 1):
        raise ValueError("commit bit must be 0 or 1")
    substring = frame.outcomes_in_basis(_basis_for_bit(bit))
    if not is_codeword(cb, substring):
        return None
    payload = payload_bits(cb, substring, bit, mode)
    if buffer_p0.available < len(payload) or buffer_p1.available < len(payload):
        raise InsufficientKeyError(
            f"commit needs {len(payload)} bits on each channel "
            f"(available: {buffer_p0.available}/{buffer_p1.available})"
        )
    ct0, off0 = otp_encrypt(payload, buffer_p0)
    ct1, off1 = otp_encrypt(payload, buffer_p1)
    return (
        CommitMessage(frame_id, CHANNEL_P0, ct0, off0),
        CommitMessage(frame_id, CHANNEL_P1, ct1, off1),
    )


def relay_consistency_check(payload0: Bits | None, payload1: Bits | None) -> bool:
    """Bob's cross-check of the two relays' decrypted payloads."""
    if payload0 is None or payload1 is None:
        raise MissingPayloadError("a relay never received its commit message")
    return tuple(payload0) == tuple(payload1)


def compute_verification_counts(
    records: list[MeasurementRecord],
    disclosure: list[Basis],
    payload_substring: Bits,
) -> VerificationCounts:
    """Same-basis counts and payload-vs-sent-bit error counts per basis.

    For each basis, the payload is aligned onto the positions disclosed in
    that basis (record order); errors are counted at positions where Bob
    also prepared in that basis.  A basis whose disclosed position count
    does not match the payload length gets an error count equal to its
    same-basis count (nothing verifiable).
    """
    counts = {}
    for basis in (Basis.RECTILINEAR, Basis.DIAGONAL):
        positions = [i for i, b in enumerate(disclosure) if b is basis]
        same = [
            (j, i) for j, i in enumerate(positions)
            if records[i].ground_truth[0] is basis
        ]
        n_basis = len(same)
        if len(positions) == len(payload_substring):
            errs = sum(
                1 for j, i in same
                if payload_substring[j] != records[i].ground_truth[1]
            )
        else:
            errs = n_basis
        counts[basis] = (n_basis, errs)
    return VerificationCounts(
        n_rect=counts[Basis.RECTILINEAR][0],
        n_diag=counts[Basis.DIAGONAL][0],
        n_err_rect=counts[Basis.RECTILINEAR][1],
        n_err_diag=counts[Basis.DIAGONAL][1],
    )


def bob_verify(
    records: list[MeasurementRecord],
    disclosure: list[Basis],
    payload_substring: Bits,
    n_tol: int,
    e_tol: float,
    claimed_bit: int | None = None,
) -> tuple[Verdict, VerificationCounts]:
    """Bob's acceptance decision after the relays agree.

    Accept0 needs n_rect >= n_tol, n_diag >= n_tol, the payload aligned on
    the rectilinear-disclosed positions, and at most e_tol * n_tol errors
    against Bob's sent bits there; Accept1 symmetrically on the diagonal
    side.  With ``claimed_bit`` set only that branch is evaluated (Alice's
    unveiling names the bit); otherwise 0 is tried before 1.
    """
    counts = compute_verification_counts(records, disclosure, payload_substring)
    threshold = e_tol * n_tol
    candidates = (0, 1) if claimed_bit is None else (claimed_bit,)
    for bit in candidates:
        basis = _basis_for_bit(bit)
        positions = [i for i, b in enumerate(disclosure) if b is basis]
        if len(positions) != len(payload_substring):
            continue
        n_basis = counts.n_rect if bit == 0 else counts.n_diag
        n_other = counts.n_diag if bit == 0 else counts.n_rect
        errs = counts.n_err_rect if bit == 0 else counts.n_err_diag
        if n_basis >= n_tol and n_other >= n_tol and errs <= threshold:
            return (Verdict.ACCEPT0 if bit == 0 else Verdict.ACCEPT1), counts
    return Verdict.REJECT, counts


@dataclass(frozen=True)
class SessionConfig:
    """Full configuration of one simulated session."""

    n_quarter: int = 2
    x: int = 6
    commit_bit: int = 0
    frame_budget: int = 200
    seed: int = 0
    detection_prob: float = 1.0
    flip_prob: float = 0.0
    q_tol: float = 0.0
    n_tol: int = 2
    e_tol: float = 0.25
    wait_p0: int = 3
    wait_p1: int = 5
    payload_mode: str = MODE_RAW
    commit_all: bool = False
    tamper_p1_bit: int | None = None

    def __post_init__(self):
        if self.n_quarter < 1:
            raise ValueError("n_quarter: must be >= 1")
        cap = math.comb(2 * self.n_quarter, self.n_quarter)
        if not 0 <= self.x <= cap:
            raise ValueError(f"x: must lie in [0, C(2N,N)={cap}]")
        if self.commit_bit not in (0, 1):
            raise ValueError("commit_bit: must be 0 or 1")
        if self.frame_budget < 1:
            raise ValueError("frame_budget: must be >= 1")
        if not 0.0 < self.detection_prob <= 1.0:
            raise ValueError("detection_prob: must lie in (0, 1]")
        if not 0.0 <= self.flip_prob < 0.5:
            raise ValueError("flip_prob: must lie in [0, 0.5)")
        if not 0.0 <= self.q_tol < 0.5:
            raise ValueError("q_tol: must lie in [0, 0.5)")
        if self.n_tol < 1:
            raise ValueError("n_tol: must be >= 1")
        if not 0.0 <= self.e_tol < 0.5:
            raise ValueError("e_tol: must lie in [0, 0.5)")
        if self.wait_p0 < 0 or self.wait_p1 < 0:
            raise ValueError("wait_p0/wait_p1: must be non-negative")
        if self.payload_mode not in PAYLOAD_MODES:
            raise ValueError(f"payload_mode: must be one of {PAYLOAD_MODES}")

    @classmethod
    def from_dict(cls, doc: dict) -> "SessionConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**doc)

    def to_dict(self) -> dict:
        return asdict(self)

    def channel(self) -> ChannelModel:
        return ChannelModel(self.detection_prob, self.flip_prob)


def frame_stream(config: SessionConfig) -> Iterator[tuple[int, Frame]]:
    """Unbounded deterministic stream of (frame_id, frame).

    Pulses are produced in batches; leftover detected records carry over
    between batches so frame grouping is identical to a single long run.
    """
    seeds = np.random.SeedSequence(config.seed)
    channel = config.channel()
    size = 4 * config.n_quarter
    batch_pulses = max(4096, size * 64)
    pending: list = []
    frame_id = 0
    batch = 0
    while True:
        s_prep, s_chan = seeds.spawn(1)[0].generate_state(2)
        # spawn once per batch keeps seeds independent and reproducible
        pulses = prepare_pulses(batch_pulses, int(s_prep))
        pending.extend(transmit_and_measure(pulses, channel, int(s_chan)))
        n_full = len(pending) // size
        for frame in assemble_frames(pending[: n_full * size], config.n_quarter):
            yield frame_id, frame
            frame_id += 1
        pending = pending[n_full * size :]
        batch += 1


def _threshold_ok(frame: Frame, n_tol: int) -> bool:
    # Bob's preparation bases are public after the detection notification,
    # so Alice can skip frames whose same-basis counts cannot pass.
    n_rect = sum(
        1 for r in frame.records
        if r.alice_basis is Basis.RECTILINEAR and r.ground_truth[0] is Basis.RECTILINEAR
    )
    n_diag = sum(
        1 for r in frame.records
        if r.alice_basis is Basis.DIAGONAL and r.ground_truth[0] is Basis.DIAGONAL
    )
    return n_rect >= n_tol and n_diag >= n_tol


@dataclass
class SessionTranscript:
    """Everything observable about one session, JSON-exportable."""

    config: dict
    frames_total: int = 0
    candidate_frames: int = 0
    eligible_frames: int = 0
    threshold_skipped: int = 0
    insufficient_key_aborts: int = 0
    sifted_bits: int = 0
    commitments: list = field(default_factory=list)
    key_ledger: dict = field(default_factory=dict)
    schedule: dict | None = None
    status: str = "no_commit_frame"
    verdict: str | None = None

    def to_json_dict(self) -> dict:
        return {
            "config": self.config,
            "frames_total": self.frames_total,
            "candidate_frames": self.candidate_frames,
            "eligible_frames": self.eligible_frames,
            "threshold_skipped": self.threshold_skipped,
            "insufficient_key_aborts": self.insufficient_key_aborts,
            "sifted_bits": self.sifted_bits,
            "commitments": self.commitments,
            "key_ledger": self.key_ledger,
            "schedule": self.schedule,
            "status": self.status,
            "verdict": self.verdict,
        }


def _distill_frame(frame: Frame, rate: float) -> list[int]:
    sifted = [r.outcome for r in sift_records(frame)]
    credited = math.floor(len(sifted) * rate)
    return sifted[:credited]


def run_session(config: SessionConfig) -> SessionTranscript:
    """Run one full session: preparation, commitment, unveiling, verdict.

    The first commit-eligible frame (candidate, codeword substring, count
    thresholds satisfiable, sufficient pad) carries the commitment; with
    ``commit_all`` every such frame commits.  All other frames distill key
    into the two per-channel buffers by alternating allocation.
    """
    cb = Codebook(config.n_quarter, config.x)
    rate = max(0.0, math_core.final_key_rate(config.q_tol))
    buffers = {CHANNEL_P0: KeyBuffer(), CHANNEL_P1: KeyBuffer()}
    generated = {CHANNEL_P0: 0, CHANNEL_P1: 0}
    toggle = 0
    commit_basis = _basis_for_bit(config.commit_bit)

    transcript = SessionTranscript(config=config.to_dict())
    pending_unveil = []  # (frame, msg0, msg1, send_time)
    sifted_total = 0

    stream = frame_stream(config)
    for frame_id, frame in stream:
        if frame_id >= config.frame_budget:
            break
        transcript.frames_total += 1
        is_candidate = frame.classification is FrameClass.COMMITMENT_CANDIDATE
        eligible = False
        if is_candidate:
            transcript.candidate_frames += 1
            substring = frame.outcomes_in_basis(commit_basis)
            eligible = is_codeword(cb, substring)
            if eligible:
                transcript.eligible_frames += 1

        committed_here = False
        if eligible and (config.commit_all or not pending_unveil):
            if not _threshold_ok(frame, config.n_tol):
                transcript.threshold_skipped += 1
            else:
                try:
                    msgs = try_commit(
                        frame, config.commit_bit, cb,
                        buffers[CHANNEL_P0], buffers[CHANNEL_P1],
                        frame_id=frame_id, mode=config.payload_mode,
                    )
                except InsufficientKeyError:
                    transcript.insufficient_key_aborts += 1
                    msgs = None
                if msgs is not None:
                    msg0, msg1 = msgs
                    if config.tamper_p1_bit is not None and not pending_unveil:
                        ct = list(msg1.payload_ciphertext)
                        pos = config.tamper_p1_bit % len(ct)
                        ct[pos] ^= 1
                        msg1 = CommitMessage(
                            msg1.frame_id, msg1.channel, tuple(ct), msg1.key_offset
                        )
                    pending_unveil.append((frame, msg0, msg1, frame_id))
                    committed_here = True

        if not committed_here:
            bits = _distill_frame(frame, rate)
            sifted_total += len(sift_records(frame))
            for b in bits:
                ch = CHANNEL_P0 if toggle == 0 else CHANNEL_P1
                buffers[ch].extend([b])
                generated[ch] += 1
                toggle ^= 1

    transcript.sifted_bits = sifted_total

    # Unveiling: waiting-time schedule, relay cross-check, Bob's verdict.
    if pending_unveil:
        waits = {CHANNEL_P0: config.wait_p0, CHANNEL_P1: config.wait_p1}
        send_times = {}
        for _, msg0, msg1, t in pending_unveil:
            send_times[(msg0.frame_id, CHANNEL_P0)] = t
            send_times[(msg1.frame_id, CHANNEL_P1)] = t
        schedule = UnveilSchedule.build(waits, send_times)
        transcript.schedule = {
            "waits": waits,
            "send_times": {
                f"{fid}:{ch}": t for (fid, ch), t in send_times.items()
            },
            "epoch": schedule.epoch,
        }

        for frame, msg0, msg1, _ in pending_unveil:
            payload0 = otp_decrypt(
                msg0.payload_ciphertext, buffers[CHANNEL_P0], msg0.key_offset
            )
            payload1 = otp_decrypt(
                msg1.payload_ciphertext, buffers[CHANNEL_P1], msg1.key_offset
            )
            consistent = relay_consistency_check(payload0, payload1)
            entry = {
                "frame_id": msg0.frame_id,
                "messages": [
                    {
                        "channel": m.channel,
                        "key_offset": m.key_offset,
                        "length": len(m.payload_ciphertext),
                        "ciphertext_hex": pack_bits(m.payload_ciphertext).hex(),
                    }
                    for m in (msg0, msg1)
                ],
                "relay_consistent": consistent,
            }
            if not consistent:
                entry["verdict"] = Verdict.REJECT.value
                entry["counts"] = None
            else:
                substring, _basis_flag = decode_payload(
                    cb, payload0, config.payload_mode
                )
                disclosure = [r.alice_basis for r in frame.records]
                verdict, counts = bob_verify(
                    frame.records, disclosure, substring,
                    config.n_tol, config.e_tol,
                    claimed_bit=config.commit_bit,
                )
                entry["verdict"] = verdict.value
                entry["counts"] = asdict(counts)
            transcript.commitments.append(entry)

        first = transcript.commitments[0]
        transcript.verdict = first["verdict"]
        accept = Verdict.ACCEPT0.value if config.commit_bit == 0 else Verdict.ACCEPT1.value
        transcript.status = "accept" if first["verdict"] == accept else "reject"

    transcript.key_ledger = {
        ch: {"generated": generated[ch], "consumed": buffers[ch].consumed}
        for ch in (CHANNEL_P0, CHANNEL_P1)
    }
    return transcript


def simulate_cheating_alice(
    strategy: CheatStrategy, config: SessionConfig, trials: int
) -> tuple[float, float]:
    """Empirical unveiling-success frequencies (p0_hat, p1_hat).

    Alice commits via the basis of ``config.commit_bit``.  For the
    committed bit she unveils honestly; for the other bit she discloses
    every basis flipped so the fixed payload reads as the other basis's
    substring.  Each trial is one independent committed frame; both
    targets are evaluated on identical frames (deterministic replay of the
    same run).
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if not isinstance(strategy, CheatStrategy):
        raise ValueError(f"unknown strategy {strategy!r}")
    cb = Codebook(config.n_quarter, config.x)
    commit_basis = _basis_for_bit(config.commit_bit)
    flip = {
        Basis.RECTILINEAR: Basis.DIAGONAL,
        Basis.DIAGONAL: Basis.RECTILINEAR,
    }
    succ = [0, 0]
    done = 0
    for _frame_id, frame in frame_stream(config):
        if frame.classification is not FrameClass.COMMITMENT_CANDIDATE:
            continue
        substring = frame.outcomes_in_basis(commit_basis)
        if not is_codeword(cb, substring):
            continue
        if not _threshold_ok(frame, config.n_tol):
            continue
        honest = [r.alice_basis for r in frame.records]
        flipped = [flip[b] for b in honest]
        for target in (0, 1):
            disclosure = honest if target == config.commit_bit else flipped
            verdict, _ = bob_verify(
                frame.records, disclosure, substring,
                config.n_tol, config.e_tol, claimed_bit=target,
            )
            wanted = Verdict.ACCEPT0 if target == 0 else Verdict.ACCEPT1
            if verdict is wanted:
                succ[target] += 1
        done += 1
        if done >= trials:
            break
    return succ[0] / trials, succ[1] / trials
