"""Bit-level BB84 physical layer.

Bob prepares polarized pulses, a loss+flip channel stands in for the
optics, Alice measures in random bases, and detected signals are grouped
into 4N-signal frames.  All randomness flows from explicit seeds through
numpy's default generator (PCG64), so identical seeds give bit-identical
streams.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from . import math_core


class Basis(enum.Enum):
    RECTILINEAR = "rect"
    DIAGONAL = "diag"


class FrameClass(enum.Enum):
    COMMITMENT_CANDIDATE = "commitment_candidate"
    NORMAL = "normal"


_BASES = (Basis.RECTILINEAR, Basis.DIAGONAL)


@dataclass(slots=True)
class Pulse:
    """One prepared signal; (basis, bit) selects one of the four
    polarization states."""

    index: int
    basis: Basis
    bit: int


@dataclass(frozen=True)
class ChannelModel:
    """Loss+flip stand-in for the quantum channel.

    ``detection_prob`` is the chance Alice registers a pulse at all;
    ``flip_prob`` is the chance a same-basis measurement returns the wrong
    bit (the simulated QBER).
    """

    detection_prob: float = 1.0
    flip_prob: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.detection_prob <= 1.0:
            raise ValueError("detection_prob must lie in (0, 1]")
        if not 0.0 <= self.flip_prob < 0.5:
            raise ValueError("flip_prob must lie in [0, 0.5)")


@dataclass(slots=True)
class MeasurementRecord:
    """One detected signal as Alice sees it.

    ``ground_truth`` holds Bob's (basis, bit) for the verifier's counts and
    for test oracles only; agents' decision logic never reads it.
    """

    index: int
    alice_basis: Basis
    outcome: int
    ground_truth: tuple[Basis, int]


@dataclass(slots=True)
class Frame:
    """Exactly 4N consecutive detected signals with a commitment-frame
    classification (candidate iff Alice's bases split exactly 2N/2N)."""

    records: list[MeasurementRecord]
    classification: FrameClass = field(default=FrameClass.NORMAL)

    def outcomes_in_basis(self, basis: Basis) -> tuple[int, ...]:
        """Outcome bits of records measured in ``basis``, in record order."""
        return tuple(r.outcome for r in self.records if r.alice_basis is basis)


def prepare_pulses(count: int, rng_seed: int) -> list[Pulse]:
    """Bob's pulse train: independent fair coin flips for basis and bit."""
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(rng_seed)
    bases = rng.integers(0, 2, size=count)
    bits = rng.integers(0, 2, size=count)
    return [Pulse(i, _BASES[bases[i]], int(bits[i])) for i in range(count)]


def transmit_and_measure(
    pulses: list[Pulse], channel: ChannelModel, rng_seed: int
) -> list[MeasurementRecord]:
    """Channel plus Alice's measurement.

    Each pulse survives independently with ``detection_prob``; Alice picks
    a uniform basis; a matched basis reproduces Bob's bit except with
    ``flip_prob``, a mismatched basis yields a fair coin.  Undetected
    pulses are simply absent (detection notification is implicit).
    """
    n = len(pulses)
    rng = np.random.default_rng(rng_seed)
    detected = rng.random(n) < channel.detection_prob
    alice_bases = rng.integers(0, 2, size=n)
    flips = rng.random(n) < channel.flip_prob
    coins = rng.integers(0, 2, size=n)

    records = []
    for i, pulse in enumerate(pulses):
        if not detected[i]:
            continue
        a_basis = _BASES[alice_bases[i]]
        if a_basis is pulse.basis:
            outcome = pulse.bit ^ int(flips[i])
        else:
            outcome = int(coins[i])
        records.append(
            MeasurementRecord(pulse.index, a_basis, outcome, (pulse.basis, pulse.bit))
        )
    return records


def classify_frame(records: list[MeasurementRecord], n_quarter: int) -> FrameClass:
    rect = sum(1 for r in records if r.alice_basis is Basis.RECTILINEAR)
    if rect == 2 * n_quarter:
        return FrameClass.COMMITMENT_CANDIDATE
    return FrameClass.NORMAL


def assemble_frames(records: list[MeasurementRecord], n_quarter: int) -> list[Frame]:
    """Group detected records into consecutive non-overlapping 4N frames;
    a trailing partial group is discarded."""
    if n_quarter < 1:
        raise ValueError("n_quarter must be >= 1")
    size = 4 * n_quarter
    frames = []
    for start in range(0, len(records) - size + 1, size):
        chunk = records[start : start + size]
        frames.append(Frame(chunk, classify_frame(chunk, n_quarter)))
    return frames


def sift_records(frame: Frame) -> list[MeasurementRecord]:
    """Records whose measurement basis matches Bob's preparation basis."""
    return [r for r in frame.records if r.alice_basis is r.ground_truth[0]]


def sift_and_distill(
    frames: list[Frame], params: math_core.RateParams
) -> list[int]:
    """Key bits credited from Normal frames.

    Sifts matched-basis records, credits floor(sifted * max(0, r)) bits
    with r the final key rate at ``params.q_tol``, and returns the first
    credited sifted outcomes as the key values (idealized hashing: the
    scheme's security accounting is rate-level, not code-level).
    """
    rate = max(0.0, math_core.final_key_rate(params.q_tol))
    sifted = []
    for frame in frames:
        if frame.classification is FrameClass.NORMAL:
            sifted.extend(r.outcome for r in sift_records(frame))
    credited = math.floor(len(sifted) * rate)
    return sifted[:credited]


def export_stream(
    records: list[MeasurementRecord],
    frames: list[Frame],
    credited_bits: int,
    include_records: bool = True,
) -> dict:
    """Structured JSON document for one preparation-phase run."""
    doc = {
        "record_count": len(records),
        "frames": [
            {
                "classification": f.classification.value,
                "indices": [r.index for r in f.records],
            }
            for f in frames
        ],
        "key_credit": credited_bits,
    }
    if include_records:
        doc["records"] = [
            {
                "index": r.index,
                "alice_basis": r.alice_basis.value,
                "outcome": r.outcome,
            }
            for r in records
        ]
    return doc
