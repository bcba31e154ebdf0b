"""Commitment codebook: the first x balanced 2N-bit sequences in
lexicographic order, with combinadic rank/unrank.

Bit sequences are tuples of 0/1 ints, most-significant-first for
lexicographic comparison.  Ranks are exact Python integers, so codebooks
beyond the float range (N > 30) still work.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

#: Payload carries the raw 2N outcome bits.
MODE_RAW = "raw"
#: Payload carries the codeword rank (ceil(log2 x) bits, MSB first) plus
#: one basis-identifying bit.
MODE_COMPRESSED = "compressed"

PAYLOAD_MODES = (MODE_RAW, MODE_COMPRESSED)

Bits = tuple[int, ...]


def codebook_capacity(n_half: int) -> int:
    """Number of balanced 2N-bit sequences, C(2N, N), exactly."""
    if n_half < 1:
        raise ValueError("n_half must be >= 1")
    return math.comb(2 * n_half, n_half)


def _check_balanced(seq: Bits) -> int:
    if len(seq) % 2 != 0:
        raise ValueError(f"sequence length {len(seq)} is odd")
    n_half = len(seq) // 2
    if n_half == 0:
        raise ValueError("empty sequence")
    ones = sum(seq)
    if ones != n_half:
        raise ValueError(f"sequence is not balanced: {ones} ones in {len(seq)} bits")
    return n_half


def rank(seq: Bits) -> int:
    """0-based position of a balanced sequence in lexicographic order.

    Combinadic: at each position, a 1 bit skips every balanced completion
    that would have started with 0 there.
    """
    n_half = _check_balanced(seq)
    zeros = ones = n_half
    r = 0
    for bit in seq:
        if bit:
            # completions starting with 0: one zero spent, ones unchanged
            r += math.comb(zeros - 1 + ones, ones)
            ones -= 1
        else:
            zeros -= 1
    return r


def unrank(n_half: int, index: int) -> Bits:
    """Balanced 2N-bit sequence at lexicographic position ``index``."""
    cap = codebook_capacity(n_half)
    if not 0 <= index < cap:
        raise ValueError(f"index {index} outside [0, {cap})")
    zeros = ones = n_half
    out = []
    for _ in range(2 * n_half):
        if zeros == 0:
            below = 0
        else:
            below = math.comb(zeros - 1 + ones, ones)
        if zeros > 0 and index < below:
            out.append(0)
            zeros -= 1
        else:
            index -= below
            out.append(1)
            ones -= 1
    return tuple(out)


@dataclass(frozen=True)
class Codebook:
    """The first ``x`` balanced 2N-bit sequences under lexicographic order."""

    n_half: int
    x: int

    def __post_init__(self):
        if self.n_half < 1:
            raise ValueError("n_half must be >= 1")
        cap = codebook_capacity(self.n_half)
        if not 0 <= self.x <= cap:
            raise ValueError(f"x={self.x} outside [0, C(2N,N)={cap}]")

    @property
    def length(self) -> int:
        return 2 * self.n_half

    def capacity(self) -> int:
        return codebook_capacity(self.n_half)

    def rank_bits(self) -> int:
        """Bits needed to address a codeword in compressed payloads."""
        return max(0, (self.x - 1).bit_length()) if self.x > 1 else 0


def is_codeword(cb: Codebook, seq: Bits) -> bool:
    """True iff ``seq`` is balanced and its rank is below the cutoff x."""
    if len(seq) != cb.length:
        raise ValueError(f"expected {cb.length} bits, got {len(seq)}")
    if sum(seq) != cb.n_half:
        return False
    return rank(seq) < cb.x


def payload_bits(cb: Codebook, seq: Bits, commit_bit: int, mode: str = MODE_RAW) -> Bits:
    """Commit payload for a codeword.

    Raw mode: the codeword itself.  Compressed mode: the codeword's rank,
    MSB first in ``cb.rank_bits()`` bits, followed by one basis bit.
    """
    if mode not in PAYLOAD_MODES:
        raise ValueError(f"unknown payload mode {mode!r}")
    if commit_bit not in (0, 1):
        raise ValueError("commit_bit must be 0 or 1")
    if not is_codeword(cb, seq):
        raise ValueError("sequence is not a codeword of this codebook")
    if mode == MODE_RAW:
        return tuple(seq)
    r = rank(seq)
    width = cb.rank_bits()
    encoded = tuple((r >> (width - 1 - i)) & 1 for i in range(width))
    return encoded + (commit_bit,)


def payload_length(cb: Codebook, mode: str = MODE_RAW) -> int:
    """Payload size in bits for this codebook and mode."""
    if mode not in PAYLOAD_MODES:
        raise ValueError(f"unknown payload mode {mode!r}")
    if mode == MODE_RAW:
        return cb.length
    return cb.rank_bits() + 1


def decode_payload(cb: Codebook, payload: Bits, mode: str = MODE_RAW) -> tuple[Bits, int | None]:
    """Inverse of :func:`payload_bits`.

    Returns ``(codeword, basis_bit)``; raw payloads carry no basis bit so
    the second element is None.
    """
    if mode not in PAYLOAD_MODES:
        raise ValueError(f"unknown payload mode {mode!r}")
    if len(payload) != payload_length(cb, mode):
        raise ValueError("payload has the wrong length")
    if mode == MODE_RAW:
        return tuple(payload), None
    width = cb.rank_bits()
    r = 0
    for bit in payload[:width]:
        r = (r << 1) | bit
    if r >= cb.x:
        raise ValueError(f"decoded rank {r} outside codebook (x={cb.x})")
    return unrank(cb.n_half, r), payload[width]


def pack_bits(bits: Bits) -> bytes:
    """Serialize a bit sequence: 4-byte little-endian length in bits, then
    packed bytes with bit i stored at byte i//8, LSB-first within a byte."""
    out = bytearray(struct.pack("<I", len(bits)))
    out.extend(b"\x00" * ((len(bits) + 7) // 8))
    for i, bit in enumerate(bits):
        if bit:
            out[4 + i // 8] |= 1 << (i % 8)
    return bytes(out)


def unpack_bits(data: bytes) -> Bits:
    """Inverse of :func:`pack_bits`."""
    if len(data) < 4:
        raise ValueError("truncated bit sequence")
    (n,) = struct.unpack("<I", data[:4])
    if len(data) != 4 + (n + 7) // 8:
        raise ValueError("bit sequence length prefix does not match payload")
    return tuple((data[4 + i // 8] >> (i % 8)) & 1 for i in range(n))
