"""
Deterministic random streams: xoshiro256++ seeded through splitmix64.

Every stochastic step of data generation and parameter initialization draws
from an RngState keyed by (master_seed, stream_id), so datasets can be
regenerated bit for bit from a header alone.
"""

import math
from typing import List

MASK64 = (1 << 64) - 1
_GOLDEN_GAMMA = 0x9E3779B97F4A7C15
_ZERO_STATE_FALLBACK = (
    0x9E3779B97F4A7C15,
    0xBF58476D1CE4E5B9,
    0x94D049BB133111EB,
    0x2545F4914F6CDD1D,
)
_TWO_POW_53 = float(1 << 53)
_SMALLEST_UNIFORM = 1.0 / _TWO_POW_53


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


def mix64(z: int) -> int:
    """splitmix64 output finalizer (maps 0 to 0)."""
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def splitmix64(seed: int) -> List[int]:
    """
    Return the next splitmix64 state and output for ``seed``.

    Returns:
        [next_seed, output]
    """
    seed = (seed + _GOLDEN_GAMMA) & MASK64
    return [seed, mix64(seed)]


class RngState:
    """xoshiro256++ state; one instance per logical stream, single user at a time."""

    __slots__ = ("s0", "s1", "s2", "s3")

    def __init__(self, s0: int, s1: int, s2: int, s3: int):
        words = [w & MASK64 for w in (s0, s1, s2, s3)]
        if not any(words):
            words = list(_ZERO_STATE_FALLBACK)
        self.s0, self.s1, self.s2, self.s3 = words

    def words(self) -> tuple:
        return (self.s0, self.s1, self.s2, self.s3)

    def copy(self) -> "RngState":
        return RngState(*self.words())

    def next_u64(self) -> int:
        """Advance once and return the raw 64-bit output."""
        s0, s1, s2, s3 = self.s0, self.s1, self.s2, self.s3
        result = (_rotl((s0 + s3) & MASK64, 23) + s0) & MASK64
        t = (s1 << 17) & MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self.s0, self.s1, self.s2, self.s3 = s0, s1, s2, s3
        return result

    def __eq__(self, other: object) -> bool:
        return isinstance(other, RngState) and self.words() == other.words()

    def __repr__(self) -> str:
        return "RngState(" + ", ".join(f"0x{w:016X}" for w in self.words()) + ")"


def seed_from(master_seed: int, stream_id: int) -> RngState:
    """
    Derive the state of stream ``stream_id`` under ``master_seed``.

    The stream offset is the splitmix64 finalizer of the id; the XOR of seed and
    offset is expanded through four splitmix64 steps into the state words.

    Args:
        master_seed: 64-bit unsigned seed shared by a dataset
        stream_id: 64-bit unsigned stream index (sample number)

    Returns:
        Fresh RngState (never all-zero)
    """
    if not 0 <= master_seed <= MASK64 or not 0 <= stream_id <= MASK64:
        raise ValueError(f"Seeds must be 64-bit unsigned, got master_seed={master_seed}, stream_id={stream_id}")
    seed = master_seed ^ mix64(stream_id)
    words = []
    for _ in range(4):
        seed, out = splitmix64(seed)
        words.append(out)
    return RngState(*words)


def bits_to_uniform(bits53: int) -> float:
    """Map a 53-bit integer onto [0, 1)."""
    return bits53 / _TWO_POW_53


def next_uniform(state: RngState) -> float:
    """Uniform draw in [0, 1) from the top 53 bits of one xoshiro step."""
    return bits_to_uniform(state.next_u64() >> 11)


def box_muller(u1: float, u2: float) -> float:
    """Cosine branch of the basic Box-Muller transform."""
    if u1 <= 0.0:
        u1 = _SMALLEST_UNIFORM
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)


def next_gaussian(state: RngState) -> float:
    """Standard normal draw; consumes exactly two uniforms."""
    u1 = next_uniform(state)
    u2 = next_uniform(state)
    return box_muller(u1, u2)


def next_complex_gaussian(state: RngState, variance: float) -> complex:
    """
    Circularly symmetric complex normal draw.

    Args:
        state: stream to advance (four uniforms consumed)
        variance: E|z|^2, split evenly between real and imaginary parts

    Raises:
        ValueError: If variance is not positive
    """
    if not variance > 0:
        raise ValueError(f"Complex gaussian variance must be positive, got {variance}")
    scale = math.sqrt(variance / 2.0)
    re = next_gaussian(state)
    im = next_gaussian(state)
    return complex(scale * re, scale * im)
