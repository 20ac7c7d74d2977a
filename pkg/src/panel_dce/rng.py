"""Counter-based uniform draws keyed by (seed, stream, id, time).

Every uniform is a pure function of its integer key, so a unit's draws never
depend on how many other units exist, on chunking, or on thread scheduling.
The mixer is the SplitMix64 finalizer; keys are folded in one word at a time.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_MASK64 = (1 << 64) - 1

# domain tags keep unit-keyed and group-keyed streams disjoint
UNIT_DOMAIN = 0
GROUP_DOMAIN = 1


def _mix(x: np.ndarray) -> np.ndarray:
    x = x ^ (x >> _S30)
    x = x * _M1
    x = x ^ (x >> _S27)
    x = x * _M2
    return x ^ (x >> _S31)


def _mix_int(x: int) -> int:
    x &= _MASK64
    x ^= x >> 30
    x = (x * 0xBF58476D1CE4E5B9) & _MASK64
    x ^= x >> 27
    x = (x * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def _fold(h, value):
    value = np.asarray(value).astype(np.uint64)
    with np.errstate(over="ignore"):
        return _mix(h ^ (value * _GOLDEN + _GOLDEN))


def base_key(seed: int, domain: int = UNIT_DOMAIN) -> int:
    """Scalar key for a master seed and draw domain."""
    if seed < 0:
        raise ValueError("seed must be non-negative")
    return _mix_int(_mix_int(seed + 0x632BE59BD9B4E019) ^ (domain * 0x8CB92BA72F3D8DD7 + 1))


def counter_uniforms(seed: int, stream, ids, times, domain: int = UNIT_DOMAIN) -> np.ndarray:
    """Uniform(0, 1) draws for broadcastable integer arrays ``stream``, ``ids``, ``times``.

    The output shape is the broadcast shape of the three key arrays. Values lie
    in the open interval (0, 1).
    """
    h = np.uint64(base_key(int(seed), domain))
    with np.errstate(over="ignore"):
        h = _fold(h, stream)
        h = _fold(h, ids)
        h = _fold(h, times)
    # top 53 bits, offset by half an ulp so 0 is never returned
    return ((h >> _S11).astype(np.float64) + 0.5) * (1.0 / 9007199254740992.0)


def derive_seed(*parts: int) -> int:
    """Collapse integer parts into one 63-bit seed (for numpy SeedSequence use)."""
    x = 0x2545F4914F6CDD1D
    for part in parts:
        x = _mix_int(x ^ (int(part) & _MASK64) ^ 0x9E3779B97F4A7C15)
    return x >> 1
