"""Counter-based random streams.

Every replica owns a 64-bit key. The ``i``-th uniform of a stream is a pure
function of ``(key, i)`` (SplitMix64 output at position ``i``), so a batch of
replicas can draw their variates in one vectorised call while each replica
still sees exactly the numbers it would see when simulated on its own.
"""

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB

_GOLDEN_U = np.uint64(GOLDEN)
_M1_U = np.uint64(_M1)
_M2_U = np.uint64(_M2)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_ONE = np.uint64(1)
_TWO = np.uint64(2)
_INV53 = 2.0 ** -53


def mix64(z: int) -> int:
    """SplitMix64 finaliser on a Python int."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def stream_key(seed: int) -> int:
    """Key of the stream owned by ``seed``."""
    return mix64((int(seed) + GOLDEN) & MASK64)


def derive_seed(master_seed: int, index: int) -> int:
    """Seed for replica ``index`` under ``master_seed``."""
    return mix64((mix64(int(master_seed)) + GOLDEN * (int(index) + 1)) & MASK64)


def replica_seeds(master_seed: int, count: int) -> list:
    return [derive_seed(master_seed, r) for r in range(count)]


def _mix_array(z):
    z = np.asarray(z, dtype=np.uint64)
    z = (z ^ (z >> _S30)) * _M1_U
    z = (z ^ (z >> _S27)) * _M2_U
    return z ^ (z >> _S31)


def uniforms(keys, positions):
    """Uniform variates in (0, 1] at ``positions`` of the streams ``keys``.

    ``keys`` and ``positions`` are broadcast uint64 arrays.
    """
    keys = np.asarray(keys, dtype=np.uint64)
    positions = np.asarray(positions, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = _mix_array(keys + _GOLDEN_U * (positions + _ONE))
    return ((z >> _S11) + _ONE).astype(np.float64) * _INV53


def event_uniforms(keys, counters):
    """Two independent uniforms per event: (holding time, channel choice)."""
    base = np.asarray(counters, dtype=np.uint64) * _TWO
    return uniforms(keys, base), uniforms(keys, base + _ONE)


def generator(seed: int) -> np.random.Generator:
    """Sequential generator for algorithms that are inherently one-replica loops."""
    return np.random.Generator(np.random.Philox(key=stream_key(seed)))
