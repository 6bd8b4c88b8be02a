"""Counter-based random streams (Philox4x32-10).

Every Gaussian variate used by the simulator is a pure function of
``(seed, trajectory, step, channel, tag)``.  No generator state is carried
between steps, so trajectories can be advanced in any order, by any number
of workers, and still see identical noise.

The compiled kernel in :mod:`ppcat._kernels` implements the same mapping in C;
this module is the reference used by the pure-Python fallback and the tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PHILOX_M0 = np.uint64(0xD2511F53)
PHILOX_M1 = np.uint64(0xCD9E8D57)
PHILOX_W0 = np.uint64(0x9E3779B9)
PHILOX_W1 = np.uint64(0xBB67AE85)
_MASK32 = np.uint64(0xFFFFFFFF)
_SHIFT32 = np.uint64(32)

TAG_WIENER = 0
TAG_INITIAL = 1


def philox4x32(c0, c1, c2, c3, k0, k1, rounds: int = 10):
    """Philox4x32 block function, vectorized over numpy arrays.

    All inputs are interpreted as unsigned 32-bit words (held in uint64
    arrays).  Returns the four output words.
    """
    c0 = np.asarray(c0, dtype=np.uint64) & _MASK32
    c1 = np.asarray(c1, dtype=np.uint64) & _MASK32
    c2 = np.asarray(c2, dtype=np.uint64) & _MASK32
    c3 = np.asarray(c3, dtype=np.uint64) & _MASK32
    k0 = np.asarray(k0, dtype=np.uint64) & _MASK32
    k1 = np.asarray(k1, dtype=np.uint64) & _MASK32
    for r in range(rounds):
        if r:
            k0 = (k0 + PHILOX_W0) & _MASK32
            k1 = (k1 + PHILOX_W1) & _MASK32
        p0 = PHILOX_M0 * c0
        p1 = PHILOX_M1 * c2
        hi0, lo0 = p0 >> _SHIFT32, p0 & _MASK32
        hi1, lo1 = p1 >> _SHIFT32, p1 & _MASK32
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
    return c0, c1, c2, c3


def _uniform53(hi, lo):
    # 27 + 26 bits -> double in the open interval (0, 1)
    a = (hi >> np.uint64(5)).astype(np.float64)
    b = (lo >> np.uint64(6)).astype(np.float64)
    return (a * 67108864.0 + b + 0.5) * (1.0 / 9007199254740992.0)


def _split_seed(seed: int):
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    return np.uint64(seed & 0xFFFFFFFF), np.uint64(seed >> 32)


def uniform_pairs(seed: int, trajectory, step, pair, tag: int = TAG_WIENER):
    """Two independent uniforms on (0, 1) per counter value."""
    k0, k1 = _split_seed(seed)
    trajectory = np.asarray(trajectory, dtype=np.uint64)
    step = np.asarray(step, dtype=np.uint64)
    pair = np.asarray(pair, dtype=np.uint64)
    c2 = pair | (np.uint64(tag) << np.uint64(24))
    x0, x1, x2, x3 = philox4x32(trajectory, step & _MASK32, c2, step >> _SHIFT32, k0, k1)
    return _uniform53(x0, x1), _uniform53(x2, x3)


def normal_pairs(seed: int, trajectory, step, pair, tag: int = TAG_WIENER):
    """Two independent standard normals per counter value (Box-Muller)."""
    u1, u2 = uniform_pairs(seed, trajectory, step, pair, tag)
    r = np.sqrt(-2.0 * np.log(u1))
    phase = 2.0 * np.pi * u2
    return r * np.cos(phase), r * np.sin(phase)


def standard_normals(seed: int, trajectory, step, n_channels: int, tag: int = TAG_WIENER):
    """Standard normals for channels ``0..n_channels-1``.

    ``trajectory`` may be an array; the result then has shape
    ``(len(trajectory), n_channels)``.  Channel ``c`` is the ``c % 2``-th
    output of counter pair ``c // 2``, matching the compiled kernel.
    """
    trajectory = np.atleast_1d(np.asarray(trajectory, dtype=np.uint64))
    n_pairs = (n_channels + 1) // 2
    pairs = np.arange(n_pairs, dtype=np.uint64)
    z0, z1 = normal_pairs(seed, trajectory[:, None], step, pairs[None, :], tag)
    out = np.empty((trajectory.size, 2 * n_pairs))
    out[:, 0::2] = z0
    out[:, 1::2] = z1
    return out[:, :n_channels]


@dataclass(frozen=True)
class WienerStream:
    """Replayable noise stream for one trajectory.

    The stream has no mutable state: the increments for any step are
    recomputed from the counter, so two streams with equal fields produce
    bit-identical sequences.
    """

    seed: int
    trajectory: int
    tag: int = TAG_WIENER

    def normals(self, step: int, count: int) -> np.ndarray:
        return standard_normals(self.seed, [self.trajectory], step, count, self.tag)[0]


def wiener_increments(stream: WienerStream, dt: float, count: int, step: int = 0) -> np.ndarray:
    """Real Wiener increments with mean 0 and variance ``dt``."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt!r}")
    return np.sqrt(dt) * stream.normals(step, count)
