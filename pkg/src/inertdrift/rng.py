"""Counter-based Gaussian increments (Philox4x32-10).

Every Brownian increment is a pure function of ``(seed, stream_id, step)``:
workers can generate any slice of any stream without coordination, and two
runs that share a key see bit-identical noise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numba as nb
import numpy as np

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_MASK = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)

# auxiliary draws (bridge tests) live in a disjoint counter domain
AUX_DOMAIN = np.uint64(1) << np.uint64(63)


@nb.njit(cache=True, inline="always")
def philox4x32(c0, c1, c2, c3, k0, k1):
    """Ten-round Philox4x32 block; all arguments are uint64 holding 32-bit words."""
    for _ in range(10):
        p0 = _M0 * c0
        p1 = _M1 * c2
        hi0 = p0 >> _S32
        lo0 = p0 & _MASK
        hi1 = p1 >> _S32
        lo1 = p1 & _MASK
        c0 = hi1 ^ c1 ^ k0
        c1 = lo1
        c2 = hi0 ^ c3 ^ k1
        c3 = lo0
        k0 = (k0 + _W0) & _MASK
        k1 = (k1 + _W1) & _MASK
    return c0, c1, c2, c3


@nb.njit(cache=True, inline="always")
def uniform_pair(seed, stream, counter):
    """Two doubles in [0, 1) with 53-bit resolution from one Philox block."""
    x0, x1, x2, x3 = philox4x32(
        counter & _MASK, counter >> _S32, stream & _MASK, stream >> _S32,
        seed & _MASK, seed >> _S32,
    )
    # the 53-bit integers fit in int64, whose float conversion is cheaper
    u = np.int64((x0 >> np.uint64(5)) * np.uint64(67108864) + (x1 >> np.uint64(6))) * (1.0 / 9007199254740992.0)
    w = np.int64((x2 >> np.uint64(5)) * np.uint64(67108864) + (x3 >> np.uint64(6))) * (1.0 / 9007199254740992.0)
    return u, w


@nb.njit(cache=True, inline="always")
def normal_pair(seed, stream, counter):
    """Box-Muller pair of standard normals for counter block ``counter``."""
    u, w = uniform_pair(seed, stream, counter)
    r = math.sqrt(-2.0 * math.log(1.0 - u))
    ang = 2.0 * math.pi * w
    return r * math.cos(ang), r * math.sin(ang)


@nb.njit(cache=True)
def standard_normals(seed, stream, start, n):
    """Standard normals with indices ``start .. start+n-1`` of one stream."""
    out = np.empty(n)
    for i in range(n):
        k = np.uint64(start + i)
        z0, z1 = normal_pair(seed, stream, k >> np.uint64(1))
        out[i] = z0 if (k & np.uint64(1)) == 0 else z1
    return out


@dataclass(frozen=True)
class NoiseSource:
    """Key of one driving Brownian path.

    ``scale`` multiplies every increment; ``scale=0`` is the noise-free test hook.
    """

    seed: int = 0
    stream_id: int = 0
    scale: float = 1.0

    def __post_init__(self):
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 bits")
        if not 0 <= self.stream_id < 2**63:
            raise ValueError("stream_id must be in [0, 2**63)")

    @classmethod
    def silent(cls) -> "NoiseSource":
        return cls(0, 0, 0.0)

    def lane(self, k: int) -> "NoiseSource":
        """Sibling stream for worker lane ``k`` (same seed)."""
        return NoiseSource(self.seed, self.stream_id + k, self.scale)

    @property
    def key(self) -> tuple[np.uint64, np.uint64]:
        return np.uint64(self.seed), np.uint64(self.stream_id)

    def increments(self, dt: float, start: int, n: int) -> np.ndarray:
        """Brownian increments N(0, dt) for steps ``start .. start+n-1``."""
        if self.scale == 0.0:
            return np.zeros(n)
        z = standard_normals(np.uint64(self.seed), np.uint64(self.stream_id), start, n)
        return z * (self.scale * math.sqrt(dt))
