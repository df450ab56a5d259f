"""Counter-based random streams.

Every random number used by the simulators is a pure function of
``(seed, path, step, stream, block)``: the Philox4x32-10 block cipher is
applied to the counter ``(path, step, stream, block)`` under the 64-bit key
``seed``.  No generator state is carried between calls, so a path's draws do
not depend on which other paths are simulated, in which chunk, or on how
many threads are used.

Counter layout (four uint32 words)::

    c0 = path index          c1 = time-step index
    c2 = stream tag          c3 = block index within the stream

Each block yields four uint32 words, i.e. two 53-bit uniforms or two
standard normals (Box-Muller).
"""

from __future__ import annotations

import numpy as np

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint32(0x9E3779B9)
_W1 = np.uint32(0xBB67AE85)
_LO = np.uint64(0xFFFFFFFF)
_SHIFT = np.uint64(32)

# stream tags
INIT = 0
BROWNIAN = 1
AUX_NOISE = 2
JUMP_COUNT = 3
JUMP_MARK = 4
SMALL_JUMP = 5
THIN_ACCEPT = 6
THIN_MARK = 7
COMPONENT = 8


def split_seed(seed: int) -> tuple[int, int]:
    """Split a non-negative 64-bit seed into the two Philox key words."""
    seed = int(seed)
    if seed < 0 or seed >= 2**64:
        raise ValueError(f"seed must be in [0, 2**64), got {seed}")
    return seed & 0xFFFFFFFF, seed >> 32


def philox4x32(c0, c1, c2, c3, k0: int, k1: int, rounds: int = 10):
    """Philox4x32 block function, vectorised over the counter words."""
    shape = np.broadcast(c0, c1, c2, c3).shape
    x0 = np.broadcast_to(np.asarray(c0, dtype=np.uint32), shape).copy()
    x1 = np.broadcast_to(np.asarray(c1, dtype=np.uint32), shape).copy()
    x2 = np.broadcast_to(np.asarray(c2, dtype=np.uint32), shape).copy()
    x3 = np.broadcast_to(np.asarray(c3, dtype=np.uint32), shape).copy()
    key0 = np.uint32(k0)
    key1 = np.uint32(k1)
    with np.errstate(over="ignore"):
        for r in range(rounds):
            p0 = _M0 * x0.astype(np.uint64)
            p1 = _M1 * x2.astype(np.uint64)
            hi0 = (p0 >> _SHIFT).astype(np.uint32)
            lo0 = (p0 & _LO).astype(np.uint32)
            hi1 = (p1 >> _SHIFT).astype(np.uint32)
            lo1 = (p1 & _LO).astype(np.uint32)
            x0, x1, x2, x3 = hi1 ^ x1 ^ key0, lo1, hi0 ^ x3 ^ key1, lo0
            if r < rounds - 1:
                key0 = np.uint32(key0 + _W0)
                key1 = np.uint32(key1 + _W1)
    return x0, x1, x2, x3


def _to_unit(hi, lo):
    # 53-bit uniform in the open interval (0, 1)
    a = (hi >> np.uint32(5)).astype(np.float64)
    b = (lo >> np.uint32(6)).astype(np.float64)
    return (a * 67108864.0 + b + 0.5) / 9007199254740992.0


class CounterRNG:
    """Stateless access to the Philox streams of one master seed."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._k0, self._k1 = split_seed(seed)

    def uniforms(self, paths, step: int, stream: int, count: int, first_block: int = 0) -> np.ndarray:
        """Uniforms on (0, 1) of shape ``(len(paths), count)``."""
        paths = np.asarray(paths, dtype=np.uint32)
        n_blocks = (count + 1) // 2
        out = np.empty((paths.size, 2 * n_blocks))
        for blk in range(n_blocks):
            x0, x1, x2, x3 = philox4x32(paths, step, stream, first_block + blk, self._k0, self._k1)
            out[:, 2 * blk] = _to_unit(x0, x1)
            out[:, 2 * blk + 1] = _to_unit(x2, x3)
        return out[:, :count]

    def normals(self, paths, step: int, stream: int, count: int, first_block: int = 0) -> np.ndarray:
        """Standard normals of shape ``(len(paths), count)`` by Box-Muller."""
        u = self.uniforms(paths, step, stream, 2 * ((count + 1) // 2), first_block)
        r = np.sqrt(-2.0 * np.log(u[:, 0::2]))
        ang = 2.0 * np.pi * u[:, 1::2]
        z = np.empty_like(u)
        z[:, 0::2] = r * np.cos(ang)
        z[:, 1::2] = r * np.sin(ang)
        return z[:, :count]


def poisson_inverse(u: np.ndarray, mean: np.ndarray) -> np.ndarray:
    """Poisson counts by sequential inversion of the CDF at uniforms ``u``."""
    u = np.asarray(u, dtype=float)
    mean = np.broadcast_to(np.asarray(mean, dtype=float), u.shape)
    k = np.zeros(u.shape, dtype=np.int64)
    p = np.exp(-mean)
    cdf = p.copy()
    active = u > cdf
    kk = 0
    while np.any(active) and kk < 10_000:
        kk += 1
        p = np.where(active, p * mean / kk, p)
        cdf = np.where(active, cdf + p, cdf)
        k += active
        # guard against cdf stalling below u from rounding in the far tail
        active = active & (u > cdf) & (p > 0)
    return k
