"""Keyed, bit-reproducible generation of the synthetic anchor sets.

Random bits come from numpy's PCG64 bit generator seeded through
``SeedSequence(s, spawn_key=(stream,))``.  Both are covered by numpy's
stream-compatibility guarantee; the ``Generator`` distribution methods are
not, so doubles and normals are derived here from the raw 64-bit outputs:

* uniform double in [0, 1): ``(raw >> 11) * 2**-53``
* standard normal: Box-Muller on consecutive uniform pairs ``(u1, u2)``,
  ``r = sqrt(-2 ln(1 - u1))``, emitting ``r cos(2 pi u2)`` then
  ``r sin(2 pi u2)``.

Draw order for one key: ``mu_m`` (q uniforms), ``mu_nm`` (q uniforms), the
n member rows (row-major normals), then the n nonmember rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# independent sub-streams derived from one secret seed
STREAM_SYNTHETIC = 0
STREAM_UNIT_MASK = 1

_TWO_POW_M53 = 1.0 / (1 << 53)


class KeyedStream:
    """Deterministic sampler over a PCG64 raw stream."""

    def __init__(self, seed: int, stream: int = STREAM_SYNTHETIC):
        if not 0 <= int(seed) < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream),))
        self._bits = np.random.PCG64(ss)

    def raw(self, n: int) -> np.ndarray:
        return self._bits.random_raw(n).astype(np.uint64)

    def uniform(self, n: int, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        u = (self.raw(n) >> np.uint64(11)).astype(np.float64) * _TWO_POW_M53
        return low + (high - low) * u

    def normal(self, n: int) -> np.ndarray:
        pairs = (n + 1) // 2
        u = self.uniform(2 * pairs).reshape(pairs, 2)
        r = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
        theta = 2.0 * np.pi * u[:, 1]
        z = np.empty((pairs, 2))
        z[:, 0] = r * np.cos(theta)
        z[:, 1] = r * np.sin(theta)
        return z.reshape(-1)[:n]

    def permutation(self, n: int) -> np.ndarray:
        # stable argsort of fresh uniforms; ties resolve by index
        return np.argsort(self.uniform(n), kind="stable")


@dataclass
class EncodingKey:
    """The secret shared between encoding and decoding.

    ``mapping`` is an optional MappingSpec-like dict (mode, layer,
    unit_fraction) recorded with the key so a decoder can rebuild the same
    representation.
    """

    seed: int
    n: int = 500
    q: int = 64
    alpha: float = 0.0
    beta: float = 1.0
    mapping: dict = field(default_factory=dict)

    def __post_init__(self):
        self.seed = int(self.seed)
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if self.n < 1 or self.q < 1:
            raise ValueError("n and q must be >= 1")
        if not self.alpha < self.beta:
            raise ValueError("alpha must be smaller than beta")

    def with_seed(self, seed: int) -> "EncodingKey":
        return EncodingKey(seed, self.n, self.q, self.alpha, self.beta, dict(self.mapping))


@dataclass
class SyntheticPair:
    members: np.ndarray  # (n, q)
    nonmembers: np.ndarray  # (n, q)
    mu_m: np.ndarray
    mu_nm: np.ndarray

    def stacked(self):
        """All 2n points with membership bits (members first)."""
        x = np.vstack([self.members, self.nonmembers])
        z = np.concatenate([np.ones(len(self.members)), np.zeros(len(self.nonmembers))])
        return x, z


def gen_synthetic_data(key: EncodingKey) -> SyntheticPair:
    rng = KeyedStream(key.seed, STREAM_SYNTHETIC)
    mu_m = rng.uniform(key.q, key.alpha, key.beta)
    mu_nm = rng.uniform(key.q, key.alpha, key.beta)
    members = rng.normal(key.n * key.q).reshape(key.n, key.q) + mu_m
    nonmembers = rng.normal(key.n * key.q).reshape(key.n, key.q) + mu_nm
    return SyntheticPair(members, nonmembers, mu_m, mu_nm)
