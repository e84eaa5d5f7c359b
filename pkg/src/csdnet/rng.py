"""Counter-based splitmix64 random source.

Every stream is a pure function of (seed, key path, draw index), so datasets,
parameter initialization and batch order reproduce bit-for-bit across runs
and platforms without touching any global RNG state.
"""

from __future__ import annotations

import numpy as np

_MASK = 0xFFFFFFFFFFFFFFFF
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def mix64(x: np.ndarray) -> np.ndarray:
    """splitmix64 finalizer over uint64 values (wrapping arithmetic)."""
    with np.errstate(over="ignore"):  # wraparound is the point
        x = (x ^ (x >> np.uint64(30))) * _MIX1
        x = (x ^ (x >> np.uint64(27))) * _MIX2
        return x ^ (x >> np.uint64(31))


def _fold(state: np.uint64, word: int) -> np.uint64:
    with np.errstate(over="ignore"):
        return mix64((state + _GOLDEN) ^ np.uint64(word & _MASK))


class Rng:
    """Deterministic stream of uniform draws addressed by a running counter."""

    def __init__(self, state: int):
        self._base = np.uint64(state & _MASK)
        self._count = 0

    @classmethod
    def derive(cls, seed: int, *keys: int | str) -> "Rng":
        """Build an independent stream from a seed plus a key path.

        Strings are folded in 8-byte little-endian chunks (zero padded),
        integers as single 64-bit words, so distinct paths give distinct
        streams.
        """
        state = mix64(np.uint64(seed & _MASK))
        for key in keys:
            if isinstance(key, str):
                raw = key.encode("utf-8")
                for i in range(0, max(len(raw), 1), 8):
                    chunk = raw[i : i + 8].ljust(8, b"\0")
                    state = _fold(state, int.from_bytes(chunk, "little"))
            else:
                state = _fold(state, int(key))
        return cls(int(state))

    def _raw(self, n: int) -> np.ndarray:
        idx = np.arange(self._count + 1, self._count + n + 1, dtype=np.uint64)
        self._count += n
        with np.errstate(over="ignore"):
            return mix64(self._base + idx * _GOLDEN)

    def u64(self) -> int:
        return int(self._raw(1)[0])

    def uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        return float(self.uniform_array(1, lo, hi)[0])

    def uniform_array(self, shape, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
        """Uniform doubles in [lo, hi) with 53-bit mantissas, C-order."""
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape)) if shape else 1
        u = (self._raw(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return (lo + (hi - lo) * u).reshape(shape)

    def randint(self, n: int) -> int:
        """Integer in [0, n). Modulo bias is negligible for desk-scale n."""
        if n <= 0:
            raise ValueError("randint needs a positive bound")
        return int(self._raw(1)[0] % np.uint64(n))

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randint(i + 1)
            items[i], items[j] = items[j], items[i]
