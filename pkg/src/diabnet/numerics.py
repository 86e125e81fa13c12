"""Matrix kernel, seeded random numbers and column statistics.

Matrices are plain ``numpy.ndarray`` objects of dtype float64 and shape
(rows, cols), stored C-contiguous (row-major).

Matrix products go through ``numpy.einsum`` rather than BLAS.  ``einsum``
without path optimisation accumulates each output cell over the inner
dimension in a fixed order, so a row of ``x @ w`` is bitwise identical
whether it is computed alone or as part of a larger batch.  BLAS picks
different kernels (gemv vs gemm) depending on the batch height, which
breaks that guarantee.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateColumnError, EmptyInputError, ShapeError

_MASK64 = (1 << 64) - 1


def as_matrix(values) -> np.ndarray:
    """Coerce ``values`` to a contiguous 2-D float64 array."""
    m = np.ascontiguousarray(values, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got {m.ndim}-D array of shape {m.shape}")
    return m


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return np.einsum("ik,kj->ij", a, b)


def transpose(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a.T)


_BINARY = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
}


def elementwise(a: np.ndarray, op, b=None) -> np.ndarray:
    """Apply ``op`` cell by cell.

    ``op`` is one of ``"add"``, ``"sub"``, ``"mul"`` (``b`` a matrix of the
    same shape or a single row broadcast over every row), ``"scale"``
    (``b`` a scalar), or a callable applied to every cell of ``a``.
    """
    if callable(op):
        return np.asarray(op(a), dtype=np.float64)
    if op == "scale":
        if not np.isscalar(b):
            raise ShapeError("scale expects a scalar operand")
        return a * float(b)
    if op not in _BINARY:
        raise ValueError(f"unknown elementwise op {op!r}")
    b = np.asarray(b, dtype=np.float64)
    if b.ndim == 0:
        return _BINARY[op](a, b)
    if b.shape != a.shape and not (b.shape in {(a.shape[1],), (1, a.shape[1])}):
        raise ShapeError(f"cannot combine {a.shape} with {b.shape}")
    return _BINARY[op](a, b)


def column_stats(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-column mean and population (divide-by-n) standard deviation."""
    if m.ndim != 2 or m.shape[0] == 0:
        raise EmptyInputError("column_stats needs at least one row")
    means = m.mean(axis=0)
    centered = m - means
    stds = np.sqrt((centered * centered).mean(axis=0))
    return means, stds


def pearson_correlation(m: np.ndarray, names=None) -> np.ndarray:
    """Pearson correlation between the columns of ``m``.

    The diagonal is exactly 1 and the result is exactly symmetric.
    """
    if m.ndim != 2 or m.shape[0] < 2:
        raise EmptyInputError("correlation needs at least two rows")
    means, stds = column_stats(m)
    for j, s in enumerate(stds):
        if s == 0.0:
            raise DegenerateColumnError(names[j] if names is not None else j)
    z = (m - means) / stds
    corr = matmul(transpose(z), z) / m.shape[0]
    corr = np.clip(0.5 * (corr + corr.T), -1.0, 1.0)
    np.fill_diagonal(corr, 1.0)
    return corr


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(seed: int, *path: int) -> int:
    """Mix a base seed with a path of integers into an independent 64-bit seed.

    Each step is ``splitmix64(state ^ splitmix64(component))``.
    """
    state = splitmix64(int(seed) & _MASK64)
    for component in path:
        state = splitmix64(state ^ splitmix64(int(component) & _MASK64))
    return state


class Rng:
    """Seeded generator over the Philox-4x64-10 counter-based bit stream.

    The 64-bit seed is the Philox key and the counter starts at zero, so a
    seed pins the raw stream on every platform.  Uniform doubles take the
    top 53 bits of each raw word.  Higher-level draws (permutations,
    sampling) are built here from those doubles rather than taken from
    ``numpy.random.Generator``, whose algorithms may change between numpy
    releases.
    """

    algorithm = "philox4x64-10"

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        self._bits = np.random.Philox(key=self.seed, counter=0)

    def raw(self, n: int) -> np.ndarray:
        return self._bits.random_raw(n)

    def uniform(self, n: int) -> np.ndarray:
        """``n`` doubles in [0, 1)."""
        return (self.raw(n) >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)

    def uniform_range(self, low: float, high: float, shape) -> np.ndarray:
        size = int(np.prod(shape))
        return (low + (high - low) * self.uniform(size)).reshape(shape)

    def permutation(self, n: int) -> np.ndarray:
        # stable sort keeps the result defined even on (astronomically rare) key ties
        return np.argsort(self.uniform(n), kind="stable")

    def sample(self, n: int, k: int) -> np.ndarray:
        """``k`` distinct indices from ``range(n)``, uniformly, in random order."""
        if not 0 <= k <= n:
            raise ValueError(f"cannot sample {k} of {n}")
        return self.permutation(n)[:k]

    def spawn(self, *path: int) -> "Rng":
        return Rng(derive_seed(self.seed, *path))


def fmt17(x: float) -> str:
    """Decimal text with 17 significant digits; parses back to the same double."""
    return format(float(x), ".17g")
