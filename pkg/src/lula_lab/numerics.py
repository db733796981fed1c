"""Dense linear algebra and seeded random sampling.

All arrays are 64-bit floats. Randomness goes through :class:`Rng`, a thin
wrapper around NumPy's Philox counter-based bit generator, so that a given
seed produces the identical stream on every platform and run. No operation
here touches a global random state.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular

from .errors import NotPositiveDefinite

__all__ = [
    "Rng",
    "cholesky_psd",
    "solve_psd",
    "kron",
    "sample_gaussian",
]

# Escalating diagonal jitter used when factoring curvature matrices: attempt
# a clean factorization first (keeps exact cases exact), then retry with
# 1e-8 and 1e-6 times the mean diagonal added to the diagonal.
JITTER_SCALES = (0.0, 1e-8, 1e-6)

_MASK64 = (1 << 64) - 1


def _mix64(seed: int, stream: int) -> int:
    """SplitMix64 finalizer over (seed, stream), used to derive child seeds."""
    z = (seed + (stream + 1) * 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


class Rng:
    """Deterministic random stream with explicit seeding.

    Backed by ``numpy.random.Philox`` (a counter-based generator), so the
    stream for a given seed is reproducible bit-for-bit across platforms.
    An instance is stateful and must be used from one thread at a time;
    use :meth:`derive` to obtain independent child streams for parallel or
    structurally separate work.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        self._gen = np.random.Generator(np.random.Philox(key=self.seed))

    def derive(self, stream: int) -> "Rng":
        """Child stream with a seed mixed from (self.seed, stream)."""
        return Rng(_mix64(self.seed, int(stream)))

    def standard_normal(self, shape) -> np.ndarray:
        return self._gen.standard_normal(size=shape)

    def normal(self, loc, scale, shape) -> np.ndarray:
        return self._gen.normal(loc=loc, scale=scale, size=shape)

    def uniform(self, low, high, shape) -> np.ndarray:
        return self._gen.uniform(low=low, high=high, size=shape)

    def integers(self, low, high, shape=None) -> np.ndarray:
        return self._gen.integers(low, high, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def __repr__(self) -> str:  # pragma: no cover
        return f"Rng(seed={self.seed})"


def _as_square_matrix(a: np.ndarray, name: str = "a") -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"{name} must be a square matrix, got shape {a.shape}")
    return a


def cholesky_psd(a: np.ndarray) -> np.ndarray:
    """Lower-triangular L with L @ L.T == a, tolerating near-PSD input.

    The input must be symmetric to within 1e-10 relative. Factorization is
    attempted with the jitter ladder in :data:`JITTER_SCALES`; each retry adds
    ``scale * mean(diag(a))`` to the diagonal. Raises
    :class:`NotPositiveDefinite` when all attempts fail.
    """
    a = _as_square_matrix(a)
    scale = max(float(np.max(np.abs(a))), 1.0)
    if float(np.max(np.abs(a - a.T))) > 1e-10 * scale:
        raise ValueError("matrix is not symmetric within 1e-10 relative")
    base = float(np.mean(np.diag(a))) if a.shape[0] else 1.0
    if not np.isfinite(base) or base <= 0.0:
        base = 1.0
    eye = np.eye(a.shape[0])
    for jitter in JITTER_SCALES:
        try:
            return np.linalg.cholesky(a + (jitter * base) * eye)
        except np.linalg.LinAlgError:
            continue
    raise NotPositiveDefinite(
        f"Cholesky failed for {a.shape[0]}x{a.shape[0]} matrix after jitter "
        f"ladder {JITTER_SCALES}"
    )


def solve_psd(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve a @ x = b for symmetric positive-definite a via Cholesky."""
    chol = cholesky_psd(a)
    return solve_with_cholesky(chol, b)


def solve_with_cholesky(chol: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve (L @ L.T) x = b given a precomputed lower-triangular L."""
    b = np.asarray(b, dtype=np.float64)
    squeeze = b.ndim == 1
    rhs = b[:, None] if squeeze else b
    if rhs.shape[0] != chol.shape[0]:
        raise ValueError(
            f"dimension mismatch: factor is {chol.shape[0]}x{chol.shape[0]}, "
            f"rhs has {rhs.shape[0]} rows"
        )
    y = solve_triangular(chol, rhs, lower=True)
    x = solve_triangular(chol.T, y, lower=False)
    return x[:, 0] if squeeze else x


def inverse_cholesky_factor(a: np.ndarray) -> np.ndarray:
    """Upper-triangular M with M @ M.T == inv(a), for PD a.

    Computed as inv(chol(a)).T, so sampling with M draws from the Gaussian
    whose precision is a.
    """
    chol = cholesky_psd(a)
    return solve_triangular(chol, np.eye(chol.shape[0]), lower=True).T


def kron(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Kronecker product with the standard block layout.

    Entry [(i * b.rows + k), (j * b.cols + l)] equals a[i, j] * b[k, l].
    With column-major vec this satisfies kron(a, b) @ vec(x) = vec(b @ x @ a.T);
    with row-major (C-order) flattening of a matrix s it satisfies
    kron(a, b) @ s.ravel() = (a @ s @ b.T).ravel().
    """
    return np.kron(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))


def sample_gaussian(
    mean: np.ndarray, chol_cov: np.ndarray, rng: Rng, count: int
) -> np.ndarray:
    """Draw ``count`` samples from N(mean, chol_cov @ chol_cov.T).

    Returns an array of shape (count, dim). Deterministic given the rng seed.
    """
    mean = np.asarray(mean, dtype=np.float64).ravel()
    chol_cov = _as_square_matrix(np.asarray(chol_cov, dtype=np.float64), "chol_cov")
    if chol_cov.shape[0] != mean.shape[0]:
        raise ValueError(
            f"dimension mismatch: mean has {mean.shape[0]} entries, "
            f"chol_cov is {chol_cov.shape[0]}x{chol_cov.shape[1]}"
        )
    z = rng.standard_normal((int(count), mean.shape[0]))
    return mean[None, :] + z @ chol_cov.T
