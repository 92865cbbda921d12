r"""Numerical kernels shared by every other module: quadrature on the unit circle,
the discrete Lyapunov equation and a rank-revealing orthonormal split.

All integrals over the circle use the normalised measure

    \int F := \int_{-\pi}^{\pi} F(e^{i\theta}) d\theta / 2\pi

approximated by the mean over a uniform grid, which is the periodic trapezoid rule.
"""
from dataclasses import dataclass
from typing import Callable, Tuple

import numpy as np
from scipy import linalg

MIN_GRID_N = 8
MAX_GRID_N = 65536
DEFAULT_GRID_N = 1024
DIRECT_LYAPUNOV_MAX_N = 12


class UnstableMatrixError(Exception):
    """The matrix has spectral radius too close to (or beyond) one."""

    pass


class DimensionMismatchError(ValueError):
    """Samples, grids or matrices with inconsistent shapes."""

    pass


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid of N angles theta_k = 2*pi*k/N - pi on the unit circle.

    Args:
        N (int): Number of angles. Must be a power of two between 8 and 65536.
        tol_refine (float): Relative change below which adaptive refinement stops.
    """

    N: int = DEFAULT_GRID_N
    tol_refine: float = 1e-10

    def __post_init__(self) -> None:
        if not isinstance(self.N, (int, np.integer)) or isinstance(self.N, bool):
            raise ValueError(f"Grid size must be an integer, got {self.N!r}.")
        if not (MIN_GRID_N <= self.N <= MAX_GRID_N) or (self.N & (self.N - 1)):
            raise ValueError(
                f"Grid size must be a power of two between {MIN_GRID_N} and"
                f" {MAX_GRID_N}, got {self.N}."
            )
        if not self.tol_refine > 0.0:
            raise ValueError("tol_refine must be a positive float.")

    @property
    def angles(self) -> np.ndarray:
        return 2.0 * np.pi * np.arange(self.N) / self.N - np.pi

    @property
    def points(self) -> np.ndarray:
        return np.exp(1j * self.angles)

    def refined(self) -> "GridSpec":
        if 2 * self.N > MAX_GRID_N:
            raise ValueError(f"Cannot refine beyond N = {MAX_GRID_N}.")
        return GridSpec(N=2 * self.N, tol_refine=self.tol_refine)


@dataclass(frozen=True)
class MatrixFunctionSamples:
    """Samples of a p x q matrix-valued function on a uniform grid.

    Args:
        grid (GridSpec): The grid the samples live on.
        values (np.ndarray): Array of shape (N, p, q), one matrix per angle.
        hermitian (bool): Whether every sample is (numerically) Hermitian. Checked on
        construction.
    """

    grid: GridSpec
    values: np.ndarray
    hermitian: bool = False

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=complex)
        if values.ndim == 1:
            values = values[:, None, None]
        if values.ndim != 3:
            raise DimensionMismatchError(
                "Samples must be a sequence of matrices with a common shape p x q."
            )
        if values.shape[0] != self.grid.N:
            raise DimensionMismatchError(
                f"Expected {self.grid.N} samples, got {values.shape[0]}."
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("Samples must be finite.")
        if self.hermitian:
            if values.shape[1] != values.shape[2]:
                raise DimensionMismatchError("Hermitian samples must be square.")
            gap = np.linalg.norm(values - values.conj().transpose(0, 2, 1), axis=(1, 2))
            size = np.linalg.norm(values, axis=(1, 2))
            if np.any(gap > 1e-12 * (1.0 + size)):
                raise ValueError("Samples flagged hermitian are not Hermitian.")
        object.__setattr__(self, "values", values)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape[1], self.values.shape[2]

    @classmethod
    def hermitized(cls, grid: GridSpec, values: np.ndarray) -> "MatrixFunctionSamples":
        """Build Hermitian-flagged samples after removing roundoff asymmetry."""
        values = np.asarray(values, dtype=complex)
        values = 0.5 * (values + values.conj().transpose(0, 2, 1))
        return cls(grid, values, hermitian=True)


def integrate_circle(samples: MatrixFunctionSamples) -> np.ndarray:
    """Integrate sampled values over the circle against d theta / 2 pi.

    The uniform mean is exact (up to roundoff) for trigonometric polynomials of degree
    below N and converges geometrically for functions analytic in an annulus.
    """
    if samples.values.shape[0] == 0:
        raise ValueError("Cannot integrate an empty set of samples.")
    return samples.values.mean(axis=0)


def integrate_adaptive(
    sampler: Callable[[GridSpec], MatrixFunctionSamples], grid: GridSpec
) -> Tuple[np.ndarray, GridSpec]:
    """Integrate by doubling the grid until the relative change is below
    ``grid.tol_refine`` or the grid reaches its maximal size.

    Args:
        sampler (Callable): Maps a GridSpec to samples on that grid.
        grid (GridSpec): The starting grid.

    Returns:
        The integral and the grid it was accepted on.
    """
    current = integrate_circle(sampler(grid))
    while 2 * grid.N <= MAX_GRID_N:
        finer = grid.refined()
        refined = integrate_circle(sampler(finer))
        change = np.linalg.norm(refined - current)
        grid, current = finer, refined
        if change <= grid.tol_refine * max(np.linalg.norm(refined), 1e-300):
            break
    return current, grid


def spectral_radius(A: np.ndarray) -> float:
    if A.size == 0:
        return 0.0
    return float(np.max(np.abs(linalg.eigvals(A))))


def solve_discrete_lyapunov(A: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Solve X - A X A^* = Q for a Schur stable A.

    Small problems (n <= 12) are solved directly through the n^2 x n^2 Kronecker system,
    larger ones by Smith's squaring iteration X <- X + A_k X A_k^*, A_k <- A_k^2.

    Raises:
        UnstableMatrixError: If the spectral radius of A is at least 1 - 1e-10.
    """
    A = np.atleast_2d(np.asarray(A, dtype=complex))
    Q = np.atleast_2d(np.asarray(Q, dtype=complex))
    n = A.shape[0]
    if A.shape != (n, n) or Q.shape != (n, n):
        raise DimensionMismatchError("A and Q must be square and of the same size.")
    rho = spectral_radius(A)
    if rho >= 1.0 - 1e-10:
        raise UnstableMatrixError(
            f"The Lyapunov equation needs a Schur stable matrix, spectral radius is {rho}."
        )
    if n <= DIRECT_LYAPUNOV_MAX_N:
        X = linalg.solve_discrete_lyapunov(A, Q, method="direct")
    else:
        X, Ak = Q.copy(), A.copy()
        while np.linalg.norm(Ak, 2) > 1e-17:
            X = X + Ak @ X @ Ak.conj().T
            Ak = Ak @ Ak
    if np.allclose(Q, Q.conj().T, rtol=0.0, atol=1e-14 * (1.0 + np.linalg.norm(Q))):
        X = 0.5 * (X + X.conj().T)
    return X


def orthonormal_split(
    map_matrix: np.ndarray, rank_tol: float = 1e-9
) -> Tuple[np.ndarray, np.ndarray]:
    """Split the domain of a real linear map into its kernel and the kernel's
    orthogonal complement.

    Args:
        map_matrix (np.ndarray): Real r x c matrix of the map.
        rank_tol (float): Singular values below rank_tol * sigma_max count as zero.

    Returns:
        (range_basis, kernel_basis): c x k and c x (c - k) matrices with orthonormal
        columns. range_basis spans the row space of the map (the orthogonal complement
        of the kernel in the domain).
    """
    mat = np.asarray(map_matrix, dtype=float)
    if mat.ndim != 2:
        raise DimensionMismatchError("map_matrix must be two-dimensional.")
    if not np.all(np.isfinite(mat)):
        raise ValueError("map_matrix must be finite.")
    if not rank_tol > 0.0:
        raise ValueError("rank_tol must be a positive float.")
    rows, cols = mat.shape
    if rows > cols:
        # same kernel, square and cheap
        mat = linalg.qr(mat, mode="r")[0][:cols]
    _, s, vh = linalg.svd(mat, full_matrices=True)
    smax = s[0] if s.size else 0.0
    rank = int(np.sum(s > rank_tol * smax)) if smax > 0.0 else 0
    v = vh.T
    return _fix_signs(v[:, :rank]), _fix_signs(v[:, rank:])


def _fix_signs(basis: np.ndarray) -> np.ndarray:
    """Flip each column so its largest-magnitude entry is positive."""
    basis = np.array(basis, copy=True)
    for k in range(basis.shape[1]):
        col = basis[:, k]
        idx = int(np.argmax(np.abs(col)))
        if col[idx].real < 0.0:
            basis[:, k] = -col
    return basis


def hermitian_basis(n: int) -> np.ndarray:
    """Orthonormal basis of the n x n Hermitian matrices under <X, Y> = trace(XY).

    Returns an array of shape (n^2, n, n): the diagonal units first, then for every
    i < j the symmetric and the skew pair (E_ij + E_ji)/sqrt(2), i(E_ij - E_ji)/sqrt(2).
    """
    basis = []
    for i in range(n):
        E = np.zeros((n, n), dtype=complex)
        E[i, i] = 1.0
        basis.append(E)
    for i in range(n):
        for j in range(i + 1, n):
            S = np.zeros((n, n), dtype=complex)
            S[i, j] = S[j, i] = 1.0 / np.sqrt(2.0)
            K = np.zeros((n, n), dtype=complex)
            K[i, j] = 1j / np.sqrt(2.0)
            K[j, i] = -1j / np.sqrt(2.0)
            basis.extend([S, K])
    return np.array(basis).reshape(n * n, n, n)


def lower_reverse_cholesky(X: np.ndarray) -> np.ndarray:
    """Return L lower triangular with real positive diagonal such that X = L^* L.

    This is the ordinary Cholesky factor of the index-reversed matrix, reversed back.

    Raises:
        np.linalg.LinAlgError: If X is not positive definite.
    """
    X = np.atleast_2d(np.asarray(X, dtype=complex))
    flipped = X[::-1, ::-1]
    K = np.linalg.cholesky(0.5 * (flipped + flipped.conj().T))
    return K.conj().T[::-1, ::-1]


def hermitian_part(X: np.ndarray) -> np.ndarray:
    return 0.5 * (X + np.conj(np.swapaxes(X, -1, -2)))
