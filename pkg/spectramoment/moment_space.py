r"""The moment operator Gamma: Phi -> \int G Phi G^* and its adjoint X -> G^* X G,
the orthogonal geometry of im Gamma and the coordinate charts used by the solvers.

Hermitian n x n matrices carry the real inner product <X, Y> = trace(XY); m x n factor
matrices carry Re trace(C_1^* C_2). Both bases below are orthonormal for these products,
so coordinates are plain inner products.
"""
from dataclasses import dataclass, replace
from typing import Any, Dict, Optional, Tuple

import numpy as np
from scipy import linalg

from .filterbank import FilterBank
from .numerics import (
    DimensionMismatchError,
    GridSpec,
    MatrixFunctionSamples,
    hermitian_basis,
    hermitian_part,
    integrate_circle,
    orthonormal_split,
    spectral_radius,
)


class MomentDimensionError(Exception):
    """The numerically found kernel of Gamma^* does not have dimension n^2 - m(2n - m)."""

    pass


class DomainError(Exception):
    """A parameter lies outside the admissible set it is required to be in."""

    pass


@dataclass(frozen=True)
class ParameterPoint:
    """Lambda = sum_j x_j Lambda_j in im Gamma."""

    coords: np.ndarray
    matrix: np.ndarray


@dataclass(frozen=True)
class FactorPoint:
    """C = sum_k y_k C_k in the factor space."""

    coords: np.ndarray
    matrix: np.ndarray


@dataclass(frozen=True, eq=False)
class MomentSpace:
    """Orthonormal bases of im Gamma, of its orthogonal complement and of the factor
    space {C : CB lower triangular with real diagonal}, tied to a quadrature grid.

    Build it with build_moment_space. The bases do not depend on the grid, so on_grid
    can move an existing space to a finer grid for verification.
    """

    fb: FilterBank
    grid: GridSpec
    lambda_basis: np.ndarray
    kernel_basis: np.ndarray
    c_basis: np.ndarray

    @property
    def M(self) -> int:
        return self.lambda_basis.shape[0]

    @property
    def G(self) -> np.ndarray:
        return self.fb.samples(self.grid)

    def on_grid(self, grid: GridSpec) -> "MomentSpace":
        return replace(self, grid=grid)

    def coords(self, X: np.ndarray) -> np.ndarray:
        """x_j = <Lambda_j, X>."""
        return np.einsum("bij,ji->b", self.lambda_basis, X).real

    def parameter_from_coords(self, x: np.ndarray) -> ParameterPoint:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.M,):
            raise DimensionMismatchError(f"Expected {self.M} coordinates, got {x.shape}.")
        return ParameterPoint(x, np.einsum("b,bij->ij", x, self.lambda_basis))

    def parameter_point(self, Lam: np.ndarray) -> ParameterPoint:
        """Wrap a matrix that already lies in im Gamma."""
        Lam = np.asarray(Lam, dtype=complex)
        point = self.parameter_from_coords(self.coords(Lam))
        if np.linalg.norm(Lam - point.matrix) > 1e-10 * (1.0 + np.linalg.norm(Lam)):
            raise DomainError("Matrix does not lie in im Gamma; project it first.")
        return ParameterPoint(point.coords, hermitian_part(Lam))

    def factor_from_coords(self, y: np.ndarray) -> FactorPoint:
        y = np.asarray(y, dtype=float)
        if y.shape != (self.M,):
            raise DimensionMismatchError(f"Expected {self.M} coordinates, got {y.shape}.")
        return FactorPoint(y, np.einsum("b,bij->ij", y, self.c_basis))

    def factor_point(self, C: np.ndarray) -> FactorPoint:
        """Wrap an m x n matrix of the factor space, computing its coordinates."""
        C = np.asarray(C, dtype=complex)
        if C.shape != (self.fb.m, self.fb.n):
            raise DimensionMismatchError(
                f"C must be {self.fb.m} x {self.fb.n}, got {C.shape}."
            )
        y = np.einsum("bij,ij->b", self.c_basis.conj(), C).real
        point = self.factor_from_coords(y)
        if np.linalg.norm(C - point.matrix) > 1e-10 * (1.0 + np.linalg.norm(C)):
            raise DomainError("CB must be lower triangular with real diagonal entries.")
        return FactorPoint(y, C)


def build_moment_space(
    fb: FilterBank, grid: Optional[GridSpec] = None, rank_tol: float = 1e-9
) -> MomentSpace:
    """Compute the bases of im Gamma, (im Gamma)^perp and the factor space.

    The kernel of Gamma^* is found numerically from the stacked grid samples of G^* X G
    over an orthonormal basis of the Hermitian matrices. Its dimension must come out as
    n^2 - m(2n - m).

    Args:
        fb (FilterBank): A validated filter bank.
        grid (GridSpec, optional): Quadrature grid; needs N >= 4n. Defaults to N = 1024.
        rank_tol (float, optional): Relative singular value threshold. Defaults to 1e-9.

    Raises:
        MomentDimensionError: If the kernel dimension is off, which signals a badly
        conditioned filter bank.
    """
    grid = grid or GridSpec()
    n, m = fb.n, fb.m
    if grid.N < 4 * n:
        raise ValueError(f"Grid size must be at least 4n = {4 * n}, got {grid.N}.")
    M = m * (2 * n - m)

    herm = hermitian_basis(n)
    G = fb.samples(grid)
    images = np.einsum("kia,bij,kjc->bkac", G.conj(), herm, G)
    flat = images.reshape(n * n, -1).T
    map_matrix = np.vstack([flat.real, flat.imag])
    range_coef, kernel_coef = orthonormal_split(map_matrix, rank_tol)
    if kernel_coef.shape[1] != n * n - M:
        raise MomentDimensionError(
            f"Expected a kernel of dimension {n * n - M}, found {kernel_coef.shape[1]}."
            " The filter bank is likely ill-conditioned."
        )
    lambda_basis = np.einsum("bk,bij->kij", range_coef, herm)
    kernel_basis = np.einsum("bk,bij->kij", kernel_coef, herm)

    return MomentSpace(
        fb=fb,
        grid=grid,
        lambda_basis=lambda_basis,
        kernel_basis=kernel_basis,
        c_basis=_factor_space_basis(fb),
    )


def _factor_space_basis(fb: FilterBank) -> np.ndarray:
    """Orthonormal basis of {C : CB lower triangular with real diagonal}.

    C = [T1 T2] [B B_perp]^{-1} with T1 lower triangular real-diagonal and T2 free.
    """
    n, m = fb.n, fb.m
    B_perp = linalg.null_space(fb.B.conj().T)
    T_inv = np.linalg.inv(np.hstack([fb.B, B_perp]))

    generators = []
    for i in range(m):
        for j in range(n):
            if j < m and j > i:
                continue
            units = [1.0] if (j < m and j == i) else [1.0, 1j]
            for unit in units:
                T = np.zeros((m, n), dtype=complex)
                T[i, j] = unit
                generators.append(T @ T_inv)
    flat = np.array([g.ravel() for g in generators]).T
    real_flat = np.vstack([flat.real, flat.imag])
    q, _ = linalg.qr(real_flat, mode="economic")
    q = _sign_fix(q)
    half = m * n
    return (q[:half] + 1j * q[half:]).T.reshape(-1, m, n)


def _sign_fix(q: np.ndarray) -> np.ndarray:
    q = q.copy()
    for k in range(q.shape[1]):
        idx = int(np.argmax(np.abs(q[:, k])))
        if q[idx, k] < 0.0:
            q[:, k] = -q[:, k]
    return q


def gamma_apply(ms: MomentSpace, density: MatrixFunctionSamples) -> np.ndarray:
    """Gamma(Phi) = integral of G Phi G^* over the circle.

    Raises:
        ValueError: If the density samples are not flagged Hermitian.
    """
    if not density.hermitian:
        raise ValueError("Gamma needs Hermitian density samples.")
    if density.grid.N != ms.grid.N:
        raise DimensionMismatchError(
            f"Density lives on N = {density.grid.N}, moment space on N = {ms.grid.N}."
        )
    if density.shape != (ms.fb.m, ms.fb.m):
        raise DimensionMismatchError(
            f"Density samples must be {ms.fb.m} x {ms.fb.m}, got {density.shape}."
        )
    G = ms.G
    integrand = np.einsum("kia,kab,kjb->kij", G, density.values, G.conj())
    return hermitian_part(integrate_circle(MatrixFunctionSamples(ms.grid, integrand)))


def gamma_adjoint(ms: MomentSpace, X: np.ndarray) -> MatrixFunctionSamples:
    """Gamma^*(X) = G^* X G sampled on the grid."""
    G = ms.G
    return MatrixFunctionSamples.hermitized(
        ms.grid, np.einsum("kia,ij,kjb->kab", G.conj(), X, G)
    )


def project_im_gamma(ms: MomentSpace, X: np.ndarray) -> ParameterPoint:
    """Orthogonal projection onto im Gamma, returned with its coordinates."""
    X = hermitian_part(np.asarray(X, dtype=complex))
    return ms.parameter_from_coords(ms.coords(X))


def membership_L_plus(
    ms: MomentSpace, Lam: np.ndarray, refine: bool = False
) -> Tuple[bool, float]:
    """Whether G^* Lambda G > 0 on the whole circle.

    Args:
        ms (MomentSpace): The moment space whose grid is used.
        Lam (np.ndarray): A Hermitian n x n matrix.
        refine (bool, optional): Also check on the twice finer grid, as done before an
        iterate is accepted by a solver. Defaults to False.

    Returns:
        (member, margin): margin is the smallest eigenvalue of G^* Lambda G over the grid.
    """
    margin = float(np.min(np.linalg.eigvalsh(gamma_adjoint(ms, Lam).values)))
    if refine and 2 * ms.grid.N <= 65536:
        finer = ms.on_grid(ms.grid.refined())
        finer_margin = np.min(np.linalg.eigvalsh(gamma_adjoint(finer, Lam).values))
        margin = min(margin, float(finer_margin))
    return margin > 0.0, margin


def membership_C_plus(fb: FilterBank, C: np.ndarray) -> Tuple[bool, Dict[str, Any]]:
    """Whether C belongs to C_+: CB lower triangular with real positive diagonal and
    A - B(CB)^{-1}CA Schur stable.

    A singular CB is reported as a failure, not raised.
    """
    C = np.asarray(C, dtype=complex)
    CB = C @ fb.B
    scale = 1e-10 * (1.0 + np.linalg.norm(CB))
    diag = np.diag(CB)
    details: Dict[str, Any] = {
        "diag_CB": diag,
        "lower_triangular": bool(np.all(np.abs(np.triu(CB, 1)) <= scale)),
        "real_diagonal": bool(np.all(np.abs(diag.imag) <= scale)),
        "closed_loop_radius": np.inf,
    }
    positive = bool(np.all(diag.real > 0.0))
    if not positive:
        return False, details
    try:
        closed_loop = fb.A - fb.B @ linalg.solve(CB, C @ fb.A)
    except (linalg.LinAlgError, ValueError):
        return False, details
    details["closed_loop_radius"] = spectral_radius(closed_loop)
    member = (
        details["lower_triangular"]
        and details["real_diagonal"]
        and details["closed_loop_radius"] < 1.0
    )
    return member, details


def feasibility_check(ms: MomentSpace, Sigma: np.ndarray) -> Dict[str, Any]:
    """Whether Sigma is a positive definite element of im Gamma.

    The report carries the smallest eigenvalue, the relative distance to im Gamma, the
    dimension M = m(2n - m) and the verdict.
    """
    Sigma = hermitian_part(np.asarray(Sigma, dtype=complex))
    min_eig = float(np.min(np.linalg.eigvalsh(Sigma)))
    norm = np.linalg.norm(Sigma)
    projected = project_im_gamma(ms, Sigma).matrix
    distance = float(np.linalg.norm(Sigma - projected) / norm) if norm > 0 else 0.0
    return {
        "min_eigenvalue": min_eig,
        "projection_distance": distance,
        "M": ms.M,
        "feasible": bool(min_eig > 0.0 and distance <= 1e-8),
    }
