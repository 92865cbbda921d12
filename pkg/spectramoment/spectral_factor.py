r"""Spectral factorization G^* Lambda G = (CG)^*(CG) through the zero-weight DARE

    P = A^* P A - A^* P B (B^* P B)^{-1} B^* P A + Lambda,

whose constant term Lambda may be indefinite, and the maps h: Lambda -> C and
h^{-1}: C -> Pi_{im Gamma}(C^* C) between the parameter and factor charts.

The DARE is solved on the extended (2n + m) pencil, compressed by a QR step that deflates
the m infinite eigenvalues, and reordered with the QZ algorithm so that the n stable
eigenvalues lead. This is the construction used by scipy.linalg.solve_discrete_are, kept
here because scipy requires a nonsingular control weight.
"""
import logging
from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np
from scipy import linalg

from .filterbank import FilterBank, eval_G
from .moment_space import (
    DomainError,
    FactorPoint,
    MomentSpace,
    ParameterPoint,
    membership_C_plus,
    membership_L_plus,
    project_im_gamma,
)
from .numerics import (
    UnstableMatrixError,
    lower_reverse_cholesky,
    solve_discrete_lyapunov,
)


class NoStabilizingSolutionError(Exception):
    """The DARE has no (numerically detectable) stabilizing solution."""

    pass


@dataclass(frozen=True)
class DareSolution:
    """Stabilizing DARE solution P, the factor L with B^* P B = L^* L (L lower
    triangular, real positive diagonal), C = L^{-*} B^* P, the DARE residual and the
    spectral radius of A - B(CB)^{-1}CA."""

    P: np.ndarray
    L: np.ndarray
    C: np.ndarray
    residual: float
    closed_loop_radius: float


def _dare_residual(fb: FilterBank, P: np.ndarray, Lam: np.ndarray) -> np.ndarray:
    A, B = fb.A, fb.B
    AhPB = A.conj().T @ P @ B
    gain = linalg.solve(B.conj().T @ P @ B, AhPB.conj().T)
    return A.conj().T @ P @ A - AhPB @ gain + Lam - P


def _stable_subspace(fb: FilterBank, Lam: np.ndarray) -> np.ndarray:
    A, B = fb.A, fb.B
    n, m = fb.n, fb.m
    H = np.zeros((2 * n + m, 2 * n + m), dtype=complex)
    H[:n, :n] = A
    H[:n, 2 * n :] = B
    H[n : 2 * n, :n] = -Lam
    H[n : 2 * n, n : 2 * n] = np.eye(n)
    J = np.zeros_like(H)
    J[:n, :n] = np.eye(n)
    J[n : 2 * n, n : 2 * n] = A.conj().T
    J[2 * n :, n : 2 * n] = -B.conj().T

    q_of_qr, _ = linalg.qr(H[:, -m:])
    H = q_of_qr[:, m:].conj().T @ H[:, : 2 * n]
    J = q_of_qr[:, m:].conj().T @ J[:, : 2 * n]

    _, _, alpha, beta, _, Z = linalg.ordqz(H, J, sort="iuc", output="complex")
    modulus_gap = np.abs(np.abs(alpha) - np.abs(beta))
    if np.any(modulus_gap <= 1e-10 * np.maximum(np.abs(alpha), np.abs(beta))):
        raise NoStabilizingSolutionError(
            "The Riccati pencil has eigenvalues on the unit circle."
        )
    inside = int(np.sum(np.abs(alpha) < np.abs(beta)))
    if inside != n:
        raise NoStabilizingSolutionError(
            f"Expected {n} stable eigenvalues of the Riccati pencil, found {inside}."
        )
    return Z[:, :n]


def solve_dare(fb: FilterBank, Lam: np.ndarray) -> DareSolution:
    """Solve the DARE for Lambda in L_+ and extract the spectral factor C.

    Args:
        fb (FilterBank): The filter bank (A, B).
        Lam (np.ndarray): Hermitian n x n matrix with G^* Lambda G > 0 on the circle.
        It may be indefinite.

    Raises:
        NoStabilizingSolutionError: If the stable deflating subspace cannot be found,
        its leading block is singular, or B^* P B is not positive definite.
    """
    Lam = np.asarray(Lam, dtype=complex)
    Lam = 0.5 * (Lam + Lam.conj().T)
    n = fb.n
    U = _stable_subspace(fb, Lam)
    u00, u10 = U[:n], U[n:]
    if 1.0 / np.linalg.cond(u00) < np.finfo(float).eps:
        raise NoStabilizingSolutionError("Failed to find a finite DARE solution.")
    P = linalg.solve(u00.conj().T, u10.conj().T).conj().T
    P = 0.5 * (P + P.conj().T)

    scale = 1.0 + np.linalg.norm(Lam)
    try:
        residual = _dare_residual(fb, P, Lam)
        for _ in range(2):
            if np.linalg.norm(residual) <= 1e-13 * scale:
                break
            # Newton correction: dP - A_c^* dP A_c = F(P)
            A_c = _closed_loop(fb, P)
            dP = solve_discrete_lyapunov(A_c.conj().T, residual)
            P = 0.5 * (P + dP + (P + dP).conj().T)
            residual = _dare_residual(fb, P, Lam)
    except (linalg.LinAlgError, ValueError, UnstableMatrixError) as e:
        raise NoStabilizingSolutionError(
            "Refining the DARE solution failed, B^* P B is singular or the closed loop"
            " is unstable."
        ) from e

    BPB = fb.B.conj().T @ P @ fb.B
    try:
        L = lower_reverse_cholesky(BPB)
    except np.linalg.LinAlgError as e:
        raise NoStabilizingSolutionError("B^* P B is not positive definite.") from e
    C = linalg.solve_triangular(L.conj().T, fb.B.conj().T @ P, lower=False)
    member, details = membership_C_plus(fb, C)
    if not member:
        raise NoStabilizingSolutionError(
            "The DARE solution is not stabilizing, closed loop spectral radius is"
            f" {details['closed_loop_radius']}."
        )
    return DareSolution(
        P=P,
        L=L,
        C=C,
        residual=float(np.linalg.norm(residual)),
        closed_loop_radius=float(details["closed_loop_radius"]),
    )


def _closed_loop(fb: FilterBank, P: np.ndarray) -> np.ndarray:
    A, B = fb.A, fb.B
    return A - B @ linalg.solve(B.conj().T @ P @ B, B.conj().T @ P @ A)


def eval_W(fb: FilterBank, C: np.ndarray, z: complex) -> np.ndarray:
    """The minimum phase factor W(z) = z C G(z) = CA(zI - A)^{-1}B + CB."""
    return z * (np.asarray(C) @ eval_G(fb, z))


def eval_W_riccati(fb: FilterBank, sol: DareSolution, z: complex) -> np.ndarray:
    """The same factor written as L^{-*} B^* P A (zI - A)^{-1} B + L."""
    gain = linalg.solve_triangular(
        sol.L.conj().T, fb.B.conj().T @ sol.P @ fb.A, lower=False
    )
    return gain @ eval_G(fb, z) + sol.L


def factorization_residual(ms: MomentSpace, Lam: np.ndarray, C: np.ndarray) -> float:
    """max over the grid of ||G^* Lambda G - (CG)^*(CG)||_F."""
    G = ms.G
    lhs = np.einsum("kia,ij,kjb->kab", G.conj(), Lam, G)
    CG = np.einsum("ij,kjb->kib", C, G)
    rhs = CG.conj().transpose(0, 2, 1) @ CG
    return float(np.max(np.linalg.norm(lhs - rhs, axis=(1, 2))))


def null_direction_norm(ms: MomentSpace, C: np.ndarray, V: np.ndarray) -> float:
    """max over the grid of ||G^*(C^* V + V^* C) G||_F.

    Vanishes exactly for V = QC with Q skew-Hermitian and, for V in the factor space,
    only for V = 0.
    """
    X = C.conj().T @ V + V.conj().T @ C
    G = ms.G
    values = np.einsum("kia,ij,kjb->kab", G.conj(), X, G)
    return float(np.max(np.linalg.norm(values, axis=(1, 2))))


def h_map(ms: MomentSpace, Lam: Union[ParameterPoint, np.ndarray]) -> FactorPoint:
    """h: Lambda -> C, the spectral factor of G^* Lambda G.

    Raises:
        DomainError: If Lambda is not in L_+^Gamma.
        NoStabilizingSolutionError: Propagated from solve_dare, or if the factorization
        identity fails on the grid.
    """
    point = Lam if isinstance(Lam, ParameterPoint) else ms.parameter_point(Lam)
    member, margin = membership_L_plus(ms, point.matrix, refine=True)
    if not member:
        raise DomainError(
            f"Lambda is not in L_+: smallest eigenvalue of G^* Lambda G is {margin}."
        )
    sol = solve_dare(ms.fb, point.matrix)
    residual = factorization_residual(ms, point.matrix, sol.C)
    if residual > 1e-8 * (1.0 + np.linalg.norm(point.matrix)):
        raise NoStabilizingSolutionError(
            f"Spectral factorization residual {residual:.3e} is too large."
        )
    return ms.factor_point(sol.C)


def h_inverse(ms: MomentSpace, C: Union[FactorPoint, np.ndarray]) -> ParameterPoint:
    """h^{-1}: C -> Pi_{im Gamma}(C^* C).

    Raises:
        DomainError: If C is not in C_+.
    """
    point = C if isinstance(C, FactorPoint) else ms.factor_point(C)
    member, details = membership_C_plus(ms.fb, point.matrix)
    if not member:
        raise DomainError(f"C is not in C_+: {details}")
    Lam = project_im_gamma(ms, point.matrix.conj().T @ point.matrix)
    member, margin = membership_L_plus(ms, Lam.matrix)
    if not member:
        raise DomainError(f"Pi(C^* C) is not in L_+, margin {margin}.")
    return Lam


def jacobian_h_inverse(
    ms: MomentSpace, C: Union[FactorPoint, np.ndarray]
) -> Tuple[np.ndarray, float]:
    """Jacobian of h^{-1} in coordinates, dx_j/dy_k = <Lambda_j, C_k^* C + C^* C_k>,
    returned with its smallest singular value."""
    point = C if isinstance(C, FactorPoint) else ms.factor_point(C)
    Cy = point.matrix
    Ck = ms.c_basis
    D = np.einsum("kai,aj->kij", Ck.conj(), Cy)
    D = D + D.conj().transpose(0, 2, 1)
    J = np.einsum("jab,kba->jk", ms.lambda_basis, D).real
    smallest = float(linalg.svdvals(J)[-1]) if J.size else 0.0
    if smallest <= 1e-10 * np.linalg.norm(J):
        logging.critical(
            f"Jacobian of h^-1 is numerically singular (smallest singular value"
            f" {smallest:.3e}) although it should never vanish on C_+."
        )
    return J, smallest
