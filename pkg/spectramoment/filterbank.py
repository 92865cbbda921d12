import threading
from dataclasses import dataclass, field
from typing import Any, Dict, Tuple

import numpy as np
from scipy import linalg

from .numerics import (
    DimensionMismatchError,
    GridSpec,
    MatrixFunctionSamples,
    integrate_adaptive,
    solve_discrete_lyapunov,
)
from .snooper import FilterBankSnooper


@dataclass(frozen=True, eq=False)
class FilterBank:
    """The filter bank G(z) = (zI - A)^{-1} B with x(t+1) = A x(t) + B y(t).

    Instances are immutable; use new_filter_bank to build a validated one. Samples of G
    on a grid are computed once per grid size and cached.
    """

    A: np.ndarray
    B: np.ndarray
    _cache: Dict[int, np.ndarray] = field(default_factory=dict, repr=False)
    _lock: Any = field(default_factory=threading.Lock, repr=False)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    def samples(self, grid: GridSpec) -> np.ndarray:
        """G(e^{i theta_k}) for every grid angle, as an array of shape (N, n, m)."""
        cached = self._cache.get(grid.N)
        if cached is not None:
            return cached
        with self._lock:
            if grid.N not in self._cache:
                z = grid.points
                pencil = z[:, None, None] * np.eye(self.n) - self.A[None, :, :]
                rhs = np.broadcast_to(self.B, (grid.N, self.n, self.m))
                values = np.linalg.solve(pencil, rhs)
                values.setflags(write=False)
                self._cache[grid.N] = values
        return self._cache[grid.N]


def new_filter_bank(A, B) -> FilterBank:
    """Build a validated FilterBank.

    Args:
        A: n x n complex matrix, Schur stable.
        B: n x m complex matrix of full column rank, n >= m.

    Raises:
        DimensionMismatchError: If the shapes are inconsistent.
        NotSchurStableError, RankDeficientBError, UnreachablePairError: If (A, B)
        violates the corresponding assumption.
    """
    A = np.atleast_2d(np.array(A, dtype=complex))
    B = np.array(B, dtype=complex)
    if B.ndim == 0:
        B = B.reshape(1, 1)
    elif B.ndim == 1:
        B = B[:, None]
    n = A.shape[0]
    if A.shape != (n, n):
        raise DimensionMismatchError(f"A must be square, got shape {A.shape}.")
    if B.shape[0] != n:
        raise DimensionMismatchError(
            f"B must have {n} rows to match A, got shape {B.shape}."
        )
    if not (n >= B.shape[1] >= 1):
        raise DimensionMismatchError("The filter bank needs n >= m >= 1.")
    FilterBankSnooper().snoop(A, B)
    A.setflags(write=False)
    B.setflags(write=False)
    return FilterBank(A, B)


def eval_G(fb: FilterBank, z: complex) -> np.ndarray:
    """Evaluate G(z) = (zI - A)^{-1} B at a point of the unit circle by a linear solve."""
    if abs(abs(z) - 1.0) > 1e-12:
        raise ValueError(f"G is evaluated on the unit circle only, got |z| = {abs(z)}.")
    try:
        return linalg.solve(z * np.eye(fb.n) - fb.A, fb.B)
    except linalg.LinAlgError as e:
        raise RuntimeError("Linear solve for G(z) failed.") from e


def reachability_gramian(fb: FilterBank) -> np.ndarray:
    """The Gramian sum_k A^k B B^* (A^*)^k, i.e. the solution of X - A X A^* = B B^*.

    Equals the integral of G G^* over the circle.
    """
    return solve_discrete_lyapunov(fb.A, fb.B @ fb.B.conj().T)


def gramian_by_quadrature(fb: FilterBank, grid: GridSpec) -> Tuple[np.ndarray, GridSpec]:
    """Integral of G G^* by adaptive quadrature, as an independent check of
    reachability_gramian."""

    def sampler(g: GridSpec) -> MatrixFunctionSamples:
        G = fb.samples(g)
        return MatrixFunctionSamples.hermitized(g, G @ G.conj().transpose(0, 2, 1))

    return integrate_adaptive(sampler, grid)


def is_static(fb: FilterBank, atol: float = 1e-14) -> bool:
    """True for the delay bank n = m, A = 0, B = I, for which G(z) = z^{-1} I."""
    return (
        fb.n == fb.m
        and bool(np.all(np.abs(fb.A) <= atol))
        and bool(np.allclose(fb.B, np.eye(fb.n), rtol=0.0, atol=atol))
    )
