"""Synthetic data: a stationary signal y drawn from a ground-truth innovation model,
passed through the filter bank x(t+1) = A x(t) + B y(t), and the sample covariance of
the state x as the estimate of Sigma.
"""
from dataclasses import dataclass
from typing import Any, Dict, Optional, Tuple
import logging

import numpy as np

from .filterbank import FilterBank
from .moment_space import MomentSpace, gamma_apply, project_im_gamma
from .numerics import (
    DimensionMismatchError,
    GridSpec,
    MatrixFunctionSamples,
    hermitian_part,
    spectral_radius,
)

MIN_SAMPLES = 100


class UnstableTruthModelError(Exception):
    pass


@dataclass(frozen=True)
class TruthModel:
    """The innovation model s(t+1) = F s(t) + G e(t), y(t) = H s(t) + D e(t) with
    white e of covariance noise_cov, i.e. y has the spectral density

        H(z) noise_cov H(z)^*,  H(z) = H (zI - F)^{-1} G + D.

    F must be Schur stable and D invertible. The state dimension may be zero.
    """

    F: np.ndarray
    G: np.ndarray
    H: np.ndarray
    D: np.ndarray
    noise_cov: np.ndarray

    def __post_init__(self) -> None:
        k = self.F.shape[0]
        m = self.D.shape[0]
        if self.F.shape != (k, k) or self.G.shape != (k, m) or self.H.shape != (m, k):
            raise DimensionMismatchError(
                "Truth model needs F k x k, G k x m, H m x k and D m x m."
            )
        if self.D.shape != (m, m) or self.noise_cov.shape != (m, m):
            raise DimensionMismatchError("D and noise_cov must be m x m.")
        if k > 0 and spectral_radius(self.F) >= 1.0:
            raise UnstableTruthModelError(
                f"Truth model is unstable, spectral radius of F is"
                f" {spectral_radius(self.F)}."
            )
        if np.linalg.matrix_rank(self.D) < m:
            raise ValueError("D must be invertible for an innovation model.")
        try:
            np.linalg.cholesky(hermitian_part(self.noise_cov))
        except np.linalg.LinAlgError as e:
            raise ValueError("noise_cov must be positive definite.") from e

    @property
    def m(self) -> int:
        return self.D.shape[0]

    @classmethod
    def from_arrays(cls, F: Any, G: Any, H: Any, D: Any, noise_cov: Any) -> "TruthModel":
        m = np.atleast_2d(np.asarray(D)).shape[0]
        F = np.asarray(F, dtype=complex)
        k = F.shape[0] if F.size else 0
        return cls(
            F.reshape(k, k),
            np.asarray(G, dtype=complex).reshape(k, m),
            np.asarray(H, dtype=complex).reshape(m, k),
            np.atleast_2d(np.asarray(D, dtype=complex)),
            np.atleast_2d(np.asarray(noise_cov, dtype=complex)),
        )

    @classmethod
    def white_noise(cls, m: int) -> "TruthModel":
        """Unit white noise, the truth with spectral density I_m."""
        return cls(
            np.zeros((0, 0), dtype=complex),
            np.zeros((0, m), dtype=complex),
            np.zeros((m, 0), dtype=complex),
            np.eye(m, dtype=complex),
            np.eye(m, dtype=complex),
        )

    def transfer(self, grid: GridSpec) -> np.ndarray:
        z = grid.points
        values = np.broadcast_to(self.D, (grid.N, self.m, self.m)).copy()
        k = self.F.shape[0]
        if k > 0:
            pencil = z[:, None, None] * np.eye(k) - self.F[None]
            rhs = np.broadcast_to(self.G, (grid.N, k, self.m))
            resolvent = np.linalg.solve(pencil, rhs)
            values = values + np.einsum("ij,kjb->kib", self.H, resolvent)
        return values

    def spectrum(self, grid: GridSpec) -> MatrixFunctionSamples:
        Hz = self.transfer(grid)
        return MatrixFunctionSamples.hermitized(
            grid, Hz @ self.noise_cov @ Hz.conj().transpose(0, 2, 1)
        )


@dataclass(frozen=True)
class Scenario:
    """One synthetic experiment.

    Args:
        fb (FilterBank): The filter bank the signal is passed through.
        truth (TruthModel): Generates the signal y; its output dimension must be fb.m.
        T (int): Number of retained samples, at least 100.
        seed (int): Seed of the pseudo-random generator.
        real_valued (bool): Draw real noise; fb and truth must then be real.
        burn_in (int, optional): Discarded initial samples. Defaults to max(1000, 10n).
    """

    fb: FilterBank
    truth: TruthModel
    T: int
    seed: int
    real_valued: bool = False
    burn_in: Optional[int] = None

    def __post_init__(self) -> None:
        if not self.T >= MIN_SAMPLES:
            raise ValueError(f"A scenario needs T >= {MIN_SAMPLES}, got {self.T}.")
        if self.truth.m != self.fb.m:
            raise DimensionMismatchError(
                f"Truth model outputs {self.truth.m} channels, the bank takes {self.fb.m}."
            )
        if self.burn_in is not None and self.burn_in < 0:
            raise ValueError("burn_in must be non-negative.")
        if self.real_valued:
            arrays = (self.fb.A, self.fb.B, self.truth.F, self.truth.G, self.truth.H)
            arrays += (self.truth.D, self.truth.noise_cov)
            if any(np.any(np.abs(np.imag(a)) > 0.0) for a in arrays):
                raise ValueError("A real-valued scenario needs real matrices throughout.")

    @property
    def effective_burn_in(self) -> int:
        if self.burn_in is not None:
            return self.burn_in
        return max(1000, 10 * self.fb.n)


def _draw_innovations(sc: Scenario, burn: int) -> np.ndarray:
    """Innovations for the burn-in followed by the retained samples. The retained part
    is drawn first, so it does not depend on the burn-in length."""
    rng = np.random.default_rng(sc.seed)
    m = sc.fb.m

    def draw(count: int) -> np.ndarray:
        if sc.real_valued:
            return rng.standard_normal((count, m))
        real, imag = rng.standard_normal((2, count, m))
        return (real + 1j * imag) / np.sqrt(2.0)

    retained = draw(sc.T)
    white = np.concatenate([draw(burn), retained])
    if sc.real_valued:
        factor = np.linalg.cholesky(sc.truth.noise_cov.real)
    else:
        factor = np.linalg.cholesky(hermitian_part(sc.truth.noise_cov))
    return white @ factor.T


def simulate_scenario(sc: Scenario) -> Tuple[np.ndarray, Dict[str, Any]]:
    """Run the truth model and the filter bank recursion and return the sample
    covariance (1/T) sum_t x(t) x(t)^* over the retained samples, with diagnostics.

    The output is a deterministic function of the scenario, seed included.
    """
    burn = sc.effective_burn_in
    total = burn + sc.T
    dtype = float if sc.real_valued else complex
    e = _draw_innovations(sc, burn)

    def cast(M: np.ndarray) -> np.ndarray:
        return M.real.copy() if sc.real_valued else M

    truth = sc.truth
    F, G, H, D = (cast(M) for M in (truth.F, truth.G, truth.H, truth.D))
    A, B = cast(sc.fb.A), cast(sc.fb.B)
    s = np.zeros(F.shape[0], dtype=dtype)
    x = np.zeros(sc.fb.n, dtype=dtype)
    states = np.empty((sc.T, sc.fb.n), dtype=dtype)
    for t in range(total):
        if t >= burn:
            states[t - burn] = x
        y = H @ s + D @ e[t]
        s = F @ s + G @ e[t]
        x = A @ x + B @ y

    Sigma_hat = hermitian_part(states.T @ states.conj() / sc.T).astype(complex)
    diagnostics = {
        "T": sc.T,
        "burn_in": burn,
        "seed": sc.seed,
        "real_valued": sc.real_valued,
        "min_eigenvalue": float(np.min(np.linalg.eigvalsh(Sigma_hat))),
        "trace": float(np.trace(Sigma_hat).real),
    }
    logging.info(
        f"Simulated {sc.T} samples after a burn-in of {burn}, trace of the sample"
        f" covariance {diagnostics['trace']:.4f}."
    )
    return Sigma_hat, diagnostics


def true_state_covariance(sc: Scenario, ms: MomentSpace) -> np.ndarray:
    """Gamma(Phi_true), the covariance the sample estimate converges to."""
    return gamma_apply(ms, sc.truth.spectrum(ms.grid))


def prepare_target(
    ms: MomentSpace, Sigma_hat: np.ndarray
) -> Tuple[np.ndarray, Dict[str, Any]]:
    """Project a sample covariance onto im Gamma.

    The report carries the distance moved, its size relative to Sigma_hat, the
    smallest eigenvalue after projection and whether the result is a feasible target
    (positive definite).
    """
    Sigma_hat = hermitian_part(np.asarray(Sigma_hat, dtype=complex))
    Sigma = project_im_gamma(ms, Sigma_hat).matrix
    distance = float(np.linalg.norm(Sigma_hat - Sigma))
    norm = float(np.linalg.norm(Sigma_hat))
    min_eig = float(np.min(np.linalg.eigvalsh(Sigma)))
    report = {
        "projection_distance": distance,
        "relative_projection_distance": distance / norm if norm > 0.0 else 0.0,
        "min_eigenvalue": min_eig,
        "M": ms.M,
        "feasible": bool(min_eig > 0.0),
    }
    if not report["feasible"]:
        logging.warning(
            f"Projected covariance is not positive definite (smallest eigenvalue"
            f" {min_eig:.3e}), it is not a feasible target."
        )
    return Sigma, report
