r"""Parametric spectral densities and the moment equations they have to satisfy.

Given a filter bank G, a prior density Psi and a target Sigma in im Gamma, the estimator
finds the density

    Phi_C = (CG)^{-1} Psi (CG)^{-*}

with C in C_+ (or, for a scalar prior psi I, Phi_Lambda = psi (G^* Lambda G)^{-1} with
Lambda in L_+) with state covariance \int G Phi G^* equal to Sigma. It is solved
by a damped Newton iteration in the orthonormal coordinates of MomentSpace.
"""
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union
import logging

import numpy as np
from scipy import linalg
from scipy.spatial.distance import pdist

from .filterbank import is_static
from .moment_space import (
    DomainError,
    FactorPoint,
    MomentSpace,
    ParameterPoint,
    feasibility_check,
    membership_C_plus,
    membership_L_plus,
    project_im_gamma,
)
from .numerics import (
    MAX_GRID_N,
    DimensionMismatchError,
    GridSpec,
    MatrixFunctionSamples,
    hermitian_part,
)
from .serialization import encode_matrix
from .spectral_factor import NoStabilizingSolutionError, h_inverse, h_map
from .watchdog import (
    ConvergenceWatchdog,
    InfeasibleSigmaError,
    LineSearchCollapseError,
    SolverError,
)

SCALAR_DISPERSION_TOL = 1e-6
MATRIX_DISPERSION_TOL = 1e-4
MAX_POLISH_STEPS = 3

DensityFunction = Callable[[np.ndarray], np.ndarray]


class UnsupportedFilterBankError(Exception):
    """The requested operation is only available for the static bank A = 0, B = I."""

    pass


@dataclass(frozen=True)
class Prior:
    """The prior density Psi, sampled on a grid.

    Args:
        kind (str): "scalar" for Psi = psi I_m (samples are 1 x 1) or "matrix".
        samples (MatrixFunctionSamples): Hermitian samples, positive definite at every
        grid point.
        density_fn (Callable, optional): Maps an array of points on the circle to the
        stacked values of Psi there. Priors that carry it can be resampled on other
        grids, which the solver uses to verify its result on a finer grid.
    """

    kind: str
    samples: MatrixFunctionSamples
    density_fn: Optional[DensityFunction] = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if self.kind not in ("scalar", "matrix"):
            raise ValueError(f"Prior kind must be scalar or matrix, got {self.kind}.")
        if self.kind == "scalar" and self.samples.shape != (1, 1):
            raise DimensionMismatchError("A scalar prior must have 1 x 1 samples.")
        if not self.samples.hermitian:
            raise ValueError("Prior samples must be Hermitian.")
        smallest = float(np.min(np.linalg.eigvalsh(self.samples.values)))
        if not smallest > 0.0:
            raise ValueError(
                f"Prior must be positive definite on the grid, smallest eigenvalue is"
                f" {smallest}."
            )

    @property
    def grid(self) -> GridSpec:
        return self.samples.grid

    @property
    def can_resample(self) -> bool:
        return self.density_fn is not None

    def on_grid(self, grid: GridSpec) -> "Prior":
        if grid.N == self.grid.N:
            return self
        if self.density_fn is None:
            raise DimensionMismatchError(
                f"Prior is sampled on N = {self.grid.N} and cannot be resampled on"
                f" N = {grid.N}."
            )
        values = self.density_fn(grid.points)
        return Prior(
            self.kind, MatrixFunctionSamples.hermitized(grid, values), self.density_fn
        )

    def matrix_values(self, m: int) -> np.ndarray:
        """Psi on the grid as an (N, m, m) array."""
        values = self.samples.values
        if self.kind == "scalar":
            return values[:, 0, 0][:, None, None] * np.eye(m)[None]
        if values.shape[1:] != (m, m):
            raise DimensionMismatchError(
                f"Prior samples are {self.samples.shape}, the bank needs {m} x {m}."
            )
        return values

    def integral(self, m: int) -> np.ndarray:
        """R = \\int Psi."""
        return hermitian_part(self.matrix_values(m).mean(axis=0))

    @classmethod
    def constant(cls, value: Any, grid: GridSpec) -> "Prior":
        """A constant prior; a number gives a scalar prior, a matrix a matrix prior."""
        value = np.asarray(value, dtype=complex)
        kind = "scalar" if value.ndim == 0 else "matrix"
        value = np.atleast_2d(value)

        def density_fn(z: np.ndarray) -> np.ndarray:
            return np.broadcast_to(value, (len(z),) + value.shape).copy()

        samples = MatrixFunctionSamples.hermitized(grid, density_fn(grid.points))
        return cls(kind, samples, density_fn)

    @classmethod
    def from_fourier(cls, coefficients: Sequence[Any], grid: GridSpec) -> "Prior":
        """The trigonometric polynomial Psi(z) = R_0 + sum_k (R_k z^k + R_k^* z^{-k}).

        Args:
            coefficients (Sequence): [R_0, R_1, ...]. All numbers give a scalar prior,
            all p x p matrices a matrix prior. R_0 must be Hermitian.
        """
        if len(coefficients) == 0:
            raise ValueError("At least the constant coefficient R_0 is needed.")
        kind = "scalar" if all(np.ndim(c) == 0 for c in coefficients) else "matrix"
        coefs = [np.atleast_2d(np.asarray(c, dtype=complex)) for c in coefficients]
        if any(c.shape != coefs[0].shape for c in coefs):
            raise DimensionMismatchError("Fourier coefficients must share one shape.")
        if not np.allclose(coefs[0], coefs[0].conj().T):
            raise ValueError("The constant coefficient R_0 must be Hermitian.")

        def density_fn(z: np.ndarray) -> np.ndarray:
            values = np.broadcast_to(coefs[0], (len(z),) + coefs[0].shape).copy()
            for k, R in enumerate(coefs[1:], start=1):
                zk = z[:, None, None] ** k
                values = values + zk * R + R.conj().T / zk
            return values

        samples = MatrixFunctionSamples.hermitized(grid, density_fn(grid.points))
        return cls(kind, samples, density_fn)

    @classmethod
    def from_samples(
        cls, values: Any, grid: GridSpec, kind: Optional[str] = None
    ) -> "Prior":
        """A prior known only through its samples. It cannot be resampled."""
        values = np.asarray(values, dtype=complex)
        if values.ndim == 1:
            values = values[:, None, None]
        if kind is None:
            kind = "scalar" if values.shape[1:] == (1, 1) else "matrix"
        return cls(kind, MatrixFunctionSamples.hermitized(grid, values))


@dataclass(frozen=True)
class SolveOptions:
    """Tolerances and budgets of solve_estimation.

    The residual tolerance is relative: a solve converges once
    ||moment - Sigma||_F <= tol_residual * ||Sigma||_F, after which full Newton steps
    continue until the step is below tol_residual * (1 + ||z||) in coordinates.
    """

    tol_residual: float = 1e-9
    max_iters: int = 100
    backtrack_factor: float = 0.5
    min_step: float = 1e-14
    feasibility_guard: float = 1e-10
    multistart: int = 1
    seed: int = 0
    report_every_n_steps: int = 10
    abort: bool = True

    def __post_init__(self) -> None:
        for name in ("tol_residual", "min_step", "feasibility_guard"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be a positive float.")
        for name in ("max_iters", "multistart", "report_every_n_steps"):
            if not getattr(self, name) >= 1:
                raise ValueError(f"{name} must be a positive integer.")
        if not 0.0 < self.backtrack_factor < 1.0:
            raise ValueError("backtrack_factor must lie strictly between 0 and 1.")
        if self.seed < 0:
            raise ValueError("seed must be a non-negative integer.")


@dataclass
class SolveReport:
    """Outcome of solve_estimation.

    lam is the solution Lambda in im Gamma, C the spectral factor of the matrix path
    (None on the scalar path). multistart_solutions holds the Lambda coordinates of
    every converged start, sorted, and max_pairwise_distance their dispersion, measured
    on the problem rescaled to ||Sigma||_F = 1. residual_history and verified_residual
    are relative to ||Sigma||_F.
    min_jacobian_singular_value is the smallest singular value of the coordinate
    Jacobian relative to its norm, over all Newton steps of the first start.
    """

    lam: ParameterPoint
    C: Optional[FactorPoint]
    residual_history: List[float]
    iterations: int
    multistart_solutions: List[np.ndarray]
    max_pairwise_distance: float
    converged: bool
    verified_residual: Optional[float]
    min_jacobian_singular_value: float
    uniqueness_flag: bool
    prior_kind: str

    @property
    def residual(self) -> float:
        return self.residual_history[-1]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "prior_kind": self.prior_kind,
            "converged": self.converged,
            "iterations": self.iterations,
            "residual": self.residual,
            "residual_history": list(self.residual_history),
            "verified_residual": self.verified_residual,
            "lambda": encode_matrix(self.lam.matrix),
            "lambda_coords": self.lam.coords.tolist(),
            "C": None if self.C is None else encode_matrix(self.C.matrix),
            "multistart_solutions": [x.tolist() for x in self.multistart_solutions],
            "max_pairwise_distance": self.max_pairwise_distance,
            "uniqueness_flag": self.uniqueness_flag,
            "min_jacobian_singular_value": self.min_jacobian_singular_value,
        }


def _prior_values(ms: MomentSpace, prior: Prior) -> np.ndarray:
    return prior.on_grid(ms.grid).matrix_values(ms.fb.m)


def _scalar_psi(ms: MomentSpace, prior: Prior) -> np.ndarray:
    if prior.kind != "scalar":
        raise ValueError("This operation needs a scalar prior psi I.")
    return prior.on_grid(ms.grid).samples.values[:, 0, 0].real


def _adjoint_values(ms: MomentSpace, X: np.ndarray) -> np.ndarray:
    G = ms.G
    return np.einsum("kia,ij,kjb->kab", G.conj(), X, G)


def _integrate_congruence(ms: MomentSpace, values: np.ndarray) -> np.ndarray:
    """\\int G V G^* for one (N, m, m) stack or a batch (K, N, m, m) of them."""
    G = ms.G
    if values.ndim == 3:
        out = np.einsum("nia,nab,njb->ij", G, values, G.conj()) / ms.grid.N
        return hermitian_part(out)
    out = np.einsum("nia,knab,njb->kij", G, values, G.conj()) / ms.grid.N
    return hermitian_part(out)


def _coords_batch(ms: MomentSpace, X: np.ndarray) -> np.ndarray:
    """Coordinates of a batch (K, n, n), returned as the M x K matrix of columns."""
    return np.einsum("jab,kba->jk", ms.lambda_basis, X).real


def _factor_density(
    ms: MomentSpace, psi: np.ndarray, C: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    W = np.einsum("ij,kjb->kib", C, ms.G)
    Winv = np.linalg.inv(W)
    Phi = Winv @ psi @ Winv.conj().transpose(0, 2, 1)
    return 0.5 * (Phi + Phi.conj().transpose(0, 2, 1)), Winv


def _check_factor(ms: MomentSpace, C: Union[FactorPoint, np.ndarray]) -> FactorPoint:
    point = C if isinstance(C, FactorPoint) else ms.factor_point(C)
    member, details = membership_C_plus(ms.fb, point.matrix)
    if not member:
        raise DomainError(f"C is not in C_+: {details}")
    return point


def _check_parameter(
    ms: MomentSpace, Lam: Union[ParameterPoint, np.ndarray]
) -> ParameterPoint:
    point = Lam if isinstance(Lam, ParameterPoint) else ms.parameter_point(Lam)
    member, margin = membership_L_plus(ms, point.matrix)
    if not member:
        raise DomainError(f"Lambda is not in L_+, margin {margin}.")
    return point


def density_eval(
    ms: MomentSpace, prior: Prior, param: Union[FactorPoint, ParameterPoint]
) -> MatrixFunctionSamples:
    """Samples of Phi_C = (CG)^{-1} Psi (CG)^{-*}, or of Phi_Lambda = Phi_{h(Lambda)}.

    For a scalar prior and a ParameterPoint the density psi (G^* Lambda G)^{-1} is
    computed directly, without a Riccati solve.

    Raises:
        DomainError: If the parameter is not admissible.
    """
    if isinstance(param, ParameterPoint):
        point = _check_parameter(ms, param)
        if prior.kind == "scalar":
            psi = _scalar_psi(ms, prior)
            S = _adjoint_values(ms, point.matrix)
            values = psi[:, None, None] * np.linalg.inv(S)
            return MatrixFunctionSamples.hermitized(ms.grid, values)
        param = h_map(ms, point)
    point_c = _check_factor(ms, param)
    Phi, _ = _factor_density(ms, _prior_values(ms, prior), point_c.matrix)
    return MatrixFunctionSamples(ms.grid, Phi, hermitian=True)


def omega_eval(
    ms: MomentSpace, prior: Prior, Lam: Union[ParameterPoint, np.ndarray]
) -> np.ndarray:
    """omega(Lambda) = \\int G Phi_Lambda G^*, an element of im Gamma."""
    if not isinstance(Lam, ParameterPoint):
        Lam = ms.parameter_point(Lam)
    return _integrate_congruence(ms, density_eval(ms, prior, Lam).values)


def tau_eval(ms: MomentSpace, prior: Prior, C: FactorPoint) -> np.ndarray:
    """tau(C) = \\int G Phi_C G^*."""
    point = _check_factor(ms, C)
    Phi, _ = _factor_density(ms, _prior_values(ms, prior), point.matrix)
    return _integrate_congruence(ms, Phi)


def _tau_directional(
    ms: MomentSpace, psi: np.ndarray, C: np.ndarray, directions: np.ndarray
) -> np.ndarray:
    Phi, Winv = _factor_density(ms, psi, C)
    dW = np.einsum("bij,kjl->bkil", directions, ms.G)
    T = Winv[None] @ dW @ Phi[None]
    dPhi = -(T + T.conj().transpose(0, 1, 3, 2))
    return _integrate_congruence(ms, dPhi)


def differential_tau(
    ms: MomentSpace, prior: Prior, C: FactorPoint, dC: np.ndarray
) -> np.ndarray:
    """The directional derivative of tau at C along dC in the factor space:

        \\int G dPhi G^*,  dPhi = -(CG)^{-1} dC G Phi_C - Phi_C G^* dC^* (CG)^{-*}.
    """
    point = _check_factor(ms, C)
    dC = np.asarray(dC, dtype=complex)
    if dC.shape != point.matrix.shape:
        raise DimensionMismatchError(f"dC must have shape {point.matrix.shape}.")
    return _tau_directional(ms, _prior_values(ms, prior), point.matrix, dC[None])[0]


def tau_jacobian(ms: MomentSpace, prior: Prior, C: FactorPoint) -> np.ndarray:
    """Real M x M Jacobian of y -> coords(tau(C(y)))."""
    point = _check_factor(ms, C)
    dtau = _tau_directional(ms, _prior_values(ms, prior), point.matrix, ms.c_basis)
    return _coords_batch(ms, dtau)


def _omega_scalar_directional(
    ms: MomentSpace, psi: np.ndarray, Lam: np.ndarray, directions: np.ndarray
) -> np.ndarray:
    G = ms.G
    Sinv = np.linalg.inv(_adjoint_values(ms, Lam))
    dS = np.einsum("kia,bij,kjc->bkac", G.conj(), directions, G)
    values = -psi[None, :, None, None] * (Sinv[None] @ dS @ Sinv[None])
    return _integrate_congruence(ms, values)


def differential_omega_scalar(
    ms: MomentSpace, prior: Prior, Lam: ParameterPoint, dLam: np.ndarray
) -> np.ndarray:
    """-\\int psi G (G^* Lambda G)^{-1} (G^* dLambda G) (G^* Lambda G)^{-1} G^*."""
    psi = _scalar_psi(ms, prior)
    point = _check_parameter(ms, Lam)
    dLam = np.asarray(dLam, dtype=complex)
    return _omega_scalar_directional(ms, psi, point.matrix, dLam[None])[0]


def omega_scalar_jacobian(
    ms: MomentSpace, prior: Prior, Lam: ParameterPoint
) -> np.ndarray:
    """Real M x M Jacobian of x -> coords(omega(Lambda(x))) for a scalar prior.

    It is symmetric negative definite on L_+.
    """
    psi = _scalar_psi(ms, prior)
    point = _check_parameter(ms, Lam)
    domega = _omega_scalar_directional(ms, psi, point.matrix, ms.lambda_basis)
    J = _coords_batch(ms, domega)
    return 0.5 * (J + J.T)


@dataclass
class _NewtonProblem:
    residual: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]
    admissible: Callable[[np.ndarray], bool]


def _damped_newton(
    problem: _NewtonProblem,
    z0: np.ndarray,
    opts: SolveOptions,
    watchdog: ConvergenceWatchdog,
) -> Tuple[np.ndarray, float]:
    """Newton iteration with step halving on ||F||, returning the last iterate and the
    smallest relative Jacobian singular value met on the way."""
    z = np.array(z0, dtype=float)
    F = problem.residual(z)
    r = float(np.linalg.norm(F))
    min_sv = np.inf
    k = 0
    watchdog.reset()
    while not watchdog.inform(k, r):
        J = problem.jacobian(z)
        s = linalg.svdvals(J)
        ratio = float(s[-1] / s[0]) if s[0] > 0.0 else 0.0
        min_sv = min(min_sv, ratio)
        if ratio <= 1e-10:
            logging.critical(
                f"Coordinate Jacobian is numerically singular at iteration {k}"
                f" (relative smallest singular value {ratio:.3e})."
            )
        try:
            dz = -linalg.solve(J, F)
        except (linalg.LinAlgError, ValueError):
            dz = -np.linalg.lstsq(J, F, rcond=None)[0]

        t = 1.0
        while True:
            if t < opts.min_step:
                raise LineSearchCollapseError(
                    f"Line search collapsed at iteration {k}, residual {r:.3e}.",
                    watchdog.residual_history,
                )
            candidate = z + t * dz
            if problem.admissible(candidate):
                try:
                    F_new = problem.residual(candidate)
                except (DomainError, NoStabilizingSolutionError, linalg.LinAlgError):
                    F_new = None
                if F_new is not None and np.linalg.norm(F_new) < r:
                    break
            t *= opts.backtrack_factor
        z, F, r = candidate, F_new, float(np.linalg.norm(F_new))
        k += 1

    if watchdog.converged():
        z, F, r, k = _polish(problem, z, F, r, k, opts, watchdog)
    return z, min_sv


def _polish(
    problem: _NewtonProblem,
    z: np.ndarray,
    F: np.ndarray,
    r: float,
    k: int,
    opts: SolveOptions,
    watchdog: ConvergenceWatchdog,
) -> Tuple[np.ndarray, np.ndarray, float, int]:
    """Full Newton steps past the residual tolerance until the step itself is below
    tol_residual * (1 + ||z||). Steps that leave the admissible set or push the residual
    above the tolerance are rejected."""
    for _ in range(MAX_POLISH_STEPS):
        try:
            dz = -linalg.solve(problem.jacobian(z), F)
        except (linalg.LinAlgError, ValueError):
            break
        if np.linalg.norm(dz) <= opts.tol_residual * (1.0 + np.linalg.norm(z)):
            break
        candidate = z + dz
        if not problem.admissible(candidate):
            break
        try:
            F_new = problem.residual(candidate)
        except (DomainError, NoStabilizingSolutionError, linalg.LinAlgError):
            break
        r_new = float(np.linalg.norm(F_new))
        if r_new > watchdog.tol_residual:
            break
        z, F, r = candidate, F_new, r_new
        k += 1
        watchdog.inform(k, r)
    return z, F, r, k


def _scalar_problem(
    ms: MomentSpace, psi: np.ndarray, sigma_coords: np.ndarray, guard: float
) -> _NewtonProblem:
    basis = ms.lambda_basis

    def lam(x: np.ndarray) -> np.ndarray:
        return np.einsum("b,bij->ij", x, basis)

    def residual(x: np.ndarray) -> np.ndarray:
        values = psi[:, None, None] * np.linalg.inv(_adjoint_values(ms, lam(x)))
        return ms.coords(_integrate_congruence(ms, values)) - sigma_coords

    def jacobian(x: np.ndarray) -> np.ndarray:
        J = _coords_batch(ms, _omega_scalar_directional(ms, psi, lam(x), basis))
        return 0.5 * (J + J.T)

    def admissible(x: np.ndarray) -> bool:
        _, margin = membership_L_plus(ms, lam(x))
        return margin >= guard

    return _NewtonProblem(residual, jacobian, admissible)


def _matrix_problem(
    ms: MomentSpace, psi: np.ndarray, sigma_coords: np.ndarray, guard: float
) -> _NewtonProblem:
    basis = ms.c_basis

    def factor(y: np.ndarray) -> np.ndarray:
        return np.einsum("b,bij->ij", y, basis)

    def residual(y: np.ndarray) -> np.ndarray:
        Phi, _ = _factor_density(ms, psi, factor(y))
        return ms.coords(_integrate_congruence(ms, Phi)) - sigma_coords

    def jacobian(y: np.ndarray) -> np.ndarray:
        return _coords_batch(ms, _tau_directional(ms, psi, factor(y), basis))

    def admissible(y: np.ndarray) -> bool:
        member, details = membership_C_plus(ms.fb, factor(y))
        return (
            member
            and bool(np.min(details["diag_CB"].real) >= guard)
            and 1.0 - details["closed_loop_radius"] >= guard
        )

    return _NewtonProblem(residual, jacobian, admissible)


def _random_positive_definite(rng: np.random.Generator, n: int) -> np.ndarray:
    Z = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return Z @ Z.conj().T / n + 0.1 * np.eye(n)


def _start_parameter(
    ms: MomentSpace, rng: Optional[np.random.Generator]
) -> ParameterPoint:
    n = ms.fb.n
    X = np.eye(n) if rng is None else _random_positive_definite(rng, n)
    return project_im_gamma(ms, X)


def _max_pairwise_distance(solutions: List[np.ndarray]) -> float:
    if len(solutions) < 2:
        return 0.0
    return float(np.max(pdist(np.array(solutions))))


def solve_estimation(
    ms: MomentSpace,
    prior: Prior,
    Sigma: np.ndarray,
    opts: Optional[SolveOptions] = None,
) -> SolveReport:
    """Find the density of the parametric family whose state covariance is Sigma.

    Scalar priors are solved in the Lambda coordinates x, matrix priors in the factor
    coordinates y. The first start is Pi(I), scaled so that the trace of its moment
    matches trace(Sigma); further starts (opts.multistart > 1) are projections of random
    positive definite matrices drawn from a generator seeded with opts.seed.

    Args:
        ms (MomentSpace): The moment space; its grid is used for all integrals.
        prior (Prior): The prior density. Resampled on ms.grid if needed.
        Sigma (np.ndarray): The target, a positive definite element of im Gamma.
        opts (SolveOptions, optional): Tolerances and budgets. Defaults to SolveOptions().

    Raises:
        InfeasibleSigmaError: If Sigma is not positive definite or not in im Gamma.
        LineSearchCollapseError: If the step length falls below opts.min_step.
        MaxItersExceededError: If opts.abort is set and the iteration budget runs out.
    """
    opts = opts or SolveOptions()
    Sigma = hermitian_part(np.asarray(Sigma, dtype=complex))
    sigma_norm = float(np.linalg.norm(Sigma))
    report = feasibility_check(ms, Sigma)
    if report["min_eigenvalue"] < 1e-10 * sigma_norm or sigma_norm == 0.0:
        raise InfeasibleSigmaError(
            "Sigma is not positive definite, smallest eigenvalue"
            f" {report['min_eigenvalue']}."
        )
    if not report["feasible"]:
        raise InfeasibleSigmaError(
            f"Sigma does not lie in im Gamma, relative distance"
            f" {report['projection_distance']:.3e}."
        )

    prior = prior.on_grid(ms.grid)
    scalar = prior.kind == "scalar"
    psi = _scalar_psi(ms, prior) if scalar else _prior_values(ms, prior)
    # solved for Sigma / ||Sigma||_F; omega scales as 1/t in Lambda and tau as 1/t^2 in C
    target = Sigma / sigma_norm
    make_problem = _scalar_problem if scalar else _matrix_problem
    problem = make_problem(ms, psi, ms.coords(target), opts.feasibility_guard)
    trace_target = float(np.trace(target).real)

    rng = np.random.default_rng(opts.seed)
    first: Optional[Tuple[np.ndarray, float, List[float], bool]] = None
    normalized: List[np.ndarray] = []
    for start in range(opts.multistart):
        lam0 = _start_parameter(ms, None if start == 0 else rng)
        watchdog = ConvergenceWatchdog(
            opts.tol_residual, opts.max_iters, opts.report_every_n_steps, opts.abort
        )
        try:
            if scalar:
                moment = omega_eval(ms, prior, lam0)
                z0 = lam0.coords * float(np.trace(moment).real) / trace_target
            else:
                C0 = h_map(ms, lam0)
                moment = tau_eval(ms, prior, C0)
                z0 = C0.coords * np.sqrt(float(np.trace(moment).real) / trace_target)
            z, min_sv = _damped_newton(problem, z0, opts, watchdog)
            converged = watchdog.converged()
            if converged:
                x = z if scalar else h_inverse(ms, ms.factor_from_coords(z)).coords
                normalized.append(x)
        except (SolverError, DomainError, NoStabilizingSolutionError) as e:
            if start == 0:
                raise
            logging.warning(f"Start {start} failed and is left out: {e}")
            continue
        if start == 0:
            first = (z, min_sv, list(watchdog.residual_history), converged)
    assert first is not None

    z, min_sv, history, converged = first
    if scalar:
        lam = ms.parameter_from_coords(z / sigma_norm)
        C = None
    else:
        C = ms.factor_from_coords(z / np.sqrt(sigma_norm))
        lam = h_inverse(ms, C)

    normalized = sorted(normalized, key=tuple)
    dispersion = _max_pairwise_distance(normalized)
    uniqueness_flag = False
    if scalar and dispersion > SCALAR_DISPERSION_TOL:
        uniqueness_flag = True
        logging.critical(
            f"Multistart solutions for a scalar prior differ by {dispersion:.3e}, which"
            " contradicts uniqueness. The grid is likely too coarse."
        )
    elif not scalar and dispersion > MATRIX_DISPERSION_TOL:
        uniqueness_flag = True
        logging.warning(
            f"Multistart solutions differ by {dispersion:.3e}: possible non-uniqueness"
            " witness for this matrix prior."
        )

    verified = _verify_on_finer_grid(ms, prior, Sigma, lam, C) if converged else None
    if verified is not None:
        verified = verified / sigma_norm
        if verified > 10.0 * opts.tol_residual:
            logging.warning(
                f"Relative residual on the finer grid is {verified:.3e}, the grid of"
                f" N = {ms.grid.N} does not resolve the density well."
            )

    return SolveReport(
        lam=lam,
        C=C,
        residual_history=history,
        iterations=max(len(history) - 1, 0),
        multistart_solutions=[x / sigma_norm for x in normalized],
        max_pairwise_distance=dispersion,
        converged=converged,
        verified_residual=verified,
        min_jacobian_singular_value=float(min_sv) if np.isfinite(min_sv) else 1.0,
        uniqueness_flag=uniqueness_flag,
        prior_kind=prior.kind,
    )


def _verify_on_finer_grid(
    ms: MomentSpace,
    prior: Prior,
    Sigma: np.ndarray,
    lam: ParameterPoint,
    C: Optional[FactorPoint],
) -> Optional[float]:
    if 2 * ms.grid.N > MAX_GRID_N:
        logging.info("Grid is already maximal, the finer grid verification is skipped.")
        return None
    if not prior.can_resample:
        logging.info(
            "Prior is only known through its samples, the finer grid verification is"
            " skipped."
        )
        return None
    fine = ms.on_grid(ms.grid.refined())
    fine_prior = prior.on_grid(fine.grid)
    try:
        if C is None:
            moment = omega_eval(fine, fine_prior, lam)
        else:
            moment = tau_eval(fine, fine_prior, C)
    except DomainError as e:
        logging.warning(f"Solution is not admissible on the finer grid: {e}")
        return None
    return float(np.linalg.norm(moment - Sigma))


def static_closed_form(ms: MomentSpace, prior: Prior, Sigma: np.ndarray) -> FactorPoint:
    """C = L_R L_Sigma^{-1} for the static bank, with R = \\int Psi and L_X the lower
    Cholesky factor of X.

    Raises:
        UnsupportedFilterBankError: If the bank is not A = 0, B = I.
    """
    if not is_static(ms.fb):
        raise UnsupportedFilterBankError(
            "The closed form solution exists for the static bank A = 0, B = I only."
        )
    Sigma = hermitian_part(np.asarray(Sigma, dtype=complex))
    try:
        L_sigma = np.linalg.cholesky(Sigma)
    except np.linalg.LinAlgError as e:
        raise InfeasibleSigmaError("Sigma is not positive definite.") from e
    L_R = np.linalg.cholesky(prior.on_grid(ms.grid).integral(ms.fb.m))
    C = linalg.solve_triangular(L_sigma.T, L_R.T, lower=False).T
    return ms.factor_point(C)


def prior_condition_probe(
    ms: MomentSpace,
    prior: Prior,
    trials: int,
    seed: int,
    witnesses: Optional[Sequence[Tuple[np.ndarray, np.ndarray]]] = None,
) -> Dict[str, Any]:
    """Compare Re trace \\int F^* Psi F with Re trace \\int F Psi F^* for F = VG(CG)^{-1}
    over random C in C_+ and V in the factor space.

    Equality for all pairs is a sufficient condition for uniqueness with a matrix
    prior; it always holds for scalar priors. Extra (C, V) pairs can be passed as
    witnesses and are checked first.

    Returns:
        A report with the largest absolute and relative gap, whether the condition
        held (relative gap <= 1e-8) and the worst pair with its two traces.
    """
    if not trials >= 1:
        raise ValueError("The probe needs at least one trial.")
    psi = _prior_values(ms, prior)
    G = ms.G
    rng = np.random.default_rng(seed)

    pairs: List[Tuple[FactorPoint, np.ndarray]] = []
    for C, V in witnesses or []:
        pairs.append((_check_factor(ms, C), ms.factor_point(V).matrix))
    for _ in range(trials):
        C = h_map(ms, project_im_gamma(ms, _random_positive_definite(rng, ms.fb.n)))
        V = ms.factor_from_coords(rng.standard_normal(ms.M)).matrix
        pairs.append((C, V))

    worst: Dict[str, Any] = {}
    max_gap, max_relative = -1.0, -1.0
    for C, V in pairs:
        F = np.einsum("ij,kjb->kib", V, G) @ np.linalg.inv(
            np.einsum("ij,kjb->kib", C.matrix, G)
        )
        Fh = F.conj().transpose(0, 2, 1)
        lhs = float(np.trace((Fh @ psi @ F).mean(axis=0)).real)
        rhs = float(np.trace((F @ psi @ Fh).mean(axis=0)).real)
        gap = abs(lhs - rhs)
        relative = gap / max(1.0, abs(lhs), abs(rhs))
        if relative > max_relative:
            max_gap, max_relative = gap, relative
            worst = {"C": C.matrix, "V": V, "lhs": lhs, "rhs": rhs}
    return {
        "trials": len(pairs),
        "max_gap": max_gap,
        "max_relative_gap": max_relative,
        "condition_holds": bool(max_relative <= 1e-8),
        "worst": worst,
    }


def sensitivity_probe(
    ms: MomentSpace,
    prior: Prior,
    Sigma: np.ndarray,
    opts: Optional[SolveOptions] = None,
    rel: float = 1e-6,
) -> Dict[str, float]:
    """Empirical local Lipschitz ratio ||d Lambda|| / ||d Sigma|| of the solution map
    under a random perturbation of relative size rel, kept inside im Gamma.

    opts.tol_residual should be well below rel for the ratio to be meaningful.
    """
    opts = replace(opts or SolveOptions(), multistart=1)
    if not rel > 0.0:
        raise ValueError("rel must be a positive float.")
    Sigma = hermitian_part(np.asarray(Sigma, dtype=complex))
    base = solve_estimation(ms, prior, Sigma, opts)

    rng = np.random.default_rng(opts.seed)
    n = ms.fb.n
    direction = project_im_gamma(ms, _random_positive_definite(rng, n) - np.eye(n))
    scale = rel * np.linalg.norm(Sigma) / np.linalg.norm(direction.matrix)
    dSigma = scale * direction.matrix
    moved = solve_estimation(ms, prior, Sigma + dSigma, opts)

    d_sigma = float(np.linalg.norm(dSigma))
    d_lam = float(np.linalg.norm(moved.lam.coords - base.lam.coords))
    return {"delta_sigma": d_sigma, "delta_lambda": d_lam, "ratio": d_lam / d_sigma}
