from spectramoment import (
    Prior,
    SolveOptions,
    build_moment_space,
    h_map,
    new_filter_bank,
    solve_estimation,
)
from spectramoment.estimator import (
    UnsupportedFilterBankError,
    density_eval,
    differential_omega_scalar,
    differential_tau,
    omega_eval,
    omega_scalar_jacobian,
    prior_condition_probe,
    sensitivity_probe,
    static_closed_form,
    tau_eval,
    tau_jacobian,
)
from spectramoment.moment_space import DomainError
from spectramoment.numerics import DimensionMismatchError, GridSpec
from spectramoment.serialization import encode_value
from spectramoment.watchdog import InfeasibleSigmaError, MaxItersExceededError
from tests.factories import (
    random_admissible_lambda,
    random_filter_bank,
    random_matrix_prior,
)
import json
import numpy as np
import pytest
from testfixtures import LogCapture

grid = GridSpec(N=256)
unit = Prior.constant(1.0, grid)
shift_ms = build_moment_space(new_filter_bank([[0.0, 0.0], [1.0, 0.0]], [1.0, 0.0]), grid)
static_ms = build_moment_space(new_filter_bank(np.zeros((2, 2)), np.eye(2)), grid)
static1_ms = build_moment_space(new_filter_bank([[0.0]], [[1.0]]), grid)


def test_prior_constructors():
    assert unit.kind == "scalar" and unit.samples.shape == (1, 1)
    assert Prior.constant(np.diag([1.0, 2.0]), grid).kind == "matrix"
    wavy = Prior.from_fourier([1.0, 0.25], grid)
    assert wavy.kind == "scalar"
    assert np.allclose(wavy.samples.values[:, 0, 0], 1.0 + 0.5 * np.cos(grid.angles))
    assert np.allclose(wavy.integral(2), np.eye(2))
    assert wavy.on_grid(GridSpec(N=512)).samples.values.shape == (512, 1, 1)


def test_prior_errors():
    with pytest.raises(ValueError):
        Prior.from_fourier([1.0, 1.0], grid)
    with pytest.raises(ValueError):
        Prior.from_fourier([], grid)
    with pytest.raises(ValueError):
        Prior("vector", unit.samples)
    with pytest.raises(ValueError):
        Prior.constant(-1.0, grid)
    sampled = Prior.from_samples(np.ones(grid.N), grid)
    assert not sampled.can_resample
    with pytest.raises(DimensionMismatchError):
        sampled.on_grid(GridSpec(N=512))
    with pytest.raises(DimensionMismatchError):
        Prior.constant(np.eye(3), grid).matrix_values(2)


def test_solve_options_validation():
    for kwargs in (
        {"tol_residual": 0.0},
        {"max_iters": 0},
        {"backtrack_factor": 1.0},
        {"multistart": 0},
        {"seed": -1},
        {"min_step": -1.0},
    ):
        with pytest.raises(ValueError):
            SolveOptions(**kwargs)


def test_omega_examples():
    assert np.allclose(omega_eval(static1_ms, unit, np.array([[2.0]])), [[0.5]])
    Lam = static1_ms.parameter_point(np.array([[2.0]]))
    assert np.allclose(density_eval(static1_ms, unit, Lam).values, 0.5)
    half = shift_ms.parameter_point(np.eye(2) / 2)
    assert np.allclose(density_eval(shift_ms, unit, half).values, 1.0)
    assert np.allclose(omega_eval(shift_ms, unit, half), np.eye(2), atol=1e-12)


def test_density_paths_agree():
    rng = np.random.default_rng(0)
    ms = build_moment_space(random_filter_bank(rng, 3, 2), grid)
    Lam = random_admissible_lambda(rng, ms)
    direct = density_eval(ms, unit, Lam).values
    through_factor = density_eval(ms, unit, h_map(ms, Lam)).values
    assert np.allclose(direct, through_factor, atol=1e-8 * np.max(np.abs(direct)))
    assert np.allclose(omega_eval(ms, unit, Lam), tau_eval(ms, unit, h_map(ms, Lam)))


def test_density_rejects_inadmissible():
    with pytest.raises(DomainError):
        density_eval(shift_ms, unit, shift_ms.parameter_point(-np.eye(2)))
    with pytest.raises(DomainError):
        tau_eval(shift_ms, unit, np.array([[-1.0, 0.0]]))


def test_homogeneity():
    rng = np.random.default_rng(1)
    ms = build_moment_space(random_filter_bank(rng, 3, 1), grid)
    Lam = random_admissible_lambda(rng, ms)
    tripled = omega_eval(ms, unit, 3.0 * Lam.matrix)
    assert np.allclose(tripled, omega_eval(ms, unit, Lam) / 3)
    C = h_map(ms, Lam).matrix
    assert np.allclose(tau_eval(ms, unit, 2.0 * C), tau_eval(ms, unit, C) / 4)


def test_differential_examples():
    dtau = differential_tau(static1_ms, unit, np.array([[1.0]]), [[1.0]])
    assert np.allclose(dtau, -2.0)
    for lam in (0.5, 2.0):
        dw = differential_omega_scalar(static1_ms, unit, np.array([[lam]]), [[1.0]])
        assert np.allclose(dw, -1.0 / lam**2)


def test_differential_tau_finite_differences():
    rng = np.random.default_rng(2)
    eps = 1e-6
    for n, m in ((1, 1), (2, 1), (3, 2), (4, 1), (5, 2)):
        ms = build_moment_space(random_filter_bank(rng, n, m), grid)
        prior = random_matrix_prior(rng, m, grid)
        C = h_map(ms, random_admissible_lambda(rng, ms, push=False))
        J = tau_jacobian(ms, prior, C)
        for b, dC in enumerate(ms.c_basis):
            fd = tau_eval(ms, prior, C.matrix + eps * dC) - tau_eval(
                ms, prior, C.matrix - eps * dC
            )
            fd = fd / (2 * eps)
            exact = differential_tau(ms, prior, C, dC)
            assert np.linalg.norm(exact - fd) <= 1e-6 * (1.0 + np.linalg.norm(exact))
            assert np.allclose(J[:, b], ms.coords(exact))


def test_differential_omega_finite_differences():
    rng = np.random.default_rng(3)
    eps = 1e-6
    for n, m in ((1, 1), (2, 1), (3, 2), (4, 1), (5, 2)):
        ms = build_moment_space(random_filter_bank(rng, n, m), grid)
        prior = Prior.from_fourier([1.0, 0.2 - 0.1j], grid)
        Lam = random_admissible_lambda(rng, ms, push=False)
        J = omega_scalar_jacobian(ms, prior, Lam)
        for b, dLam in enumerate(ms.lambda_basis):
            fd = omega_eval(ms, prior, Lam.matrix + eps * dLam) - omega_eval(
                ms, prior, Lam.matrix - eps * dLam
            )
            fd = fd / (2 * eps)
            exact = differential_omega_scalar(ms, prior, Lam, dLam)
            assert np.linalg.norm(exact - fd) <= 1e-6 * (1.0 + np.linalg.norm(exact))
            assert np.allclose(J[:, b], ms.coords(exact))
        assert np.allclose(J, J.T)
        assert np.max(np.linalg.eigvalsh(J)) < 0.0


def test_solve_static_scalar_example():
    report = solve_estimation(static_ms, unit, np.diag([4.0, 1.0]))
    assert report.converged
    assert report.prior_kind == "scalar" and report.C is None
    assert np.allclose(report.lam.matrix, np.diag([0.25, 1.0]), atol=1e-8)
    C = static_closed_form(static_ms, unit, np.diag([4.0, 1.0]))
    assert np.allclose(C.matrix, np.diag([0.5, 1.0]))


def test_solve_static_matrix_example():
    prior = Prior.constant(np.diag([1.0, 2.0]), grid)
    report = solve_estimation(static_ms, prior, np.eye(2))
    assert report.converged
    assert np.allclose(report.C.matrix, np.diag([1.0, np.sqrt(2.0)]), atol=1e-8)
    assert np.allclose(report.lam.matrix, np.diag([1.0, 2.0]), atol=1e-8)
    closed = static_closed_form(static_ms, prior, np.eye(2))
    assert np.allclose(closed.matrix, report.C.matrix, atol=1e-8)


def test_static_closed_form_needs_static_bank():
    with pytest.raises(UnsupportedFilterBankError):
        static_closed_form(shift_ms, unit, np.eye(2))


def test_solve_recovers_scalar_truth():
    rng = np.random.default_rng(4)
    for n, m in ((2, 1), (3, 2), (4, 1)):
        ms = build_moment_space(random_filter_bank(rng, n, m), grid)
        prior = Prior.from_fourier([1.0, 0.3], grid)
        truth = random_admissible_lambda(rng, ms)
        Sigma = omega_eval(ms, prior, truth)
        report = solve_estimation(ms, prior, Sigma)
        assert report.converged
        assert report.residual <= 1e-9 * (1.0 + np.linalg.norm(Sigma))
        assert np.linalg.norm(report.lam.matrix - truth.matrix) <= 1e-6 * (
            1.0 + np.linalg.norm(truth.matrix)
        )
        assert report.min_jacobian_singular_value > 0.0


def test_solve_matrix_prior_end_to_end():
    rng = np.random.default_rng(5)
    ms = build_moment_space(random_filter_bank(rng, 3, 2), grid)
    prior = random_matrix_prior(rng, 2, grid)
    C_true = h_map(ms, random_admissible_lambda(rng, ms, push=False))
    Sigma = tau_eval(ms, prior, C_true)
    report = solve_estimation(ms, prior, Sigma, SolveOptions(multistart=3, seed=7))
    assert report.converged
    assert report.prior_kind == "matrix"
    assert np.linalg.norm(tau_eval(ms, prior, report.C) - Sigma) <= 1e-8 * (
        1.0 + np.linalg.norm(Sigma)
    )
    assert report.verified_residual is not None
    assert len(report.multistart_solutions) >= 1
    json.dumps(encode_value(report.to_dict()))


def test_multistart_agrees_for_scalar_prior():
    rng = np.random.default_rng(6)
    ms = build_moment_space(random_filter_bank(rng, 3, 1), grid)
    Sigma = omega_eval(ms, unit, random_admissible_lambda(rng, ms))
    report = solve_estimation(ms, unit, Sigma, SolveOptions(multistart=4, seed=1))
    assert len(report.multistart_solutions) == 4
    assert report.max_pairwise_distance <= 1e-6
    assert not report.uniqueness_flag
    again = solve_estimation(ms, unit, Sigma, SolveOptions(multistart=4, seed=1))
    assert np.array_equal(report.lam.coords, again.lam.coords)


def test_multistart_agrees_on_random_banks():
    rng = np.random.default_rng(12)
    prior = Prior.from_fourier([1.0, 0.15], grid)
    for n, m in ((2, 1), (4, 2), (5, 1), (6, 3)):
        ms = build_moment_space(random_filter_bank(rng, n, m), grid)
        Sigma = omega_eval(ms, prior, random_admissible_lambda(rng, ms, push=False))
        report = solve_estimation(ms, prior, Sigma, SolveOptions(multistart=10, seed=3))
        assert report.converged
        assert len(report.multistart_solutions) >= 2
        assert report.max_pairwise_distance <= 1e-6
        assert not report.uniqueness_flag


def test_small_sigma_is_not_flagged():
    with LogCapture() as l:
        report = solve_estimation(
            shift_ms, unit, 1e-6 * np.eye(2), SolveOptions(multistart=5, seed=2)
        )
        assert "CRITICAL" not in str(l)
    assert report.converged and not report.uniqueness_flag
    expected = 5e5 * np.eye(2)
    assert np.linalg.norm(report.lam.matrix - expected) <= 1e-8 * np.linalg.norm(expected)
    assert report.max_pairwise_distance <= 1e-6


def test_multistart_across_sigma_scales():
    rng = np.random.default_rng(13)
    ms = build_moment_space(random_filter_bank(rng, 3, 2), grid)
    prior = Prior.from_fourier([1.0, 0.15], grid)
    Sigma = omega_eval(ms, prior, random_admissible_lambda(rng, ms))
    opts = SolveOptions(multistart=5, seed=4)
    base = solve_estimation(ms, prior, Sigma, opts)
    for t in (1e-4, 1e4):
        report = solve_estimation(ms, prior, t * Sigma, opts)
        assert report.converged and not report.uniqueness_flag
        assert report.max_pairwise_distance <= 1e-6
        expected = base.lam.matrix / t
        assert np.linalg.norm(report.lam.matrix - expected) <= 1e-7 * np.linalg.norm(
            expected
        )
        assert report.residual <= opts.tol_residual


def test_infeasible_targets():
    with pytest.raises(InfeasibleSigmaError):
        solve_estimation(shift_ms, unit, -np.eye(2))
    with pytest.raises(InfeasibleSigmaError):
        solve_estimation(shift_ms, unit, np.zeros((2, 2)))
    with pytest.raises(InfeasibleSigmaError) as info:
        solve_estimation(shift_ms, unit, np.eye(2) + 0.1 * np.diag([1.0, -1.0]))
    assert "im Gamma" in str(info.value)


def test_iteration_budget():
    rng = np.random.default_rng(8)
    ms = build_moment_space(random_filter_bank(rng, 3, 2), grid)
    Sigma = omega_eval(ms, unit, random_admissible_lambda(rng, ms))
    with pytest.raises(MaxItersExceededError) as info:
        solve_estimation(ms, unit, Sigma, SolveOptions(max_iters=1, tol_residual=1e-300))
    assert len(info.value.residual_history) == 2
    with LogCapture() as l:
        report = solve_estimation(
            ms, unit, Sigma, SolveOptions(max_iters=1, tol_residual=1e-300, abort=False)
        )
        assert "WARNING" in str(l) and "budget exhausted" in str(l)
    assert not report.converged
    assert report.verified_residual is None


def test_sampled_prior_skips_verification():
    prior = Prior.from_samples(np.ones(grid.N), grid)
    with LogCapture() as l:
        report = solve_estimation(shift_ms, prior, np.eye(2))
        assert "skipped" in str(l)
    assert report.converged and report.verified_residual is None
    assert np.allclose(report.lam.matrix, np.eye(2) / 2, atol=1e-8)


def test_prior_condition_probe():
    witness = (np.eye(2), np.array([[1.0, 0.0], [1.0, 2.0]]))
    prior = Prior.constant(np.diag([1.0, 2.0]), grid)
    report = prior_condition_probe(static_ms, prior, 1, 0, witnesses=[witness])
    assert report["trials"] == 2
    assert not report["condition_holds"]
    assert report["max_relative_gap"] >= 1.0 / 11.0 - 1e-12

    rng = np.random.default_rng(9)
    ms = build_moment_space(random_filter_bank(rng, 3, 2), grid)
    assert prior_condition_probe(ms, unit, 10, 3)["condition_holds"]
    with pytest.raises(ValueError):
        prior_condition_probe(ms, unit, 0, 3)


def test_sensitivity_probe():
    opts = SolveOptions(tol_residual=1e-12)
    report = sensitivity_probe(shift_ms, unit, np.eye(2), opts)
    assert report["delta_sigma"] > 0.0
    assert 0.0 < report["ratio"] < 1e3
    with pytest.raises(ValueError):
        sensitivity_probe(shift_ms, unit, np.eye(2), rel=0.0)


def test_matrix_prior_static_examples():
    prior = Prior.constant(np.diag([1.0, 2.0]), grid)
    C = static_ms.factor_point(np.diag([1.0, np.sqrt(2.0)]))
    assert np.allclose(density_eval(static_ms, prior, C).values, np.eye(2))
    Lam = static_ms.parameter_point(np.diag([1.0, 2.0]))
    assert np.allclose(omega_eval(static_ms, prior, Lam), np.eye(2), atol=1e-10)
    assert np.allclose(differential_tau(static_ms, prior, C, np.zeros((2, 2))), 0.0)
    assert np.allclose(tau_eval(static_ms, prior, C), np.eye(2), atol=1e-10)


def test_static_closed_form_residual():
    rng = np.random.default_rng(10)
    prior = random_matrix_prior(rng, 2, grid)
    Sigma = np.array([[2.0, 0.5j], [-0.5j, 1.0]])
    C = static_closed_form(static_ms, prior, Sigma)
    assert np.linalg.norm(tau_eval(static_ms, prior, C) - Sigma) <= 1e-10
    identity = static_closed_form(static_ms, Prior.constant(np.eye(2), grid), np.eye(2))
    assert np.allclose(identity.matrix, np.eye(2))


def test_solve_scalar_bank_example():
    report = solve_estimation(static1_ms, unit, np.array([[2.0]]))
    assert report.converged
    assert np.allclose(report.lam.matrix, [[0.5]], atol=1e-10)


def test_homogeneity_factors():
    rng = np.random.default_rng(11)
    ms = build_moment_space(random_filter_bank(rng, 4, 2), grid)
    Lam = random_admissible_lambda(rng, ms)
    base = omega_eval(ms, unit, Lam)
    for t in (0.5, 2.0, 10.0):
        scaled = omega_eval(ms, unit, t * Lam.matrix)
        assert np.linalg.norm(scaled - base / t) <= 1e-10 * np.linalg.norm(base / t)
