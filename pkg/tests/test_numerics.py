from spectramoment.numerics import (
    DimensionMismatchError,
    GridSpec,
    MatrixFunctionSamples,
    UnstableMatrixError,
    hermitian_basis,
    integrate_adaptive,
    integrate_circle,
    lower_reverse_cholesky,
    orthonormal_split,
    solve_discrete_lyapunov,
)
import numpy as np
import pytest

grid = GridSpec(N=1024)


def test_grid_validation():
    for N in (4, 100, 131072, 1.5, True):
        with pytest.raises(ValueError):
            GridSpec(N=N)
    with pytest.raises(ValueError):
        GridSpec(N=64, tol_refine=0.0)


def test_grid_angles():
    g = GridSpec(N=8)
    assert g.angles[0] == -np.pi
    assert np.allclose(np.diff(g.angles), 2 * np.pi / 8)
    assert g.angles[-1] < np.pi
    assert g.refined().N == 16
    with pytest.raises(ValueError):
        GridSpec(N=65536).refined()


def test_samples_shape_checks():
    with pytest.raises(DimensionMismatchError):
        MatrixFunctionSamples(GridSpec(N=8), np.ones((4, 1, 1)))
    with pytest.raises(ValueError):
        MatrixFunctionSamples(
            GridSpec(N=8), np.tile([[0.0, 1.0], [0.0, 0.0]], (8, 1, 1)), hermitian=True
        )


def test_integrate_constant():
    samples = MatrixFunctionSamples(grid, np.tile(np.eye(2), (grid.N, 1, 1)))
    assert np.allclose(integrate_circle(samples), np.eye(2), atol=1e-15)


def test_integrate_harmonic():
    g = GridSpec(N=64)
    assert abs(integrate_circle(MatrixFunctionSamples(g, g.points))[0, 0]) <= 1e-15


def test_integrate_rational():
    values = 1.0 / np.abs(grid.points - 0.5) ** 2
    result = integrate_circle(MatrixFunctionSamples(grid, values))
    assert abs(result[0, 0] - 4.0 / 3.0) <= 1e-12


def test_integrate_linear():
    rng = np.random.default_rng(0)
    F = rng.standard_normal((grid.N, 2, 3))
    H = rng.standard_normal((grid.N, 2, 3))
    lhs = integrate_circle(MatrixFunctionSamples(grid, 2.0 * F - 3.0 * H))
    rhs = 2.0 * integrate_circle(MatrixFunctionSamples(grid, F)) - 3.0 * integrate_circle(
        MatrixFunctionSamples(grid, H)
    )
    assert np.allclose(lhs, rhs, atol=1e-13)


def test_integrate_adaptive_terminates():
    def sampler(g):
        return MatrixFunctionSamples(g, 1.0 / np.abs(g.points - 0.9) ** 2)

    value, final = integrate_adaptive(sampler, GridSpec(N=16))
    assert abs(value[0, 0] - 1.0 / (1.0 - 0.81)) <= 1e-8
    assert final.N > 16


def test_lyapunov_examples():
    assert np.allclose(solve_discrete_lyapunov([[0.5]], [[1.0]]), [[4.0 / 3.0]])
    Q = np.array([[2.0, 1.0j], [-1.0j, 3.0]])
    assert np.allclose(solve_discrete_lyapunov(np.zeros((2, 2)), Q), Q)
    X = solve_discrete_lyapunov(np.diag([0.5, 0.0]), np.eye(2))
    assert np.allclose(X, np.diag([4.0 / 3.0, 1.0]))


def test_lyapunov_series():
    rng = np.random.default_rng(1)
    for n in (3, 15):
        A = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        A = 0.6 * A / np.max(np.abs(np.linalg.eigvals(A)))
        Q = np.eye(n)
        X = solve_discrete_lyapunov(A, Q)
        series, term = np.zeros((n, n), dtype=complex), Q.astype(complex)
        for _ in range(200):
            series += term
            term = A @ term @ A.conj().T
        assert np.linalg.norm(X - series) <= 1e-10 * np.linalg.norm(series)
        assert np.linalg.norm(X - A @ X @ A.conj().T - Q) <= 1e-12 * (1 + n)
        assert np.allclose(X, X.conj().T, atol=0.0)


def test_lyapunov_unstable():
    with pytest.raises(UnstableMatrixError):
        solve_discrete_lyapunov([[1.0]], [[1.0]])


def test_split_examples():
    rng_basis, kernel = orthonormal_split(np.array([[1.0, 0.0], [0.0, 0.0]]))
    assert np.allclose(rng_basis, [[1.0], [0.0]])
    assert np.allclose(kernel, [[0.0], [1.0]])

    rng_basis, kernel = orthonormal_split(np.zeros((2, 2)))
    assert rng_basis.shape == (2, 0)
    assert kernel.shape == (2, 2)

    _, kernel = orthonormal_split(np.array([[1.0, 1.0], [1.0, 1.0]]), rank_tol=1e-9)
    assert kernel.shape == (2, 1)
    assert np.allclose(np.abs(kernel[:, 0]), [1 / np.sqrt(2), 1 / np.sqrt(2)])
    assert np.isclose(kernel[0, 0], -kernel[1, 0])


def test_split_orthonormal():
    rng = np.random.default_rng(2)
    mat = rng.standard_normal((40, 3)) @ rng.standard_normal((3, 7))
    rng_basis, kernel = orthonormal_split(mat)
    both = np.hstack([rng_basis, kernel])
    assert rng_basis.shape[1] == 3
    assert kernel.shape[1] == 4
    assert np.allclose(both.T @ both, np.eye(7), atol=1e-12)
    assert np.linalg.norm(mat @ kernel) <= 1e-10 * np.linalg.norm(mat)


def test_split_rejects_bad_input():
    with pytest.raises(ValueError):
        orthonormal_split(np.array([[np.nan]]))
    with pytest.raises(ValueError):
        orthonormal_split(np.eye(2), rank_tol=0.0)


def test_hermitian_basis_orthonormal():
    basis = hermitian_basis(3)
    gram = np.einsum("aij,bji->ab", basis, basis)
    assert basis.shape == (9, 3, 3)
    assert np.allclose(gram, np.eye(9), atol=1e-14)
    assert np.allclose(basis, basis.conj().transpose(0, 2, 1))


def test_lower_reverse_cholesky():
    rng = np.random.default_rng(3)
    Z = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
    X = Z @ Z.conj().T + np.eye(3)
    L = lower_reverse_cholesky(X)
    assert np.allclose(np.triu(L, 1), 0.0)
    assert np.all(np.diag(L).real > 0.0)
    assert np.allclose(np.diag(L).imag, 0.0)
    assert np.allclose(L.conj().T @ L, X)
    with pytest.raises(np.linalg.LinAlgError):
        lower_reverse_cholesky(-np.eye(2))
