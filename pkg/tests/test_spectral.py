"""Eigenvalue solvers, sector gaps, and counting."""

import numpy as np
import pytest
import scipy.sparse as sp

import polaronlab as pl
from polaronlab import ConfigError, IndefiniteOperatorError, SolverConfig, SolverError
from polaronlab.spectral import SpdSolver, resolvent_apply, start_vector


@pytest.fixture(scope="module")
def mid_instance():
    grid = pl.build_grid(1, 2.0, 0.5)
    ff = pl.sample_form_factor(grid, "gaussian", 0.1)
    basis = pl.enumerate_basis(grid.size, 3)  # dim 165
    ham = pl.assemble_hamiltonian(basis, grid, ff)
    return grid, ff, basis, ham


def test_dense_and_lanczos_agree(mid_instance):
    grid, ff, basis, ham = mid_instance
    dense_cfg = SolverConfig(dense_threshold=500)
    sparse_cfg = SolverConfig(dense_threshold=10)
    vals_d, _ = pl.lowest_eigenpairs(ham, 4, dense_cfg)
    vals_s, _ = pl.lowest_eigenpairs(ham, 4, sparse_cfg)
    assert np.allclose(vals_d, vals_s, rtol=0, atol=1e-9)


def test_eigenpair_validation(mid_instance):
    grid, ff, basis, ham = mid_instance
    cfg = SolverConfig()
    with pytest.raises(ConfigError):
        pl.lowest_eigenpairs(ham, 0, cfg)
    with pytest.raises(ConfigError):
        pl.lowest_eigenpairs(ham, basis.dim + 1, cfg)


def test_ground_vector_sign_deterministic(mid_instance):
    grid, ff, basis, ham = mid_instance
    cfg = SolverConfig()
    e1, v1 = pl.ground_energy(ham, cfg)
    e2, v2 = pl.ground_energy(ham, cfg)
    assert e1 == e2
    assert np.array_equal(v1, v2)
    assert np.linalg.norm(v1) == pytest.approx(1.0, abs=1e-12)
    assert v1[int(np.argmax(np.abs(v1)))] > 0


def test_free_theory_exact_values():
    """With the coupling off the spectrum is the free one: ground energy 0,
    one-boson gap h^2 above the line shift, two-boson gap exactly 1."""
    grid = pl.build_grid(1, 2.0, 0.5)
    ff = pl.sample_form_factor(grid, "gaussian", 0.0)
    basis = pl.enumerate_basis(grid.size, 3)
    ham = pl.assemble_hamiltonian(basis, grid, ff)
    cfg = SolverConfig()
    result = pl.spectrum_summary(ham, basis, None, 4, cfg)
    assert abs(result.e0) <= 1e-14
    assert result.vacuum_overlap == pytest.approx(1.0, abs=1e-12)
    assert result.nu1 == pytest.approx(grid.h**2, abs=1e-12)
    assert result.nu2 == pytest.approx(1.0, abs=1e-12)
    # direct calls agree with the summary
    assert pl.nu(ham, 0.0, 1, basis, cfg) == pytest.approx(result.nu1, abs=1e-13)
    assert pl.nu(ham, 0.0, 2, basis, cfg) == pytest.approx(result.nu2, abs=1e-13)


def test_count_below_free_theory():
    grid = pl.build_grid(1, 2.0, 0.5)
    ff = pl.sample_form_factor(grid, "gaussian", 0.0)
    basis = pl.enumerate_basis(grid.size, 3)
    ham = pl.assemble_hamiltonian(basis, grid, ff)
    cfg = SolverConfig()
    # exactly the vacuum sits below the one-boson line minus the buffer
    assert pl.count_below(ham, 1.0, cfg.buffer(grid.h), cfg) == 1
    # forcing the iterative branch gives the same count
    assert pl.count_below(ham, 1.0, cfg.buffer(grid.h), SolverConfig(dense_threshold=10)) == 1
    with pytest.raises(ConfigError):
        pl.count_below(ham, 1.0, -0.1, cfg)


def test_ground_energy_nonincreasing_in_coupling():
    """e0(g) is a minimum of functions affine in g and symmetric under
    g -> -g, hence non-increasing for g >= 0."""
    grid = pl.build_grid(1, 1.0, 1.0)
    basis = pl.enumerate_basis(grid.size, 2)
    cfg = SolverConfig()
    energies = []
    for g in (0.0, 0.05, 0.1, 0.2):
        ff = pl.sample_form_factor(grid, "gaussian", g)
        ham = pl.assemble_hamiltonian(basis, grid, ff)
        energies.append(pl.ground_energy(ham, cfg)[0])
    assert energies[0] == pytest.approx(0.0, abs=1e-14)
    for a, b in zip(energies, energies[1:]):
        assert b < a + 1e-14


def test_spectrum_summary_residuals_certified(mid_instance):
    grid, ff, basis, ham = mid_instance
    result = pl.spectrum_summary(ham, basis, None, 6, SolverConfig())
    assert result.eigenvalues.shape == (6,)
    assert np.all(np.diff(result.eigenvalues) >= 0)
    assert np.all(result.residuals <= 1e-8)
    assert 0.9 < result.vacuum_overlap <= 1.0
    payload = result.to_json_dict()
    assert payload["diagnostics"]["method"] == "dense"
    assert payload["nu2"] == pytest.approx(result.nu2)


def test_spd_solver_dense_and_cg_agree(mid_instance):
    grid, ff, basis, ham = mid_instance
    shifted = ham.matrix + 2.0 * sp.identity(basis.dim, format="csr")
    rhs = start_vector(basis.dim, 7)
    dense = SpdSolver(shifted, SolverConfig(dense_threshold=500))
    iterative = SpdSolver(shifted, SolverConfig(dense_threshold=10))
    x_d = dense.solve(rhs)
    x_i = iterative.solve(rhs)
    assert np.allclose(x_d, x_i, rtol=0, atol=1e-9)
    # residual of the dense solve
    assert np.linalg.norm(shifted @ x_d - rhs) <= 1e-10
    # batched columns match one-by-one solves
    rhs2 = np.column_stack([rhs, start_vector(basis.dim, 8)])
    batch = dense.solve_many(rhs2)
    assert np.allclose(batch[:, 0], x_d, rtol=0, atol=1e-12)


def test_spd_solver_rejects_indefinite():
    mat = np.diag([1.0, -0.5, 2.0])
    with pytest.raises(IndefiniteOperatorError):
        SpdSolver(mat, SolverConfig())
    sparse_mat = sp.diags([1.0, -0.5] + [2.0] * 48, format="csr")
    with pytest.raises(IndefiniteOperatorError):
        solver = SpdSolver(sparse_mat, SolverConfig(dense_threshold=10))
        solver.solve(np.ones(50))


def test_spd_solver_shape_validation():
    solver = SpdSolver(np.eye(3), SolverConfig())
    with pytest.raises(ConfigError):
        solver.solve(np.ones(4))


def test_resolvent_apply(mid_instance):
    grid, ff, basis, ham = mid_instance
    cfg = SolverConfig()
    rhs = start_vector(basis.dim, 3)
    e0, _ = pl.ground_energy(ham, cfg)
    x = resolvent_apply(ham, e0 - 0.5, rhs, cfg)
    assert np.linalg.norm(ham.matrix @ x - (e0 - 0.5) * x - rhs) <= 1e-8


def test_start_vector_deterministic():
    a = start_vector(40, 2024)
    b = start_vector(40, 2024)
    c = start_vector(40, 2025)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert np.linalg.norm(a) == pytest.approx(1.0, abs=1e-12)
