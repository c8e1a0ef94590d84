"""Preconditioned conjugate gradient solver."""

import numpy as np
import pytest
from scipy import sparse

from conftest import dense_assemble, dense_eliminate
from tensfield.errors import ConvergenceError
from tensfield.fem import (LinearSystem, NeumannLoad, apply_dirichlet,
                           apply_neumann, assemble)
from tensfield.materials import assign, default_table
from tensfield.solver import SolveSettings, solve_pcg


def diag_system(diag, rhs, constrained=()):
    upper = sparse.csr_matrix(np.diag(diag))
    return LinearSystem(upper, np.asarray(rhs, dtype=float),
                        np.asarray(constrained, dtype=np.int64))


@pytest.fixture
def slab_system(small_slab):
    _, bundle = small_slab
    system = assemble(bundle.mesh, assign(bundle.mesh, default_table()))
    system = apply_neumann(system, NeumannLoad(bundle.patches["inlet"], 2.0))
    return apply_dirichlet(system, bundle.patches["outlet"]), bundle


class TestSolve:
    def test_diagonal_system(self):
        result = solve_pcg(diag_system([2.0, 1.0], [2.0, 1.0]))
        np.testing.assert_allclose(result.potential, [1.0, 1.0], rtol=1e-10)

    def test_zero_rhs_short_circuits(self):
        result = solve_pcg(diag_system([2.0, 1.0], [0.0, 0.0]))
        np.testing.assert_array_equal(result.potential, [0.0, 0.0])
        assert result.iterations == 0
        assert result.residual == 0.0

    def test_slab_matches_dense_direct_solve(self, slab_system, small_slab):
        system, bundle = slab_system
        result = solve_pcg(system, SolveSettings(rel_tolerance=1e-12))
        sigma = assign(bundle.mesh, default_table()).values
        K, rhs = dense_eliminate(dense_assemble(bundle.mesh, sigma),
                                 system.rhs, system.constrained)
        exact = np.linalg.solve(K, rhs)
        err = np.abs(result.potential - exact).max() / np.abs(exact).max()
        assert err < 1e-7

    def test_residual_matches_independent_recomputation(self, slab_system):
        system, _ = slab_system
        result = solve_pcg(system)
        K = system.full_matrix()
        recomputed = (np.linalg.norm(system.rhs - K @ result.potential)
                      / np.linalg.norm(system.rhs))
        assert abs(result.residual - recomputed) <= 1e-12
        assert result.residual <= 1e-8

    @pytest.mark.parametrize("alpha", [2.0, 10.0, -1.0])
    def test_linearity_in_rhs(self, slab_system, alpha):
        system, _ = slab_system
        base = solve_pcg(system).potential
        scaled_system = LinearSystem(system.upper, alpha * system.rhs,
                                     system.constrained)
        scaled = solve_pcg(scaled_system).potential
        tol = 2.0 * 1e-8
        np.testing.assert_allclose(scaled, alpha * base,
                                   rtol=tol, atol=tol * np.abs(base).max())

    def test_superposition(self, slab_system, small_slab):
        system, bundle = slab_system
        _, bundle2 = small_slab
        extra = apply_neumann(
            LinearSystem(system.upper, np.zeros(system.size),
                         system.constrained),
            NeumannLoad(bundle.patches["inlet"].subset(
                np.arange(len(bundle.patches["inlet"])) % 2 == 0), 1.0))
        combined = LinearSystem(system.upper, system.rhs + extra.rhs,
                                system.constrained)
        v_combined = solve_pcg(combined).potential
        v_parts = solve_pcg(system).potential + solve_pcg(extra).potential
        scale = np.abs(v_combined).max()
        np.testing.assert_allclose(v_combined, v_parts, atol=2e-8 * scale)

    def test_non_convergence_carries_history(self, slab_system):
        system, _ = slab_system
        with pytest.raises(ConvergenceError) as err:
            solve_pcg(system, SolveSettings(rel_tolerance=1e-12,
                                            max_iterations=2))
        assert len(err.value.residual_history) == 2

    def test_plain_cg_also_converges(self, slab_system):
        system, _ = slab_system
        result = solve_pcg(system, SolveSettings(preconditioner="none"))
        assert result.residual <= 1e-8

    def test_deterministic_across_runs(self, slab_system):
        system, _ = slab_system
        a = solve_pcg(system)
        b = solve_pcg(system)
        np.testing.assert_array_equal(a.potential, b.potential)
        assert a.iterations == b.iterations
        assert a.residual == b.residual


class TestSettings:
    def test_tolerance_bounds(self):
        with pytest.raises(ValueError):
            SolveSettings(rel_tolerance=0.0)
        with pytest.raises(ValueError):
            SolveSettings(rel_tolerance=1.0)

    def test_max_iterations_bounds(self):
        with pytest.raises(ValueError):
            SolveSettings(max_iterations=0)

    def test_unknown_preconditioner(self):
        with pytest.raises(ValueError):
            SolveSettings(preconditioner="amg")

    def test_default_iteration_budget_is_ten_n(self):
        system = diag_system(np.full(5, 1e6), np.ones(5))
        result = solve_pcg(system)
        assert result.iterations <= 50
