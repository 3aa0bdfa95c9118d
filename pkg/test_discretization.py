"""
Tests for the Hermite discretization: meshes, element matrices, DOF
partitions, traces, quadrature and eigenmodes.
"""

import numpy as np
import pytest
from numpy.polynomial import Polynomial as P

from src.errors import OutOfScopeError
from src.models.coefficient import DegeneracyClass, DegeneracyKind
from src.models.discretization import BoundaryRegime, Grading
from src.services.coefficient import DegeneracyCoefficient
from src.services.discretization import (
    QuadratureSampler,
    assemble,
    build_mesh,
    eigenmodes,
    element_mass,
    element_stiffness,
    export_matrices,
    polynomial_dofs,
    second_derivative_trace,
)


class TestMesh:
    """Uniform and graded meshes."""

    def test_uniform(self):
        """Uniform nodes span [0,1]."""
        mesh = build_mesh(8)
        assert mesh.n_elements == 8
        assert mesh.n_dofs == 18
        assert mesh.h == pytest.approx(0.125)

    def test_geometric_refines_toward_zero(self):
        """Geometric widths grow toward x = 1."""
        mesh = build_mesh(10, Grading.GEOMETRIC, 0.7)
        assert mesh.nodes[0] == 0.0 and mesh.nodes[-1] == 1.0
        assert np.all(np.diff(mesh.widths) > 0)

    def test_power_grading(self):
        """Power grading places nodes at (i/n)^exponent."""
        mesh = build_mesh(8, Grading.POWER, exponent=2.0)
        assert np.allclose(mesh.nodes, (np.arange(9) / 8.0) ** 2)
        assert mesh.widths[0] == pytest.approx(1.0 / 64.0)

    def test_too_coarse(self):
        """Fewer than four elements is rejected."""
        with pytest.raises(ValueError):
            build_mesh(3)


class TestElementMatrices:
    """Exact integrals of polynomial fields."""

    def test_mass_of_constant(self):
        """Each element mass integrates 1 to its width."""
        blocks = element_mass(np.array([0.25, 0.5]))
        ones = np.array([1.0, 0.0, 1.0, 0.0])
        assert ones @ blocks[0] @ ones == pytest.approx(0.25)
        assert ones @ blocks[1] @ ones == pytest.approx(0.5)

    def test_global_matrices_on_x_squared(self):
        """With a = x and u = x^2: int u^2 = 1/5, int u'^2 = 4/3, int a u''^2 = 2."""
        coeff = DegeneracyCoefficient.power(1.0)
        matrices = assemble(coeff, DegeneracyClass(kind=DegeneracyKind.SD, K=1.0), build_mesh(8),
                            BoundaryRegime.feedback(1.0, 1.0))
        u = polynomial_dofs(matrices.mesh, [0.0, 0.0, 1.0])
        assert u @ matrices.M @ u == pytest.approx(0.2, rel=1e-12)
        assert u @ matrices.G @ u == pytest.approx(4.0 / 3.0, rel=1e-12)
        assert u @ matrices.S @ u == pytest.approx(2.0, rel=1e-12)

    def test_weighted_stiffness_of_x_squared(self, sqrt_coeff, sqrt_class):
        """int x^(1/2) (2)^2 = 8/3."""
        matrices = assemble(sqrt_coeff, sqrt_class, build_mesh(32), BoundaryRegime.adjoint())
        u = polynomial_dofs(matrices.mesh, [0.0, 0.0, 1.0])
        assert u @ matrices.S @ u == pytest.approx(8.0 / 3.0, rel=1e-7)

    @pytest.mark.parametrize("alpha", [0.3, 0.5, 1.5])
    def test_first_element_exact_for_power_law(self, alpha):
        """The element touching 0 integrates x^alpha phi'' psi'' exactly."""
        h = 0.125
        block = element_stiffness(DegeneracyCoefficient.power(alpha), np.array([0.0]), np.array([h]))[0]
        second = [P([-6.0, 12.0]) / h**2, P([-4.0, 6.0]) / h, P([6.0, -12.0]) / h**2, P([-2.0, 6.0]) / h]
        for i in range(4):
            for j in range(4):
                c = (second[i] * second[j]).coef
                exact = sum(c_k * h ** (alpha + 1.0) / (alpha + k + 1.0) for k, c_k in enumerate(c))
                assert block[i, j] == pytest.approx(exact, rel=1e-10, abs=1e-10 * abs(block).max())

    def test_first_element_graded_for_expressions(self):
        """A parsed coefficient matches the power-law block on the element touching 0."""
        left, right = np.array([0.0, 0.125]), np.array([0.125, 0.25])
        parsed = element_stiffness(DegeneracyCoefficient.from_expression("sqrt(x)"), left, right)
        power = element_stiffness(DegeneracyCoefficient.power(0.5), left, right)
        assert np.allclose(parsed, power, rtol=1e-6, atol=1e-6 * abs(power).max())

    def test_boundary_matrices(self, sqrt_coeff, sqrt_class):
        """B = diag(beta, gamma) and D = diag(1, 1) at the x = 1 DOFs."""
        matrices = assemble(sqrt_coeff, sqrt_class, build_mesh(4), BoundaryRegime.feedback(2.0, 3.0))
        value, rotation = matrices.trace_indices
        assert matrices.B[value, value] == 2.0
        assert matrices.B[rotation, rotation] == 3.0
        assert matrices.D.sum() == 2.0


class TestDofPartition:
    """Essential and driven DOFs per regime."""

    def test_weak_adjoint(self, sqrt_coeff, sqrt_class):
        """WD clamps value and slope at 0 and both DOFs at 1."""
        matrices = assemble(sqrt_coeff, sqrt_class, build_mesh(4), BoundaryRegime.adjoint())
        assert list(matrices.constrained) == [0, 1, 8, 9]
        assert matrices.driven is None

    def test_strong_controlled(self, sd_coeff, sd_class):
        """SD clamps only the value at 0; the slope at 1 is driven."""
        matrices = assemble(sd_coeff, sd_class, build_mesh(4), BoundaryRegime.controlled())
        assert list(matrices.constrained) == [0, 8]
        assert matrices.driven == 9
        assert 9 not in matrices.free

    def test_weak_feedback(self, sqrt_coeff, sqrt_class):
        """Feedback leaves x = 1 free."""
        matrices = assemble(sqrt_coeff, sqrt_class, build_mesh(4), BoundaryRegime.feedback(0.0, 0.0))
        assert list(matrices.constrained) == [0, 1]

    def test_strong_feedback_without_stiffness_is_open(self, sd_coeff, sd_class):
        """SD feedback with gamma = 0 is out of scope."""
        with pytest.raises(OutOfScopeError, match="open problem"):
            assemble(sd_coeff, sd_class, build_mesh(4), BoundaryRegime.feedback(1.0, 0.0))

    def test_regime_parameters_only_for_feedback(self):
        """beta is rejected on the adjoint regime."""
        with pytest.raises(ValueError):
            BoundaryRegime(kind="adjoint", beta=1.0)


class TestTracesAndQuadrature:
    """Boundary trace and field sampling."""

    @pytest.mark.parametrize("coeffs, expected", [([0.0, 0.0, 1.0], 2.0), ([0.0, 0.0, 0.0, 1.0], 6.0)])
    def test_second_derivative_trace(self, coeffs, expected):
        """y_xx(1) is exact for cubics."""
        mesh = build_mesh(8)
        assert second_derivative_trace(polynomial_dofs(mesh, coeffs), mesh) == pytest.approx(expected)

    def test_trace_on_batches(self):
        """Stacked DOF vectors give one trace per row."""
        mesh = build_mesh(8)
        U = np.stack([polynomial_dofs(mesh, [0.0, 0.0, 1.0]), polynomial_dofs(mesh, [0.0, 0.0, 0.0, 1.0])])
        assert np.allclose(second_derivative_trace(U, mesh), [2.0, 6.0])

    def test_sampler_integrates_fields(self):
        """int (x^2)^2 = 1/5 and int (2x)^2 = 4/3 on a graded sampler."""
        mesh = build_mesh(8)
        sampler = QuadratureSampler(mesh, graded_cells=4)
        u = polynomial_dofs(mesh, [0.0, 0.0, 1.0])
        assert sampler.integrate(sampler.field(u, 0) ** 2) == pytest.approx(0.2)
        assert sampler.integrate(sampler.field(u, 1) ** 2) == pytest.approx(4.0 / 3.0)


class TestEigenmodes:
    """Generalized eigenpairs of (S + B, M)."""

    def test_mass_orthonormal(self, system, sqrt_coeff, sqrt_class):
        """Modes are M-orthonormal and frequencies ascend."""
        matrices = system(sqrt_coeff, sqrt_class)
        omegas, modes = eigenmodes(matrices, 4)
        assert np.all(np.diff(omegas) > 0)
        assert np.allclose(modes @ matrices.M @ modes.T, np.eye(4), atol=1e-10)

    def test_modes_respect_constraints(self, system, sqrt_coeff, sqrt_class):
        """Constrained DOFs vanish."""
        matrices = system(sqrt_coeff, sqrt_class)
        _, modes = eigenmodes(matrices, 3)
        assert np.all(modes[:, matrices.constrained] == 0.0)

    def test_rayleigh_quotient(self, system, sd_coeff, sd_class):
        """(u^T K u) / (u^T M u) = omega^2."""
        matrices = system(sd_coeff, sd_class, regime=BoundaryRegime.feedback(1.0, 1.0))
        omegas, modes = eigenmodes(matrices, 2)
        for omega, mode in zip(omegas, modes):
            quotient = (mode @ matrices.stiffness @ mode) / (mode @ matrices.M @ mode)
            assert quotient == pytest.approx(omega**2, rel=1e-6)


class TestExport:
    """Matrix Market export."""

    def test_writes_all_matrices(self, tmp_path, system, sqrt_coeff, sqrt_class):
        """One .mtx file per matrix."""
        paths = export_matrices(system(sqrt_coeff, sqrt_class, n_elements=4), tmp_path)
        assert sorted(p.name for p in paths) == ["B.mtx", "D.mtx", "G.mtx", "M.mtx", "S.mtx"]
        assert all(p.exists() for p in paths)
