"""
Tests for HUM null control: the Gramian, the transposition functional and
the conjugate-gradient solver.
"""

import numpy as np
import pytest

from src.errors import PreconditionError, WrongRegimeError
from src.models.discretization import BoundaryRegime
from src.models.state import BeamState
from src.services.discretization import eigenmodes
from src.services.dynamics import simulate, simulate_backward
from src.services.hum import (
    AdjointData,
    NullControlSolver,
    gramian_apply,
    gramian_pairing,
    rhs_functional,
    solve_null_control,
    verify_null_control,
)
from src.services.observability import observed_boundary_energy


def first_mode(matrices):
    _, modes = eigenmodes(matrices, 1)
    return modes[0]


def free_pair(matrices, data):
    return np.concatenate([data.v0T[matrices.free], data.v1T[matrices.free]])


@pytest.fixture
def controlled(system, sqrt_coeff, sqrt_class):
    return system(sqrt_coeff, sqrt_class, regime=BoundaryRegime.controlled())


@pytest.fixture
def mode_control(controlled, sqrt_coeff):
    u0 = first_mode(controlled)
    u1 = np.zeros_like(u0)
    return u0, u1, solve_null_control(u0, u1, 2.0, controlled, sqrt_coeff)


class TestGramian:
    """Backward adjoint runs observed at x = 1."""

    def test_pairing_matches_observed_energy(self, system, sqrt_coeff, sqrt_class):
        """Lambda(V, V) is close to a(1) int y_xx(t,1)^2 of the matching forward run."""
        matrices = system(sqrt_coeff, sqrt_class, n_elements=32)
        mode = first_mode(matrices)
        image = gramian_apply(AdjointData(mode, np.zeros_like(mode)), 2.0, matrices, sqrt_coeff, dt=0.025)
        forward = simulate(matrices, BeamState(t=0.0, u=mode, v=np.zeros_like(mode)), 2.0, 0.025)
        expected = matrices.a_one * observed_boundary_energy(forward)
        assert gramian_pairing(image, image) == pytest.approx(expected, rel=2e-2)

    def test_trace_follows_second_derivative(self, system, sqrt_coeff, sqrt_class):
        """The moment trace and the pointwise y_xx(t,1) of the backward run are in phase."""
        matrices = system(sqrt_coeff, sqrt_class, n_elements=32)
        mode = first_mode(matrices)
        image = gramian_apply(AdjointData(mode, np.zeros_like(mode)), 2.0, matrices, sqrt_coeff, dt=0.025)
        backward = simulate_backward(matrices, BeamState(t=2.0, u=mode, v=np.zeros_like(mode)), 2.0, 0.025)
        assert np.corrcoef(image.trace, backward.trace("y_xx"))[0, 1] >= 0.99

    def test_response_pairing_is_lambda(self, system, controlled, sqrt_coeff, sqrt_class):
        """Driving with the trace of V pairs with W exactly as Lambda(V, W)."""
        matrices = system(sqrt_coeff, sqrt_class)
        _, modes = eigenmodes(matrices, 3)
        first = AdjointData(modes[0] + 0.5 * modes[2], np.zeros_like(modes[0]))
        second = AdjointData(modes[1], 2.0 * modes[0])
        image_first = gramian_apply(first, 2.0, matrices, sqrt_coeff, dt=0.05)
        image_second = gramian_apply(second, 2.0, matrices, sqrt_coeff, dt=0.05)

        solver = NullControlSolver(controlled, 2.0, 0.05)
        response = solver.propagate(f=image_first.trace)
        pairing = float(solver.dual(response) @ free_pair(matrices, second))
        assert pairing == pytest.approx(gramian_pairing(image_first, image_second), rel=1e-8)

    def test_linearity(self, system, sqrt_coeff, sqrt_class):
        """The observed trace is linear in the terminal data."""
        matrices = system(sqrt_coeff, sqrt_class)
        _, modes = eigenmodes(matrices, 2)
        zero = np.zeros(matrices.mesh.n_dofs)
        first = gramian_apply(AdjointData(modes[0], zero), 1.0, matrices, sqrt_coeff, dt=0.05)
        second = gramian_apply(AdjointData(zero, modes[1]), 1.0, matrices, sqrt_coeff, dt=0.05)
        both = gramian_apply(AdjointData(modes[0], modes[1]), 1.0, matrices, sqrt_coeff, dt=0.05)
        assert np.allclose(both.trace, first.trace + second.trace, atol=1e-9)
        assert gramian_pairing(first, second) == pytest.approx(gramian_pairing(second, first))

    def test_constrained_data_rejected(self, system, sqrt_coeff, sqrt_class):
        """Terminal data must vanish on the adjoint constraints."""
        matrices = system(sqrt_coeff, sqrt_class)
        data = AdjointData.zeros(matrices.mesh.n_dofs)
        data.v0T[0] = 1.0
        with pytest.raises(PreconditionError):
            gramian_apply(data, 1.0, matrices, sqrt_coeff)


class TestTransposition:
    """<u1, w(0)> - int u0 w_t(0)."""

    def test_zero_data(self, controlled, sqrt_coeff):
        """Zero initial data give the zero functional."""
        n = controlled.mesh.n_dofs
        functional = rhs_functional(np.zeros(n), np.zeros(n), 1.0, controlled, sqrt_coeff)
        assert functional.is_zero
        assert functional(AdjointData.zeros(n)) == 0.0

    def test_linear_in_adjoint_data(self, system, controlled, sqrt_coeff, sqrt_class):
        """Scaling the adjoint data scales the functional."""
        adjoint = system(sqrt_coeff, sqrt_class)
        mode = first_mode(adjoint)
        functional = rhs_functional(first_mode(controlled), np.zeros_like(mode), 1.0, controlled, sqrt_coeff, dt=0.05)
        data = AdjointData(np.zeros_like(mode), mode)
        doubled = AdjointData(np.zeros_like(mode), 2.0 * mode)
        assert functional(doubled) == pytest.approx(2.0 * functional(data))


class TestNullControl:
    """Conjugate gradients on the HUM Gramian."""

    def test_zero_data(self, controlled, sqrt_coeff):
        """Zero data need no iterations and no control."""
        n = controlled.mesh.n_dofs
        result = solve_null_control(np.zeros(n), np.zeros(n), 2.0, controlled, sqrt_coeff)
        assert result.cg_iterations == 0
        assert result.terminal_energy_ratio == 0.0
        assert np.all(result.f == 0.0)
        assert verify_null_control(result, np.zeros(n), np.zeros(n), 2.0, controlled) == 0.0

    def test_eigenmode_is_steered_to_rest(self, mode_control, controlled):
        """a = x^(1/2), T = 2: E(T)/E(0) <= 1e-6 in an independent run."""
        u0, u1, result = mode_control
        assert result.converged
        assert result.terminal_energy_ratio <= 1e-6
        assert verify_null_control(result, u0, u1, 2.0, controlled) <= 1e-6
        assert result.verified_energy_ratio <= 1e-6
        assert result.cost > 0.0

    def test_control_is_adjoint_trace(self, mode_control, controlled, sqrt_coeff):
        """f is the signed v_xx(t,1) trace of the reported adjoint data."""
        _, _, result = mode_control
        image = gramian_apply(result.adjoint, 2.0, controlled, sqrt_coeff, dt=result.dt)
        assert np.corrcoef(result.f, image.trace)[0, 1] == pytest.approx(result.sign, abs=1e-8)
        assert np.allclose(result.f, result.sign * image.trace, rtol=1e-6, atol=1e-8 * np.max(np.abs(result.f)))

    def test_duality(self, mode_control):
        """Lambda(V*, V*) = a(1) int f^2 = rhs(V*) at the optimum."""
        _, _, result = mode_control
        assert result.gramian_pairing == pytest.approx(result.a_one * result.cost, rel=1e-6)
        assert result.transposition_rhs == pytest.approx(result.gramian_pairing, rel=1e-4)

    def test_homogeneity(self, mode_control, controlled, sqrt_coeff):
        """Doubling the data doubles the control."""
        u0, u1, result = mode_control
        doubled = solve_null_control(2.0 * u0, u1, 2.0, controlled, sqrt_coeff)
        assert np.allclose(doubled.f, 2.0 * result.f, rtol=1e-5, atol=1e-8 * np.max(np.abs(result.f)))

    def test_truncated_control_fails(self, mode_control, controlled):
        """Zeroing the second half of f leaves more energy."""
        u0, u1, result = mode_control
        half = len(result.f) // 2
        result.f[half:] = 0.0
        assert verify_null_control(result, u0, u1, 2.0, controlled) > 1e-3

    def test_functional_decreases(self, mode_control):
        """The HUM functional is nonincreasing along CG."""
        _, _, result = mode_control
        J = np.array(result.functional_history)
        assert np.all(np.diff(J) <= 1e-8 * np.max(np.abs(J)))
        assert J[-1] == pytest.approx(-0.5 * result.gramian_pairing, rel=1e-4)
        assert result.residual_history[0] == 1.0

    def test_report(self, mode_control):
        """The report and the CSV frame carry the control."""
        _, _, result = mode_control
        report = result.to_report()
        assert report.cg_iterations == result.cg_iterations
        assert report.sign in (1, -1)
        assert report.gramian_pairing == result.gramian_pairing
        frame = result.to_frame()
        assert list(frame.columns) == ["t", "f"]
        assert frame["t"].iloc[-1] == pytest.approx(2.0)

    def test_feedback_rejected(self, system, sqrt_coeff, sqrt_class):
        """HUM needs the adjoint/controlled pair."""
        matrices = system(sqrt_coeff, sqrt_class, regime=BoundaryRegime.feedback(1.0, 1.0))
        n = matrices.mesh.n_dofs
        with pytest.raises(WrongRegimeError):
            solve_null_control(np.zeros(n), np.zeros(n), 2.0, matrices, sqrt_coeff)
