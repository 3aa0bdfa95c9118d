"""
Null control of the beam by the Hilbert Uniqueness Method.

Terminal data V = (v0T, v1T) of the backward adjoint problem (both DOFs at
x = 1 clamped) are observed through v_xx(t,1). On the time grid the trace is
recovered from the boundary moment of the backward run,

    a(1) v_xx(t,1) = K_d v + M_d v_tt,

where K_d and M_d are the stiffness and mass columns of the slope DOF at
x = 1. The same columns carry the rotation drive into the controlled scheme,
so with f = trace(V) the controlled terminal state y(T) satisfies

    <y(T), W> = y(T)^T M w1 - y_t(T)^T M w0 = a(1) int trace(V) trace(W) dt
              = Lambda(V, W)

exactly on the grid. Lambda V = rhs is solved by conjugate gradients
preconditioned with the Riesz map blockdiag(S, M) of the adjoint energy
space; the residual of each iterate is the controlled terminal state.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd
import scipy.sparse as sps
from scipy.integrate import trapezoid
from scipy.sparse.linalg import splu

from ..errors import PreconditionError, WrongRegimeError
from ..models.discretization import BoundaryRegime, RegimeKind, SystemMatrices
from ..models.reports import ControlReport
from ..models.state import BeamState, Drive, gradient_operator
from .coefficient import DegeneracyCoefficient
from .constants import controllability_constants
from .discretization import with_regime
from .dynamics import MidpointIntegrator, get_integrator, n_steps, simulate, simulate_backward
from .observability import default_time_step

logger = logging.getLogger(__name__)

DEFAULT_CG_TOL = 1e-8
DEFAULT_MAX_ITER = 1000


def adjoint_view(coeff: DegeneracyCoefficient, matrices: SystemMatrices) -> SystemMatrices:
    if matrices.regime.kind == RegimeKind.ADJOINT:
        return matrices
    if matrices.regime.kind == RegimeKind.FEEDBACK:
        raise WrongRegimeError("HUM runs on the adjoint/controlled pair, got a feedback system")
    return with_regime(coeff, matrices, BoundaryRegime.adjoint())


def controlled_view(coeff: DegeneracyCoefficient, matrices: SystemMatrices) -> SystemMatrices:
    if matrices.regime.kind == RegimeKind.CONTROLLED:
        return matrices
    if matrices.regime.kind == RegimeKind.FEEDBACK:
        raise WrongRegimeError("HUM runs on the adjoint/controlled pair, got a feedback system")
    return with_regime(coeff, matrices, BoundaryRegime.controlled())


def interior_energy(state: BeamState, matrices: SystemMatrices) -> float:
    """Energy of the interior DOFs; the driven slope at x = 1 is excluded."""
    free = matrices.free
    u, v = state.u[free], state.v[free]
    K = matrices.restrict(matrices.stiffness)
    M = matrices.restrict(matrices.M)
    return 0.5 * float(v @ (M @ v) + u @ (K @ u))


def trapezoid_weights(n_samples: int, dt: float) -> np.ndarray:
    weights = np.full(n_samples, dt)
    weights[[0, -1]] *= 0.5
    return weights


def boundary_coupling(matrices: SystemMatrices) -> Tuple[np.ndarray, np.ndarray]:
    """Stiffness and mass columns of the slope DOF at x = 1, restricted to the free DOFs."""
    d = matrices.mesh.rotation_dof_at_one
    K_col = matrices.stiffness.tocsc()[:, d].toarray().ravel()[matrices.free]
    M_col = matrices.M.tocsc()[:, d].toarray().ravel()[matrices.free]
    return K_col, M_col


def boundary_moment_trace(displacements: np.ndarray, dt: float, K_col: np.ndarray, M_col: np.ndarray,
                          a_one: float) -> np.ndarray:
    """
    v_xx(t_k, 1) on the grid t_k = k dt from the boundary moment of a homogeneous run.

    Args:
        displacements (np.ndarray): Free displacement vectors in increasing time order, shape (N + 1, n_free)
        dt (float): Time step
        K_col (np.ndarray): Stiffness column of the slope DOF at x = 1
        M_col (np.ndarray): Mass column of the slope DOF at x = 1
        a_one (float): a(1)

    Returns:
        np.ndarray: N + 1 trace samples
    """
    midpoints = 0.5 * (displacements[:-1] + displacements[1:])
    moment = midpoints @ K_col
    inertia = midpoints @ M_col
    n_samples = len(displacements)

    weighted = np.zeros(n_samples)
    weighted[:-1] += 0.5 * dt * moment
    weighted[1:] += 0.5 * dt * moment
    jumps = np.zeros(n_samples)
    jumps[1:] += inertia
    jumps[:-1] -= inertia
    weighted += gradient_operator(n_samples, dt).T @ jumps
    return weighted / (trapezoid_weights(n_samples, dt) * a_one)


@dataclass
class AdjointData:
    """Terminal data (v(T), v_t(T)) of the backward adjoint problem on the full DOF set."""

    v0T: np.ndarray
    v1T: np.ndarray

    @classmethod
    def zeros(cls, n_dofs: int) -> "AdjointData":
        return cls(v0T=np.zeros(n_dofs), v1T=np.zeros(n_dofs))

    @classmethod
    def from_free(cls, matrices: SystemMatrices, z: np.ndarray) -> "AdjointData":
        n = matrices.n_free
        return cls(v0T=matrices.expand(z[:n]), v1T=matrices.expand(z[n:]))

    def check(self, matrices: SystemMatrices, tol: float = 1e-12):
        fixed = np.setdiff1d(np.arange(matrices.mesh.n_dofs), matrices.free)
        scale = max(1.0, float(np.max(np.abs(self.v0T))), float(np.max(np.abs(self.v1T))))
        if np.any(np.abs(self.v0T[fixed]) > tol * scale) or np.any(np.abs(self.v1T[fixed]) > tol * scale):
            raise PreconditionError("Adjoint data must vanish on the constrained DOFs")


@dataclass
class GramianImage:
    """Backward adjoint run from terminal data: the v_xx(t,1) trace and the (v(0), v_t(0)) endpoint."""

    times: np.ndarray
    trace: np.ndarray
    endpoint: BeamState
    a_one: float


def gramian_apply(data: AdjointData, T: float, matrices: SystemMatrices, coeff: DegeneracyCoefficient,
                  dt: Optional[float] = None) -> GramianImage:
    """
    Solve the backward problem from (v0T, v1T) and record v_xx(t,1).

    Args:
        data (AdjointData): Terminal adjoint data satisfying the adjoint constraints
        T (float): Horizon
        matrices (SystemMatrices): Adjoint or controlled system on the same mesh
        coeff (DegeneracyCoefficient): Coefficient
        dt (float, optional): Time step (default: h/2 rounded to divide T)

    Returns:
        GramianImage: Trace on t_k = k dt and the backward endpoint at t = 0
    """
    adjoint = adjoint_view(coeff, matrices)
    data.check(adjoint)
    dt = dt or default_time_step(T, adjoint)
    traj = simulate_backward(adjoint, BeamState(t=T, u=data.v0T, v=data.v1T), T, dt)
    K_col, M_col = boundary_coupling(adjoint)
    trace = boundary_moment_trace(traj.displacements[:, adjoint.free], dt, K_col, M_col, adjoint.a_one)
    return GramianImage(times=traj.times, trace=trace, endpoint=traj.initial, a_one=adjoint.a_one)


def gramian_pairing(first: GramianImage, second: GramianImage) -> float:
    """Lambda(V, W) = a(1) int_0^T v_xx(t,1) w_xx(t,1) dt."""
    if len(first.times) != len(second.times):
        raise ValueError("Gramian images live on different time grids")
    return first.a_one * float(trapezoid(first.trace * second.trace, first.times))


class TranspositionFunctional:
    """W_T -> <u1, w(0)> - int u0 w_t(0), one backward solve per evaluation."""

    def __init__(self, u0: np.ndarray, u1: np.ndarray, T: float, matrices: SystemMatrices,
                 coeff: DegeneracyCoefficient, dt: Optional[float] = None):
        self.u0 = np.asarray(u0, dtype=float)
        self.u1 = np.asarray(u1, dtype=float)
        self.T = T
        self.matrices = adjoint_view(coeff, matrices)
        self.coeff = coeff
        self.dt = dt or default_time_step(T, self.matrices)

    @property
    def is_zero(self) -> bool:
        return not (np.any(self.u0) or np.any(self.u1))

    def __call__(self, data: AdjointData) -> float:
        if self.is_zero:
            return 0.0
        endpoint = gramian_apply(data, self.T, self.matrices, self.coeff, self.dt).endpoint
        M = self.matrices.M
        return float(self.u1 @ (M @ endpoint.u) - self.u0 @ (M @ endpoint.v))


def rhs_functional(u0: np.ndarray, u1: np.ndarray, T: float, matrices: SystemMatrices,
                   coeff: DegeneracyCoefficient, dt: Optional[float] = None) -> TranspositionFunctional:
    return TranspositionFunctional(u0, u1, T, matrices, coeff, dt)


@dataclass
class ControlResult:
    """Control samples on t_k = k dt with the CG diagnostics and the controlled terminal energy."""

    f: np.ndarray
    dt: float
    T: float
    cg_iterations: int
    cg_residual: float
    converged: bool
    terminal_energy_ratio: float
    cost: float
    sign: int
    adjoint: AdjointData
    a_one: float = 1.0
    transposition_rhs: float = 0.0
    gramian_pairing: float = 0.0
    verified_energy_ratio: Optional[float] = None
    residual_history: List[float] = field(default_factory=list)
    functional_history: List[float] = field(default_factory=list)

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(len(self.f))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"t": self.times, "f": self.f})

    def to_report(self) -> ControlReport:
        return ControlReport(
            T=self.T,
            dt=self.dt,
            cg_iterations=self.cg_iterations,
            cg_residual=self.cg_residual,
            converged=self.converged,
            terminal_energy_ratio=self.terminal_energy_ratio,
            verified_energy_ratio=self.verified_energy_ratio,
            cost=self.cost,
            sign=self.sign,
            transposition_rhs=self.transposition_rhs,
            gramian_pairing=self.gramian_pairing,
        )


class NullControlSolver:
    """Preconditioned conjugate gradients on Lambda for one (controlled system, T, dt)."""

    def __init__(self, matrices: SystemMatrices, T: float, dt: float):
        """
        Initialize the solver.

        Args:
            matrices (SystemMatrices): Controlled-regime system
            T (float): Control time
            dt (float): Time step dividing T
        """
        if matrices.regime.kind != RegimeKind.CONTROLLED:
            raise WrongRegimeError(f"Null control needs the controlled regime, got {matrices.regime.kind.value}")
        self.matrices = matrices
        self.T = T
        self.dt = dt
        self.steps = n_steps(T, dt)
        self.integrator: MidpointIntegrator = get_integrator(matrices, dt)
        # adjoint and controlled regimes share the free DOFs, so the homogeneous backward map is the same
        self.backward: MidpointIntegrator = get_integrator(matrices, -dt)
        self.n = self.integrator.size
        self.energy = 0.5 * sps.block_diag([self.integrator.K, self.integrator.M]).tocsr()
        self.velocity_map = gradient_operator(self.steps + 1, dt)
        self.K_col, self.M_col = boundary_coupling(matrices)
        self._riesz_K = splu(self.integrator.K.tocsc())
        self._riesz_M = splu(self.integrator.M.tocsc())

        logger.info(f"NullControlSolver initialized: {2 * self.n} adjoint unknowns, {self.steps} steps, dt={dt:g}")

    def energy_of(self, z: np.ndarray) -> float:
        return float(z @ (self.energy @ z))

    def propagate(self, z0: Optional[np.ndarray] = None, f: Optional[np.ndarray] = None) -> np.ndarray:
        """Terminal free state of the controlled scheme from z0 (default rest) under drive f."""
        n = self.n
        z0 = np.zeros(2 * n) if z0 is None else z0
        u, v = z0[:n].copy(), z0[n:].copy()
        g = self.velocity_map @ f if f is not None else None
        for k in range(self.steps):
            forcing = None
            if f is not None:
                forcing = self.integrator.drive_forcing(f[k], f[k + 1], g[k], g[k + 1])
            u, v = self.integrator.step(u, v, forcing)
        return np.concatenate([u, v])

    def trace(self, V: np.ndarray) -> np.ndarray:
        """v_xx(t_k,1) of the backward adjoint run from free terminal data V = (v0T, v1T)."""
        u, v = V[: self.n].copy(), V[self.n:].copy()
        displacements = np.empty((self.steps + 1, self.n))
        displacements[-1] = u
        for k in range(self.steps - 1, -1, -1):
            u, v = self.backward.step(u, v)
            displacements[k] = u
        return boundary_moment_trace(displacements, self.dt, self.K_col, self.M_col, self.matrices.a_one)

    def dual(self, z: np.ndarray) -> np.ndarray:
        """Coefficients of W -> y^T M w1 - y_t^T M w0 for a free state z = (y, y_t)."""
        M = self.integrator.M
        return np.concatenate([-(M @ z[self.n:]), M @ z[: self.n]])

    def riesz(self, r: np.ndarray) -> np.ndarray:
        """blockdiag(S, M)^-1 r."""
        return np.concatenate([self._riesz_K.solve(r[: self.n]), self._riesz_M.solve(r[self.n:])])

    def apply(self, V: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Lambda V with the trace used as drive and the controlled response to it."""
        f = self.trace(V)
        response = self.propagate(f=f)
        return self.dual(response), f, response

    def solve(self, z0: np.ndarray, cg_tol: float = DEFAULT_CG_TOL,
              max_iter: int = DEFAULT_MAX_ITER) -> ControlResult:
        """
        Conjugate gradients on Lambda V = rhs, rhs(W) = <u1, w(0)> - int u0 w_t(0).

        Stops when the residual, measured in the dual of the adjoint energy
        space, falls below cg_tol relative to the right-hand side.
        """
        if cg_tol <= 0.0:
            raise ValueError(f"cg_tol must be positive, got {cg_tol}")
        free_run = self.propagate(z0)
        b = -self.dual(free_run)
        V = np.zeros_like(b)
        f = np.zeros(self.steps + 1)
        response = np.zeros_like(b)
        initial_energy = self.energy_of(z0)

        r = b.copy()
        s = self.riesz(r)
        rs = float(r @ s)
        b_norm = np.sqrt(rs)
        if initial_energy == 0.0 or b_norm == 0.0:
            return self._result(V, f, 0, 0.0, True, 0.0, [0.0], [0.0])

        p = s.copy()
        f_p = response_p = None
        residuals = [1.0]
        functionals = [0.0]
        iterations = 0
        converged = False
        while iterations < max_iter:
            Lp, f_p, response_p = self.apply(p)
            curvature = float(p @ Lp)
            if curvature <= 0.0:
                logger.warning(f"Gramian lost positivity at iteration {iterations}")
                break
            alpha = rs / curvature
            V += alpha * p
            f += alpha * f_p
            response += alpha * response_p
            r -= alpha * Lp
            iterations += 1

            s = self.riesz(r)
            rs_next = float(r @ s)
            residuals.append(np.sqrt(max(rs_next, 0.0)) / b_norm)
            # J(V) = 1/2 Lambda(V, V) - rhs(V) = -1/2 <b + r, V>
            functionals.append(-0.5 * float((b + r) @ V))
            logger.debug(f"CG iteration {iterations}: relative residual {residuals[-1]:.3e}")
            if residuals[-1] <= cg_tol:
                converged = True
                break
            p = s + (rs_next / rs) * p
            rs = rs_next

        if not converged:
            logger.warning(f"CG stopped after {iterations} iterations at relative residual {residuals[-1]:.3e}")
        terminal_ratio = self.energy_of(free_run + response) / initial_energy
        return self._result(V, f, iterations, residuals[-1], converged, terminal_ratio, residuals, functionals)

    def _result(self, V, f, iterations, residual, converged, terminal_ratio, residuals, functionals) -> ControlResult:
        cost = float(trapezoid_weights(self.steps + 1, self.dt) @ f**2)
        return ControlResult(
            f=f,
            dt=self.dt,
            T=self.T,
            cg_iterations=iterations,
            cg_residual=float(residual),
            converged=converged,
            terminal_energy_ratio=float(terminal_ratio),
            cost=cost,
            sign=1,
            adjoint=AdjointData.from_free(self.matrices, V),
            a_one=self.matrices.a_one,
            residual_history=[float(x) for x in residuals],
            functional_history=[float(x) for x in functionals],
        )

    def choose_sign(self, z0: np.ndarray, result: ControlResult) -> ControlResult:
        """Keep whichever of +f, -f leaves less terminal energy and record the sign."""
        initial_energy = self.energy_of(z0)
        if initial_energy == 0.0:
            return result
        free_run = self.propagate(z0)
        response = self.propagate(f=result.f)
        plus = self.energy_of(free_run + response)
        minus = self.energy_of(free_run - response)
        if minus < plus:
            logger.warning("Control sign flipped by the trial runs")
            result.f = -result.f
            result.sign = -result.sign
            result.terminal_energy_ratio = minus / initial_energy
        else:
            result.terminal_energy_ratio = plus / initial_energy
        return result


def _free_state(matrices: SystemMatrices, u0: np.ndarray, u1: np.ndarray) -> np.ndarray:
    u0 = np.asarray(u0, dtype=float)
    u1 = np.asarray(u1, dtype=float)
    if u0.shape != (matrices.mesh.n_dofs,) or u1.shape != (matrices.mesh.n_dofs,):
        raise ValueError(f"Initial data must be full DOF vectors of length {matrices.mesh.n_dofs}")
    return np.concatenate([u0[matrices.free], u1[matrices.free]])


def solve_null_control(u0: np.ndarray, u1: np.ndarray, T: float, matrices: SystemMatrices,
                       coeff: DegeneracyCoefficient, cg_tol: float = DEFAULT_CG_TOL,
                       max_iter: int = DEFAULT_MAX_ITER, dt: Optional[float] = None) -> ControlResult:
    """
    Compute the HUM control driving (u0, u1) to rest at time T.

    The control is f(t) = sign * v_xx(t,1) of the backward adjoint run from
    the optimal terminal data ``result.adjoint``.

    Args:
        u0 (np.ndarray): Initial displacement (full DOF vector)
        u1 (np.ndarray): Initial velocity (full DOF vector)
        T (float): Control time; a warning is logged for T <= T0
        matrices (SystemMatrices): Adjoint or controlled system
        coeff (DegeneracyCoefficient): Coefficient
        cg_tol (float): Relative CG tolerance
        max_iter (int): CG iteration cap; a non-converged result is flagged
        dt (float, optional): Time step (default: h/2 rounded to divide T)

    Returns:
        ControlResult: f sampled on the time grid
    """
    controlled = controlled_view(coeff, matrices)
    dt = dt or default_time_step(T, controlled)

    T0 = controllability_constants(coeff, controlled.degeneracy).T0
    if T <= T0:
        logger.warning(f"T={T} <= T0={T0:.4g}: coercivity of the HUM operator is not guaranteed")

    solver = NullControlSolver(controlled, T, dt)
    z0 = _free_state(controlled, u0, u1)
    result = solver.solve(z0, cg_tol, max_iter)
    result = solver.choose_sign(z0, result)
    if result.cg_iterations > 0:
        image = gramian_apply(result.adjoint, T, controlled, coeff, dt)
        result.gramian_pairing = gramian_pairing(image, image)
        result.transposition_rhs = rhs_functional(u0, u1, T, controlled, coeff, dt)(result.adjoint)

    logger.info(f"Null control: {result.cg_iterations} CG iterations, residual {result.cg_residual:.2e}, "
                f"E(T)/E(0)={result.terminal_energy_ratio:.2e}, cost={result.cost:.6g}")
    return result


def verify_null_control(result: ControlResult, u0: np.ndarray, u1: np.ndarray, T: float,
                        matrices: SystemMatrices, coeff: Optional[DegeneracyCoefficient] = None) -> float:
    """
    E(T)/E(0) of an independent controlled run with a fresh factorization.

    Zero data with f = 0 gives 0.
    """
    if matrices.regime.kind != RegimeKind.CONTROLLED:
        if coeff is None:
            raise WrongRegimeError("Pass a controlled system or the coefficient to rebuild one")
        matrices = controlled_view(coeff, matrices)
    if not result.converged:
        logger.warning("Verifying a control from a non-converged CG run")

    drive = Drive(result.f, result.dt)
    u0 = np.asarray(u0, dtype=float).copy()
    u1 = np.asarray(u1, dtype=float).copy()
    u0[matrices.driven] = drive.samples[0]
    u1[matrices.driven] = drive.velocities[0]
    initial = BeamState(t=0.0, u=u0, v=u1)

    integrator = MidpointIntegrator(matrices, result.dt)
    traj = simulate(matrices, initial, T, result.dt, drive=drive, record_every=n_steps(T, result.dt),
                    integrator=integrator)
    initial_energy = interior_energy(initial, matrices)
    final_energy = interior_energy(traj.final, matrices)
    if initial_energy == 0.0:
        return 0.0 if final_energy == 0.0 else float("inf")
    ratio = final_energy / initial_energy
    result.verified_energy_ratio = ratio
    logger.info(f"Verified terminal energy ratio: {ratio:.3e}")
    return ratio
