"""
Implicit-midpoint time integration of the semi-discrete beam

    M u'' + (S + B) u + D u' = 0

on the free DOFs, forward and backward in time, with an optional rotation
drive at x = 1 in the controlled regime.
"""

import logging
from typing import Dict, Optional, Tuple

import numpy as np
import scipy.sparse as sps
from scipy.sparse.linalg import splu

from ..errors import PreconditionError, WrongRegimeError
from ..models.discretization import SystemMatrices
from ..models.state import BeamState, Drive, Trajectory
from .discretization import second_derivative_trace

logger = logging.getLogger(__name__)

STEP_TOLERANCE = 1e-9


def n_steps(T: float, dt: float) -> int:
    """Number of steps of size |dt| covering T; dt must divide T."""
    if T <= 0.0:
        raise ValueError(f"T must be positive, got {T}")
    if dt == 0.0:
        raise ValueError("dt must be nonzero")
    n = int(round(T / abs(dt)))
    if n < 1 or abs(n * abs(dt) - T) > STEP_TOLERANCE * max(1.0, T):
        raise ValueError(f"dt={abs(dt)} does not divide T={T}")
    return n


class MidpointIntegrator:
    """
    One factorization of the midpoint system for a (matrices, dt) pair.

    With K = S + B restricted to the free DOFs, the update is

        (M + dt^2/4 K + dt/2 D) v+ = (M - dt^2/4 K - dt/2 D) v - dt K u + g
        u+ = u + dt/2 (v + v+)

    where g carries the driven column in the controlled regime.
    """

    def __init__(self, matrices: SystemMatrices, dt: float):
        """
        Initialize the integrator.

        Args:
            matrices (SystemMatrices): Assembled system
            dt (float): Time step; negative for backward integration
        """
        if dt == 0.0:
            raise ValueError("dt must be nonzero")
        self.matrices = matrices
        self.dt = float(dt)

        self.K = matrices.restrict(matrices.stiffness).tocsr()
        self.M = matrices.restrict(matrices.M).tocsr()
        D = matrices.restrict(matrices.D).tocsr()
        lhs = (self.M + (self.dt**2 / 4.0) * self.K + (self.dt / 2.0) * D).tocsc()
        self.rhs = (self.M - (self.dt**2 / 4.0) * self.K - (self.dt / 2.0) * D).tocsr()
        self._lu = splu(lhs)

        self.K_driven: Optional[np.ndarray] = None
        self.M_driven: Optional[np.ndarray] = None
        if matrices.driven is not None:
            free, d = matrices.free, matrices.driven
            self.K_driven = matrices.stiffness.tocsc()[:, d].toarray().ravel()[free]
            self.M_driven = matrices.M.tocsc()[:, d].toarray().ravel()[free]

        logger.debug(f"MidpointIntegrator initialized: {matrices.n_free} free DOFs, dt={self.dt:g}")

    @property
    def size(self) -> int:
        return self.K.shape[0]

    def step(self, u: np.ndarray, v: np.ndarray, forcing: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
        """One midpoint step on free vectors."""
        rhs = self.rhs @ v - self.dt * (self.K @ u)
        if forcing is not None:
            rhs = rhs + forcing
        v_next = self._lu.solve(rhs)
        return u + 0.5 * self.dt * (v + v_next), v_next

    def drive_forcing(self, f_now: float, f_next: float, g_now: float, g_next: float) -> np.ndarray:
        """Right-hand side contribution of the driven slope DOF over one step."""
        if self.K_driven is None:
            raise WrongRegimeError("Drive given for a regime without a driven DOF")
        return -(self.M_driven * (g_next - g_now) + 0.5 * self.dt * self.K_driven * (f_now + f_next))

    def propagator(self) -> np.ndarray:
        """Dense one-step map z -> z+ on z = (u, v) free vectors."""
        n = self.size
        identity = np.eye(2 * n)
        U, V = identity[:n], identity[n:]
        W = self._lu.solve(self.rhs @ V - self.dt * (self.K @ U))
        return np.vstack([U + 0.5 * self.dt * (V + W), W])

    def energy_matrix(self) -> np.ndarray:
        """Dense 1/2 blockdiag(K, M) so that E = z^T E z on free vectors."""
        return 0.5 * sps.block_diag([self.K, self.M]).toarray()


def get_integrator(matrices: SystemMatrices, dt: float) -> MidpointIntegrator:
    """Cached integrator for (matrices, dt)."""
    key = ("midpoint", float(dt))
    if key not in matrices._cache:
        matrices._cache[key] = MidpointIntegrator(matrices, dt)
    return matrices._cache[key]


def boundary_traces(matrices: SystemMatrices, U: np.ndarray, V: np.ndarray) -> Dict[str, np.ndarray]:
    """Traces at x = 1 for stacked full displacements U and velocities V."""
    value, rotation = matrices.trace_indices
    return {
        "y": U[..., value],
        "y_x": U[..., rotation],
        "y_t": V[..., value],
        "y_tx": V[..., rotation],
        "y_xx": second_derivative_trace(U, matrices.mesh),
    }


def _full_state(matrices: SystemMatrices, t: float, u: np.ndarray, v: np.ndarray,
                drive: Optional[Drive], k: Optional[int]) -> BeamState:
    f = drive.samples[k] if drive is not None else 0.0
    g = drive.velocities[k] if drive is not None else 0.0
    return BeamState(t=t, u=matrices.expand(u, f), v=matrices.expand(v, g))


def step_midpoint(matrices: SystemMatrices, state: BeamState, dt: float,
                  drive: Optional[Drive] = None, integrator: Optional[MidpointIntegrator] = None) -> BeamState:
    """
    Advance a state by one implicit-midpoint step.

    Args:
        matrices (SystemMatrices): Assembled system
        state (BeamState): Current state (full DOF vectors)
        dt (float): Step size (negative steps backward)
        drive (Optional[Drive]): Rotation drive at x = 1, required for the controlled regime
        integrator (Optional[MidpointIntegrator]): Prebuilt integrator for (matrices, dt)

    Returns:
        State at t + dt
    """
    if matrices.driven is not None and drive is None:
        raise PreconditionError("Controlled regime requires a drive")
    integrator = integrator or get_integrator(matrices, dt)
    free = matrices.free

    forcing, k_next = None, None
    if drive is not None:
        k = drive.index(state.t)
        k_next = k + (1 if dt > 0 else -1)
        forcing = integrator.drive_forcing(drive.samples[k], drive.samples[k_next],
                                           drive.velocities[k], drive.velocities[k_next])

    u, v = integrator.step(state.u[free], state.v[free], forcing)
    return _full_state(matrices, state.t + dt, u, v, drive, k_next)


def simulate(matrices: SystemMatrices, initial: BeamState, T: float, dt: float,
             drive: Optional[Drive] = None, record_every: int = 1,
             integrator: Optional[MidpointIntegrator] = None) -> Trajectory:
    """
    Integrate over [t0, t0 + T] (or [t0 - T, t0] for negative dt).

    Args:
        matrices (SystemMatrices): Assembled system
        initial (BeamState): State at the start time
        T (float): Horizon length
        dt (float): Step size; must divide T
        drive (Optional[Drive]): Rotation drive for the controlled regime
        record_every (int): Store every k-th state (the last state is always stored)
        integrator (Optional[MidpointIntegrator]): Prebuilt integrator

    Returns:
        Trajectory in integration order
    """
    if matrices.driven is not None and drive is None:
        raise PreconditionError("Controlled regime requires a drive")
    steps = n_steps(T, dt)
    integrator = integrator or get_integrator(matrices, dt)
    free = matrices.free
    direction = 1 if dt > 0 else -1

    k0 = drive.index(initial.t) if drive is not None else None
    u, v = initial.u[free].copy(), initial.v[free].copy()
    states = [_full_state(matrices, initial.t, u, v, drive, k0)]

    for n in range(steps):
        forcing = None
        if drive is not None:
            k = k0 + direction * n
            k_next = k + direction
            forcing = integrator.drive_forcing(drive.samples[k], drive.samples[k_next],
                                               drive.velocities[k], drive.velocities[k_next])
        u, v = integrator.step(u, v, forcing)
        if (n + 1) % record_every == 0 or n + 1 == steps:
            k_rec = k0 + direction * (n + 1) if drive is not None else None
            states.append(_full_state(matrices, initial.t + (n + 1) * dt, u, v, drive, k_rec))

    U = np.stack([s.u for s in states])
    V = np.stack([s.v for s in states])
    logger.debug(f"Simulated {steps} steps of {matrices.regime.kind.value} dynamics, dt={dt:g}")
    return Trajectory(states=states, traces=boundary_traces(matrices, U, V),
                      dt=abs(dt) * record_every, regime=matrices.regime.kind)


def simulate_backward(matrices: SystemMatrices, terminal: BeamState, T: float, dt: float) -> Trajectory:
    """
    Integrate backward from terminal data at time terminal.t down to terminal.t - T.

    Uses the same midpoint map with dt -> -dt. The returned trajectory is in
    increasing time order, so ``traj.initial`` is the state at the earliest time.
    """
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    if matrices.driven is not None:
        raise WrongRegimeError("Backward solves run on the homogeneous (adjoint or feedback) system")
    backward = simulate(matrices, terminal, T, -dt)
    order = slice(None, None, -1)
    return Trajectory(
        states=backward.states[order],
        traces={name: values[order] for name, values in backward.traces.items()},
        dt=dt,
        regime=backward.regime,
    )


def energy_rate(matrices: SystemMatrices, state: BeamState) -> float:
    """<A_h z, z> in the energy inner product, equal to -v^T D v."""
    return -float(state.v @ (matrices.D @ state.v))


def energy_history(matrices: SystemMatrices, initial: BeamState, T: float, dt: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Energies at every step by iterating the dense one-step propagator.

    Intended for long horizons where storing states is wasteful.

    Returns:
        (times, energies)
    """
    if matrices.driven is not None:
        raise WrongRegimeError("Energy history needs a regime without a driven DOF")
    steps = n_steps(T, dt)
    integrator = get_integrator(matrices, dt)
    P = integrator.propagator()
    E = integrator.energy_matrix()

    z = np.concatenate([initial.u[matrices.free], initial.v[matrices.free]])
    energies = np.empty(steps + 1)
    energies[0] = z @ (E @ z)
    for n in range(steps):
        z = P @ z
        energies[n + 1] = z @ (E @ z)

    times = initial.t + dt * np.arange(steps + 1)
    logger.info(f"Energy history over {steps} steps: E(0)={energies[0]:.6e}, E(T)={energies[-1]:.6e}")
    return times, energies
