"""
Energies, conservation/dissipation laws, multiplier identities and functional
inequalities evaluated on discrete states and trajectories.
"""

import logging
from typing import Callable, List, Optional, Sequence

import numpy as np
from scipy import integrate

from ..errors import PreconditionError, WrongRegimeError
from ..models.coefficient import DegeneracyClass
from ..models.discretization import BoundaryRegime, RegimeKind, SystemMatrices
from ..models.reports import (
    HardyPoincareReport,
    IdentityResidual,
    NormEquivalenceReport,
    NormInequality,
    NormSpace,
    RefinementStudy,
)
from ..models.state import BeamState, EnergyTrace, Trajectory
from .coefficient import DegeneracyCoefficient, default_sample_grid, weight_ratio_nonincreasing
from .discretization import QuadratureSampler, assemble, build_mesh, eigenmodes
from .dynamics import simulate

logger = logging.getLogger(__name__)

GRADED_CELLS = 8
INEQUALITY_TOLERANCE = 1e-8


def energy(state: BeamState, matrices: SystemMatrices) -> float:
    """1/2 (v^T M v + u^T (S + B) u); B carries the feedback boundary terms."""
    return 0.5 * float(state.v @ (matrices.M @ state.v) + state.u @ (matrices.stiffness @ state.u))


def energies(traj: Trajectory, matrices: SystemMatrices) -> np.ndarray:
    U, V = traj.displacements, traj.velocities
    K = matrices.stiffness
    return 0.5 * (np.einsum("ij,ij->i", V, (matrices.M @ V.T).T) + np.einsum("ij,ij->i", U, (K @ U.T).T))


def energy_trace(traj: Trajectory, matrices: SystemMatrices) -> EnergyTrace:
    return EnergyTrace(times=traj.times, energies=energies(traj, matrices), regime=matrices.regime.kind)


def _require_regime(matrices: SystemMatrices, kind: RegimeKind, operation: str):
    if matrices.regime.kind != kind:
        raise WrongRegimeError(f"{operation} needs a {kind.value} trajectory, got {matrices.regime.kind.value}")


def conservation_drift(traj: Trajectory, matrices: SystemMatrices) -> float:
    """max_t |E(t) - E(0)| / E(0) for an adjoint trajectory; 0 for zero data."""
    _require_regime(matrices, RegimeKind.ADJOINT, "Conservation drift")
    E = energies(traj, matrices)
    if E[0] == 0.0:
        return 0.0 if np.all(E == 0.0) else float("inf")
    return float(np.max(np.abs(E - E[0])) / E[0])


def dissipation_residual(traj: Trajectory, matrices: SystemMatrices, quadrature: str = "midpoint") -> IdentityResidual:
    """
    Worst per-step residual of E(t+dt) - E(t) = -int (y_t(.,1)^2 + y_tx(.,1)^2).

    Args:
        traj (Trajectory): Feedback trajectory recorded at every step
        matrices (SystemMatrices): Assembled feedback system
        quadrature (str): "midpoint" (squares of averaged traces) or "trapezoid"
    """
    _require_regime(matrices, RegimeKind.FEEDBACK, "Dissipation residual")
    E = energies(traj, matrices)
    yt, ytx = traj.trace("y_t"), traj.trace("y_tx")
    dt = traj.dt

    if quadrature == "midpoint":
        flux = ((yt[1:] + yt[:-1]) / 2) ** 2 + ((ytx[1:] + ytx[:-1]) / 2) ** 2
    elif quadrature == "trapezoid":
        flux = 0.5 * (yt[1:] ** 2 + ytx[1:] ** 2 + yt[:-1] ** 2 + ytx[:-1] ** 2)
    else:
        raise ValueError(f"Unknown quadrature '{quadrature}'")

    lhs = np.diff(E)
    rhs = -dt * flux
    if lhs.size == 0:
        return IdentityResidual.from_sides("dissipation", 0.0, 0.0, matrices.mesh.h, dt)
    scale = np.maximum(1.0, np.maximum(np.abs(lhs), np.abs(rhs)))
    worst = int(np.argmax(np.abs(lhs - rhs) / scale))
    return IdentityResidual.from_sides("dissipation", lhs[worst], rhs[worst], matrices.mesh.h, dt)


def _sampler(matrices: SystemMatrices) -> QuadratureSampler:
    key = ("sampler", GRADED_CELLS)
    if key not in matrices._cache:
        matrices._cache[key] = QuadratureSampler(matrices.mesh, graded_cells=GRADED_CELLS)
    return matrices._cache[key]


def _fields(traj: Trajectory, matrices: SystemMatrices, coeff: DegeneracyCoefficient):
    sampler = _sampler(matrices)
    U, V = traj.displacements, traj.velocities
    x = sampler.x
    return (sampler, x, coeff.evaluate(x), coeff.derivative(x),
            sampler.field(V, 0), sampler.field(U, 1), sampler.field(U, 2))


def _observed_half(traj: Trajectory, matrices: SystemMatrices) -> float:
    return 0.5 * matrices.a_one * float(integrate.trapezoid(traj.trace("y_xx") ** 2, dx=traj.dt))


def multiplier_identity_x2(traj: Trajectory, matrices: SystemMatrices, coeff: DegeneracyCoefficient) -> IdentityResidual:
    """
    Residual of the x^2 y_x multiplier identity on an adjoint trajectory:

        1/2 a(1) int y_xx(t,1)^2 = [int y_t x^2 y_x]_0^T + int int x y_t^2
                                   + int int (3 x a - x^2 a'/2) y_xx^2 - int int a' y_x^2
    """
    _require_regime(matrices, RegimeKind.ADJOINT, "Multiplier identity")
    sampler, x, a, da, yt, yx, yxx = _fields(traj, matrices, coeff)
    dt = traj.dt

    bracket = sampler.integrate(yt * x**2 * yx)
    kinetic = integrate.trapezoid(sampler.integrate(x * yt**2), dx=dt)
    bending = integrate.trapezoid(sampler.integrate((3 * x * a - 0.5 * x**2 * da) * yxx**2), dx=dt)
    slope = integrate.trapezoid(sampler.integrate(da * yx**2), dx=dt)

    rhs = bracket[-1] - bracket[0] + kinetic + bending - slope
    return IdentityResidual.from_sides("multiplier_x2", _observed_half(traj, matrices), rhs, matrices.mesh.h, dt)


def multiplier_identity_x(traj: Trajectory, matrices: SystemMatrices, coeff: DegeneracyCoefficient) -> IdentityResidual:
    """
    Residual of the x y_x multiplier identity on an adjoint trajectory:

        1/2 a(1) int y_xx(t,1)^2 = [int x y_t y_x]_0^T + 1/2 int int y_t^2 + 1/2 int int (3a - x a') y_xx^2
    """
    _require_regime(matrices, RegimeKind.ADJOINT, "Multiplier identity")
    sampler, x, a, da, yt, yx, yxx = _fields(traj, matrices, coeff)
    dt = traj.dt

    bracket = sampler.integrate(x * yt * yx)
    kinetic = 0.5 * integrate.trapezoid(sampler.integrate(yt**2), dx=dt)
    bending = 0.5 * integrate.trapezoid(sampler.integrate((3 * a - x * da) * yxx**2), dx=dt)

    rhs = bracket[-1] - bracket[0] + kinetic + bending
    return IdentityResidual.from_sides("multiplier_x", _observed_half(traj, matrices), rhs, matrices.mesh.h, dt)


MULTIPLIER_IDENTITIES = {
    "multiplier_x2": multiplier_identity_x2,
    "multiplier_x": multiplier_identity_x,
}


def multiplier_refinement_study(coeff: DegeneracyCoefficient, degeneracy: DegeneracyClass,
                                T: float = 1.0, levels: Sequence[int] = (16, 32, 64),
                                identity: str = "multiplier_x2", mode: int = 1) -> RefinementStudy:
    """
    Multiplier residuals on eigenmode data under simultaneous (h, dt) refinement with dt = h.

    Args:
        coeff (DegeneracyCoefficient): The coefficient
        degeneracy (DegeneracyClass): Its class
        T (float): Horizon
        levels (Sequence[int]): Element counts, typically dyadic
        identity (str): "multiplier_x2" or "multiplier_x"
        mode (int): 1-based index of the eigenmode used as initial displacement
    """
    check = MULTIPLIER_IDENTITIES[identity]
    study = RefinementStudy(identity=identity)
    for n in levels:
        matrices = assemble(coeff, degeneracy, build_mesh(n), BoundaryRegime.adjoint())
        _, modes = eigenmodes(matrices, mode)
        initial = BeamState(t=0.0, u=modes[mode - 1], v=np.zeros(matrices.mesh.n_dofs))
        traj = simulate(matrices, initial, T, 1.0 / n)
        study.residuals.append(check(traj, matrices, coeff))

    values = [r.residual for r in study.residuals]
    study.rates = [float(np.log2(r0 / r1)) if r0 > 0 and r1 > 0 else float("nan")
                   for r0, r1 in zip(values[:-1], values[1:])]
    logger.info(f"{identity} refinement over {list(levels)}: residuals {values}, rates {study.rates}")
    return study


def hardy_poincare_check(coeff: DegeneracyCoefficient, theta: float, w: Callable[[float], float],
                         w_prime: Callable[[float], float], sample_grid: Optional[np.ndarray] = None,
                         tol: float = INEQUALITY_TOLERANCE) -> HardyPoincareReport:
    """
    Check int a w^2/x^2 <= C_HP int a (w')^2 with C_HP = 4/(1-theta)^2.

    Args:
        coeff (DegeneracyCoefficient): Coefficient with a/x^theta nonincreasing
        theta (float): Exponent in (0,1)
        w (Callable): Test function vanishing at 0
        w_prime (Callable): Its derivative
        sample_grid (Optional[np.ndarray]): Grid for the monotonicity precondition
        tol (float): Relative tolerance on the inequality
    """
    if not 0.0 < theta < 1.0:
        raise PreconditionError(f"theta must lie in (0,1), got {theta}")
    grid = default_sample_grid() if sample_grid is None else sample_grid
    if not weight_ratio_nonincreasing(coeff, theta, grid):
        raise PreconditionError(f"a/x^{theta:g} is not nonincreasing for {coeff}")
    if abs(float(w(0.0))) > 1e-12:
        raise PreconditionError(f"w(0) must vanish, got {float(w(0.0))}")

    # breakpoints grade the adaptive rule toward the singular end
    breakpoints = np.geomspace(1e-6, 0.5, 8)
    a = lambda x: float(coeff.evaluate(x))
    lhs, _ = integrate.quad(lambda x: a(x) * float(w(x)) ** 2 / x**2, 0.0, 1.0, points=breakpoints, limit=400)
    grad, _ = integrate.quad(lambda x: a(x) * float(w_prime(x)) ** 2, 0.0, 1.0, points=breakpoints, limit=400)

    c_hp = 4.0 / (1.0 - theta) ** 2
    rhs = c_hp * grad
    return HardyPoincareReport(theta=theta, c_hp=c_hp, lhs=lhs, rhs=rhs, holds=lhs <= rhs * (1.0 + tol))


def _essential_dofs(matrices: SystemMatrices, degeneracy: DegeneracyClass, space: NormSpace) -> List[int]:
    dofs = [0]
    if degeneracy.is_weak:
        dofs.append(1)
    if space == NormSpace.H2A0:
        dofs += list(matrices.trace_indices)
    return dofs


def norm_equivalence_check(matrices: SystemMatrices, coeff: DegeneracyCoefficient, degeneracy: DegeneracyClass,
                           space: NormSpace, u: np.ndarray, tol: float = 1e-6) -> NormEquivalenceReport:
    """
    Evaluate the inequality chains between ||u||, ||u'||, ||sqrt(a) u''|| and |u'(1)|.

    H2a0: ||u||^2 <= ||u'||^2 <= ||sqrt(a)u''||^2 / (a(1)(2-K)).
    K2a0: ||u||^2 <= ||u'||^2 <= 2(|u'(1)|^2 + ||sqrt(a)u''||^2/(a(1)(2-K)))
          <= 2 max{1, 1/(a(1)(2-K))} ||u||_{2,o}^2, together with the
          bounds of ||u||_2 and ||u||_{2,a} by ||u||_{2,o}.
    """
    space = NormSpace(space)
    u = np.asarray(u, dtype=float)
    essential = _essential_dofs(matrices, degeneracy, space)
    scale = max(1.0, float(np.max(np.abs(u)))) if u.size else 1.0
    violated = [i for i in essential if abs(u[i]) > 1e-12 * scale]
    if violated:
        raise PreconditionError(f"Vector violates the {space.value} constraints at DOFs {violated}")

    a_one = coeff.at_one()
    norm_const = 1.0 / (a_one * (2.0 - degeneracy.K))
    l2 = float(u @ (matrices.M @ u))
    slope = float(u @ (matrices.G @ u))
    weighted = float(u @ (matrices.S @ u))
    slope_one = float(u[matrices.mesh.rotation_dof_at_one] ** 2)

    def link(name: str, lhs: float, rhs: float) -> NormInequality:
        return NormInequality(name=name, lhs=lhs, rhs=rhs, holds=lhs <= rhs * (1.0 + tol) + 1e-14 * scale**2)

    chain = [link("l2 <= slope", l2, slope)]
    if space == NormSpace.H2A0:
        chain.append(link("slope <= weighted/(a(1)(2-K))", slope, norm_const * weighted))
    else:
        middle = 2.0 * (slope_one + norm_const * weighted)
        circ = slope_one + weighted
        chain.append(link("slope <= 2(u'(1)^2 + weighted/(a(1)(2-K)))", slope, middle))
        chain.append(link("... <= 2 max{1, 1/(a(1)(2-K))} ||u||_2o^2", middle, 2.0 * max(1.0, norm_const) * circ))
        chain.append(link("||u||_2^2 <= max{2, 2/(a(1)(2-K)) + 1} ||u||_2o^2",
                          l2 + weighted, max(2.0, 2.0 * norm_const + 1.0) * circ))
        chain.append(link("||u||_2a^2 <= max{4, 4/(a(1)(2-K)) + 1} ||u||_2o^2",
                          l2 + slope + weighted, max(4.0, 4.0 * norm_const + 1.0) * circ))

    return NormEquivalenceReport(space=space, l2_sq=l2, slope_sq=slope, weighted_sq=weighted,
                                 slope_at_one_sq=slope_one, chain=chain)
