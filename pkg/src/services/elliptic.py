"""
The boundary elliptic problem

    int a z'' phi'' + beta z(1) phi(1) + gamma z'(1) phi'(1) = lam phi(1) + mu phi'(1)

on the feedback space, its a priori estimates and a closed-form solution for
power-law coefficients.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import pandas as pd
from numpy.polynomial import polynomial as P
from scipy.sparse.linalg import spsolve

from ..errors import OPEN_PROBLEM_SD_FEEDBACK, OutOfScopeError
from ..models.coefficient import DegeneracyClass, DegeneracyKind
from ..models.discretization import BeamMesh, BoundaryRegime, SystemMatrices
from ..models.reports import EllipticReport
from .coefficient import DegeneracyCoefficient, integral_one_over_a
from .constants import norm_constant, wd_coefficients
from .discretization import GAUSS_POINTS, QuadratureSampler, gauss_rule, assemble, hermite_basis

logger = logging.getLogger(__name__)

ESTIMATE_TOLERANCE = 1e-8
RECOVERY_ELEMENTS = 2


@dataclass
class EllipticSolution:
    """Discrete solution with its data and |||z|||^2 = z^T (S + B) z."""

    z: np.ndarray
    lam: float
    mu: float
    beta: float
    gamma: float
    triple_norm_sq: float
    matrices: SystemMatrices

    @property
    def mesh(self) -> BeamMesh:
        return self.matrices.mesh

    @property
    def l2_sq(self) -> float:
        return float(self.z @ (self.matrices.M @ self.z))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"x": self.mesh.nodes, "z": self.z[0::2], "z'": self.z[1::2]})


def solve_boundary_elliptic(coeff: DegeneracyCoefficient, degeneracy: DegeneracyClass, mesh: BeamMesh,
                            beta: float, gamma: float, lam: float, mu: float) -> EllipticSolution:
    """
    Solve (S + B) z = lam e_value(1) + mu e_rotation(1) on the free DOFs.

    Raises:
        OutOfScopeError: gamma = 0 with an SD coefficient
        ValueError: negative beta or gamma
    """
    if beta < 0.0 or gamma < 0.0:
        raise ValueError(f"beta and gamma must be nonnegative, got {beta}, {gamma}")
    if gamma == 0.0 and degeneracy.kind == DegeneracyKind.SD:
        raise OutOfScopeError("Boundary elliptic problem with gamma = 0 for SD coefficient",
                              citation=OPEN_PROBLEM_SD_FEEDBACK)

    matrices = assemble(coeff, degeneracy, mesh, BoundaryRegime.feedback(beta, gamma), feedback_scope=False)
    load = np.zeros(mesh.n_dofs)
    load[mesh.value_dof_at_one] = lam
    load[mesh.rotation_dof_at_one] = mu

    free = matrices.free
    K = matrices.restrict(matrices.stiffness)
    z = matrices.expand(np.atleast_1d(spsolve(K, load[free])))
    triple = float(z @ (matrices.stiffness @ z))
    logger.debug(f"Elliptic solve lam={lam}, mu={mu}: |||z|||^2={triple:.6e}")
    return EllipticSolution(z=z, lam=lam, mu=mu, beta=beta, gamma=gamma, triple_norm_sq=triple, matrices=matrices)


def triple_norm_by_quadrature(z: np.ndarray, matrices: SystemMatrices, coeff: DegeneracyCoefficient) -> float:
    """int a (z'')^2 + beta z(1)^2 + gamma z'(1)^2 with graded Gauss quadrature."""
    sampler = QuadratureSampler(matrices.mesh, graded_cells=8)
    zxx = sampler.field(z, 2)
    value, rotation = matrices.trace_indices
    regime = matrices.regime
    return float(sampler.integrate(coeff.evaluate(sampler.x) * zxx**2)
                 + regime.beta * z[value] ** 2 + regime.gamma * z[rotation] ** 2)


def _moment_samples(sol: EllipticSolution, coeff: DegeneracyCoefficient, elements, xi: np.ndarray):
    """x and m = a z'' at local points xi of the given elements."""
    mesh = sol.mesh
    xs, ms = [], []
    for e in elements:
        h = mesh.widths[e]
        x = mesh.nodes[e] + h * xi
        zxx = sol.z[mesh.element_dofs[e]] @ hermite_basis(xi, h, 2)
        xs.append(x)
        ms.append(coeff.evaluate(x) * zxx)
    return np.concatenate(xs), np.concatenate(ms)


def boundary_moments(sol: EllipticSolution, coeff: DegeneracyCoefficient):
    """
    (a z'')(1) and (a z'')'(1) from a quadratic least-squares fit of a z''
    at Gauss points of the last two elements.
    """
    xi, _ = gauss_rule(GAUSS_POINTS)
    n = sol.mesh.n_elements
    x, m = _moment_samples(sol, coeff, range(n - RECOVERY_ELEMENTS, n), xi)
    c = P.polyfit(x - 1.0, m, 2)
    return float(c[0]), float(c[1])


def interior_residual(sol: EllipticSolution, coeff: DegeneracyCoefficient) -> float:
    """Width-weighted relative deviation of a z'' at element midpoints from its best linear fit."""
    mesh = sol.mesh
    x, m = _moment_samples(sol, coeff, range(mesh.n_elements), np.array([0.5]))
    w = np.sqrt(mesh.widths)
    c = P.polyfit(x, m, 1, w=w)
    scale = np.linalg.norm(w * m)
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(w * (m - P.polyval(x, c))) / scale)


def elliptic_estimate_check(sol: EllipticSolution, coeff: DegeneracyCoefficient, degeneracy: DegeneracyClass,
                            tol: float = ESTIMATE_TOLERANCE) -> EllipticReport:
    """
    Check |||z|||^2 <= C^2 and ||z||^2 <= C1 C2 C^2 (general, gamma > 0) and the
    weakly degenerate variant with A_gamma; evaluate the strong-form residuals.
    """
    K = degeneracy.K
    C1 = 2.0 * max(1.0, norm_constant(coeff.at_one(), K))
    load = (abs(sol.lam) * np.sqrt(C1) + abs(sol.mu)) ** 2
    triple, l2 = sol.triple_norm_sq, sol.l2_sq

    bound_C = l2_bound = wd_bound_C = wd_l2_bound = None
    if sol.gamma > 0.0:
        C2 = max(1.0, 1.0 / sol.gamma)
        bound_C = C2 * load
        l2_bound = C1 * C2 * bound_C
    if degeneracy.kind == DegeneracyKind.WD:
        A_gamma, _, _ = wd_coefficients(integral_one_over_a(coeff, degeneracy), sol.beta, sol.gamma)
        wd_bound_C = A_gamma * load
        wd_l2_bound = C1 * A_gamma * wd_bound_C

    def within(value: float, *bounds: Optional[float]) -> bool:
        return all(value <= b * (1.0 + tol) + tol for b in bounds if b is not None)

    mesh = sol.mesh
    m_one, dm_one = boundary_moments(sol, coeff)
    z_one, dz_one = sol.z[mesh.value_dof_at_one], sol.z[mesh.rotation_dof_at_one]
    report = EllipticReport(
        lam=sol.lam, mu=sol.mu, beta=sol.beta, gamma=sol.gamma,
        triple_norm_sq=triple,
        l2_sq=l2,
        bound_C=bound_C,
        l2_bound=l2_bound,
        wd_bound_C=wd_bound_C,
        wd_l2_bound=wd_l2_bound,
        energy_holds=within(triple, bound_C, wd_bound_C),
        l2_holds=within(l2, l2_bound, wd_l2_bound),
        residual_value_bc=float(sol.beta * z_one - dm_one - sol.lam),
        residual_rotation_bc=float(sol.gamma * dz_one + m_one - sol.mu),
        interior_residual=interior_residual(sol, coeff),
    )
    if not (report.energy_holds and report.l2_holds):
        logger.warning(f"Elliptic estimate violated for lam={sol.lam}, mu={sol.mu}")
    return report


@dataclass
class PowerLawEllipticSolution:
    """Closed form of a z'' = c1 + c2 x for a = x^alpha."""

    alpha: float
    c1: float
    c2: float
    c3: float

    def z(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        al = self.alpha
        value = self.c2 * x ** (3 - al) / ((2 - al) * (3 - al)) + self.c3 * x
        if self.c1 != 0.0:
            value = value + self.c1 * x ** (2 - al) / ((1 - al) * (2 - al))
        return value

    def dz(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        al = self.alpha
        value = self.c2 * x ** (2 - al) / (2 - al) + self.c3
        if self.c1 != 0.0:
            value = value + self.c1 * x ** (1 - al) / (1 - al)
        return value

    @property
    def moment(self) -> Callable:
        return lambda x: self.c1 + self.c2 * np.asarray(x, dtype=float)


def power_law_elliptic_solution(alpha: float, kind: DegeneracyKind, beta: float, gamma: float,
                                lam: float, mu: float) -> PowerLawEllipticSolution:
    """
    Exact solution for a = x^alpha.

    WD: z(0) = z'(0) = 0 leaves (c1, c2); SD: z(0) = 0 and (a z'')(0) = c1 = 0
    leave (c2, c3). Both close with

        beta z(1) - c2 = lam,  gamma z'(1) + c1 + c2 = mu.
    """
    al = alpha
    z2 = 1.0 / ((2 - al) * (3 - al))
    dz2 = 1.0 / (2 - al)
    if kind == DegeneracyKind.WD:
        z1 = 1.0 / ((1 - al) * (2 - al))
        dz1 = 1.0 / (1 - al)
        system = np.array([[beta * z1, beta * z2 - 1.0],
                           [gamma * dz1 + 1.0, gamma * dz2 + 1.0]])
        c1, c2 = np.linalg.solve(system, [lam, mu])
        return PowerLawEllipticSolution(alpha=al, c1=float(c1), c2=float(c2), c3=0.0)

    system = np.array([[beta * z2 - 1.0, beta],
                       [gamma * dz2 + 1.0, gamma]])
    c2, c3 = np.linalg.solve(system, [lam, mu])
    return PowerLawEllipticSolution(alpha=al, c1=0.0, c2=float(c2), c3=float(c3))
