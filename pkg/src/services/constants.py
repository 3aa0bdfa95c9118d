"""
Explicit constants of the observability, controllability and stabilization
estimates, the choice of delta and the exponential decay envelope.

All max/min expressions are transcribed exactly; abbreviations used below:

    N   = 1/(a(1)(2-K))
    C1  = 2 max{1, N}
    C2  = max{1, 1/gamma}
"""

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from ..errors import InfeasibleConstantsError, OPEN_PROBLEM_SD_FEEDBACK, OutOfScopeError, PreconditionError
from ..models.coefficient import DegeneracyClass, DegeneracyKind
from ..models.reports import ConstantsReport, WDVariants
from .coefficient import DegeneracyCoefficient, integral_one_over_a, max_abs_derivative

logger = logging.getLogger(__name__)

DELTA_GRID_POINTS = 1000
DELTA_GRID_DECADES = 6


def norm_constant(a_one: float, K: float) -> float:
    """1/(a(1)(2-K))."""
    return 1.0 / (a_one * (2.0 - K))


def controllability_constants(coeff: DegeneracyCoefficient, degeneracy: DegeneracyClass,
                              T: Optional[float] = None) -> ConstantsReport:
    """
    Threshold time T0, the affine lower bound CT_lower(T) and, for T > T0, the cost 1/CT_lower(T).

        T0 = (K+4)/min{6-3K, K+2} max{1, N}
        CT_lower(T) = T min{6-3K, K+2} - (K+4) max{1, N}
    """
    K = degeneracy.K
    a_one = coeff.at_one()
    N = norm_constant(a_one, K)
    slope = min(6.0 - 3.0 * K, K + 2.0)
    offset = (K + 4.0) * max(1.0, N)

    report = ConstantsReport(
        K=K,
        a_one=a_one,
        C_HP=4.0 / (1.0 - K) ** 2 if degeneracy.kind == DegeneracyKind.WD else None,
        norm_const=N,
        T0=(K + 4.0) / slope * max(1.0, N),
        CT_lower_slope=slope,
        CT_lower_offset=offset,
    )
    if T is not None:
        report.T = T
        report.CT_lower = report.ct_lower(T)
        report.cost_cT = 1.0 / report.CT_lower if T > report.T0 else None
        report.observation_upper = observation_upper_bound(coeff, degeneracy, T)
    return report


def control_cost(report: ConstantsReport, T: float) -> float:
    """1/CT_lower(T); undefined for T <= T0."""
    if T <= report.T0:
        raise PreconditionError(f"Cost undefined for T={T} <= T0={report.T0}")
    return 1.0 / report.ct_lower(T)


def observation_upper_bound(coeff: DegeneracyCoefficient, degeneracy: DegeneracyClass, T: float) -> float:
    """
    Constant C with a(1) int_0^T y_xx(t,1)^2 <= C E(0):

        4 (T max{1, (6+K)/2 + c_a} + max{N, 1})

    with c_a = 4K/(1-K)^2 (WD) or max|a'|/(a(1)(2-K)) (SD).
    """
    K = degeneracy.K
    a_one = coeff.at_one()
    N = norm_constant(a_one, K)
    if degeneracy.kind == DegeneracyKind.WD:
        c_a = 4.0 * K / (1.0 - K) ** 2
    else:
        c_a = max_abs_derivative(coeff) * N
    return 4.0 * (T * max(1.0, (6.0 + K) / 2.0 + c_a) + max(N, 1.0))


@dataclass
class StabilityChain:
    """
    The delta-dependent part of the decay constant M for one chain.

    ``general`` uses C2 = max{1, 1/gamma}; the weakly degenerate chain uses
    A_gamma, C_beta, C_gamma built from the L1 norm of 1/a.
    """

    name: str
    K: float
    a_one: float
    beta: float
    gamma: float
    eps0: float
    C1: float
    theta_const: float
    rho_const: float
    sigma_const: float
    boundary_term: float
    nu: float
    delta_rate: float
    c5_fixed: float
    c5_inverse_delta: float

    def C_delta(self, delta):
        return 1.0 - self.delta_rate * delta

    def C3(self, delta):
        K, b, g, e = self.K, self.beta, self.gamma, self.eps0
        first = K / 4.0 + K * b / 2.0 + b + e * b / 2.0
        second = b + 1.0 + 2.0 * g**2 / self.a_one + e * g / 2.0
        return (first + second) * 2.0 / self.C_delta(delta)

    def C5(self, delta):
        K, b, g, e = self.K, self.beta, self.gamma, self.eps0
        factor = K / 4.0 + K * b / 2.0 + 2.0 * b + e * b / 2.0 + 1.0 + 2.0 * g**2 / self.a_one + e * g / 2.0
        bracket = self.c5_fixed + 1.0 / delta + self.c5_inverse_delta / delta
        return bracket * factor / self.C_delta(delta)

    def C4(self, delta):
        return self.theta_const + self.rho_const + self.sigma_const + self.boundary_term + self.C5(delta)

    def M(self, delta):
        return self.C4(delta) / (self.eps0 - delta * self.C3(delta))


def _sigma(K: float, a_one: float) -> float:
    return max(K / 4.0 + 2.0, 2.0 / a_one)


def general_chain(K: float, a_one: float, beta: float, gamma: float, eps0: float) -> StabilityChain:
    """Constant chain for beta, gamma > 0."""
    N = norm_constant(a_one, K)
    C1 = 2.0 * max(1.0, N)
    C2 = max(1.0, 1.0 / gamma)
    m1 = max(1.0, C1)
    return StabilityChain(
        name="general",
        K=K, a_one=a_one, beta=beta, gamma=gamma, eps0=eps0, C1=C1,
        theta_const=K * max(1.0, 2.0 * N, 2.0 / gamma),
        rho_const=4.0 * max(2.0 / gamma, 2.0 * N, 1.0),
        sigma_const=_sigma(K, a_one),
        boundary_term=(2.0 - K / 2.0) / gamma,
        nu=beta * gamma / (2.0 * C2 * m1 * (beta + gamma)),
        delta_rate=2.0 * C2 * m1 * (1.0 / beta + 1.0 / gamma),
        c5_fixed=2.0 + 4.0 * C1**2 * C2**2 / beta + 4.0 * C1 * C2**2 / gamma,
        c5_inverse_delta=2.0 * C1 * C2**2 * m1,
    )


def wd_coefficients(inv_a_l1: float, beta: float, gamma: float) -> Tuple[float, float, float]:
    """(A_gamma, C_beta, C_gamma) of the weakly degenerate chain."""
    A_gamma = min(max(1.0, 1.0 / gamma), 1.0 + inv_a_l1) if gamma != 0.0 else 1.0 + inv_a_l1
    C_beta = 2.0 * min(inv_a_l1, 1.0 / beta) if beta != 0.0 else 2.0 * inv_a_l1
    C_gamma = 2.0 * min(inv_a_l1, 1.0 / gamma) if gamma != 0.0 else 2.0 * inv_a_l1
    return A_gamma, C_beta, C_gamma


def wd_chain(K: float, a_one: float, beta: float, gamma: float, eps0: float, inv_a_l1: float) -> StabilityChain:
    """Constant chain for weakly degenerate a with beta, gamma >= 0."""
    N = norm_constant(a_one, K)
    C1 = 2.0 * max(1.0, N)
    m1 = max(1.0, C1)
    A_gamma, C_beta, C_gamma = wd_coefficients(inv_a_l1, beta, gamma)
    return StabilityChain(
        name="weakly_degenerate",
        K=K, a_one=a_one, beta=beta, gamma=gamma, eps0=eps0, C1=C1,
        theta_const=K * max(1.0, 2.0 * N, C_gamma),
        rho_const=4.0 * max(C_gamma, 2.0 * N, 1.0),
        sigma_const=_sigma(K, a_one),
        boundary_term=(2.0 - K / 2.0) * C_gamma / 2.0,
        nu=1.0 / (m1 * (C_beta + C_gamma) * A_gamma),
        delta_rate=m1 * (C_beta + C_gamma) * A_gamma,
        c5_fixed=2.0 + 2.0 * C1**2 * A_gamma**2 * C_beta + 2.0 * C1 * A_gamma**2 * C_gamma,
        c5_inverse_delta=2.0 * C1 * A_gamma**2 * m1,
    )


def choose_delta(chain: StabilityChain, n_points: int = DELTA_GRID_POINTS) -> Tuple[float, float]:
    """
    Minimize M(delta) over a logarithmic grid in (0, nu).

    Candidates with C_delta <= 0 or delta >= eps0/C3(delta) are discarded.

    Returns:
        (delta_star, M)
    """
    deltas = np.geomspace(chain.nu * 10.0 ** (-DELTA_GRID_DECADES), chain.nu, n_points, endpoint=False)
    c_delta = chain.C_delta(deltas)
    positive = c_delta > 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        c3 = chain.C3(deltas)
        below = positive & (deltas * c3 < chain.eps0)
    if not np.any(positive):
        raise InfeasibleConstantsError(f"{chain.name} chain: C_delta <= 0 on all of (0, nu={chain.nu:g})")
    if not np.any(below):
        raise InfeasibleConstantsError(f"{chain.name} chain: delta < eps0/C3(delta) fails on all of (0, nu={chain.nu:g})")

    with np.errstate(divide="ignore", invalid="ignore"):
        m_values = np.where(below, chain.M(deltas), np.inf)
    best = int(np.argmin(m_values))
    return float(deltas[best]), float(m_values[best])


def stability_constants(coeff: DegeneracyCoefficient, degeneracy: DegeneracyClass, beta: float, gamma: float,
                        eps0: Optional[float] = None, delta: Optional[float] = None,
                        T: Optional[float] = None) -> ConstantsReport:
    """
    Evaluate the stabilization constant chain and the decay time M.

    Args:
        coeff (DegeneracyCoefficient): The coefficient
        degeneracy (DegeneracyClass): Its class
        beta (float): Feedback stiffness on y(t,1)
        gamma (float): Feedback stiffness on y_x(t,1)
        eps0 (Optional[float]): Override for eps0 = 2 - K
        delta (Optional[float]): Override for the grid-chosen delta
        T (Optional[float]): Control time for the controllability fields

    Raises:
        OutOfScopeError: SD with beta = 0 or gamma = 0
    """
    if beta < 0.0 or gamma < 0.0:
        raise ValueError(f"beta and gamma must be nonnegative, got {beta}, {gamma}")
    is_weak = degeneracy.kind == DegeneracyKind.WD
    if not is_weak and (beta == 0.0 or gamma == 0.0):
        raise OutOfScopeError(f"Stabilization with beta={beta}, gamma={gamma} for SD coefficient",
                              citation=OPEN_PROBLEM_SD_FEEDBACK)

    K = degeneracy.K
    eps0 = 2.0 - K if eps0 is None else float(eps0)
    if not 0.0 < eps0 <= 2.0 - K:
        raise PreconditionError(f"eps0 must lie in (0, 2-K] = (0, {2.0 - K:g}], got {eps0}")

    report = controllability_constants(coeff, degeneracy, T)
    a_one = report.a_one
    report.beta, report.gamma, report.eps0 = beta, gamma, eps0
    report.sigma_const = _sigma(K, a_one)
    report.C1 = 2.0 * max(1.0, report.norm_const)

    def resolve(chain: StabilityChain) -> Tuple[float, float]:
        if delta is None:
            return choose_delta(chain)
        upper = min(chain.nu, chain.eps0 / chain.C3(delta)) if chain.C_delta(delta) > 0 else 0.0
        if not 0.0 < delta < upper:
            raise InfeasibleConstantsError(f"delta={delta} outside the admissible interval (0, {upper:g})")
        return delta, chain.M(delta)

    primary = None
    if beta > 0.0 and gamma > 0.0:
        primary = general_chain(K, a_one, beta, gamma, eps0)
        report.C2 = max(1.0, 1.0 / gamma)

    if is_weak:
        inv_a_l1 = integral_one_over_a(coeff, degeneracy)
        chain = wd_chain(K, a_one, beta, gamma, eps0, inv_a_l1)
        d_wd, m_wd = resolve(chain)
        A_gamma, C_beta, C_gamma = wd_coefficients(inv_a_l1, beta, gamma)
        report.wd_variants = WDVariants(
            inv_a_l1=inv_a_l1, A_gamma=A_gamma, C_beta=C_beta, C_gamma=C_gamma,
            nu_wd=chain.nu, C_delta_wd=chain.C_delta(d_wd),
            theta_const=chain.theta_const, rho_const=chain.rho_const,
            delta_star=d_wd, C3=chain.C3(d_wd), C4=chain.C4(d_wd), C5=chain.C5(d_wd), M=m_wd,
        )
        if primary is None:
            primary = chain

    delta_star, M = resolve(primary)
    report.chain = primary.name
    report.theta_const = primary.theta_const
    report.rho_const = primary.rho_const
    report.nu = primary.nu
    report.delta_star = delta_star
    report.C_delta = primary.C_delta(delta_star)
    report.C3 = primary.C3(delta_star)
    report.C4 = primary.C4(delta_star)
    report.C5 = primary.C5(delta_star)
    report.M = M

    logger.info(f"Stability constants ({primary.name} chain): delta*={delta_star:.4g}, M={M:.6g}")
    return report


def decay_envelope(report: ConstantsReport, E0: float) -> Callable[[np.ndarray], np.ndarray]:
    """t -> E0 exp(1 - t/M)."""
    if report.M is None:
        raise PreconditionError("Report has no decay constant M; run stability_constants first")
    M = report.M
    return lambda t: E0 * np.exp(1.0 - np.asarray(t, dtype=float) / M)
