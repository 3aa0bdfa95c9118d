"""
Report models emitted by the services and written as JSON by the CLI.
"""

from enum import Enum
from typing import List, Optional
from pydantic import BaseModel, Field


class IdentityResidual(BaseModel):
    """Model for the residual of an energy identity."""

    identity: str = Field(..., description="Identity name")
    lhs: float = Field(..., description="Left-hand side")
    rhs: float = Field(..., description="Right-hand side")
    residual: float = Field(..., description="|lhs - rhs| / max(1, |lhs|, |rhs|)")
    h: float = Field(..., description="Mesh size")
    dt: float = Field(..., description="Time step")

    @classmethod
    def from_sides(cls, identity: str, lhs: float, rhs: float, h: float, dt: float) -> "IdentityResidual":
        lhs, rhs = float(lhs), float(rhs)
        residual = abs(lhs - rhs) / max(1.0, abs(lhs), abs(rhs))
        return cls(identity=identity, lhs=lhs, rhs=rhs, residual=residual, h=float(h), dt=float(dt))


class RefinementStudy(BaseModel):
    """Model for residuals over a sequence of (h, dt) refinements."""

    identity: str = Field(..., description="Identity name")
    residuals: List[IdentityResidual] = Field(default_factory=list, description="One residual per level")
    rates: List[float] = Field(default_factory=list, description="Observed rates log2(r_k / r_k+1)")


class HardyPoincareReport(BaseModel):
    """Model for a Hardy-Poincare check."""

    theta: float = Field(..., description="Exponent with a/x^theta nonincreasing")
    c_hp: float = Field(..., description="4/(1-theta)^2")
    lhs: float = Field(..., description="int a w^2 / x^2")
    rhs: float = Field(..., description="C_HP int a (w')^2")
    holds: bool = Field(..., description="lhs <= rhs (1 + tol)")


class NormInequality(BaseModel):
    """Model for one link of an inequality chain."""

    name: str = Field(..., description="Inequality")
    lhs: float = Field(..., description="Smaller side")
    rhs: float = Field(..., description="Larger side")
    holds: bool = Field(..., description="lhs <= rhs within tolerance")


class NormSpace(str, Enum):
    """Weighted spaces with their essential constraints."""
    H2A0 = "H2a0"
    K2A0 = "K2a0"


class NormEquivalenceReport(BaseModel):
    """Model for a discrete norm-equivalence check."""

    space: NormSpace = Field(..., description="Space whose constraints the vector satisfies")
    l2_sq: float = Field(..., description="||u||^2")
    slope_sq: float = Field(..., description="||u'||^2")
    weighted_sq: float = Field(..., description="||sqrt(a) u''||^2")
    slope_at_one_sq: float = Field(..., description="|u'(1)|^2")
    chain: List[NormInequality] = Field(default_factory=list, description="Checked inequalities")

    @property
    def holds(self) -> bool:
        return all(link.holds for link in self.chain)


class TrialResult(BaseModel):
    """Model for one observability trial."""

    label: str = Field(..., description="Trial description")
    initial_energy: float = Field(..., description="E(0)")
    observed: float = Field(..., description="int_0^T y_xx(t,1)^2 dt")
    quotient: float = Field(..., description="observed / E(0)")
    scaled_quotient: float = Field(..., description="a(1) observed / E(0)")
    satisfied: bool = Field(..., description="scaled quotient above the lower bound within slack")
    below_upper_bound: bool = Field(..., description="scaled quotient below the upper bound within slack")
    resolved: bool = Field(True, description="Eigenmode of the mesh; random data are reported, not asserted")


class ObservabilityReport(BaseModel):
    """Model for observability results."""

    T: float = Field(..., description="Observation time")
    T0: float = Field(..., description="Threshold time above which the lower bound is positive")
    observed: float = Field(..., description="Boundary energy of the minimizing trial")
    initial_energy: float = Field(..., description="E(0) of the minimizing trial")
    quotient: float = Field(..., description="Minimal observed / E(0)")
    scaled_quotient: float = Field(..., description="Minimal a(1) observed / E(0)")
    empirical_CT: float = Field(..., description="Minimal scaled quotient over the trials")
    analytic_CT_lower_bound: float = Field(..., description="T min{6-3K,K+2} - (K+4) max{1, 1/(a(1)(2-K))}")
    analytic_upper_bound: float = Field(..., description="Upper observation constant")
    slack: float = Field(..., description="Relative discretization slack")
    satisfied: bool = Field(..., description="Every resolved trial satisfies the lower bound within slack")
    unresolved_misses: List[str] = Field(default_factory=list, description="Random trials below the lower bound")
    trials: List[TrialResult] = Field(default_factory=list, description="Per-trial results")


class ControlReport(BaseModel):
    """Model for HUM control metadata."""

    T: float = Field(..., description="Control time")
    dt: float = Field(..., description="Time step")
    cg_iterations: int = Field(..., description="Conjugate-gradient iterations")
    cg_residual: float = Field(..., description="Final relative residual in the dual adjoint-energy norm")
    converged: bool = Field(..., description="Residual below tolerance")
    terminal_energy_ratio: float = Field(..., description="E(T)/E(0) of the controlled run")
    verified_energy_ratio: Optional[float] = Field(None, description="Ratio from an independent forward run")
    cost: float = Field(..., description="int f^2 dt")
    sign: int = Field(..., description="Global sign applied to the adjoint trace")
    transposition_rhs: float = Field(..., description="Transposition functional at the optimal adjoint data")
    gramian_pairing: float = Field(0.0, description="Lambda(V*, V*) = a(1) int v_xx(t,1)^2 at the optimal adjoint data")


class EllipticReport(BaseModel):
    """Model for the boundary elliptic problem and its estimates."""

    lam: float = Field(..., description="Load on z(1)")
    mu: float = Field(..., description="Load on z'(1)")
    beta: float = Field(..., description="Boundary stiffness on z(1)")
    gamma: float = Field(..., description="Boundary stiffness on z'(1)")
    triple_norm_sq: float = Field(..., description="int a z''^2 + beta z(1)^2 + gamma z'(1)^2")
    l2_sq: float = Field(..., description="||z||^2")
    bound_C: Optional[float] = Field(None, description="C^2_{a,K,lambda,mu}; absent when gamma = 0")
    l2_bound: Optional[float] = Field(None, description="C1 C2 C^2")
    wd_bound_C: Optional[float] = Field(None, description="WD constant A_gamma (|lambda| sqrt(C1) + |mu|)^2")
    wd_l2_bound: Optional[float] = Field(None, description="C1 A_gamma C_wd^2")
    energy_holds: bool = Field(..., description="|||z|||^2 within the available bounds")
    l2_holds: bool = Field(..., description="||z||^2 within the available bounds")
    residual_value_bc: float = Field(..., description="beta z(1) - (a z'')'(1) - lambda")
    residual_rotation_bc: float = Field(..., description="gamma z'(1) + (a z'')(1) - mu")
    interior_residual: float = Field(..., description="Relative deviation of a z'' from a linear function")


class WDVariants(BaseModel):
    """Model for the weakly degenerate constant chain."""

    inv_a_l1: float = Field(..., description="int_0^1 dx/a")
    A_gamma: float = Field(..., description="A_gamma")
    C_beta: float = Field(..., description="C_beta")
    C_gamma: float = Field(..., description="C_gamma")
    nu_wd: float = Field(..., description="Upper end of the admissible delta interval")
    C_delta_wd: float = Field(..., description="C_delta at the chosen delta")
    theta_const: float = Field(..., description="theta with C_gamma in place of 2/gamma")
    rho_const: float = Field(..., description="rho with C_gamma in place of 2/gamma")
    delta_star: float = Field(..., description="Chosen delta")
    C3: float = Field(..., description="C3")
    C4: float = Field(..., description="C4")
    C5: float = Field(..., description="C5")
    M: float = Field(..., description="Decay time scale")


class ConstantsReport(BaseModel):
    """Model for every explicit constant of the controllability and stabilization estimates."""

    K: float = Field(..., description="sup x|a'|/a")
    a_one: float = Field(..., description="a(1)")
    C_HP: Optional[float] = Field(None, description="4/(1-K)^2 (WD only)")
    norm_const: float = Field(..., description="1/(a(1)(2-K))")
    T0: float = Field(..., description="Observability/controllability threshold time")
    CT_lower_slope: float = Field(..., description="min{6-3K, K+2}")
    CT_lower_offset: float = Field(..., description="(K+4) max{1, 1/(a(1)(2-K))}")
    T: Optional[float] = Field(None, description="Requested control time")
    CT_lower: Optional[float] = Field(None, description="CT lower bound at T")
    cost_cT: Optional[float] = Field(None, description="1/CT_lower(T) for T > T0")
    observation_upper: Optional[float] = Field(None, description="Upper observation constant at T")
    beta: Optional[float] = Field(None, description="Feedback stiffness on y(t,1)")
    gamma: Optional[float] = Field(None, description="Feedback stiffness on y_x(t,1)")
    chain: Optional[str] = Field(None, description="'general' or 'weakly_degenerate'")
    eps0: Optional[float] = Field(None, description="epsilon_0")
    theta_const: Optional[float] = Field(None, description="theta")
    rho_const: Optional[float] = Field(None, description="rho")
    sigma_const: Optional[float] = Field(None, description="sigma")
    C1: Optional[float] = Field(None, description="2 max{1, 1/(a(1)(2-K))}")
    C2: Optional[float] = Field(None, description="max{1, 1/gamma}")
    nu: Optional[float] = Field(None, description="Upper end of the admissible delta interval")
    delta_star: Optional[float] = Field(None, description="Chosen delta")
    C_delta: Optional[float] = Field(None, description="C_delta at the chosen delta")
    C3: Optional[float] = Field(None, description="C3")
    C4: Optional[float] = Field(None, description="C4")
    C5: Optional[float] = Field(None, description="C5")
    M: Optional[float] = Field(None, description="Decay time scale in E(t) <= E(0) e^{1 - t/M}")
    wd_variants: Optional[WDVariants] = Field(None, description="Weakly degenerate chain")

    def ct_lower(self, T: float) -> float:
        return T * self.CT_lower_slope - self.CT_lower_offset
