"""
Run configuration models parsed from a JSON file.
"""

from enum import Enum
from pathlib import Path
from typing import List, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from ..errors import ConfigError
from .coefficient import CoefficientSpec, DegeneracyClass
from .discretization import BoundaryRegime, Grading, RegimeKind


class MeshConfig(BaseModel):
    """Model for the finite-element mesh."""

    model_config = ConfigDict(extra="forbid")

    n_elements: int = Field(default=32, ge=4, description="Number of elements")
    grading: Grading = Field(default=Grading.UNIFORM, description="Node distribution")
    ratio: float = Field(default=0.7, gt=0.0, lt=1.0, description="Width ratio for geometric grading")
    exponent: float = Field(default=2.0, ge=1.0, description="Node exponent for power grading, x_i = (i/n)^exponent")


class RegimeConfig(BaseModel):
    """Model for the boundary regime at x = 1."""

    model_config = ConfigDict(extra="forbid")

    kind: RegimeKind = Field(default=RegimeKind.ADJOINT, description="adjoint, controlled or feedback")
    beta: float = Field(default=0.0, ge=0.0, description="Feedback stiffness on y(t,1)")
    gamma: float = Field(default=0.0, ge=0.0, description="Feedback stiffness on y_x(t,1)")

    @model_validator(mode="after")
    def _check_stiffness(self) -> "RegimeConfig":
        if self.kind != RegimeKind.FEEDBACK and (self.beta or self.gamma):
            raise ValueError(f"beta and gamma apply to the feedback regime only, got kind '{self.kind.value}'")
        return self

    def to_regime(self) -> BoundaryRegime:
        if self.kind == RegimeKind.FEEDBACK:
            return BoundaryRegime.feedback(self.beta, self.gamma)
        return BoundaryRegime(kind=self.kind)


class InitialKind(str, Enum):
    """How initial data are specified."""
    EIGENMODE = "eigenmode"
    POLYNOMIAL = "polynomial"
    FILE = "file"
    RANDOM = "random"


class InitialDataConfig(BaseModel):
    """Model for initial (or terminal) data."""

    model_config = ConfigDict(extra="forbid")

    kind: InitialKind = Field(default=InitialKind.EIGENMODE, description="Data source")
    mode: int = Field(default=0, ge=0, description="Eigenmode index (0 = lowest)")
    displacement: List[float] = Field(default_factory=list, description="Ascending polynomial coefficients of y(0)")
    velocity: List[float] = Field(default_factory=list, description="Ascending polynomial coefficients of y_t(0)")
    path: Optional[str] = Field(None, description="CSV with columns u, v over the full DOF set")

    @model_validator(mode="after")
    def _check_source(self) -> "InitialDataConfig":
        if self.kind == InitialKind.FILE and not self.path:
            raise ValueError("file initial data requires 'path'")
        return self


class EllipticConfig(BaseModel):
    """Model for the boundary loads of the elliptic problem."""

    model_config = ConfigDict(extra="forbid")

    lam: float = Field(default=1.0, description="Load on z(1)")
    mu: float = Field(default=0.0, description="Load on z'(1)")


class RunConfig(BaseModel):
    """Model for one command run."""

    model_config = ConfigDict(extra="forbid")

    coefficient: CoefficientSpec = Field(..., description="Coefficient a")
    class_override: Optional[DegeneracyClass] = Field(None, description="Skip classification and use this class")
    mesh: MeshConfig = Field(default_factory=MeshConfig, description="Mesh")
    dt: Optional[float] = Field(None, gt=0.0, description="Time step; defaults to the largest element width")
    T: float = Field(default=2.0, gt=0.0, description="Time horizon")
    regime: RegimeConfig = Field(default_factory=RegimeConfig, description="Boundary regime")
    initial: InitialDataConfig = Field(default_factory=InitialDataConfig, description="Initial data")
    elliptic: EllipticConfig = Field(default_factory=EllipticConfig, description="Elliptic loads")
    cg_tol: float = Field(default=1e-8, gt=0.0, description="Relative CG tolerance")
    max_iter: int = Field(default=1000, ge=1, description="CG iteration cap")
    n_trials: int = Field(default=5, ge=1, description="Eigenmode (and random) observability trials")
    slack: float = Field(default=0.10, ge=0.0, lt=1.0, description="Relative discretization slack")
    delta: Optional[float] = Field(None, gt=0.0, description="Override for the chosen delta")
    eps0: Optional[float] = Field(None, gt=0.0, description="Override for eps0 = 2 - K")
    horizon_factor: float = Field(default=5.0, gt=0.0, description="Decay horizon in units of M")
    decay_dt: float = Field(default=0.05, gt=0.0, description="Target step of decay runs")
    levels: List[int] = Field(default_factory=lambda: [16, 32, 64], description="Element counts of refinement studies")
    seed: int = Field(default=0, description="Seed for random trials and data")


def load_config(path: Path) -> RunConfig:
    """
    Read and validate a run configuration.

    Raises:
        ConfigError: unreadable file or invalid content
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"Cannot read config {path}: {e}")
    try:
        return RunConfig.model_validate_json(text)
    except ValidationError as e:
        raise ConfigError(f"Invalid config {path}: {e}")
