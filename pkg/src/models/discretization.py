"""
Data models for the cubic-Hermite beam discretization.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np
import scipy.sparse as sps
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .coefficient import DegeneracyClass


class Grading(str, Enum):
    """Mesh grading."""
    UNIFORM = "uniform"
    GEOMETRIC = "geometric"
    POWER = "power"


class RegimeKind(str, Enum):
    """Boundary-condition regime at x = 1."""
    ADJOINT = "adjoint"
    CONTROLLED = "controlled"
    FEEDBACK = "feedback"


class BoundaryRegime(BaseModel):
    """Model for a boundary regime; beta and gamma only matter for feedback."""

    model_config = ConfigDict(frozen=True)

    kind: RegimeKind = Field(default=RegimeKind.ADJOINT, description="Regime at x = 1")
    beta: float = Field(default=0.0, ge=0.0, description="Boundary stiffness on y(t,1)")
    gamma: float = Field(default=0.0, ge=0.0, description="Boundary stiffness on y_x(t,1)")

    @model_validator(mode="after")
    def _only_feedback_has_parameters(self) -> "BoundaryRegime":
        if self.kind != RegimeKind.FEEDBACK and (self.beta or self.gamma):
            raise ValueError(f"beta/gamma are only meaningful for the feedback regime, not {self.kind.value}")
        return self

    @classmethod
    def adjoint(cls) -> "BoundaryRegime":
        return cls(kind=RegimeKind.ADJOINT)

    @classmethod
    def controlled(cls) -> "BoundaryRegime":
        return cls(kind=RegimeKind.CONTROLLED)

    @classmethod
    def feedback(cls, beta: float, gamma: float) -> "BoundaryRegime":
        return cls(kind=RegimeKind.FEEDBACK, beta=beta, gamma=gamma)


@dataclass(frozen=True)
class BeamMesh:
    """Sorted nodes 0 = x_0 < ... < x_n = 1. Node i carries DOFs 2i (value) and 2i+1 (slope)."""

    nodes: np.ndarray
    grading: Grading = Grading.UNIFORM

    @property
    def n_elements(self) -> int:
        return len(self.nodes) - 1

    @property
    def n_dofs(self) -> int:
        return 2 * len(self.nodes)

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.nodes)

    @property
    def h(self) -> float:
        """Largest element width."""
        return float(np.max(self.widths))

    @property
    def element_dofs(self) -> np.ndarray:
        """(n_elements, 4) array of global DOFs per element: w_i, th_i, w_j, th_j."""
        first = 2 * np.arange(self.n_elements)
        return np.stack([first, first + 1, first + 2, first + 3], axis=1)

    @property
    def value_dof_at_one(self) -> int:
        return 2 * self.n_elements

    @property
    def rotation_dof_at_one(self) -> int:
        return 2 * self.n_elements + 1


@dataclass
class SystemMatrices:
    """Assembled matrices on the full DOF set plus the DOF partition of the regime.

    M: mass, S: weighted stiffness, B: boundary stiffness, D: boundary damping,
    G: slope Gram matrix. ``driven`` is the rotation DOF at x = 1 in the
    controlled regime, otherwise None.
    """

    mesh: BeamMesh
    degeneracy: DegeneracyClass
    regime: BoundaryRegime
    M: sps.csr_matrix
    S: sps.csr_matrix
    B: sps.csr_matrix
    D: sps.csr_matrix
    G: sps.csr_matrix
    free: np.ndarray
    constrained: np.ndarray
    driven: Optional[int] = None
    a_one: float = 1.0
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def stiffness(self) -> sps.csr_matrix:
        """S + B."""
        return (self.S + self.B).tocsr()

    @property
    def trace_indices(self) -> tuple:
        return self.mesh.value_dof_at_one, self.mesh.rotation_dof_at_one

    @property
    def n_free(self) -> int:
        return len(self.free)

    def restrict(self, A: sps.spmatrix) -> sps.csc_matrix:
        """Free-free block of a full matrix."""
        return A.tocsr()[self.free][:, self.free].tocsc()

    def expand(self, free_values: np.ndarray, driven_value: float = 0.0) -> np.ndarray:
        """Full DOF vector from free values; constrained DOFs are zero."""
        full = np.zeros(self.mesh.n_dofs)
        full[self.free] = free_values
        if self.driven is not None:
            full[self.driven] = driven_value
        return full
