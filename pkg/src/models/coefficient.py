"""
Data models for the degenerate coefficient a and its classification.
"""

from enum import Enum
from typing import Optional
from pydantic import BaseModel, ConfigDict, Field, model_validator


class CoefficientForm(str, Enum):
    """Declared form of the coefficient."""
    POWER = "power"
    EXPRESSION = "expression"


class DegeneracyKind(str, Enum):
    """Weakly or strongly degenerate at x = 0."""
    WD = "WD"
    SD = "SD"


class CoefficientSpec(BaseModel):
    """Model for a coefficient as written in a run configuration.

    Expressions use the variable ``x`` with arithmetic, ``**`` powers and the
    functions exp, log, sin, cos, sqrt.
    """

    form: CoefficientForm = Field(default=CoefficientForm.POWER, description="Declared form")
    alpha: Optional[float] = Field(None, description="Exponent for a(x) = x**alpha")
    expression: Optional[str] = Field(None, description="Expression of x for a(x)")
    derivative: Optional[str] = Field(None, description="Expression of x for a'(x); derived symbolically if omitted")

    @model_validator(mode="after")
    def _check_form(self) -> "CoefficientSpec":
        if self.form == CoefficientForm.POWER and self.alpha is None:
            raise ValueError("power coefficient requires 'alpha'")
        if self.form == CoefficientForm.EXPRESSION and not self.expression:
            raise ValueError("expression coefficient requires 'expression'")
        return self


class DegeneracyClass(BaseModel):
    """Model for the degeneracy class (WD/SD) and the constant K = sup x|a'|/a.

    K = 0 is accepted for WD so that the nondegenerate validation case a = 1
    can be run through a class override.
    """

    model_config = ConfigDict(frozen=True)

    kind: DegeneracyKind = Field(..., description="WD if K in (0,1), SD if K in [1,2)")
    K: float = Field(..., description="Degeneracy constant sup x|a'(x)|/a(x)")

    @model_validator(mode="after")
    def _check_range(self) -> "DegeneracyClass":
        if self.kind == DegeneracyKind.WD and not 0.0 <= self.K < 1.0:
            raise ValueError(f"WD requires K in (0,1), got {self.K}")
        if self.kind == DegeneracyKind.SD and not 1.0 <= self.K < 2.0:
            raise ValueError(f"SD requires K in [1,2), got {self.K}")
        return self

    @property
    def is_weak(self) -> bool:
        return self.kind == DegeneracyKind.WD
