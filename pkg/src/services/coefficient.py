"""
Service for the degenerate coefficient a: construction from specs,
classification (WD/SD) and scalar characteristics such as K and the
integral of 1/a.
"""

import logging
from typing import Callable, Optional

import numpy as np
import sympy as sp
from scipy import integrate
from sympy.parsing.sympy_parser import convert_xor, parse_expr, standard_transformations

from ..errors import (
    DivergentIntegralError,
    InvalidCoefficientError,
    OPEN_PROBLEM_K,
    OutOfScopeError,
)
from ..models.coefficient import CoefficientForm, CoefficientSpec, DegeneracyClass, DegeneracyKind

logger = logging.getLogger(__name__)

ZERO_TOLERANCE = 1e-12
DEFAULT_GRID_POINTS = 10_000
DEFAULT_GRID_START = 1e-8

_X = sp.Symbol("x", positive=True)
_NAMESPACE = {
    "x": _X,
    "exp": sp.exp,
    "log": sp.log,
    "sin": sp.sin,
    "cos": sp.cos,
    "sqrt": sp.sqrt,
    "pi": sp.pi,
}


def default_sample_grid(n_points: int = DEFAULT_GRID_POINTS) -> np.ndarray:
    """Geometric grid on (0,1] clustered at the degeneracy point x = 0."""
    return np.geomspace(DEFAULT_GRID_START, 1.0, n_points)


def _validated_grid(sample_grid: Optional[np.ndarray]) -> np.ndarray:
    if sample_grid is None:
        return default_sample_grid()
    grid = np.asarray(sample_grid, dtype=float).ravel()
    if grid.size == 0:
        raise ValueError("sample grid must be nonempty")
    if np.any(grid <= 0.0) or np.any(grid > 1.0):
        raise ValueError("sample grid must lie in (0,1]")
    return grid


def _lambdify(expr: sp.Expr) -> Callable[[np.ndarray], np.ndarray]:
    fn = sp.lambdify(_X, expr, modules="numpy")

    def evaluate(x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            values = np.asarray(fn(x), dtype=float)
        # constant expressions come back as scalars
        return np.broadcast_to(values, x.shape).copy()

    return evaluate


def _parse(text: str) -> sp.Expr:
    try:
        expr = parse_expr(
            text,
            local_dict=dict(_NAMESPACE),
            transformations=standard_transformations + (convert_xor,),
        )
    except (SyntaxError, TypeError, ValueError) as e:
        raise InvalidCoefficientError(f"Cannot parse coefficient expression '{text}': {e}")
    unknown = expr.free_symbols - {_X}
    if unknown:
        names = ", ".join(sorted(str(s) for s in unknown))
        raise InvalidCoefficientError(f"Coefficient expression '{text}' uses unknown symbols: {names}")
    return expr


class DegeneracyCoefficient:
    """The flexural coefficient a together with its derivative a'.

    Instances are immutable. ``evaluate`` and ``derivative`` accept scalars or
    arrays and always return float arrays of the input shape.
    """

    def __init__(
        self,
        evaluate: Callable[[np.ndarray], np.ndarray],
        derivative: Callable[[np.ndarray], np.ndarray],
        form: CoefficientForm,
        alpha: Optional[float] = None,
        label: str = "",
    ):
        self._evaluate = evaluate
        self._derivative = derivative
        self.form = form
        self.alpha = alpha
        self.label = label

    @classmethod
    def power(cls, alpha: float) -> "DegeneracyCoefficient":
        """a(x) = x**alpha."""
        alpha = float(alpha)

        def evaluate(x):
            x = np.asarray(x, dtype=float)
            with np.errstate(divide="ignore", invalid="ignore"):
                return np.power(x, alpha)

        def derivative(x):
            x = np.asarray(x, dtype=float)
            with np.errstate(divide="ignore", invalid="ignore"):
                return alpha * np.power(x, alpha - 1.0)

        return cls(evaluate, derivative, CoefficientForm.POWER, alpha=alpha, label=f"x^{alpha:g}")

    @classmethod
    def from_expression(cls, expression: str, derivative: Optional[str] = None) -> "DegeneracyCoefficient":
        """Build a general coefficient from an expression of x."""
        expr = _parse(expression)
        d_expr = _parse(derivative) if derivative else sp.diff(expr, _X)
        return cls(_lambdify(expr), _lambdify(d_expr), CoefficientForm.EXPRESSION, label=str(expr))

    @classmethod
    def from_spec(cls, spec: CoefficientSpec) -> "DegeneracyCoefficient":
        if spec.form == CoefficientForm.POWER:
            return cls.power(spec.alpha)
        return cls.from_expression(spec.expression, spec.derivative)

    @property
    def is_power_law(self) -> bool:
        return self.form == CoefficientForm.POWER

    def evaluate(self, x) -> np.ndarray:
        return self._evaluate(x)

    def derivative(self, x) -> np.ndarray:
        return self._derivative(x)

    def __call__(self, x) -> np.ndarray:
        return self._evaluate(x)

    def at_one(self) -> float:
        """a(1), the coefficient at the observed/controlled end."""
        return float(self._evaluate(np.array(1.0)))

    def __repr__(self) -> str:
        return f"DegeneracyCoefficient({self.label})"


def degeneracy_constant(coeff: DegeneracyCoefficient, sample_grid: Optional[np.ndarray] = None) -> float:
    """
    Compute K = sup x|a'(x)|/a(x) over the sample grid.

    Args:
        coeff (DegeneracyCoefficient): The coefficient\n        sample_grid (Optional[np.ndarray]): Points in (0,1]; defaults to a geometric grid clustered at 0

    Returns:
        K (alpha exactly for power laws)
    """
    grid = _validated_grid(sample_grid)
    if coeff.is_power_law:
        return float(coeff.alpha)

    a = coeff.evaluate(grid)
    bad = ~np.isfinite(a) | (a <= 0.0)
    if np.any(bad):
        x_bad = grid[np.argmax(bad)]
        raise InvalidCoefficientError(f"Coefficient {coeff} is not positive at x={x_bad:.3e}")

    ratio = grid * np.abs(coeff.derivative(grid)) / a
    if not np.all(np.isfinite(ratio)):
        raise InvalidCoefficientError(f"Derivative of {coeff} is not finite on the sample grid")
    return float(np.max(ratio))


def classify(coeff: DegeneracyCoefficient, sample_grid: Optional[np.ndarray] = None) -> DegeneracyClass:
    """
    Classify the coefficient as weakly (K < 1) or strongly (1 <= K < 2) degenerate.

    Raises:
        InvalidCoefficientError: a(0) != 0 or a not positive on the grid
        OutOfScopeError: K <= 0 or K >= 2
    """
    a0 = float(coeff.evaluate(np.array(0.0)))
    if not np.isfinite(a0) or abs(a0) > ZERO_TOLERANCE:
        raise InvalidCoefficientError(f"Coefficient {coeff} does not vanish at 0: a(0)={a0}")

    K = degeneracy_constant(coeff, sample_grid)
    if K <= 0.0 or K >= 2.0:
        raise OutOfScopeError(f"K={K:g} out of scope, need 0 < K < 2", citation=OPEN_PROBLEM_K)

    kind = DegeneracyKind.WD if K < 1.0 else DegeneracyKind.SD
    logger.info(f"Classified {coeff} as {kind.value} with K={K:.6g}")
    return DegeneracyClass(kind=kind, K=K)


def integral_one_over_a(coeff: DegeneracyCoefficient, degeneracy: Optional[DegeneracyClass] = None) -> float:
    """
    Compute the L1 norm of 1/a on (0,1) for a weakly degenerate coefficient.

    Raises:
        DivergentIntegralError: the coefficient is strongly degenerate
    """
    degeneracy = degeneracy or classify(coeff)
    if degeneracy.kind == DegeneracyKind.SD:
        raise DivergentIntegralError(f"1/a is not integrable for strongly degenerate {coeff}")

    if coeff.is_power_law:
        return 1.0 / (1.0 - coeff.alpha)

    # QUADPACK qags extrapolates through the integrable endpoint singularity
    value, abserr = integrate.quad(lambda x: 1.0 / float(coeff.evaluate(x)), 0.0, 1.0, limit=200)
    logger.debug(f"Integral of 1/a = {value} (estimated error {abserr:.2e})")
    return float(value)


def power_ratio_nondecreasing(
    coeff: DegeneracyCoefficient,
    exponent: float,
    sample_grid: Optional[np.ndarray] = None,
    rtol: float = 1e-10,
) -> bool:
    """Check that x -> x**exponent / a(x) is nondecreasing on the grid (holds for exponent >= K)."""
    grid = np.sort(_validated_grid(sample_grid))
    ratio = grid ** exponent / coeff.evaluate(grid)
    return bool(np.all(np.diff(ratio) >= -rtol * np.abs(ratio[1:])))


def weight_ratio_nonincreasing(
    coeff: DegeneracyCoefficient,
    theta: float,
    sample_grid: Optional[np.ndarray] = None,
    rtol: float = 1e-10,
) -> bool:
    """Check that x -> a(x) / x**theta is nonincreasing on the grid."""
    grid = np.sort(_validated_grid(sample_grid))
    ratio = coeff.evaluate(grid) / grid ** theta
    return bool(np.all(np.diff(ratio) <= rtol * np.abs(ratio[:-1])))


def max_abs_derivative(coeff: DegeneracyCoefficient, sample_grid: Optional[np.ndarray] = None) -> float:
    """max |a'| on [0,1], needed by the strongly degenerate observation bound."""
    if coeff.is_power_law:
        if coeff.alpha < 1.0:
            return float("inf")
        return float(coeff.alpha)
    grid = np.append(_validated_grid(sample_grid), 1.0)
    return float(np.max(np.abs(coeff.derivative(grid))))
