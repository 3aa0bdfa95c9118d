"""
Cubic-Hermite finite-element discretization of u -> (a u'')'' on [0,1].

DOF ordering per node i: value w_i at index 2i, slope th_i at index 2i+1.
Element DOF order: w_i, th_i, w_j, th_j.
"""

import logging
from pathlib import Path
from typing import Callable, List, Optional, Tuple

import numpy as np
import scipy.sparse as sps
from scipy import io, linalg
from scipy.special import roots_jacobi

from ..errors import InvalidCoefficientError, OPEN_PROBLEM_SD_FEEDBACK, OutOfScopeError
from ..models.coefficient import DegeneracyClass
from ..models.discretization import BeamMesh, BoundaryRegime, Grading, RegimeKind, SystemMatrices
from .coefficient import DegeneracyCoefficient

logger = logging.getLogger(__name__)

MIN_ELEMENTS = 4
GAUSS_POINTS = 4
DEFAULT_GEOMETRIC_RATIO = 0.7
DEFAULT_POWER_EXPONENT = 2.0
SINGULAR_CELLS = 40
SINGULAR_GRADING = 0.5

# powers of h in the element matrices, shared by mass, slope Gram and stiffness
_H_POWERS = np.array([[0, 1, 0, 1],
                      [1, 2, 1, 2],
                      [0, 1, 0, 1],
                      [1, 2, 1, 2]])
_MASS_COEFFS = np.array([[156.0, 22.0, 54.0, -13.0],
                         [22.0, 4.0, 13.0, -3.0],
                         [54.0, 13.0, 156.0, -22.0],
                         [-13.0, -3.0, -22.0, 4.0]])
_SLOPE_COEFFS = np.array([[36.0, 3.0, -36.0, 3.0],
                          [3.0, 4.0, -3.0, -1.0],
                          [-36.0, -3.0, 36.0, -3.0],
                          [3.0, -1.0, -3.0, 4.0]])


def build_mesh(n_elements: int, grading: Grading = Grading.UNIFORM, ratio: float = DEFAULT_GEOMETRIC_RATIO,
               exponent: float = DEFAULT_POWER_EXPONENT) -> BeamMesh:
    """
    Build a mesh of [0,1].

    Args:
        n_elements (int): Number of elements (at least 4)
        grading (Grading): Uniform, geometric toward 0, or power (x_i = (i/n)^exponent)
        ratio (float): Width ratio between consecutive elements for geometric grading
        exponent (float): Node exponent for power grading

    Returns:
        BeamMesh
    """
    if n_elements < MIN_ELEMENTS:
        raise ValueError(f"Mesh needs at least {MIN_ELEMENTS} elements, got {n_elements}")

    grading = Grading(grading)
    if grading == Grading.UNIFORM:
        nodes = np.linspace(0.0, 1.0, n_elements + 1)
    elif grading == Grading.POWER:
        if exponent < 1.0:
            raise ValueError(f"Power grading exponent must be at least 1, got {exponent}")
        nodes = np.linspace(0.0, 1.0, n_elements + 1) ** exponent
    else:
        if not 0.0 < ratio < 1.0:
            raise ValueError(f"Geometric ratio must be in (0,1), got {ratio}")
        widths = ratio ** np.arange(n_elements - 1, -1, -1, dtype=float)
        widths /= widths.sum()
        nodes = np.concatenate([[0.0], np.cumsum(widths)])
        nodes[-1] = 1.0

    return BeamMesh(nodes=nodes, grading=grading)


def hermite_basis(xi: np.ndarray, h: float, order: int = 0) -> np.ndarray:
    """Hermite shape functions (or x-derivatives) at local coordinates xi in [0,1]; shape (4, len(xi))."""
    xi = np.asarray(xi, dtype=float)
    if order == 0:
        return np.stack([1 - 3 * xi**2 + 2 * xi**3,
                         h * (xi - 2 * xi**2 + xi**3),
                         3 * xi**2 - 2 * xi**3,
                         h * (-xi**2 + xi**3)])
    if order == 1:
        return np.stack([(-6 * xi + 6 * xi**2) / h,
                         1 - 4 * xi + 3 * xi**2,
                         (6 * xi - 6 * xi**2) / h,
                         -2 * xi + 3 * xi**2])
    if order == 2:
        return np.stack([(-6 + 12 * xi) / h**2,
                         (-4 + 6 * xi) / h,
                         (6 - 12 * xi) / h**2,
                         (-2 + 6 * xi) / h])
    raise ValueError(f"Unsupported derivative order {order}")


def gauss_rule(n_points: int) -> Tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre rule mapped to [0,1]."""
    points, weights = np.polynomial.legendre.leggauss(n_points)
    return 0.5 * (points + 1.0), 0.5 * weights


def _closed_form_blocks(widths: np.ndarray, coeffs: np.ndarray, scale: np.ndarray) -> np.ndarray:
    h = widths[:, None, None]
    return coeffs[None] * h ** _H_POWERS[None] * scale[:, None, None]


def element_mass(widths: np.ndarray) -> np.ndarray:
    """Consistent mass blocks h/420 [...] for each element width."""
    widths = np.atleast_1d(np.asarray(widths, dtype=float))
    return _closed_form_blocks(widths, _MASS_COEFFS, widths / 420.0)


def element_slope_gram(widths: np.ndarray) -> np.ndarray:
    """Blocks of int phi' psi' dx for each element width."""
    widths = np.atleast_1d(np.asarray(widths, dtype=float))
    return _closed_form_blocks(widths, _SLOPE_COEFFS, 1.0 / (30.0 * widths))


def element_stiffness(coeff: DegeneracyCoefficient, left: np.ndarray, right: np.ndarray,
                      n_points: int = GAUSS_POINTS) -> np.ndarray:
    """
    Weighted stiffness blocks int_e a phi'' psi'' dx.

    Elements away from 0 use Gauss-Legendre. An element starting at x = 0 uses
    Gauss-Jacobi with weight x^alpha for power laws (exact, since phi'' psi''
    is quadratic) and graded composite Gauss otherwise.

    Args:
        coeff (DegeneracyCoefficient): The coefficient a
        left (np.ndarray): Left element endpoints
        right (np.ndarray): Right element endpoints, same length as left
        n_points (int): Gauss points per element or per graded cell

    Returns:
        Array of shape (n_elements, 4, 4)
    """
    left = np.atleast_1d(np.asarray(left, dtype=float))
    right = np.atleast_1d(np.asarray(right, dtype=float))
    widths = right - left
    xi, w = gauss_rule(n_points)

    x_q = left[:, None] + widths[:, None] * xi[None, :]
    a_q = _checked(coeff, x_q)
    blocks = _weighted_blocks(np.broadcast_to(xi, x_q.shape), a_q * w[None, :] * widths[:, None], widths)

    for e in np.flatnonzero(left == 0.0):
        xi_e, weighted_e = singular_rule(coeff, widths[e], n_points)
        blocks[e] = _weighted_blocks(xi_e[None, :], weighted_e[None, :], widths[e:e + 1])[0]
    return blocks


def singular_rule(coeff: DegeneracyCoefficient, h: float, n_points: int = GAUSS_POINTS) -> Tuple[np.ndarray, np.ndarray]:
    """
    Local points on [0,1] and weights carrying a for integrals int_0^h a p dx.

    Returns:
        (xi, weights) with int_0^h a p dx ~ sum weights p(h xi)
    """
    if coeff.is_power_law:
        t, w = roots_jacobi(n_points, 0.0, coeff.alpha)
        return 0.5 * (t + 1.0), w * (0.5 * h) ** (coeff.alpha + 1.0)
    xi, w = graded_rule(n_points, SINGULAR_CELLS, SINGULAR_GRADING)
    return xi, _checked(coeff, h * xi) * w * h


def graded_rule(n_points: int, cells: int, ratio: float) -> Tuple[np.ndarray, np.ndarray]:
    """Composite Gauss rule on [0,1] over cells graded geometrically toward 0."""
    xi, w = gauss_rule(n_points)
    cuts = np.concatenate([[0.0], ratio ** np.arange(cells - 1, -1, -1, dtype=float)])
    lo, hi = cuts[:-1, None], cuts[1:, None]
    return (lo + (hi - lo) * xi[None, :]).ravel(), ((hi - lo) * w[None, :]).ravel()


def _checked(coeff: DegeneracyCoefficient, x: np.ndarray) -> np.ndarray:
    a = coeff.evaluate(x)
    bad = ~np.isfinite(a) | (a < 0.0)
    if np.any(bad):
        raise InvalidCoefficientError(f"Coefficient {coeff} is negative or undefined at x={x[bad][0]:.3e}")
    return a


def _weighted_blocks(xi: np.ndarray, weighted: np.ndarray, widths: np.ndarray) -> np.ndarray:
    # second derivatives of the four shape functions, per element and point
    h = widths[:, None]
    B2 = np.stack([(-6 + 12 * xi) / h**2,
                   (-4 + 6 * xi) / h,
                   (6 - 12 * xi) / h**2,
                   (-2 + 6 * xi) / h], axis=1)
    return np.einsum("eiq,eq,ejq->eij", B2, weighted, B2)


def _scatter(mesh: BeamMesh, blocks: np.ndarray) -> sps.csr_matrix:
    dofs = mesh.element_dofs
    rows = np.broadcast_to(dofs[:, :, None], blocks.shape).ravel()
    cols = np.broadcast_to(dofs[:, None, :], blocks.shape).ravel()
    n = mesh.n_dofs
    return sps.coo_matrix((blocks.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def _boundary_matrix(mesh: BeamMesh, value_weight: float, rotation_weight: float) -> sps.csr_matrix:
    n = mesh.n_dofs
    idx = [mesh.value_dof_at_one, mesh.rotation_dof_at_one]
    return sps.coo_matrix(([value_weight, rotation_weight], (idx, idx)), shape=(n, n)).tocsr()


def assemble(coeff: DegeneracyCoefficient, degeneracy: DegeneracyClass, mesh: BeamMesh,
             regime: BoundaryRegime, n_points: int = GAUSS_POINTS, feedback_scope: bool = True) -> SystemMatrices:
    """
    Assemble M, S, B, D (and the slope Gram G) and partition DOFs for the regime.

    Essential DOFs: value at 0 always; slope at 0 iff WD; value and slope at 1
    for the adjoint regime; value at 1 for the controlled regime, whose slope
    at 1 is driven. The SD condition (a u'')(0) = 0 is natural.

    Raises:
        OutOfScopeError: SD with feedback and beta = 0 or gamma = 0 (unless feedback_scope is off)
        InvalidCoefficientError: a < 0 at a quadrature point
    """
    if feedback_scope and regime.kind == RegimeKind.FEEDBACK and not degeneracy.is_weak:
        if regime.beta <= 0.0 or regime.gamma <= 0.0:
            raise OutOfScopeError(
                f"Feedback with beta={regime.beta}, gamma={regime.gamma} for SD coefficient",
                citation=OPEN_PROBLEM_SD_FEEDBACK,
            )

    widths = mesh.widths
    S = _scatter(mesh, element_stiffness(coeff, mesh.nodes[:-1], mesh.nodes[1:], n_points))
    M = _scatter(mesh, element_mass(widths))
    G = _scatter(mesh, element_slope_gram(widths))

    if regime.kind == RegimeKind.FEEDBACK:
        B = _boundary_matrix(mesh, regime.beta, regime.gamma)
        D = _boundary_matrix(mesh, 1.0, 1.0)
    else:
        B = _boundary_matrix(mesh, 0.0, 0.0)
        D = _boundary_matrix(mesh, 0.0, 0.0)

    constrained = [0]
    if degeneracy.is_weak:
        constrained.append(1)
    driven = None
    if regime.kind == RegimeKind.ADJOINT:
        constrained += [mesh.value_dof_at_one, mesh.rotation_dof_at_one]
    elif regime.kind == RegimeKind.CONTROLLED:
        constrained.append(mesh.value_dof_at_one)
        driven = mesh.rotation_dof_at_one

    excluded = constrained + ([driven] if driven is not None else [])
    free = np.setdiff1d(np.arange(mesh.n_dofs), excluded)

    logger.info(
        f"Assembled {regime.kind.value} system for {coeff} ({degeneracy.kind.value}): "
        f"{mesh.n_elements} elements, {len(free)} free DOFs"
    )
    return SystemMatrices(
        mesh=mesh,
        degeneracy=degeneracy,
        regime=regime,
        M=M, S=S, B=B, D=D, G=G,
        free=free,
        constrained=np.array(sorted(constrained)),
        driven=driven,
        a_one=coeff.at_one(),
    )


def with_regime(coeff: DegeneracyCoefficient, matrices: SystemMatrices, regime: BoundaryRegime) -> SystemMatrices:
    """Re-assemble the same mesh and coefficient under another regime."""
    return assemble(coeff, matrices.degeneracy, matrices.mesh, regime)


def second_derivative_trace(state_dofs: np.ndarray, mesh: BeamMesh) -> float:
    """y_xx(1) from the last element's Hermite shape functions."""
    u = np.asarray(state_dofs, dtype=float)
    if u.shape[-1] != mesh.n_dofs:
        raise ValueError(f"State has {u.shape[-1]} DOFs, mesh has {mesh.n_dofs}")
    h = mesh.widths[-1]
    w_i, th_i, w_j, th_j = u[..., -4], u[..., -3], u[..., -2], u[..., -1]
    return (6.0 * w_i + 2.0 * h * th_i - 6.0 * w_j + 4.0 * h * th_j) / h**2


def interpolate(mesh: BeamMesh, func: Callable, derivative: Callable) -> np.ndarray:
    """Hermite DOF vector with nodal values func(x_i) and slopes derivative(x_i)."""
    u = np.empty(mesh.n_dofs)
    u[0::2] = func(mesh.nodes)
    u[1::2] = derivative(mesh.nodes)
    return u


def polynomial_dofs(mesh: BeamMesh, coefficients: List[float]) -> np.ndarray:
    """Interpolate the polynomial sum c_k x**k (ascending coefficients)."""
    if not coefficients:
        return np.zeros(mesh.n_dofs)
    p = np.polynomial.Polynomial(coefficients)
    return interpolate(mesh, p, p.deriv())


class QuadratureSampler:
    """
    Evaluates finite-element fields and their x-derivatives at quadrature points.

    The first element can be split into cells graded geometrically toward 0,
    so that integrands carrying a' (unbounded at 0 for WD) are resolved.
    """

    def __init__(self, mesh: BeamMesh, n_points: int = GAUSS_POINTS, graded_cells: int = 0, grading_ratio: float = 0.25):
        self.mesh = mesh
        xi, w = gauss_rule(n_points)

        points, weights = [], []
        for e, h in enumerate(mesh.widths):
            if e == 0 and graded_cells > 0:
                local, local_w = graded_rule(n_points, graded_cells, grading_ratio)
            else:
                local, local_w = xi, w
            points.append((e, local))
            weights.append(local_w * h)

        self.weights = np.concatenate(weights)
        self.x = np.concatenate([mesh.nodes[e] + mesh.widths[e] * local for e, local in points])
        self.basis = [self._basis_matrix(points, order) for order in range(3)]

    def _basis_matrix(self, points, order: int) -> sps.csr_matrix:
        data, rows, cols = [], [], []
        offset = 0
        dofs = self.mesh.element_dofs
        for e, local in points:
            values = hermite_basis(local, self.mesh.widths[e], order)
            q = np.arange(offset, offset + len(local))
            for k in range(4):
                data.append(values[k])
                rows.append(q)
                cols.append(np.full(len(local), dofs[e, k]))
            offset += len(local)
        return sps.coo_matrix(
            (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
            shape=(offset, self.mesh.n_dofs),
        ).tocsr()

    def field(self, dofs: np.ndarray, order: int = 0) -> np.ndarray:
        """Field derivative of the given order at the quadrature points; dofs may be (n_dofs,) or (n_times, n_dofs)."""
        dofs = np.asarray(dofs, dtype=float)
        return (self.basis[order] @ dofs.T).T

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """Integral over [0,1] of sampled values (last axis runs over quadrature points)."""
        return values @ self.weights


def eigenmodes(matrices: SystemMatrices, n_modes: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Lowest generalized eigenpairs of (S + B, M) on the free DOFs.

    Returns:
        (omegas, modes): angular frequencies and M-normalized full-DOF modes, shape (n, n_dofs)
    """
    n = min(n_modes, matrices.n_free)
    K = matrices.restrict(matrices.stiffness).toarray()
    M = matrices.restrict(matrices.M).toarray()
    values, vectors = linalg.eigh(K, M, subset_by_index=[0, n - 1])

    # fix the sign so the largest component is positive
    pivots = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[pivots, np.arange(n)])
    vectors = vectors * signs[None, :]

    modes = np.zeros((n, matrices.mesh.n_dofs))
    modes[:, matrices.free] = vectors.T
    return np.sqrt(np.clip(values, 0.0, None)), modes


def random_smooth_dofs(matrices: SystemMatrices, rng: np.random.Generator, n_modes: int = 6) -> Tuple[np.ndarray, np.ndarray]:
    """Random (u, v) built from the lowest eigenmodes with coefficients decaying like 1/k^2."""
    _, modes = eigenmodes(matrices, n_modes)
    decay = 1.0 / (1.0 + np.arange(len(modes))) ** 2
    u = (rng.standard_normal(len(modes)) * decay) @ modes
    v = (rng.standard_normal(len(modes)) * decay) @ modes
    return u, v


def export_matrices(matrices: SystemMatrices, out_dir: Path) -> List[Path]:
    """Write M, S, B, D, G in Matrix Market coordinate format."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name in ("M", "S", "B", "D", "G"):
        path = out_dir / f"{name}.mtx"
        io.mmwrite(str(path), getattr(matrices, name).tocoo())
        paths.append(path)
    logger.info(f"Exported matrices to {out_dir}")
    return paths
