"""
Command handlers: each resolves a RunConfig against the services and returns
a result, named checks and CSV frames. The router writes them as artifacts.
"""

import json
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel

from ..errors import ConfigError, WrongRegimeError
from ..models.coefficient import DegeneracyClass
from ..models.config import InitialKind, RunConfig
from ..models.discretization import BeamMesh, BoundaryRegime, RegimeKind, SystemMatrices
from ..models.reports import NormSpace
from ..models.state import BeamState, Drive
from ..services.coefficient import DegeneracyCoefficient, classify, integral_one_over_a
from ..services.constants import controllability_constants, decay_envelope, stability_constants
from ..services.discretization import (
    assemble,
    build_mesh,
    eigenmodes,
    export_matrices,
    polynomial_dofs,
    random_smooth_dofs,
)
from ..services.dynamics import energy_history, n_steps, simulate
from ..services.elliptic import elliptic_estimate_check, power_law_elliptic_solution, solve_boundary_elliptic
from ..services.hum import solve_null_control, verify_null_control
from ..services.identities import (
    conservation_drift,
    dissipation_residual,
    energies,
    hardy_poincare_check,
    multiplier_identity_x,
    multiplier_identity_x2,
    multiplier_refinement_study,
    norm_equivalence_check,
)
from ..services.observability import empirical_observability_constant

logger = logging.getLogger(__name__)

SCHEMA_VERSION = "1.0"
CONSERVATION_TOLERANCE = 1e-10
DISSIPATION_TOLERANCE = 1e-8
MULTIPLIER_TOLERANCE = 1e-2
CONTROL_TOLERANCE = 1e-6
MAX_CSV_ROWS = 10_000


@dataclass
class CommandOutcome:
    """What a handler produced."""

    result: Any
    checks: Dict[str, bool] = field(default_factory=dict)
    frames: Dict[str, pd.DataFrame] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


class RunContext:
    """Lazily resolved coefficient, class, mesh and data for one config."""

    def __init__(self, config: RunConfig, out_dir: Path):
        self.config = config
        self.out_dir = Path(out_dir)

    @cached_property
    def coeff(self) -> DegeneracyCoefficient:
        return DegeneracyCoefficient.from_spec(self.config.coefficient)

    @cached_property
    def degeneracy(self) -> DegeneracyClass:
        return self.config.class_override or classify(self.coeff)

    @cached_property
    def mesh(self) -> BeamMesh:
        mesh_config = self.config.mesh
        return build_mesh(mesh_config.n_elements, mesh_config.grading, mesh_config.ratio, mesh_config.exponent)

    def matrices(self, regime: Optional[BoundaryRegime] = None) -> SystemMatrices:
        regime = regime or self.config.regime.to_regime()
        return assemble(self.coeff, self.degeneracy, self.mesh, regime)

    def time_step(self, T: float) -> float:
        """Configured dt, or the largest element width rounded to divide T."""
        target = self.config.dt or self.mesh.h
        return T / math.ceil(T / target - 1e-9)

    def initial_state(self, matrices: SystemMatrices) -> BeamState:
        spec = self.config.initial
        n = matrices.mesh.n_dofs
        if spec.kind == InitialKind.EIGENMODE:
            if spec.mode >= matrices.n_free:
                raise ConfigError(f"Eigenmode {spec.mode} requested, the mesh has {matrices.n_free} free DOFs")
            _, modes = eigenmodes(matrices, spec.mode + 1)
            u, v = modes[spec.mode], np.zeros(n)
        elif spec.kind == InitialKind.POLYNOMIAL:
            u = polynomial_dofs(matrices.mesh, spec.displacement)
            v = polynomial_dofs(matrices.mesh, spec.velocity)
        elif spec.kind == InitialKind.RANDOM:
            u, v = random_smooth_dofs(matrices, np.random.default_rng(self.config.seed))
        else:
            u, v = _read_initial_csv(Path(spec.path), n)

        fixed = np.setdiff1d(np.arange(n), matrices.free)
        if np.any(u[fixed]) or np.any(v[fixed]):
            logger.warning("Initial data do not satisfy the boundary constraints; constrained DOFs zeroed")
            u, v = u.copy(), v.copy()
            u[fixed] = 0.0
            v[fixed] = 0.0
        return BeamState(t=0.0, u=u, v=v)


def _read_initial_csv(path: Path, n_dofs: int) -> Tuple[np.ndarray, np.ndarray]:
    """Columns u, v of an initial data CSV over the full DOF set."""
    try:
        frame = pd.read_csv(path)
        u, v = frame["u"].to_numpy(dtype=float), frame["v"].to_numpy(dtype=float)
    except (OSError, KeyError, ValueError) as e:
        raise ConfigError(f"Cannot read initial data {path}: {e}")
    if len(u) != n_dofs:
        raise ConfigError(f"Initial data file has {len(u)} rows, mesh has {n_dofs} DOFs")
    return u, v


Handler = Callable[[RunContext], CommandOutcome]


class CommandRouter:
    """Registry of named command handlers."""

    def __init__(self):
        self.handlers: Dict[str, Handler] = {}

    def command(self, name: str) -> Callable[[Handler], Handler]:
        def register(handler: Handler) -> Handler:
            self.handlers[name] = handler
            return handler
        return register

    @property
    def names(self):
        return sorted(self.handlers)

    def run(self, name: str, config: RunConfig, out_dir: Path) -> CommandOutcome:
        """Run a command and write <name>.json plus its CSV frames into out_dir."""
        if name not in self.handlers:
            raise KeyError(f"Unknown command '{name}'")
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)

        logger.info(f"Running '{name}' with output in {out_dir}")
        outcome = self.handlers[name](RunContext(config, out_dir))
        for stem, frame in outcome.frames.items():
            path = out_dir / f"{name}_{stem}.csv"
            frame.to_csv(path, index=False)
            logger.info(f"Wrote {path}")

        report = {
            "schema_version": SCHEMA_VERSION,
            "command": name,
            "config": config.model_dump(mode="json"),
            "result": _jsonable(outcome.result),
            "checks": outcome.checks,
            "passed": outcome.passed,
        }
        write_report(out_dir / f"{name}.json", report)
        return outcome


def write_report(path: Path, report: Dict[str, Any]):
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True, allow_nan=False) + "\n", encoding="utf-8")
    logger.info(f"Wrote {path}")


def _jsonable(value: Any) -> Any:
    if isinstance(value, BaseModel):
        return _jsonable(value.model_dump(mode="json"))
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else None
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value


def _stride(n_rows: int) -> int:
    return max(1, math.ceil(n_rows / MAX_CSV_ROWS))


router = CommandRouter()


@router.command("classify")
def classify_command(ctx: RunContext) -> CommandOutcome:
    degeneracy = ctx.degeneracy
    result = {"kind": degeneracy.kind.value, "K": degeneracy.K, "a_one": ctx.coeff.at_one()}
    if degeneracy.is_weak:
        result["inv_a_l1"] = integral_one_over_a(ctx.coeff, degeneracy)
        if degeneracy.K > 0.0:
            result["C_HP"] = 4.0 / (1.0 - degeneracy.K) ** 2
    return CommandOutcome(result=result)


@router.command("constants")
def constants_command(ctx: RunContext) -> CommandOutcome:
    config = ctx.config
    regime = config.regime
    if regime.kind == RegimeKind.FEEDBACK:
        report = stability_constants(ctx.coeff, ctx.degeneracy, regime.beta, regime.gamma,
                                     eps0=config.eps0, delta=config.delta, T=config.T)
        checks = {"M_positive": report.M is not None and 0.0 < report.M < math.inf}
        wd = report.wd_variants
        if wd is not None and report.chain == "general":
            checks["wd_C_beta_improves"] = wd.C_beta <= 2.0 / regime.beta
            checks["wd_C_gamma_improves"] = wd.C_gamma <= 2.0 / regime.gamma
            checks["wd_A_gamma_improves"] = wd.A_gamma <= report.C2
            checks["wd_nu_improves"] = wd.nu_wd >= report.nu
    else:
        report = controllability_constants(ctx.coeff, ctx.degeneracy, config.T)
        checks = {"T0_positive": 0.0 < report.T0 < math.inf}
    return CommandOutcome(result=report, checks=checks)


@router.command("simulate")
def simulate_command(ctx: RunContext) -> CommandOutcome:
    config = ctx.config
    matrices = ctx.matrices()
    initial = ctx.initial_state(matrices)
    dt = ctx.time_step(config.T)

    drive = None
    if matrices.regime.kind == RegimeKind.CONTROLLED:
        drive = Drive(np.zeros(n_steps(config.T, dt) + 1), dt)
    traj = simulate(matrices, initial, config.T, dt, drive=drive)
    E = energies(traj, matrices)
    export_matrices(matrices, ctx.out_dir / "matrices")

    result = {"T": config.T, "dt": dt, "steps": len(traj.states) - 1, "E0": E[0], "ET": E[-1]}
    checks = {}
    if matrices.regime.kind == RegimeKind.ADJOINT:
        result["conservation_drift"] = conservation_drift(traj, matrices)
        checks["conservation"] = result["conservation_drift"] <= CONSERVATION_TOLERANCE
    elif matrices.regime.kind == RegimeKind.FEEDBACK:
        residual = dissipation_residual(traj, matrices)
        result["dissipation"] = residual
        checks["dissipation"] = residual.residual <= DISSIPATION_TOLERANCE

    frame = traj.to_frame(E)
    return CommandOutcome(result=result, checks=checks, frames={"trajectory": frame.iloc[::_stride(len(frame))]})


@router.command("decay")
def decay_command(ctx: RunContext) -> CommandOutcome:
    config = ctx.config
    regime = config.regime
    if regime.kind != RegimeKind.FEEDBACK:
        raise WrongRegimeError(f"decay needs the feedback regime, got {regime.kind.value}")

    report = stability_constants(ctx.coeff, ctx.degeneracy, regime.beta, regime.gamma,
                                 eps0=config.eps0, delta=config.delta)
    matrices = ctx.matrices()
    initial = ctx.initial_state(matrices)

    horizon = config.horizon_factor * report.M
    steps = math.ceil(horizon / config.decay_dt)
    times, E = energy_history(matrices, initial, horizon, horizon / steps)
    bound = decay_envelope(report, E[0])(times)
    below = E <= bound * (1.0 + 1e-12)
    if not np.all(below):
        logger.warning(f"Energy above the envelope at {int(np.sum(~below))} of {len(E)} steps")

    stride = _stride(len(times))
    frame = pd.DataFrame({"t": times, "E_h": E, "envelope": bound}).iloc[::stride]
    result = {"constants": report, "horizon": horizon, "dt": horizon / steps, "E0": E[0], "E_final": E[-1],
              "max_ratio_to_envelope": float(np.max(E / bound))}
    return CommandOutcome(result=result, checks={"below_envelope": bool(np.all(below))}, frames={"energy": frame})


@router.command("identities")
def identities_command(ctx: RunContext) -> CommandOutcome:
    config = ctx.config
    coeff, degeneracy = ctx.coeff, ctx.degeneracy
    adjoint = ctx.matrices(BoundaryRegime.adjoint())
    initial = ctx.initial_state(adjoint)
    dt = ctx.time_step(config.T)
    traj = simulate(adjoint, initial, config.T, dt)

    result: Dict[str, Any] = {"conservation_drift": conservation_drift(traj, adjoint)}
    checks = {"conservation": result["conservation_drift"] <= CONSERVATION_TOLERANCE}
    result["multiplier_x2"] = multiplier_identity_x2(traj, adjoint, coeff)
    result["multiplier_x"] = multiplier_identity_x(traj, adjoint, coeff)

    for identity in ("multiplier_x2", "multiplier_x"):
        study = multiplier_refinement_study(coeff, degeneracy, levels=config.levels, identity=identity)
        values = [r.residual for r in study.residuals]
        result[f"{identity}_refinement"] = study
        checks[f"{identity}_refinement"] = (all(b < a for a, b in zip(values[:-1], values[1:]))
                                            and values[-1] <= MULTIPLIER_TOLERANCE)

    regime = config.regime
    if regime.kind == RegimeKind.FEEDBACK:
        feedback = ctx.matrices()
        run = simulate(feedback, ctx.initial_state(feedback), config.T, dt)
        result["dissipation"] = dissipation_residual(run, feedback)
        checks["dissipation"] = result["dissipation"].residual <= DISSIPATION_TOLERANCE

    if degeneracy.is_weak and degeneracy.K > 0.0:
        hp = hardy_poincare_check(coeff, degeneracy.K, lambda x: x, lambda x: 1.0)
        result["hardy_poincare"] = hp
        checks["hardy_poincare"] = hp.holds

    u, _ = random_smooth_dofs(adjoint, np.random.default_rng(config.seed))
    norms = norm_equivalence_check(adjoint, coeff, degeneracy, NormSpace.H2A0, u)
    result["norm_equivalence"] = norms
    checks["norm_equivalence"] = norms.holds
    return CommandOutcome(result=result, checks=checks)


@router.command("observability")
def observability_command(ctx: RunContext) -> CommandOutcome:
    config = ctx.config
    matrices = ctx.matrices(BoundaryRegime.adjoint())
    report = empirical_observability_constant(config.T, matrices, ctx.coeff, config.n_trials, seed=config.seed,
                                              dt=config.dt, slack=config.slack, degeneracy=ctx.degeneracy)
    trials = pd.DataFrame([p.model_dump() for p in report.trials])
    checks = {"lower_bound": report.satisfied} if config.T > report.T0 else {}
    return CommandOutcome(result=report, checks=checks, frames={"trials": trials})


@router.command("control")
def control_command(ctx: RunContext) -> CommandOutcome:
    config = ctx.config
    adjoint = ctx.matrices(BoundaryRegime.adjoint())
    controlled = ctx.matrices(BoundaryRegime.controlled())
    initial = ctx.initial_state(adjoint)

    result = solve_null_control(initial.u, initial.v, config.T, controlled, ctx.coeff,
                                cg_tol=config.cg_tol, max_iter=config.max_iter, dt=config.dt)
    verified = verify_null_control(result, initial.u, initial.v, config.T, controlled)
    history = pd.DataFrame({
        "iteration": np.arange(len(result.residual_history)),
        "residual": result.residual_history,
        "functional": result.functional_history,
    })
    checks = {"converged": result.converged, "null_state": verified <= CONTROL_TOLERANCE}
    return CommandOutcome(result=result.to_report(), checks=checks,
                          frames={"f": result.to_frame(), "cg": history})


@router.command("elliptic")
def elliptic_command(ctx: RunContext) -> CommandOutcome:
    config = ctx.config
    regime = config.regime
    sol = solve_boundary_elliptic(ctx.coeff, ctx.degeneracy, ctx.mesh, regime.beta, regime.gamma,
                                  config.elliptic.lam, config.elliptic.mu)
    report = elliptic_estimate_check(sol, ctx.coeff, ctx.degeneracy)
    result: Dict[str, Any] = {"estimates": report}
    frame = sol.to_frame()
    if ctx.coeff.is_power_law:
        exact = power_law_elliptic_solution(ctx.coeff.alpha, ctx.degeneracy.kind, regime.beta, regime.gamma,
                                            config.elliptic.lam, config.elliptic.mu)
        frame["z_exact"] = exact.z(sol.mesh.nodes)
        result["max_nodal_error"] = float(np.max(np.abs(frame["z"] - frame["z_exact"])))
    checks = {"energy_estimate": report.energy_holds, "l2_estimate": report.l2_holds}
    return CommandOutcome(result=result, checks=checks, frames={"solution": frame})
