"""
Data models for beam states, boundary drives and trajectories.
"""

from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np
import pandas as pd
import scipy.sparse as sps

from .discretization import RegimeKind

TRACE_NAMES = ("y", "y_x", "y_t", "y_tx", "y_xx")


@dataclass
class BeamState:
    """Displacement and velocity DOF vectors (full DOF set) at time t."""

    t: float
    u: np.ndarray
    v: np.ndarray

    @classmethod
    def zeros(cls, n_dofs: int, t: float = 0.0) -> "BeamState":
        return cls(t=t, u=np.zeros(n_dofs), v=np.zeros(n_dofs))

    def scaled(self, factor: float) -> "BeamState":
        return BeamState(t=self.t, u=factor * self.u, v=factor * self.v)


def gradient_operator(n_samples: int, dt: float) -> sps.csr_matrix:
    """Sparse matrix of numpy.gradient(f, dt) with first-order one-sided ends."""
    if n_samples < 2:
        return sps.csr_matrix((n_samples, n_samples))
    rows, cols, vals = [0, 0], [0, 1], [-1.0 / dt, 1.0 / dt]
    for i in range(1, n_samples - 1):
        rows += [i, i]
        cols += [i - 1, i + 1]
        vals += [-0.5 / dt, 0.5 / dt]
    last = n_samples - 1
    rows += [last, last]
    cols += [last - 1, last]
    vals += [-1.0 / dt, 1.0 / dt]
    return sps.coo_matrix((vals, (rows, cols)), shape=(n_samples, n_samples)).tocsr()


@dataclass
class Drive:
    """Samples f(t_k) of the rotation drive at x = 1 on the grid t_k = t0 + k dt.

    Velocities f'(t_k) are central differences of the samples.
    """

    samples: np.ndarray
    dt: float
    t0: float = 0.0
    velocities: np.ndarray = field(init=False)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        self.velocities = gradient_operator(len(self.samples), self.dt) @ self.samples

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(len(self.samples))

    def index(self, t: float) -> int:
        k = int(round((t - self.t0) / self.dt))
        if k < 0 or k >= len(self.samples):
            raise ValueError(f"Drive has no sample at t={t}")
        return k


@dataclass
class Trajectory:
    """Time-ordered states with boundary traces at x = 1 and the uniform step dt."""

    states: List[BeamState]
    traces: Dict[str, np.ndarray]
    dt: float
    regime: RegimeKind

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.states])

    @property
    def initial(self) -> BeamState:
        return self.states[0]

    @property
    def final(self) -> BeamState:
        return self.states[-1]

    @property
    def displacements(self) -> np.ndarray:
        return np.stack([s.u for s in self.states])

    @property
    def velocities(self) -> np.ndarray:
        return np.stack([s.v for s in self.states])

    def trace(self, name: str) -> np.ndarray:
        if name not in self.traces:
            raise KeyError(f"Trajectory has no trace '{name}'")
        return self.traces[name]

    def to_frame(self, energies: np.ndarray) -> pd.DataFrame:
        """CSV layout: t, E_h, y(1), y_x(1), y_t(1), y_tx(1), y_xx(1)."""
        frame = pd.DataFrame({"t": self.times, "E_h": energies})
        for name in TRACE_NAMES:
            frame[f"{name}(1)"] = self.traces[name]
        return frame


@dataclass
class EnergyTrace:
    """Discrete energies along a trajectory."""

    times: np.ndarray
    energies: np.ndarray
    regime: RegimeKind
