"""Detection statistics of chirped NOON states and coherent light.

All laws are closed-form raised cosines of the beat phase; the discrete-time
state amplitudes exist to cross-check them and to feed the numeric QFI.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .channel import BeatParams, DetectionWindows, Edge, Target, beat_parameters
from .errors import ConfigurationError, ConsistencyError, DomainError
from .waveform import Family, ModulationConfig, TimeGrid, instantaneous_phase

_EDGE_SLACK = 1e-12  # relative to the period, absorbs rounding on window edges


class Port(enum.Enum):
    PD1 = 1
    PD2 = 0


class StateConvention(enum.Enum):
    """Phase convention of the rising-edge branch in the state vector.

    ANALYTIC writes both edges with the conventional field phase.
    CONJUGATE_RISING writes the rising edge with the opposite sign, i.e. the
    complex conjugate of every rising-edge amplitude. Detection laws are the
    same under both; only the sign of the theta0/theta1 QFI coupling differs.
    """

    ANALYTIC = "analytic"
    CONJUGATE_RISING = "conjugate_rising"

    def edge_sign(self, edge: Edge) -> float:
        return -1.0 if self is StateConvention.CONJUGATE_RISING and edge is Edge.RISING else 1.0


@dataclass(frozen=True)
class NoonModel:
    n: int
    cfg: ModulationConfig
    windows: DetectionWindows = field(default=None)

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ConfigurationError(f"photon number n must be an integer >= 1, got {self.n}")
        object.__setattr__(self, "n", int(self.n))
        if self.windows is None:
            object.__setattr__(self, "windows", DetectionWindows.default(self.cfg))

    def edges(self) -> tuple[Edge, ...]:
        if self.cfg.family is Family.SAWTOOTH:
            return (Edge.RISING,)
        return (Edge.RISING, Edge.FALLING)

    def window(self, edge: Edge) -> tuple[float, float]:
        return self.windows.bounds(self.cfg, edge)


@dataclass(frozen=True)
class BranchAmplitudes:
    grid: TimeGrid
    ref_amp: np.ndarray
    echo_amp: np.ndarray

    def norm(self) -> float:
        return float(np.sum(np.abs(self.ref_amp) ** 2) + np.sum(np.abs(self.echo_amp) ** 2))

    def state(self) -> np.ndarray:
        """Flat state vector: reference branch then echo branch."""
        return np.concatenate([self.ref_amp, self.echo_amp])


def _in_window(model: NoonModel, edge: Edge, t: np.ndarray) -> np.ndarray:
    lo, hi = model.window(edge)
    slack = _EDGE_SLACK * model.cfg.period
    return (t >= lo - slack) & (t <= hi + slack)


def resolve_edge(model: NoonModel, t, edge: Edge | None = None) -> Edge:
    """Check that every t lies in the edge window, inferring the edge if needed.

    With the default windows both edge clocks span the same interval, so the
    edge must then be given explicitly.
    """
    t = np.asarray(t, dtype=float)
    if model.cfg.family is Family.SAWTOOTH:
        edge = Edge.RISING
    if edge is not None:
        if not np.all(_in_window(model, edge, t)):
            lo, hi = model.window(edge)
            raise DomainError(f"time outside the {edge.value} detection window [{lo}, {hi}]")
        return edge
    candidates = [e for e in model.edges() if np.all(_in_window(model, e, t))]
    if not candidates:
        raise DomainError("time outside both detection windows")
    if len(candidates) > 1:
        raise DomainError("time lies in both detection windows; pass the edge explicitly")
    return candidates[0]


def beat_argument(n: int, beat: BeatParams, edge: Edge, t):
    """n times the beat phase on the edge's detection clock."""
    omega, theta = beat.edge_tone(edge)
    return n * (omega * np.asarray(t, dtype=float)) + n * theta


def _clamp(p):
    lo, hi = np.min(p), np.max(p)
    if lo < -1e-12 or hi > 1 + 1e-12:
        raise ConsistencyError(f"probability out of range: [{lo}, {hi}]")
    return np.clip(p, 0.0, 1.0)


def edge_probability(n: int, beat: BeatParams, edge: Edge, t):
    """Bright-port probability from beat parameters (no window check)."""
    out = _clamp(0.5 * (1.0 + np.cos(beat_argument(n, beat, edge, t))))
    return out[()] if np.ndim(out) == 0 else out


def port_probabilities(n: int, beat: BeatParams, edge: Edge, t) -> tuple[np.ndarray, np.ndarray]:
    """(p1, p0) evaluated as cos^2 and sin^2 of half the argument.

    Same law as `edge_probability`, but each outcome keeps full relative
    precision where it approaches zero.
    """
    half = 0.5 * beat_argument(n, beat, edge, t)
    return np.cos(half) ** 2, np.sin(half) ** 2


def noon_probability(model: NoonModel, target: Target, t, edge: Edge | None = None):
    edge = resolve_edge(model, t, edge)
    beat = beat_parameters(target, model.cfg, model.windows)
    return edge_probability(model.n, beat, edge, t)


def coincidence_probability(model: NoonModel, target: Target, t, edge: Edge | None = None):
    """Two-photon coincidence probability (delta-correlated pairs)."""
    if model.n != 2:
        raise ConfigurationError("coincidence counting requires n = 2")
    return noon_probability(model, target, t, edge)


def coherent_intensity(alpha: complex, cfg: ModulationConfig, windows: DetectionWindows | None,
                       target: Target, t, port: Port, edge: Edge | None = None):
    """Mean intensity at a detector for a coherent probe of amplitude alpha."""
    model = NoonModel(1, cfg, windows)
    power = abs(alpha) ** 2
    i1 = power * noon_probability(model, target, t, edge)
    return i1 if Port(port) is Port.PD1 else power - i1


def beamsplitter_transform(in1, in2):
    s = 1 / math.sqrt(2)
    return (in1 + in2) * s, (in1 - in2) * s


def local_time(model: NoonModel, edge: Edge, t_physical):
    """Map physical time to the edge's detection clock."""
    t_physical = np.asarray(t_physical, dtype=float)
    if model.cfg.family is Family.SAWTOOTH:
        return t_physical
    anchor = model.windows.t_d0 if edge is Edge.RISING else model.windows.t_d1
    return t_physical - model.cfg.t_origin + anchor


def branch_amplitudes(model: NoonModel, beat: BeatParams, grid: TimeGrid,
                      convention: StateConvention = StateConvention.CONJUGATE_RISING
                      ) -> BranchAmplitudes:
    """State amplitudes on a physical-time grid for given beat parameters."""
    cfg = model.cfg
    grid.check_within(cfg)
    lo, hi = cfg.period_bounds()
    t = grid.times
    slack = _EDGE_SLACK * cfg.period
    if t[0] < lo - slack or t[-1] > hi + slack:
        raise ConfigurationError(f"amplitude grid must lie within the period [{lo}, {hi}]")
    norm = 1 / math.sqrt(2 * grid.n_points)
    rising = t <= cfg.t_origin if cfg.family is Family.TRIANGLE else np.ones(t.shape, bool)
    dphi = np.empty_like(t)
    sign = np.ones_like(t)
    for edge, mask in ((Edge.RISING, rising), (Edge.FALLING, ~rising)):
        if np.any(mask):
            dphi[mask] = beat_argument(model.n, beat, edge, local_time(model, edge, t[mask]))
            sign[mask] = StateConvention(convention).edge_sign(edge)
    ref = np.exp(-1j * sign * model.n * instantaneous_phase(cfg, t)) * norm
    echo = -ref * np.exp(1j * sign * dphi)
    return BranchAmplitudes(grid, ref, echo)


def noon_state_amplitudes(model: NoonModel, target: Target, grid: TimeGrid,
                          convention: StateConvention = StateConvention.CONJUGATE_RISING
                          ) -> BranchAmplitudes:
    return branch_amplitudes(model, beat_parameters(target, model.cfg, model.windows), grid,
                             convention)


def projector_probabilities(amps: BranchAmplitudes) -> np.ndarray:
    """Bright-port probability at each grid time from the projector overlaps."""
    overlap = (amps.ref_amp - amps.echo_amp) / math.sqrt(2)
    return amps.grid.n_points * np.abs(overlap) ** 2
