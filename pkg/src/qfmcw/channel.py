"""Target-to-beat mapping (delay and Doppler) and its inverse."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, UnsupportedError
from .waveform import C_LIGHT, Family, ModulationConfig, check_delay


class Edge(enum.Enum):
    RISING = "rising"
    FALLING = "falling"


def wrap_phase(x):
    """Principal value in (-pi, pi]."""
    out = math.pi - np.mod(math.pi - np.asarray(x, dtype=float), 2 * math.pi)
    return out[()] if out.ndim == 0 else out


@dataclass(frozen=True)
class Target:
    range_d: float
    velocity_v: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.range_d) and self.range_d >= 0):
            raise ConfigurationError(f"range must be finite and >= 0, got {self.range_d}")
        if not (math.isfinite(self.velocity_v) and abs(self.velocity_v) < C_LIGHT / 1000):
            raise ConfigurationError(
                f"|velocity| must be below c/1000, got {self.velocity_v}")


@dataclass(frozen=True)
class DetectionWindows:
    """Per-edge detection clocks.

    The rising-edge window is ``[t_d0 - T/2, t_d0]`` and the falling-edge
    window ``[t_d1, t_d1 + T/2]``, each measured on its own clock whose origin
    is chosen so the window covers the whole edge. The apex of the triangle
    sits at ``t_d0`` on the rising clock and at ``t_d1`` on the falling clock.
    Phases theta0/theta1 are the beat phases at time 0 on each clock, which
    makes the reference offsets T1 = t_d0 and T2 = -t_d1.
    """

    t_d0: float
    t_d1: float

    @classmethod
    def default(cls, cfg: ModulationConfig) -> "DetectionWindows":
        return cls(0.25 * cfg.period, -0.25 * cfg.period)

    def bounds(self, cfg: ModulationConfig, edge: Edge) -> tuple[float, float]:
        if cfg.family is Family.SAWTOOTH:
            return cfg.t_origin, cfg.t_origin + cfg.period
        half = 0.5 * cfg.period
        if edge is Edge.RISING:
            return self.t_d0 - half, self.t_d0
        return self.t_d1, self.t_d1 + half

    @property
    def t1(self) -> float:
        return self.t_d0

    @property
    def t2(self) -> float:
        return -self.t_d1


@dataclass(frozen=True)
class BeatParams:
    """Beat signature of one target; phases are principal values."""

    omega_b: float
    omega_d: float
    theta0: float
    theta1: float

    @property
    def omega_b1(self) -> float:
        return self.omega_b + self.omega_d

    @property
    def omega_b2(self) -> float:
        return -self.omega_b + self.omega_d

    @property
    def regime_ok(self) -> bool:
        """True when the falling-edge beat is negative, as the inversion assumes."""
        return self.omega_b > abs(self.omega_d)

    def edge_tone(self, edge: Edge) -> tuple[float, float]:
        """(signed frequency, phase) of the beat on one edge."""
        if edge is Edge.RISING:
            return self.omega_b1, self.theta0
        return self.omega_b2, self.theta1


def time_of_flight(target: Target, t=0.0):
    t = np.asarray(t, dtype=float)
    out = 2 * (target.range_d + target.velocity_v * t) / C_LIGHT
    return out[()] if out.ndim == 0 else out


def doppler_shift(cfg: ModulationConfig, velocity: float) -> float:
    return cfg.omega_c * 2 * velocity / C_LIGHT


def beat_parameters(target: Target, cfg: ModulationConfig,
                    windows: DetectionWindows | None = None) -> BeatParams:
    tau = 2 * target.range_d / C_LIGHT
    check_delay(cfg, tau)
    omega_b = cfg.slope * tau
    if cfg.family is Family.SAWTOOTH:
        # single edge: Doppler is not separable and is ignored
        theta = (cfg.omega0 - cfg.delta_omega * cfg.t_origin / cfg.period) * tau
        return BeatParams(omega_b, 0.0, float(wrap_phase(theta)), 0.0)
    if windows is None:
        windows = DetectionWindows.default(cfg)
    omega_d = doppler_shift(cfg, target.velocity_v)
    offset = (cfg.omega0 - omega_d + cfg.delta_omega) * tau
    theta0 = offset - (omega_b + omega_d) * windows.t_d0
    theta1 = offset - (-omega_b + omega_d) * windows.t_d1
    return BeatParams(omega_b, omega_d, float(wrap_phase(theta0)), float(wrap_phase(theta1)))


def invert_beat(omega_b1: float, abs_omega_b2: float, cfg: ModulationConfig) -> tuple[float, float]:
    """Recover (range, velocity) from the two edge beat magnitudes.

    Valid only when the range beat exceeds the Doppler shift, i.e. the
    falling-edge beat is negative; magnitudes alone cannot reveal the other case.
    """
    if cfg.family is not Family.TRIANGLE:
        raise UnsupportedError("range and velocity are not separable with a single sawtooth edge")
    if omega_b1 < 0 or abs_omega_b2 < 0:
        raise ConfigurationError("beat magnitudes must be non-negative")
    tau = (cfg.period / (2 * cfg.delta_omega)) * 0.5 * (omega_b1 + abs_omega_b2)
    omega_d = 0.5 * (omega_b1 - abs_omega_b2)
    return C_LIGHT * tau / 2, C_LIGHT * omega_d / (2 * cfg.omega_c)
