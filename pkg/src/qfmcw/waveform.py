"""Linear-FM (sawtooth / triangle) waveform: frequency, phase, field and spectrum.

Conventions: angular frequencies in rad/s, times in s. The phase returned by
`instantaneous_phase` is the integral of the instantaneous frequency from the
waveform origin, so its time derivative equals `instantaneous_frequency` on
both edges of the triangle.
"""
from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, RegimeError

C_LIGHT = 299_792_458.0  # m/s, exact


class Family(enum.Enum):
    SAWTOOTH = "sawtooth"
    TRIANGLE = "triangle"


@dataclass(frozen=True)
class ModulationConfig:
    """Chirp law of one modulation period.

    ``t_origin`` is the chirp start for a sawtooth and the apex time (maximum
    frequency) for a triangle.
    """

    family: Family
    omega0: float
    delta_omega: float
    period: float
    t_origin: float = 0.0

    def __post_init__(self):
        if not isinstance(self.family, Family):
            object.__setattr__(self, "family", Family(self.family))
        for name in ("omega0", "delta_omega", "period", "t_origin"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise ConfigurationError(f"{name} must be finite, got {value!r}")
            object.__setattr__(self, name, value)
        if self.delta_omega <= 0:
            raise ConfigurationError(f"delta_omega must be > 0, got {self.delta_omega}")
        if self.period <= 0:
            raise ConfigurationError(f"period must be > 0, got {self.period}")
        if self.omega0 <= self.delta_omega:
            raise ConfigurationError(
                f"omega0 ({self.omega0}) must exceed delta_omega ({self.delta_omega})")
        if self.omega0 < 10 * self.delta_omega:
            warnings.warn("omega0/delta_omega < 10: narrowband approximations are loose",
                          RuntimeWarning, stacklevel=3)

    @classmethod
    def from_optical(cls, family, wavelength0: float, delta_f: float, period: float,
                     t_origin: float = 0.0) -> "ModulationConfig":
        """Build from start wavelength (m), sweep bandwidth (Hz) and period (s)."""
        return cls(family, 2 * math.pi * C_LIGHT / wavelength0, 2 * math.pi * delta_f,
                   period, t_origin)

    @property
    def omega_c(self) -> float:
        """Center angular frequency of the sweep."""
        return self.omega0 + 0.5 * self.delta_omega

    @property
    def lambda0(self) -> float:
        return 2 * math.pi * C_LIGHT / self.omega0

    @property
    def lambda_c(self) -> float:
        return 2 * math.pi * C_LIGHT / self.omega_c

    @property
    def slope(self) -> float:
        """Magnitude of the chirp rate d(omega)/dt."""
        if self.family is Family.SAWTOOTH:
            return self.delta_omega / self.period
        return 2 * self.delta_omega / self.period

    def period_bounds(self) -> tuple[float, float]:
        """Closed interval of the reference period used for modular reduction."""
        if self.family is Family.SAWTOOTH:
            return self.t_origin, self.t_origin + self.period
        half = 0.5 * self.period
        return self.t_origin - half, self.t_origin + half


@dataclass(frozen=True)
class TimeGrid:
    """Uniform sample times ``start + p*dt`` for ``p = 0 .. n_points-1``."""

    start: float
    n_points: int
    dt: float

    def __post_init__(self):
        if int(self.n_points) != self.n_points or self.n_points < 2:
            raise ConfigurationError(f"n_points must be an integer >= 2, got {self.n_points}")
        if not self.dt > 0:
            raise ConfigurationError(f"dt must be > 0, got {self.dt}")
        object.__setattr__(self, "n_points", int(self.n_points))

    @classmethod
    def one_period(cls, cfg: ModulationConfig, j_b: int) -> "TimeGrid":
        """``j_b`` intervals covering the reference period, both ends included."""
        lo, _ = cfg.period_bounds()
        return cls(lo, j_b + 1, cfg.period / j_b)

    @classmethod
    def period_midpoints(cls, cfg: ModulationConfig, n_cells: int) -> "TimeGrid":
        """Centers of ``n_cells`` equal cells tiling the reference period.

        Sums over this grid are midpoint-rule integrals with no endpoint double count.
        """
        lo, _ = cfg.period_bounds()
        dt = cfg.period / n_cells
        return cls(lo + 0.5 * dt, n_cells, dt)

    @property
    def span(self) -> float:
        return (self.n_points - 1) * self.dt

    @property
    def times(self) -> np.ndarray:
        return self.start + self.dt * np.arange(self.n_points)

    def check_within(self, cfg: ModulationConfig) -> None:
        if self.span > cfg.period * (1 + 1e-12):
            raise ConfigurationError(
                f"grid span {self.span} s exceeds the modulation period {cfg.period} s")


@dataclass(frozen=True)
class SpectrumSample:
    omega_j: float  # offset from omega0, rad/s
    amplitude: complex


def reduce_time(cfg: ModulationConfig, t):
    """Map t into the reference period; values already inside are untouched."""
    lo, hi = cfg.period_bounds()
    t = np.asarray(t, dtype=float)
    inside = (t >= lo) & (t <= hi)
    return np.where(inside, t, lo + np.mod(t - lo, cfg.period))


def _rising(cfg: ModulationConfig, t):
    return t <= cfg.t_origin


def instantaneous_frequency(cfg: ModulationConfig, t):
    t = reduce_time(cfg, t)
    if cfg.family is Family.SAWTOOTH:
        out = cfg.slope * (t - cfg.t_origin) + cfg.omega0
    else:
        u = t - cfg.t_origin
        apex = cfg.omega0 + cfg.delta_omega
        out = np.where(_rising(cfg, t), apex + cfg.slope * u, apex - cfg.slope * u)
    return out[()] if out.ndim == 0 else out


def instantaneous_phase(cfg: ModulationConfig, t):
    """Phase accumulated from the waveform origin (rad)."""
    t = reduce_time(cfg, t)
    u = t - cfg.t_origin
    if cfg.family is Family.SAWTOOTH:
        out = cfg.omega0 * u + 0.5 * cfg.slope * u * u
    else:
        apex = cfg.omega0 + cfg.delta_omega
        quad = 0.5 * cfg.slope * u * u
        out = np.where(_rising(cfg, t), apex * u + quad, apex * u - quad)
    return out[()] if out.ndim == 0 else out


def field_amplitude(cfg: ModulationConfig, t, alpha: complex = 1.0):
    return alpha * np.exp(1j * instantaneous_phase(cfg, t))


def beat_phase(cfg: ModulationConfig, t, tau: float, omega_d: float):
    """Phase of the reference minus phase of the delayed, Doppler-shifted echo.

    Narrowband form: a constant offset set by the delay plus a linear term at
    the edge's beat frequency, measured from the waveform origin.
    """
    check_delay(cfg, tau)
    t = reduce_time(cfg, t)
    u = t - cfg.t_origin
    omega_b = cfg.slope * tau
    if cfg.family is Family.SAWTOOTH:
        out = (cfg.omega0 - omega_d) * tau + (omega_b + omega_d) * u
    else:
        offset = (cfg.omega0 - omega_d + cfg.delta_omega) * tau
        rate = np.where(_rising(cfg, t), omega_b + omega_d, -omega_b + omega_d)
        out = offset + rate * u
    return out[()] if np.ndim(out) == 0 else out


def check_delay(cfg: ModulationConfig, tau: float) -> None:
    if tau < 0:
        raise RegimeError(f"delay must be non-negative, got {tau}")
    if tau > cfg.period / 100:
        raise RegimeError(
            f"delay {tau:.3e} s exceeds period/100 = {cfg.period / 100:.3e} s; "
            "the narrowband echo model does not apply")


def echo_field(cfg: ModulationConfig, t, tau: float, omega_d: float, alpha: complex = 1.0):
    """Delayed, Doppler-shifted echo of the reference field (narrowband model)."""
    return field_amplitude(cfg, t, alpha) * np.exp(-1j * beat_phase(cfg, t, tau, omega_d))


def discrete_spectrum(cfg: ModulationConfig, grid: TimeGrid) -> list[SpectrumSample]:
    """Normalized Fourier-series coefficients of one period of the field.

    The field is demodulated by omega0 first; ``omega_j`` values are offsets
    from omega0 on the 2*pi/period lattice, centered on the sweep center.
    """
    offsets, amps = spectrum_arrays(cfg, grid)
    return [SpectrumSample(float(w), complex(a)) for w, a in zip(offsets, amps)]


def spectrum_arrays(cfg: ModulationConfig, grid: TimeGrid) -> tuple[np.ndarray, np.ndarray]:
    """Array form of `discrete_spectrum` (offsets in rad/s, complex amplitudes)."""
    j_b = grid.n_points - 1
    if not math.isclose(grid.span, cfg.period, rel_tol=1e-9):
        raise ConfigurationError(
            f"spectrum grid must span exactly one period ({cfg.period} s), spans {grid.span} s")
    t = grid.times[:-1]
    u = t - cfg.t_origin
    # envelope phase phi(t) - omega0*u, computed without the large carrier term
    if cfg.family is Family.SAWTOOTH:
        env = 0.5 * cfg.slope * u * u
    else:
        quad = 0.5 * cfg.slope * u * u
        env = cfg.delta_omega * u + np.where(u <= 0, quad, -quad)
    j_c = round(0.5 * cfg.delta_omega * cfg.period / (2 * math.pi))
    carrier = 2 * math.pi * j_c / cfg.period
    # shift by an integer number of lattice lines so the band sits mid-array
    baseband = np.exp(1j * (env - carrier * (t - grid.start)))
    coeffs = np.fft.fftshift(np.fft.fft(baseband)) / j_b
    k = np.arange(j_b) - j_b // 2
    offsets = carrier + 2 * math.pi * k / cfg.period
    coeffs /= math.sqrt(np.sum(np.abs(coeffs) ** 2))
    return offsets, coeffs
