"""Tone and target estimation from counting records.

A periodogram gives the coarse beat frequency; the raised-cosine binomial
likelihood is then maximized locally (profiled line search in frequency,
followed by Fisher scoring on frequency, phase and visibility).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.special import xlogy

from .channel import Edge, invert_beat, wrap_phase
from .errors import ConfigurationError, DomainError
from .sampling import CountRecord
from .waveform import C_LIGHT, Family, ModulationConfig

GOLDEN = (math.sqrt(5) - 1) / 2
V_MAX = 1 - 1e-12  # keeps both outcome probabilities strictly positive


@dataclass(frozen=True)
class SearchSettings:
    tol_bins: float = 1e-12       # golden-section stopping width, in DFT bins
    prescan_points: int = 17      # profile evaluations across +-1 bin before bracketing
    max_scoring_steps: int = 60
    scoring_tol: float = 1e-14    # relative step size that ends Fisher scoring
    flat_power: float = 1e-20     # AC/DC power ratio below which the record is flat


class Periodogram(NamedTuple):
    omega: np.ndarray
    power: np.ndarray


@dataclass(frozen=True)
class ToneEstimate:
    omega_hat: float
    theta_hat: float
    amplitude_hat: float
    log_likelihood: float
    degenerate: bool = False
    coarse_log_likelihood: float = -math.inf


@dataclass(frozen=True)
class TargetEstimate:
    d_hat: float
    v_hat: float
    theta0_hat: float
    theta1_hat: float
    edge_estimates: tuple
    flags: frozenset = field(default_factory=frozenset)

    @property
    def degenerate(self) -> bool:
        return "degenerate" in self.flags

    @property
    def phase_ambiguous(self) -> bool:
        return "phase_ambiguous" in self.flags


class PhaseVelocity(NamedTuple):
    velocity: float
    delta_theta: float
    ambiguous: bool


def _check_record(record: CountRecord, edge: Edge) -> None:
    if record.edge is not edge:
        raise DomainError(f"record holds the {record.edge.value} window, not {edge.value}")
    if record.grid.n_points < 8:
        raise ConfigurationError(
            f"record has {record.grid.n_points} bins; at least 8 are needed for a periodogram")


def periodogram(record: CountRecord, edge: Edge = Edge.RISING) -> Periodogram:
    _check_record(record, edge)
    x = np.asarray(record.counts_port1, dtype=float)
    spec = np.fft.rfft(x - x.mean())
    window = record.grid.n_points * record.grid.dt
    omega = 2 * math.pi * np.arange(spec.size) / window
    return Periodogram(omega, np.abs(spec) ** 2)


class _ToneProblem:
    """Binomial raised-cosine likelihood on centered, window-scaled times."""

    def __init__(self, record: CountRecord):
        t = record.times
        self.t_mid = float(0.5 * (t[0] + t[-1]))
        self.scale = float(0.5 * record.grid.n_points * record.grid.dt)
        self.s = (t - self.t_mid) / self.scale
        self.x = np.asarray(record.counts_port1, dtype=float)
        self.n = np.asarray(record.trials_per_bin, dtype=float)
        self.y = np.divide(self.x, self.n, out=np.full_like(self.x, 0.5), where=self.n > 0) - 0.5

    def loglik(self, nu, phi, vis) -> float:
        c = vis * np.cos(nu * self.s + phi)
        return float(np.sum(xlogy(self.x, 0.5 * (1 + c)) + xlogy(self.n - self.x, 0.5 * (1 - c))))

    def profile(self, nu) -> tuple[float, float, float]:
        """Least-squares phase and visibility at fixed frequency, then the likelihood."""
        arg = nu * self.s
        cs, sn = np.cos(arg), np.sin(arg)
        gram = np.array([[cs @ cs, cs @ sn], [cs @ sn, sn @ sn]])
        rhs = np.array([cs @ self.y, sn @ self.y])
        try:
            b, c = np.linalg.solve(gram, rhs)
        except np.linalg.LinAlgError:
            return -math.inf, 0.0, 0.0
        vis = min(2 * math.hypot(b, c), V_MAX)
        phi = math.atan2(-c, b)
        return self.loglik(nu, phi, vis), phi, vis

    def score(self, beta, fix_vis: bool):
        """Gradient and expected information in (nu, phi, vis)."""
        nu, phi, vis = beta
        psi = nu * self.s + phi
        cos, sin = np.cos(psi), np.sin(psi)
        p = 0.5 * (1 + vis * cos)
        q = 0.5 * (1 - vis * cos)
        var = np.maximum(p * q, 1e-300)
        jac = np.stack([-0.5 * vis * sin * self.s, -0.5 * vis * sin, 0.5 * cos], axis=1)
        if fix_vis:
            jac = jac[:, :2]
        resid = (self.x - self.n * p) / var
        grad = jac.T @ resid
        info = (jac * (self.n / var)[:, None]).T @ jac
        return grad, info


def estimate_tone(record: CountRecord, edge: Edge = Edge.RISING,
                  search: SearchSettings | None = None) -> ToneEstimate:
    search = search or SearchSettings()
    pg = periodogram(record, edge)
    prob = _ToneProblem(record)
    dc = float(np.sum(record.counts_port1)) ** 2
    ac = pg.power[1:]
    if ac.size == 0 or not np.max(ac) > search.flat_power * max(dc, 1e-300):
        # no oscillation: report a zero-frequency tone matching the mean fraction
        frac = float(np.clip(0.5 + np.mean(prob.y), 0.0, 1.0))
        theta = math.acos(2 * frac - 1)
        return ToneEstimate(0.0, theta, 1.0, prob.loglik(0.0, theta, V_MAX), degenerate=True)

    k = int(np.argmax(ac)) + 1
    # scaled frequency nu = omega * half-window, so one DFT bin is pi
    bin_nu = math.pi
    nu_k = pg.omega[k] * prob.scale
    coarse_ll, _, _ = prob.profile(nu_k)

    lo, hi = nu_k - bin_nu, nu_k + bin_nu
    grid = np.linspace(lo, hi, search.prescan_points)
    vals = [prob.profile(nu)[0] for nu in grid]
    i = int(np.argmax(vals))
    a, b = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
    nu_best = _golden_max(lambda nu: prob.profile(nu)[0], a, b, search.tol_bins * bin_nu)
    ll, phi, vis = prob.profile(nu_best)
    if vals[i] > ll:
        nu_best = grid[i]
        ll, phi, vis = prob.profile(nu_best)

    beta = np.array([nu_best, phi, vis])
    beta, ll = _fisher_scoring(prob, beta, ll, search)
    if not lo <= beta[0] <= hi:
        beta, ll = np.array([nu_best, phi, vis]), prob.loglik(nu_best, phi, vis)

    nu, phi, vis = beta
    if nu < 0:
        nu, phi = -nu, -phi
    omega = nu / prob.scale
    theta = float(wrap_phase(phi - omega * prob.t_mid))
    return ToneEstimate(float(omega), theta, float(vis), float(ll), False, float(coarse_ll))


def _golden_max(f, a: float, b: float, tol: float) -> float:
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def _fisher_scoring(prob: _ToneProblem, beta: np.ndarray, ll: float, search: SearchSettings):
    fix_vis = beta[2] >= V_MAX
    for _ in range(search.max_scoring_steps):
        grad, info = prob.score(beta, fix_vis)
        try:
            step = np.linalg.solve(info, grad)
        except np.linalg.LinAlgError:
            break
        if fix_vis:
            step = np.append(step, 0.0)
        accepted = False
        for _ in range(30):
            trial = beta + step
            if trial[2] > V_MAX:
                trial[2] = V_MAX
            trial[2] = max(trial[2], 0.0)
            trial_ll = prob.loglik(*trial)
            if trial_ll >= ll:
                accepted = True
                break
            step = 0.5 * step
        if not accepted:
            break
        moved = np.abs(trial - beta)
        beta, ll = trial, trial_ll
        fix_vis = beta[2] >= V_MAX
        if np.all(moved <= search.scoring_tol * np.maximum(1.0, np.abs(beta))):
            break
    return beta, ll


def estimate_target(rising: ToneEstimate, falling: ToneEstimate | None, cfg: ModulationConfig,
                    n: int) -> TargetEstimate:
    """Divide tone frequencies and phases by n and invert to range and velocity.

    The falling-edge beat is negative in the supported regime, so its tone
    phase is the negated beat phase.
    """
    if n < 1:
        raise ConfigurationError("n must be >= 1")
    flags = set()
    tones = (rising,) if falling is None else (rising, falling)
    if any(t.degenerate for t in tones):
        flags.add("degenerate")
    if n > 1:
        flags.add("phase_ambiguous")
    omega_b1 = rising.omega_hat / n
    theta0 = float(wrap_phase(rising.theta_hat / n))
    if cfg.family is Family.SAWTOOTH:
        d = C_LIGHT * cfg.period * omega_b1 / (2 * cfg.delta_omega)
        return TargetEstimate(max(d, 0.0), math.nan, theta0, math.nan, tones, frozenset(flags))
    if falling is None:
        raise ConfigurationError("triangle estimation needs both edge tones")
    abs_b2 = falling.omega_hat / n
    theta1 = float(wrap_phase(-falling.theta_hat / n))
    d, v = invert_beat(omega_b1, abs_b2, cfg)
    if d < 0:
        flags.add("clamped")
        d = 0.0
    return TargetEstimate(d, v, theta0, theta1, tones, frozenset(flags))


def resolution_limits(cfg: ModulationConfig, n: int = 1) -> tuple[float, float | None]:
    if n < 1:
        raise ConfigurationError("n must be >= 1")
    delta_d = (2 * math.pi / n) * C_LIGHT / (2 * cfg.delta_omega)
    if cfg.family is Family.SAWTOOTH:
        return delta_d, None
    return delta_d, (2 * math.pi / n) * C_LIGHT / (cfg.omega_c * cfg.period)


def velocity_from_phase_difference(theta_a: float, theta_b: float, cfg: ModulationConfig,
                                   margin: float = 1e-3) -> PhaseVelocity:
    """Radial velocity from sawtooth phases of two consecutive periods.

    Unambiguous only while the displacement per period stays below a quarter
    wavelength; differences within ``margin`` of pi are flagged.
    """
    dtheta = float(wrap_phase(theta_b - theta_a))
    omega_eff = cfg.omega0 - cfg.delta_omega * cfg.t_origin / cfg.period
    wavelength = 2 * math.pi * C_LIGHT / omega_eff
    v = dtheta / (2 * math.pi) * (wavelength / 2) / cfg.period
    return PhaseVelocity(v, dtheta, abs(dtheta) >= math.pi - margin)


ESTIMATE_HEADER = ("trial,d_hat_m,v_hat_m_s,theta0_hat_rad,theta1_hat_rad,"
                   "omega_rising_hat_rad_s,omega_falling_hat_rad_s,flags")


def estimate_row(trial: int, est: TargetEstimate) -> str:
    tones = est.edge_estimates
    w_f = tones[1].omega_hat if len(tones) > 1 else math.nan
    fields = [str(trial)] + [repr(float(v)) for v in
                             (est.d_hat, est.v_hat, est.theta0_hat, est.theta1_hat,
                              tones[0].omega_hat, w_f)]
    return ",".join(fields + [";".join(sorted(est.flags))])
