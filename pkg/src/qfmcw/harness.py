"""Monte Carlo and resolution experiments, plus result export."""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .channel import DetectionWindows, Edge, Target, beat_parameters, wrap_phase
from .errors import ConfigurationError
from .estimation import (ESTIMATE_HEADER, TargetEstimate, estimate_row, estimate_target,
                         estimate_tone, periodogram)
from .fisher import (FisherResult, Parametrization, cfi_closed_sawtooth, cfi_closed_triangle, crb,
                     read_fisher_file)
from .quantum import NoonModel, edge_probability
from .sampling import (CountRecord, RecordFamily, RngSpec, expected_noon_record,
                       sample_noon_record, window_grid)
from .waveform import C_LIGHT, Family, ModulationConfig

UNRELIABLE_FLAGS = frozenset({"degenerate", "clamped"})


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment: waveform, target(s), photon number and sampling budget.

    ``emissions_total`` counts emitted n-photon states per modulation period
    (nu*T_m). They are spread evenly over the bins of every detection window,
    so ``emissions_total / (windows * bins_per_window)`` must be an integer
    unless ``zero_noise`` is set.
    """

    cfg: ModulationConfig
    targets: tuple[Target, ...]
    n: int = 1
    emissions_total: float = 1e4
    trials: int = 500
    rng: RngSpec = RngSpec(0)
    bins_per_window: int = 5000
    windows: DetectionWindows | None = None
    zero_noise: bool = False
    efficiency_band: tuple[float, float] = (1.0, 1.3)
    unreliable_fraction: float = 0.2
    threads: int = 1
    records_kept: int = 1

    def __post_init__(self):
        if isinstance(self.targets, Target):
            object.__setattr__(self, "targets", (self.targets,))
        if not self.targets:
            raise ConfigurationError("at least one target is required")
        if self.trials < 2:
            raise ConfigurationError(f"trials must be >= 2, got {self.trials}")
        if not self.emissions_total > 0:
            raise ConfigurationError(f"emissions_total must be > 0, got {self.emissions_total}")
        if self.threads < 1:
            raise ConfigurationError("threads must be >= 1")
        lo, hi = self.efficiency_band
        if not 0 < lo <= hi:
            raise ConfigurationError(f"efficiency band must satisfy 0 < low <= high, got {lo}, {hi}")
        if not 0 <= self.unreliable_fraction <= 1:
            raise ConfigurationError("unreliable_fraction must lie in [0, 1]")
        NoonModel(self.n, self.cfg, self.windows)

    @property
    def target(self) -> Target:
        return self.targets[0]

    def model(self) -> NoonModel:
        return NoonModel(self.n, self.cfg, self.windows)

    def emissions_per_bin(self) -> float:
        per_bin = self.emissions_total / (len(self.model().edges()) * self.bins_per_window)
        if not self.zero_noise and (per_bin < 1 or per_bin != int(per_bin)):
            raise ConfigurationError(
                f"emissions_total / (windows * bins_per_window) = {per_bin} must be a positive "
                "integer for sampled records")
        return per_bin


@dataclass
class TrialStats:
    parameter_order: tuple
    truth: np.ndarray
    sample_mean: np.ndarray
    sample_cov: np.ndarray
    crb: np.ndarray
    efficiency: np.ndarray
    efficiency_se: np.ndarray
    trials_used: int
    flags_count: int
    unreliable: bool
    band: tuple[float, float]
    estimates: list = field(default_factory=list, repr=False)
    records: list = field(default_factory=list, repr=False)

    @property
    def within_band(self) -> np.ndarray:
        return (self.efficiency >= self.band[0]) & (self.efficiency <= self.band[1])

    def entry(self, label: str) -> int:
        return self.parameter_order.index(label)


def _parameter_order(cfg: ModulationConfig) -> tuple:
    return ("d", "theta") if cfg.family is Family.SAWTOOTH else ("d", "v", "theta0", "theta1")


def _truth(ec: ExperimentConfig) -> np.ndarray:
    beat = beat_parameters(ec.target, ec.cfg, ec.model().windows)
    if ec.cfg.family is Family.SAWTOOTH:
        return np.array([ec.target.range_d, beat.theta0])
    return np.array([ec.target.range_d, ec.target.velocity_v, beat.theta0, beat.theta1])


def _estimate_vector(est: TargetEstimate, cfg: ModulationConfig) -> np.ndarray:
    if cfg.family is Family.SAWTOOTH:
        return np.array([est.d_hat, est.theta0_hat])
    return np.array([est.d_hat, est.v_hat, est.theta0_hat, est.theta1_hat])


def _deviation(est: np.ndarray, truth: np.ndarray, n: int, cfg: ModulationConfig) -> np.ndarray:
    """Estimate minus truth; phases compared modulo the 2*pi/n ambiguity."""
    dev = est - truth
    first_phase = 1 if cfg.family is Family.SAWTOOTH else 2
    dev[first_phase:] = wrap_phase(n * dev[first_phase:]) / n
    return dev


def closed_form_crb(ec: ExperimentConfig) -> np.ndarray:
    """Classical bound per trial in (d, [v,] phases) for the configured budget."""
    if ec.cfg.family is Family.SAWTOOTH:
        fr = cfi_closed_sawtooth(ec.cfg, ec.n, parametrization=Parametrization.RANGE)
    else:
        fr = cfi_closed_triangle(ec.cfg, ec.n, Parametrization.RANGE, ec.windows)
    return crb(fr, ec.emissions_total)


def simulate_trial(ec: ExperimentConfig, trial: int) -> tuple[list[CountRecord], TargetEstimate]:
    """Sample one period's records and estimate the target from them."""
    model = ec.model()
    per_bin = ec.emissions_per_bin()
    records = []
    for index, edge in enumerate(model.edges()):
        grid = window_grid(model, edge, ec.bins_per_window)
        if ec.zero_noise:
            rec = expected_noon_record(model, ec.target, grid, per_bin, edge)
        else:
            rec = sample_noon_record(model, ec.target, grid, int(per_bin),
                                     ec.rng.child(trial, index), edge)
        rec.meta.update(trial=trial)
        records.append(rec)
    tones = [estimate_tone(rec, rec.edge) for rec in records]
    est = estimate_target(tones[0], tones[1] if len(tones) > 1 else None, ec.cfg, ec.n)
    return records, est


def run_monte_carlo(ec: ExperimentConfig) -> TrialStats:
    """Repeat sample-then-estimate and compare the spread with the closed-form CRB.

    Results depend only on the configuration: every trial owns its random
    streams, and outputs are ordered by trial index regardless of threading.
    """
    ec.emissions_per_bin()
    keep = min(ec.records_kept, ec.trials)

    def work(trial):
        records, est = simulate_trial(ec, trial)
        return (records if trial < keep else None), est

    if ec.threads == 1:
        results = [work(i) for i in range(ec.trials)]
    else:
        with ThreadPoolExecutor(max_workers=ec.threads) as pool:
            results = list(pool.map(work, range(ec.trials)))

    estimates = [est for _, est in results]
    records = [r for r, _ in results if r is not None]
    flagged = [bool(UNRELIABLE_FLAGS & est.flags) for est in estimates]
    truth = _truth(ec)
    used = [i for i, f in enumerate(flagged) if not f]
    k = truth.size
    if len(used) >= 2:
        devs = np.array([_deviation(_estimate_vector(estimates[i], ec.cfg), truth, ec.n, ec.cfg)
                         for i in used])
        mean_dev = devs.mean(axis=0)
        centered = devs - mean_dev
        cov = centered.T @ centered / (len(used) - 1)
    else:
        mean_dev = np.full(k, math.nan)
        cov = np.full((k, k), math.nan)
    bound = closed_form_crb(ec)
    eff = np.diag(cov) / np.diag(bound)
    eff_se = eff * math.sqrt(2 / max(len(used) - 1, 1))
    unreliable = sum(flagged) > ec.unreliable_fraction * ec.trials
    return TrialStats(_parameter_order(ec.cfg), truth, truth + mean_dev, cov, bound, eff, eff_se,
                      len(used), sum(flagged), unreliable, ec.efficiency_band, estimates, records)


# --- resolution -----------------------------------------------------------------

@dataclass(frozen=True)
class ResolutionReport:
    separable: bool
    peak_separation_bins: float
    peak_bins: tuple[int, ...]
    tone_bins: tuple[float, float]
    n: int
    separation_m: float


def on_grid_range(cfg: ModulationConfig, windows: DetectionWindows | None, approx_range: float,
                  velocity: float = 0.0) -> float:
    """Nearest range whose rising-edge beat (n = 1) falls exactly on a DFT bin.

    Integer bins at n = 1 stay integer at every n.
    """
    model = NoonModel(1, cfg, windows)
    lo, hi = model.window(Edge.RISING)
    span = hi - lo
    spacing = math.pi * C_LIGHT / (cfg.slope * span)  # range per bin
    doppler_bins = beat_parameters(Target(0.0, velocity), cfg, model.windows).omega_d * span \
        / (2 * math.pi)
    k = round(approx_range / spacing + doppler_bins)
    return max(k - doppler_bins, 0.0) * spacing


def _peaks(power: np.ndarray) -> list[int]:
    """Local maxima (ties allowed) reaching half the largest bin, strongest first."""
    top = power.max()
    out = []
    for i in range(1, power.size - 1):
        p = power[i]
        if p >= 0.5 * top and p >= (1 - 1e-6) * power[i - 1] and p >= (1 - 1e-6) * power[i + 1]:
            out.append(i)
    return sorted(out, key=lambda i: (-power[i], i))


def run_resolution(ec: ExperimentConfig, n_bins: int | None = None,
                   edge: Edge = Edge.RISING) -> ResolutionReport:
    """Equal-weight mixture of two targets' laws, noiseless, on one edge window."""
    if len(ec.targets) != 2:
        raise ConfigurationError("resolution runs need exactly two targets")
    a, b = ec.targets
    if a.velocity_v != b.velocity_v:
        raise ConfigurationError("resolution targets must share one velocity")
    model = ec.model()
    if ec.cfg.family is Family.SAWTOOTH:
        edge = Edge.RISING
    beats = [beat_parameters(t, ec.cfg, model.windows) for t in (a, b)]
    lo, hi = model.window(edge)
    span = hi - lo
    tone_bins = tuple(abs(ec.n * bt.edge_tone(edge)[0]) * span / (2 * math.pi) for bt in beats)
    if n_bins is None:
        n_bins = max(64, 2 ** math.ceil(math.log2(8 * max(tone_bins) + 8)))
    if n_bins // 2 <= max(tone_bins):
        raise ConfigurationError(f"{n_bins} bins cannot resolve tone bin {max(tone_bins):.1f}")
    grid = window_grid(model, edge, n_bins)
    p = 0.5 * sum(edge_probability(ec.n, bt, edge, grid.times) for bt in beats)
    rec = CountRecord(grid, 1.0, p, 1.0 - p, RecordFamily.NOON_BERNOULLI, edge)
    power = periodogram(rec, edge).power
    peaks = _peaks(power)
    separation = float(abs(peaks[1] - peaks[0])) if len(peaks) >= 2 else 0.0
    return ResolutionReport(len(peaks) >= 2, separation, tuple(peaks), tone_bins, ec.n,
                            abs(b.range_d - a.range_d))


# --- export ---------------------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _write(path: Path, text: str) -> None:
    try:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def write_manifest(path, manifest: dict) -> None:
    lines = ["# run manifest; valid as a configuration file"]
    lines += [f"{key} = {manifest[key]}" for key in sorted(manifest)]
    _write(Path(path), "\n".join(lines) + "\n")


COVARIANCE_HEADER = "param_i,param_j,sample_cov,crb"
EFFICIENCY_HEADER = ("param,true_value,sample_mean,sample_var,crb,efficiency,efficiency_se,"
                     "band_low,band_high,within_band")


def covariance_csv(stats: TrialStats) -> str:
    rows = [COVARIANCE_HEADER]
    for i, pi in enumerate(stats.parameter_order):
        for j, pj in enumerate(stats.parameter_order):
            rows.append(f"{pi},{pj},{_fmt(stats.sample_cov[i, j])},{_fmt(stats.crb[i, j])}")
    return "\n".join(rows) + "\n"


def efficiency_csv(stats: TrialStats) -> str:
    rows = [EFFICIENCY_HEADER]
    lo, hi = stats.band
    for i, label in enumerate(stats.parameter_order):
        vals = (stats.truth[i], stats.sample_mean[i], stats.sample_cov[i, i], stats.crb[i, i],
                stats.efficiency[i], stats.efficiency_se[i], lo, hi)
        rows.append(label + "," + ",".join(_fmt(v) for v in vals) + ","
                    + _fmt(bool(stats.within_band[i])))
    return "\n".join(rows) + "\n"


def estimates_csv(estimates) -> str:
    return "\n".join([ESTIMATE_HEADER] + [estimate_row(i, e) for i, e in enumerate(estimates)]) + "\n"


def export_results(out_dir, manifest: dict | None = None, *, stats: TrialStats | None = None,
                   records=None, estimates=None, fisher_closed=None, fisher_numeric=None,
                   beat_signal: str | None = None, tables: dict | None = None) -> list[Path]:
    """Write whichever artifacts are given into ``out_dir``; returns the written paths.

    Layout: manifest.txt, records/*.csv, estimates.csv, covariance.csv,
    efficiency.csv, fisher_closed.csv, fisher_numeric.csv, beat_signal.csv,
    plus any extra named ``tables``.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc.strerror or exc}") from exc
    written = []

    def put(name, text):
        path = out / name
        _write(path, text)
        written.append(path)

    if manifest is not None:
        write_manifest(out / "manifest.txt", manifest)
        written.append(out / "manifest.txt")
    if stats is not None:
        records = stats.records if records is None else records
        estimates = stats.estimates if estimates is None else estimates
        put("covariance.csv", covariance_csv(stats))
        put("efficiency.csv", efficiency_csv(stats))
    if estimates is not None:
        put("estimates.csv", estimates_csv(estimates))
    if records:
        (out / "records").mkdir(exist_ok=True)
        for group in records:
            for rec in (group if isinstance(group, (list, tuple)) else [group]):
                put(os.path.join("records", f"trial{rec.meta.get('trial', 0):06d}_{rec.edge.value}.csv"),
                    rec.to_csv())
    for name, results in (("fisher_closed.csv", fisher_closed), ("fisher_numeric.csv", fisher_numeric)):
        if results:
            put(name, "".join(fr.to_text() for fr in results))
    if beat_signal is not None:
        put("beat_signal.csv", beat_signal)
    for name, text in (tables or {}).items():
        put(name, text)
    return written


def beat_signal_csv(cfg: ModulationConfig, target: Target, n_list, n_points: int,
                    edge: Edge = Edge.RISING, windows: DetectionWindows | None = None) -> str:
    """Bright-port probability over one detection window for each n."""
    header = "t_s," + ",".join(f"p_n{n}" for n in n_list)
    model = NoonModel(1, cfg, windows)
    if cfg.family is Family.SAWTOOTH:
        edge = Edge.RISING
    lo, hi = model.window(edge)
    t = np.linspace(lo, hi, n_points)
    beat = beat_parameters(target, cfg, model.windows)
    cols = [edge_probability(n, beat, edge, t) for n in n_list]
    rows = [header] + [_fmt(ti) + "," + ",".join(_fmt(c[i]) for c in cols) for i, ti in enumerate(t)]
    return "\n".join(rows) + "\n"


def load_fisher_csv(path) -> list[FisherResult]:
    return read_fisher_file(Path(path).read_text())
