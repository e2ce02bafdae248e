"""Command-line front end: ``qfmcw <subcommand> [--config FILE] [--set key=value ...]``.

Configuration is flat ``key = value`` text with dotted section names; physical
quantities carry their unit in the key. A run's manifest.txt is itself a valid
configuration file.
"""
from __future__ import annotations

import argparse
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .channel import DetectionWindows, Edge, Target
from .errors import ConfigurationError, DomainError, QfmcwError, RegimeError, UnsupportedError
from .estimation import resolution_limits
from .fisher import (FisherResult, Parametrization, QuadratureSettings, cfi_closed_sawtooth,
                     cfi_closed_triangle, cfi_numeric, crb, qfi_closed_sawtooth,
                     qfi_closed_triangle, qfi_numeric, sld_pair, sld_qfi, weak_commutativity)
from .harness import (ExperimentConfig, beat_signal_csv, export_results, on_grid_range,
                      run_monte_carlo, run_resolution)
from .quantum import NoonModel, StateConvention
from .sampling import RngSpec
from .waveform import Family, ModulationConfig, TimeGrid, spectrum_arrays

EXIT_OK, EXIT_FAILURE, EXIT_CONFIG, EXIT_REGIME, EXIT_UNRELIABLE = 0, 1, 2, 3, 4


@dataclass(frozen=True)
class Key:
    default: str
    kind: str
    help: str


KEYS = {
    "waveform.family": Key("triangle", "choice:triangle,sawtooth", "modulation family"),
    "waveform.wavelength0_m": Key("1.55e-06", "float", "start wavelength of the sweep"),
    "waveform.delta_f_hz": Key("1e+11", "float", "sweep bandwidth"),
    "waveform.period_s": Key("1e-05", "float", "modulation period"),
    "waveform.t_origin_s": Key("0.0", "float", "sawtooth chirp start or triangle apex time"),
    "windows.t_d0_s": Key("auto", "float|auto", "rising-edge window end (auto: period/4)"),
    "windows.t_d1_s": Key("auto", "float|auto", "falling-edge window start (auto: -period/4)"),
    "target.range_m": Key("0.05", "float", "target range"),
    "target.velocity_m_s": Key("0.5", "float", "radial velocity (positive = receding)"),
    "photons.n": Key("1", "int", "photon number of the probe state"),
    "photons.n_list": Key("1,2", "intlist", "photon numbers for beat and resolution outputs"),
    "beat.edge": Key("rising", "choice:rising,falling", "detection window for beat_signal.csv"),
    "beat.points": Key("4001", "int", "samples across the window"),
    "spectrum.intervals": Key("16777216", "int", "time intervals across one period"),
    "spectrum.band_hz": Key("1e+09", "float", "aggregation band width (0: every line)"),
    "fisher.numeric": Key("true", "bool", "also compute numeric CFI/QFI"),
    "fisher.qfi_intervals": Key("131072", "int", "state discretization cells per period"),
    "fisher.qfi_step": Key("1e-06", "float", "QFI finite-difference step (natural units)"),
    "fisher.cfi_step": Key("1e-05", "float", "CFI finite-difference step (natural units)"),
    "fisher.cfi_epsrel": Key("1e-10", "float", "CFI quadrature relative tolerance"),
    "fisher.convention": Key("conjugate_rising", "choice:conjugate_rising,analytic",
                             "rising-edge phase convention of the state vector"),
    "fisher.emissions_per_period": Key("1.0", "float", "nu*T_m used for the CRB table"),
    "montecarlo.emissions_per_period": Key("10000", "float", "emitted states per period"),
    "montecarlo.bins_per_window": Key("5000", "int", "counting bins per detection window"),
    "montecarlo.trials": Key("500", "int", "number of trials"),
    "montecarlo.zero_noise": Key("false", "bool", "use expected counts instead of samples"),
    "montecarlo.efficiency_low": Key("1.0", "float", "lower edge of the efficiency band"),
    "montecarlo.efficiency_high": Key("1.3", "float", "upper edge of the efficiency band"),
    "montecarlo.unreliable_fraction": Key("0.2", "float", "flagged-trial fraction marking a run unreliable"),
    "montecarlo.records_kept": Key("1", "int", "trials whose count records are exported"),
    "rng.seed": Key("0", "int", "master seed (unsigned 64-bit)"),
    "rng.stream_id": Key("0", "int", "stream identifier under the seed"),
    "resolution.separations_m": Key("auto", "floatlist|auto",
                                    "target separations (auto: one and one half resolution cell)"),
    "resolution.bins": Key("auto", "int|auto", "bins across the window (auto: from tone bins)"),
    "resolution.on_grid": Key("true", "bool", "snap the first target to a DFT bin"),
    "resolution.edge": Key("rising", "choice:rising,falling", "window used for the periodogram"),
    "run.subcommand": Key("", "str", "written to manifests; ignored on input"),
    "artifact.version": Key(__version__, "str", "written to manifests; ignored on input"),
}


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    out = {}
    for number, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigurationError(f"{source}:{number}: expected 'key = value', got {raw!r}")
        out[key.strip()] = value.strip()
    return out


def _convert(key: str, value: str):
    kind = KEYS[key].kind
    try:
        if "|auto" in kind and value == "auto":
            return None
        base = kind.split("|")[0]
        if base == "float":
            v = float(value)
            if not math.isfinite(v):
                raise ValueError
            return v
        if base == "int":
            return int(value)
        if base == "intlist":
            return tuple(int(v) for v in value.split(",") if v.strip())
        if base == "floatlist":
            return tuple(float(v) for v in value.split(",") if v.strip())
        if base == "bool":
            if value.lower() not in ("true", "false"):
                raise ValueError
            return value.lower() == "true"
        if base.startswith("choice:"):
            if value not in base[7:].split(","):
                raise ValueError
            return value
        return value
    except ValueError:
        raise ConfigurationError(f"{key}: cannot parse {value!r} as {kind}") from None


class Settings:
    """Validated configuration values keyed by their dotted names."""

    def __init__(self, raw: dict[str, str]):
        unknown = sorted(set(raw) - set(KEYS))
        if unknown:
            raise ConfigurationError(f"unknown configuration key(s): {', '.join(unknown)}")
        self.raw = {k: raw.get(k, spec.default) for k, spec in KEYS.items()}
        self.values = {k: _convert(k, v) for k, v in self.raw.items()}

    def __getitem__(self, key):
        return self.values[key]

    def manifest(self, subcommand: str) -> dict[str, str]:
        out = dict(self.raw)
        out["run.subcommand"] = subcommand
        out["artifact.version"] = __version__
        return out

    def _guard(self, key, ok, message):
        if not ok:
            raise ConfigurationError(f"{key}: {message}")

    def modulation(self) -> ModulationConfig:
        for key in ("waveform.wavelength0_m", "waveform.delta_f_hz", "waveform.period_s"):
            self._guard(key, self[key] > 0, "must be > 0")
        try:
            return ModulationConfig.from_optical(Family(self["waveform.family"]),
                                                 self["waveform.wavelength0_m"],
                                                 self["waveform.delta_f_hz"],
                                                 self["waveform.period_s"],
                                                 self["waveform.t_origin_s"])
        except ConfigurationError as exc:
            raise ConfigurationError(f"waveform.*: {exc}") from None

    def windows(self, cfg: ModulationConfig) -> DetectionWindows:
        default = DetectionWindows.default(cfg)
        t_d0, t_d1 = self["windows.t_d0_s"], self["windows.t_d1_s"]
        return DetectionWindows(default.t_d0 if t_d0 is None else t_d0,
                                default.t_d1 if t_d1 is None else t_d1)

    def target(self) -> Target:
        try:
            return Target(self["target.range_m"], self["target.velocity_m_s"])
        except ConfigurationError as exc:
            raise ConfigurationError(f"target.*: {exc}") from None

    def n(self) -> int:
        self._guard("photons.n", self["photons.n"] >= 1, "must be >= 1")
        return self["photons.n"]

    def n_list(self) -> tuple[int, ...]:
        ns = self["photons.n_list"]
        self._guard("photons.n_list", ns and min(ns) >= 1, "needs one or more integers >= 1")
        return ns

    def rng(self) -> RngSpec:
        try:
            return RngSpec(self["rng.seed"], self["rng.stream_id"])
        except ConfigurationError as exc:
            raise ConfigurationError(f"rng.*: {exc}") from None


def load_settings(config: str | None, overrides: list[str], seed: int | None) -> Settings:
    raw = {}
    if config:
        try:
            text = Path(config).read_text()
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {config}: {exc.strerror}") from None
        raw.update(parse_config_text(text, config))
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigurationError(f"--set expects key=value, got {item!r}")
        raw[key.strip()] = value.strip()
    if seed is not None:
        raw["rng.seed"] = str(seed)
    return Settings(raw)


def _fmt(x) -> str:
    return repr(float(x))


# --- subcommands ------------------------------------------------------------------

def cmd_beat(settings: Settings, out: Path, threads: int = 1) -> list[Path]:
    cfg = settings.modulation()
    points = settings["beat.points"]
    settings._guard("beat.points", points >= 2, "must be >= 2")
    text = beat_signal_csv(cfg, settings.target(), settings.n_list(), points,
                           Edge(settings["beat.edge"]), settings.windows(cfg))
    return export_results(out, settings.manifest("beat"), beat_signal=text)


def spectrum_table(cfg: ModulationConfig, intervals: int, band_hz: float) -> str:
    offsets, amps = spectrum_arrays(cfg, TimeGrid.one_period(cfg, intervals))
    f = offsets / (2 * math.pi)
    power = np.abs(amps) ** 2
    power /= power.sum()
    if band_hz > 0:
        idx = np.floor(f / band_hz + 0.5).astype(np.int64)
        keys, inverse = np.unique(idx, return_inverse=True)
        power = np.bincount(inverse, weights=power)
        f = keys * band_hz
    rows = ["offset_hz,power"] + [f"{_fmt(a)},{_fmt(b)}" for a, b in zip(f, power)]
    return "\n".join(rows) + "\n"


def cmd_spectrum(settings: Settings, out: Path, threads: int = 1) -> list[Path]:
    cfg = settings.modulation()
    intervals = settings["spectrum.intervals"]
    settings._guard("spectrum.intervals", intervals >= 2, "must be >= 2")
    settings._guard("spectrum.band_hz", settings["spectrum.band_hz"] >= 0, "must be >= 0")
    text = spectrum_table(cfg, intervals, settings["spectrum.band_hz"])
    return export_results(out, settings.manifest("spectrum"), tables={"spectrum.csv": text})


def _normalized_diff(closed: FisherResult, numeric: FisherResult) -> np.ndarray:
    d = np.sqrt(np.outer(np.diag(closed.matrix), np.diag(closed.matrix)))
    return np.abs(numeric.matrix - closed.matrix) / d


def fisher_tables(settings: Settings) -> dict:
    cfg = settings.modulation()
    n = settings.n()
    windows = settings.windows(cfg)
    convention = StateConvention(settings["fisher.convention"])
    total = settings["fisher.emissions_per_period"]
    settings._guard("fisher.emissions_per_period", total > 0, "must be > 0")
    if cfg.family is Family.SAWTOOTH:
        closed = [cfi_closed_sawtooth(cfg, n, parametrization=Parametrization.RANGE),
                  qfi_closed_sawtooth(cfg, n, parametrization=Parametrization.RANGE)]
    else:
        closed = [cfi_closed_triangle(cfg, n, Parametrization.RANGE, windows),
                  qfi_closed_triangle(cfg, n, Parametrization.RANGE, windows, convention)]
    numeric = []
    if settings["fisher.numeric"]:
        model = NoonModel(n, cfg, windows)
        target = settings.target()
        quad = QuadratureSettings(epsrel=settings["fisher.cfi_epsrel"], fd_step=settings["fisher.cfi_step"])
        grid = TimeGrid.period_midpoints(cfg, settings["fisher.qfi_intervals"])
        numeric = [cfi_numeric(model, target, quad, Parametrization.RANGE),
                   qfi_numeric(model, target, grid, settings["fisher.qfi_step"],
                               Parametrization.RANGE, convention)]
    crb_rows = ["kind,param,crb_variance,crb_std"]
    for fr in closed:
        bound = crb(fr, total)
        for i, label in enumerate(fr.parameter_order):
            crb_rows.append(f"{fr.kind.value},{label},{_fmt(bound[i, i])},{_fmt(math.sqrt(bound[i, i]))}")
    cmp_rows = ["kind,param_i,param_j,closed,numeric,normalized_diff"]
    for c, m in zip(closed, numeric):
        diff = _normalized_diff(c, m)
        for i, pi in enumerate(c.parameter_order):
            for j, pj in enumerate(c.parameter_order):
                cmp_rows.append(f"{c.kind.value},{pi},{pj},{_fmt(c.matrix[i, j])},"
                                f"{_fmt(m.matrix[i, j])},{_fmt(diff[i, j])}")
    tables = {"crb.csv": "\n".join(crb_rows) + "\n"}
    if numeric:
        tables["fisher_comparison.csv"] = "\n".join(cmp_rows) + "\n"
    summary = {}
    if cfg.family is Family.TRIANGLE:
        pair = sld_pair(cfg, n)
        summary = {"weak_commutativity": weak_commutativity(pair),
                   "sld_a_m": pair.a, "sld_b_m_s": pair.b,
                   "sld_qfi_dd": sld_qfi(pair)[0, 0], "sld_qfi_vv": sld_qfi(pair)[1, 1]}
        rows = ["quantity,value"] + [f"{k},{_fmt(v)}" for k, v in summary.items()]
        tables["sld.csv"] = "\n".join(rows) + "\n"
    return {"closed": closed, "numeric": numeric, "tables": tables, "summary": summary}


def cmd_fisher(settings: Settings, out: Path, threads: int = 1) -> list[Path]:
    res = fisher_tables(settings)
    for key, value in res["summary"].items():
        print(f"{key} = {value:.6e}")
    return export_results(out, settings.manifest("fisher"), fisher_closed=res["closed"],
                          fisher_numeric=res["numeric"] or None, tables=res["tables"])


def experiment_config(settings: Settings, threads: int = 1, n: int | None = None,
                      targets=None) -> ExperimentConfig:
    cfg = settings.modulation()
    try:
        return ExperimentConfig(
            cfg, targets or (settings.target(),), n=n or settings.n(),
            emissions_total=settings["montecarlo.emissions_per_period"],
            trials=settings["montecarlo.trials"], rng=settings.rng(),
            bins_per_window=settings["montecarlo.bins_per_window"],
            windows=settings.windows(cfg), zero_noise=settings["montecarlo.zero_noise"],
            efficiency_band=(settings["montecarlo.efficiency_low"],
                             settings["montecarlo.efficiency_high"]),
            unreliable_fraction=settings["montecarlo.unreliable_fraction"],
            threads=threads, records_kept=settings["montecarlo.records_kept"])
    except ConfigurationError as exc:
        raise ConfigurationError(f"montecarlo.*: {exc}") from None


def cmd_montecarlo(settings: Settings, out: Path, threads: int = 1):
    ec = experiment_config(settings, threads)
    stats = run_monte_carlo(ec)
    written = export_results(out, settings.manifest("montecarlo"), stats=stats)
    for i, label in enumerate(stats.parameter_order):
        print(f"{label}: efficiency {stats.efficiency[i]:.4f} +- {stats.efficiency_se[i]:.4f}")
    print(f"flagged trials: {stats.flags_count}/{ec.trials}")
    if stats.unreliable:
        print("experiment unreliable: too many flagged trials", file=sys.stderr)
        return written, EXIT_UNRELIABLE
    return written


def cmd_resolution(settings: Settings, out: Path, threads: int = 1) -> list[Path]:
    cfg = settings.modulation()
    windows = settings.windows(cfg)
    target = settings.target()
    base = target.range_d
    if settings["resolution.on_grid"]:
        base = on_grid_range(cfg, windows, base, target.velocity_v)
    seps = settings["resolution.separations_m"]
    if seps is None:
        cell, _ = resolution_limits(cfg, 1)
        seps = (cell, cell / 2)
    rows = ["n,separation_m,separable,peak_separation_bins,tone_bin_a,tone_bin_b"]
    for n in settings.n_list():
        for sep in seps:
            settings._guard("resolution.separations_m", sep >= 0, "separations must be >= 0")
            targets = (Target(base, target.velocity_v), Target(base + sep, target.velocity_v))
            ec = experiment_config(settings, threads, n, targets)
            rep = run_resolution(ec, settings["resolution.bins"], Edge(settings["resolution.edge"]))
            rows.append(f"{n},{_fmt(sep)},{str(rep.separable).lower()},"
                        f"{_fmt(rep.peak_separation_bins)},{_fmt(rep.tone_bins[0])},"
                        f"{_fmt(rep.tone_bins[1])}")
            print(f"n={n} separation={sep:.6e} m separable={rep.separable}")
    return export_results(out, settings.manifest("resolution"),
                          tables={"resolution.csv": "\n".join(rows) + "\n"})


COMMANDS = {"beat": cmd_beat, "spectrum": cmd_spectrum, "fisher": cmd_fisher,
            "montecarlo": cmd_montecarlo, "resolution": cmd_resolution}


def _key_help() -> str:
    lines = ["configuration keys (default in brackets):"]
    for key, spec in KEYS.items():
        lines.append(f"  {key:34s} {spec.help} [{spec.default}]")
    lines.append("exit codes: 0 ok, 1 numerical failure, 2 invalid configuration, "
                 "3 regime violation, 4 unreliable experiment")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qfmcw", description=__doc__.splitlines()[0],
                                     epilog=_key_help(),
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, epilog=_key_help(),
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        p.add_argument("--config", help="configuration file (key = value lines)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one key; repeatable")
        p.add_argument("--out", default="qfmcw_out", help="output directory")
        p.add_argument("--seed", type=int, help="overrides rng.seed")
        p.add_argument("--threads", type=int, default=1, help="worker threads")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.threads < 1:
            raise ConfigurationError("--threads must be >= 1")
        settings = load_settings(args.config, args.set, args.seed)
        result = COMMANDS[args.command](settings, Path(args.out), args.threads)
    except (ConfigurationError, DomainError, UnsupportedError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RegimeError as exc:
        print(f"regime violation: {exc}", file=sys.stderr)
        return EXIT_REGIME
    except (QfmcwError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    if isinstance(result, tuple):
        return result[1]
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
