"""Stochastic counting records drawn from the detection laws."""
from __future__ import annotations

import enum
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .channel import BeatParams, DetectionWindows, Edge, Target, beat_parameters
from .errors import ConfigurationError
from .quantum import NoonModel, edge_probability, resolve_edge
from .waveform import ModulationConfig, TimeGrid

CSV_HEADER = "t_center,port1,port0"


class RecordFamily(enum.Enum):
    NOON_BERNOULLI = "noon_bernoulli"
    COHERENT_POISSON = "coherent_poisson"


@dataclass(frozen=True)
class RngSpec:
    """Counter-style stream address: (seed, stream_id, *substream).

    Each address maps to an independent Philox stream through SeedSequence,
    so draws never depend on the order in which streams are consumed.
    """

    seed: int
    stream_id: int = 0
    substream: tuple[int, ...] = ()

    def __post_init__(self):
        for v in (self.seed, self.stream_id, *self.substream):
            if int(v) != v or not 0 <= v < 2**64:
                raise ConfigurationError(f"RNG keys must be unsigned 64-bit integers, got {v}")

    def child(self, *keys: int) -> "RngSpec":
        return RngSpec(self.seed, self.stream_id, self.substream + tuple(int(k) for k in keys))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream_id), *self.substream))
        return np.random.Generator(np.random.Philox(ss))


@dataclass
class CountRecord:
    """Binned counts on one edge window; grid times are bin centers on the edge clock."""

    grid: TimeGrid
    emissions_per_bin: int | None
    counts_port1: np.ndarray
    counts_port0: np.ndarray
    family: RecordFamily
    edge: Edge = Edge.RISING
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.counts_port1 = np.asarray(self.counts_port1)
        self.counts_port0 = np.asarray(self.counts_port0)
        if self.counts_port1.shape != (self.grid.n_points,) or \
                self.counts_port0.shape != (self.grid.n_points,):
            raise ConfigurationError("count arrays must have one entry per bin")
        if np.any(self.counts_port1 < 0) or np.any(self.counts_port0 < 0):
            raise ConfigurationError("counts must be non-negative")
        if self.family is RecordFamily.NOON_BERNOULLI:
            total = self.counts_port1 + self.counts_port0
            if not np.allclose(total, self.emissions_per_bin, rtol=0, atol=1e-9):
                raise ConfigurationError("port counts must sum to emissions_per_bin in every bin")

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    @property
    def trials_per_bin(self) -> np.ndarray:
        """Binomial trial count per bin (total counts, which is exact for Poisson
        ports when conditioning on the bin total)."""
        return self.counts_port1 + self.counts_port0

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(CSV_HEADER + "\n")
        for t, a, b in zip(self.times, self.counts_port1, self.counts_port0):
            buf.write(f"{_fmt(t)},{_fmt(a)},{_fmt(b)}\n")
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())


def _fmt(x) -> str:
    x = x.item() if hasattr(x, "item") else x
    if isinstance(x, (int, np.integer)) or float(x).is_integer() and abs(x) < 2**53:
        return str(int(x))
    return repr(float(x))


def read_record_csv(path, template: CountRecord | None = None, *, family=RecordFamily.NOON_BERNOULLI,
                    edge=Edge.RISING, emissions_per_bin=None) -> CountRecord:
    """Read a record CSV; the grid is rebuilt from the bin centers."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    t = data[:, 0]
    dt = (t[-1] - t[0]) / (len(t) - 1)
    if template is not None:
        family, edge, emissions_per_bin = template.family, template.edge, template.emissions_per_bin
    return CountRecord(TimeGrid(t[0], len(t), dt), emissions_per_bin, data[:, 1], data[:, 2],
                       family, edge)


def window_grid(model: NoonModel, edge: Edge, n_bins: int) -> TimeGrid:
    """Bin centers of ``n_bins`` equal bins tiling an edge window."""
    lo, hi = model.window(edge)
    if n_bins < 2:
        raise ConfigurationError("n_bins must be >= 2")
    width = (hi - lo) / n_bins
    return TimeGrid(lo + 0.5 * width, n_bins, width)


def min_bins(model: NoonModel, beat: BeatParams, bins_per_cycle: int = 32) -> int:
    """Bins per window giving ``bins_per_cycle`` samples of the fastest beat."""
    lo, hi = model.window(model.edges()[0])
    fastest = model.n * max(abs(beat.omega_b1), abs(beat.omega_b2))
    return max(8, math.ceil(bins_per_cycle * fastest * (hi - lo) / (2 * math.pi)))


def _probabilities(model: NoonModel, target: Target, grid: TimeGrid, edge: Edge | None):
    edge = resolve_edge(model, grid.times, edge)
    beat = beat_parameters(target, model.cfg, model.windows)
    return edge, edge_probability(model.n, beat, edge, grid.times)


def sample_noon_record(model: NoonModel, target: Target, grid: TimeGrid, nu_per_bin: int,
                       rng: RngSpec, edge: Edge | None = None) -> CountRecord:
    if int(nu_per_bin) != nu_per_bin or nu_per_bin < 1:
        raise ConfigurationError(f"nu_per_bin must be an integer >= 1, got {nu_per_bin}")
    edge, p = _probabilities(model, target, grid, edge)
    ones = rng.generator().binomial(int(nu_per_bin), p)
    return CountRecord(grid, int(nu_per_bin), ones, int(nu_per_bin) - ones,
                       RecordFamily.NOON_BERNOULLI, edge)


def expected_noon_record(model: NoonModel, target: Target, grid: TimeGrid, nu_per_bin: float,
                         edge: Edge | None = None) -> CountRecord:
    """Noise-free record: fractional counts equal to their expectations."""
    edge, p = _probabilities(model, target, grid, edge)
    ones = nu_per_bin * p
    return CountRecord(grid, nu_per_bin, ones, nu_per_bin - ones, RecordFamily.NOON_BERNOULLI, edge)


def sample_coherent_record(alpha: complex, cfg: ModulationConfig, windows: DetectionWindows | None,
                           target: Target, grid: TimeGrid, rng: RngSpec,
                           edge: Edge | None = None, dt_scaling: float | None = None) -> CountRecord:
    """Poisson photon counts at both ports.

    ``|alpha|^2`` is a photon rate (1/s) and ``dt_scaling`` defaults to the bin
    duration, so each bin's port totals have mean ``|alpha|^2 * dt``.
    """
    model = NoonModel(1, cfg, windows)
    edge, p = _probabilities(model, target, grid, edge)
    if dt_scaling is None:
        dt_scaling = grid.dt
    scale = abs(alpha) ** 2 * dt_scaling
    gen = rng.generator()
    ones = gen.poisson(scale * p)
    zeros = gen.poisson(scale * (1.0 - p))
    return CountRecord(grid, None, ones, zeros, RecordFamily.COHERENT_POISSON, edge,
                       {"dt_scaling": dt_scaling})
