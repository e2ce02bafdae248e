import math

import numpy as np
import pytest

from conftest import optical
from qfmcw.channel import Target
from qfmcw.errors import ConfigurationError
from qfmcw.fisher import cfi_closed_triangle, qfi_closed_sawtooth
from qfmcw.harness import (COVARIANCE_HEADER, EFFICIENCY_HEADER, ExperimentConfig, beat_signal_csv,
                           closed_form_crb, export_results, load_fisher_csv, on_grid_range,
                           run_monte_carlo, run_resolution, simulate_trial, write_manifest)
from qfmcw.estimation import ESTIMATE_HEADER, resolution_limits
from qfmcw.sampling import RngSpec, read_record_csv
from qfmcw.waveform import Family


def small(cfg, **kw):
    base = dict(targets=(Target(0.05, 0.5),), emissions_total=2048, trials=40, rng=RngSpec(11),
                bins_per_window=512)
    base.update(kw)
    return ExperimentConfig(cfg, **base)


def test_config_validation(triangle):
    with pytest.raises(ConfigurationError):
        small(triangle, trials=1)
    with pytest.raises(ConfigurationError):
        small(triangle, efficiency_band=(1.3, 1.0))
    with pytest.raises(ConfigurationError):
        small(triangle, targets=())
    with pytest.raises(ConfigurationError):
        small(triangle, emissions_total=1000).emissions_per_bin()
    assert small(triangle).emissions_per_bin() == 2
    assert small(triangle, emissions_total=1000, zero_noise=True).emissions_per_bin() == 1000 / 1024


def test_zero_noise_recovers_truth(triangle):
    stats = run_monte_carlo(small(triangle, zero_noise=True, trials=3))
    assert np.allclose(stats.sample_mean[:2], [0.05, 0.5], rtol=1e-6)
    assert stats.flags_count == 0 and not stats.unreliable


def test_crb_attached(triangle, sawtooth):
    ec = small(triangle)
    assert np.array_equal(closed_form_crb(ec), cfi_closed_triangle(triangle, 1).inverse / 2048)
    saw = small(sawtooth, emissions_total=1024)
    assert closed_form_crb(saw)[1, 1] == pytest.approx(4 / 1024, rel=1e-12)


def test_thread_count_does_not_change_results(triangle):
    one = run_monte_carlo(small(triangle, threads=1))
    four = run_monte_carlo(small(triangle, threads=4))
    assert np.array_equal(one.sample_cov, four.sample_cov)
    assert [e.d_hat for e in one.estimates] == [e.d_hat for e in four.estimates]
    again = run_monte_carlo(small(triangle, threads=3))
    assert np.array_equal(one.sample_mean, again.sample_mean)


def test_seed_changes_results(triangle):
    a = run_monte_carlo(small(triangle, trials=5))
    b = run_monte_carlo(small(triangle, trials=5, rng=RngSpec(12)))
    assert not np.array_equal(a.sample_cov, b.sample_cov)


def test_unreliable_when_estimates_degenerate(triangle):
    stats = run_monte_carlo(small(triangle, targets=(Target(0.0, 0.0),), zero_noise=True, trials=3))
    assert stats.flags_count == 3 and stats.unreliable and stats.trials_used == 0
    assert np.all(np.isnan(stats.sample_cov))


def test_sawtooth_monte_carlo(sawtooth):
    stats = run_monte_carlo(small(sawtooth, emissions_total=1024, trials=30))
    assert stats.parameter_order == ("d", "theta")
    assert abs(stats.sample_mean[0] - 0.05) < 5 * math.sqrt(stats.crb[0, 0])


def test_efficiency_is_near_one(triangle):
    stats = run_monte_carlo(small(triangle, trials=300, rng=RngSpec(3)))
    for label in ("d", "v"):
        i = stats.entry(label)
        assert 0.75 < stats.efficiency[i] < 1.35
        assert abs(stats.sample_mean[i] - stats.truth[i]) < 5 * math.sqrt(stats.crb[i, i] / 300) * 1.2


def test_two_photon_phase_deviation_is_wrapped(triangle):
    stats = run_monte_carlo(small(triangle, n=2, trials=30))
    i = stats.entry("theta0")
    assert stats.sample_cov[i, i] < 0.1


# --- resolution -----------------------------------------------------------------

@pytest.mark.parametrize("family", list(Family))
@pytest.mark.parametrize("velocity", [0.0, 0.5])
def test_resolution_doubling(family, velocity):
    cfg = optical(family)
    if family is Family.SAWTOOTH:
        velocity = 0.0
    delta_d, _ = resolution_limits(cfg, 1)
    d_a = on_grid_range(cfg, None, 0.05, velocity)

    def report(separation, n):
        targets = (Target(d_a, velocity), Target(d_a + separation, velocity))
        return run_resolution(ExperimentConfig(cfg, targets, n=n, zero_noise=True))

    full = report(delta_d, 1)
    assert full.separable and full.peak_separation_bins == 1
    assert not report(delta_d / 2, 1).separable
    doubled = report(delta_d / 2, 2)
    assert doubled.separable and doubled.peak_separation_bins == 1
    merged = report(0.0, 2)
    assert not merged.separable and len(merged.peak_bins) == 1


def test_resolution_guards(triangle):
    with pytest.raises(ConfigurationError):
        run_resolution(ExperimentConfig(triangle, (Target(0.05),)))
    with pytest.raises(ConfigurationError):
        run_resolution(ExperimentConfig(triangle, (Target(0.05), Target(0.06, 1.0))))
    with pytest.raises(ConfigurationError):
        run_resolution(ExperimentConfig(triangle, (Target(0.05), Target(0.06))), n_bins=64)


def test_on_grid_range_lands_on_bin(triangle):
    from qfmcw.channel import beat_parameters
    for v in (0.0, 0.5, -2.0):
        d = on_grid_range(triangle, None, 0.05, v)
        omega = beat_parameters(Target(d, v), triangle).omega_b1
        cycles = omega * triangle.period / 2 / (2 * math.pi)
        assert cycles == pytest.approx(round(cycles), abs=1e-9)
        assert abs(d - 0.05) < resolution_limits(triangle)[0]


# --- export ---------------------------------------------------------------------

def test_export_layout_and_schema(triangle, sawtooth, tmp_path):
    stats = run_monte_carlo(small(triangle, trials=4, records_kept=2))
    closed = [cfi_closed_triangle(triangle, 1), qfi_closed_sawtooth(sawtooth, 1)]
    beat = beat_signal_csv(triangle, Target(0.05, 0.5), [1, 2, 3], 50)
    manifest = {"waveform.family": "triangle", "photons.n": 1}
    written = export_results(tmp_path / "out", manifest, stats=stats, fisher_closed=closed,
                             beat_signal=beat, tables={"extra.csv": "a,b\n1,2\n"})
    names = sorted(p.relative_to(tmp_path / "out").as_posix() for p in written)
    assert names == sorted(["manifest.txt", "covariance.csv", "efficiency.csv", "estimates.csv",
                            "records/trial000000_rising.csv", "records/trial000000_falling.csv",
                            "records/trial000001_rising.csv", "records/trial000001_falling.csv",
                            "fisher_closed.csv", "beat_signal.csv", "extra.csv"])
    out = tmp_path / "out"
    cov = (out / "covariance.csv").read_text().splitlines()
    assert cov[0] == COVARIANCE_HEADER and len(cov) == 1 + 16
    eff = (out / "efficiency.csv").read_text().splitlines()
    assert eff[0] == EFFICIENCY_HEADER and len(eff) == 5
    assert all(len(row.split(",")) == len(EFFICIENCY_HEADER.split(",")) for row in eff)
    est = (out / "estimates.csv").read_text().splitlines()
    assert est[0] == ESTIMATE_HEADER and len(est) == 5
    beat_rows = (out / "beat_signal.csv").read_text().splitlines()
    assert beat_rows[0] == "t_s,p_n1,p_n2,p_n3" and len(beat_rows) == 51
    loaded = load_fisher_csv(out / "fisher_closed.csv")
    assert [fr.kind for fr in loaded] == [fr.kind for fr in closed]
    assert np.array_equal(loaded[0].inverse, closed[0].inverse)

    original = stats.records[1][1]
    back = read_record_csv(out / "records/trial000001_falling.csv", original)
    assert np.array_equal(back.counts_port1, original.counts_port1)
    assert np.allclose(back.times, original.times, rtol=0, atol=1e-18)


def test_manifest_is_sorted_config(tmp_path):
    write_manifest(tmp_path / "m.txt", {"b.key": 2, "a.key": "x"})
    lines = (tmp_path / "m.txt").read_text().splitlines()
    assert lines[0].startswith("#")
    assert lines[1:] == ["a.key = x", "b.key = 2"]


def test_export_reports_unwritable_directory(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(OSError, match="cannot create"):
        export_results(blocker / "sub", {"a": 1})


def test_simulate_trial_record_shapes(triangle):
    records, est = simulate_trial(small(triangle), 0)
    assert [r.edge.value for r in records] == ["rising", "falling"]
    assert all(r.counts_port1.size == 512 for r in records)
    assert all(np.all(r.counts_port1 + r.counts_port0 == 2) for r in records)
