import math

import numpy as np
import pytest

from conftest import optical
from oracles import ContinuousNoonState
from qfmcw.channel import DetectionWindows, Target
from qfmcw.errors import ConfigurationError, SingularMatrixError, ToleranceError, UnsupportedError
from qfmcw.fisher import (FisherKind, FisherResult, Parametrization, cfi_closed_sawtooth,
                          cfi_closed_triangle, cfi_numeric, crb, qfi_closed_sawtooth,
                          qfi_closed_triangle, qfi_numeric, read_fisher_file, reparametrize,
                          sld_pair, sld_qfi, weak_commutativity)
from qfmcw.quantum import NoonModel, StateConvention
from qfmcw.waveform import C_LIGHT, Family, TimeGrid

TARGET = Target(0.05, 0.5)
QFI_CELLS = 2 ** 17


def normalized(m):
    d = np.sqrt(np.diag(m))
    return m / np.outer(d, d)


def test_triangle_cfi_closed_values(triangle):
    dw, wc, T = triangle.delta_omega, triangle.omega_c, triangle.period
    for n in (1, 2, 3):
        bound = crb(cfi_closed_triangle(triangle, n), 1.0)
        expected = [3 * C_LIGHT ** 2 / (n * n * dw * dw), 12 * C_LIGHT ** 2 / (n * n * wc * wc * T * T),
                    2 / n ** 2, 2 / n ** 2]
        assert np.allclose(np.diag(bound), expected, rtol=1e-12, atol=0)
        assert np.count_nonzero(bound - np.diag(np.diag(bound))) == 0
    sigma_d = math.sqrt(crb(cfi_closed_triangle(triangle, 1), 1.0)[0, 0])
    assert sigma_d == pytest.approx(math.sqrt(3) * C_LIGHT / dw, rel=1e-12)
    assert sigma_d == pytest.approx(0.827e-3, rel=1e-3)
    tau_bound = math.sqrt(crb(cfi_closed_triangle(triangle, 2), 1.0)[0, 0]) * 2 / C_LIGHT
    assert tau_bound == pytest.approx(2 * math.sqrt(3) / (2 * dw), rel=1e-12)


def test_triangle_qfi_closed_values(triangle):
    dw, wc, T = triangle.delta_omega, triangle.omega_c, triangle.period
    q1 = qfi_closed_triangle(triangle, 1)
    assert q1.entry("d", inverse=True) == pytest.approx(1.5 * C_LIGHT ** 2 / dw ** 2, rel=1e-12)
    assert q1.entry("v", inverse=True) == pytest.approx(6 * C_LIGHT ** 2 / (wc * T) ** 2, rel=1e-12)
    beat = qfi_closed_triangle(triangle, 2, Parametrization.BEAT)
    assert beat.matrix[0, 0] == beat.matrix[1, 1] == pytest.approx(4 * T * T / 24, rel=1e-15)
    assert np.allclose(beat.matrix[2:, 2:], 4 * np.array([[0.75, 0.25], [0.25, 0.75]]), rtol=1e-15)
    analytic = qfi_closed_triangle(triangle, 2, Parametrization.BEAT,
                                   convention=StateConvention.ANALYTIC)
    assert analytic.matrix[2, 3] == pytest.approx(-1.0, rel=1e-15)
    q2 = qfi_closed_triangle(triangle, 2)
    assert np.allclose(np.diag(q2.inverse), np.diag(q1.inverse) / 4, rtol=1e-14)
    delta_tau = math.sqrt(q2.entry("d", inverse=True)) * 2 / C_LIGHT
    assert delta_tau == pytest.approx(math.sqrt(6) / (2 * dw), rel=1e-12)


@pytest.mark.parametrize("convention", list(StateConvention))
def test_closed_forms_general_windows_match_defaults(triangle, convention):
    windows = DetectionWindows(0.25 * triangle.period * (1 + 1e-15), -0.25 * triangle.period)
    for n in (1, 2):
        c_def = cfi_closed_triangle(triangle, n, Parametrization.BEAT)
        c_gen = cfi_closed_triangle(triangle, n, Parametrization.BEAT, windows)
        assert np.allclose(np.diag(c_gen.matrix), np.diag(c_def.matrix), rtol=1e-9)
        assert np.allclose(normalized(c_gen.matrix), normalized(c_def.matrix), atol=1e-9)
        q_def = qfi_closed_triangle(triangle, n, Parametrization.BEAT, convention=convention)
        q_gen = qfi_closed_triangle(triangle, n, Parametrization.BEAT, windows, convention)
        assert np.allclose(normalized(q_gen.matrix), normalized(q_def.matrix), atol=1e-9)


def test_off_window_origins_correlate(triangle):
    T = triangle.period
    windows = DetectionWindows(0.4 * T, -0.1 * T)
    cfi = cfi_closed_triangle(triangle, 1, Parametrization.BEAT, windows)
    assert abs(normalized(cfi.inverse)[0, 2]) > 1e-3
    default = cfi_closed_triangle(triangle, 1, Parametrization.BEAT)
    assert normalized(default.inverse)[0, 2] == 0


def test_n_squared_scaling_and_inverse(triangle, sawtooth):
    results = [
        lambda n: cfi_closed_triangle(triangle, n),
        lambda n: qfi_closed_triangle(triangle, n),
        lambda n: cfi_closed_sawtooth(sawtooth, n, t_d=0.3e-6),
        lambda n: qfi_closed_sawtooth(sawtooth, n, t0=-1.7e-6),
    ]
    for build in results:
        one, three = build(1), build(3)
        assert np.allclose(three.matrix, 9 * one.matrix, rtol=1e-13, atol=0)
        for fr in (one, three):
            eye = normalized_product(fr)
            assert np.allclose(eye, np.eye(len(fr.parameter_order)), atol=1e-9)
            assert np.all(np.linalg.eigvalsh(normalized(fr.matrix)) >= -1e-12)


def normalized_product(fr):
    d = np.sqrt(np.diag(fr.matrix))
    return np.diag(1 / d) @ fr.matrix @ fr.inverse @ np.diag(d)


def test_sawtooth_decorrelation(sawtooth):
    T = sawtooth.period
    q = qfi_closed_sawtooth(sawtooth, 1, t0=-T / 2)
    assert q.inverse[0, 1] == 0
    assert q.inverse[0, 0] == pytest.approx(6 / T ** 2, rel=1e-15)
    assert q.inverse[1, 1] == pytest.approx(1.0, rel=1e-15)
    c = cfi_closed_sawtooth(sawtooth, 1, t_d=-T / 2)
    assert c.inverse[0, 1] == 0
    assert c.inverse[0, 0] == pytest.approx(12 / T ** 2, rel=1e-15)
    assert c.inverse[0, 0] / q.inverse[0, 0] == pytest.approx(2.0, rel=1e-15)
    for t0 in (0.0, 1.3e-6, -7e-6):
        for n in (1, 2):
            q = qfi_closed_sawtooth(sawtooth, n, t0=t0)
            assert q.inverse[0, 1] == pytest.approx(-3 / (n * n * T) - 6 * t0 / (n * n * T * T),
                                                    rel=1e-12)
            assert np.allclose(q.inverse, np.linalg.inv(q.matrix), rtol=1e-9)
            c = cfi_closed_sawtooth(sawtooth, n, t_d=t0)
            assert c.matrix[1, 1] == n * n
            assert np.allclose(c.inverse, np.linalg.inv(c.matrix), rtol=1e-9)
    quartered = qfi_closed_sawtooth(sawtooth, 2, t0=-T / 2).inverse
    assert np.allclose(quartered, qfi_closed_sawtooth(sawtooth, 1, t0=-T / 2).inverse / 4, rtol=1e-15)
    # distance bounds follow the matrices
    cd = cfi_closed_sawtooth(sawtooth, 1, t_d=-T / 2, parametrization=Parametrization.RANGE)
    qd = qfi_closed_sawtooth(sawtooth, 1, t0=-T / 2, parametrization=Parametrization.RANGE)
    dw = sawtooth.delta_omega
    assert cd.entry("d", inverse=True) == pytest.approx(3 * C_LIGHT ** 2 / dw ** 2, rel=1e-12)
    assert qd.entry("d", inverse=True) == pytest.approx(1.5 * C_LIGHT ** 2 / dw ** 2, rel=1e-12)


def test_family_guards(triangle, sawtooth):
    with pytest.raises(UnsupportedError):
        cfi_closed_triangle(sawtooth, 1)
    with pytest.raises(UnsupportedError):
        qfi_closed_sawtooth(triangle, 1)
    with pytest.raises(UnsupportedError):
        sld_pair(sawtooth, 1)


def test_quantum_classical_gap_and_loewner_order(triangle):
    for n in (1, 2, 5):
        c = crb(cfi_closed_triangle(triangle, n), 7.0)
        q = crb(qfi_closed_triangle(triangle, n), 7.0)
        assert c[0, 0] / q[0, 0] == pytest.approx(2.0, rel=1e-12)
        assert c[1, 1] / q[1, 1] == pytest.approx(2.0, rel=1e-12)
        assert math.sqrt(q[0, 0]) == pytest.approx(math.sqrt(c[0, 0]) / math.sqrt(2), rel=1e-12)
        diff = c - q
        scale = np.sqrt(np.outer(np.diag(c), np.diag(c)))
        assert np.min(np.linalg.eigvalsh(diff / scale)) >= -1e-12


def test_crb_scaling_and_errors(triangle):
    fr = cfi_closed_triangle(triangle, 1)
    assert np.allclose(crb(fr, 2e4), crb(fr, 1e4) / 2, rtol=1e-15)
    with pytest.raises(ConfigurationError):
        crb(fr, 0)
    singular = FisherResult(np.diag([1.0, 0.0]), ("d", "theta"), FisherKind.CLASSICAL)
    assert singular.inverse is None
    with pytest.raises(SingularMatrixError) as info:
        crb(singular, 1.0)
    assert info.value.null_direction == {"theta": 1.0}
    rank_deficient = FisherResult(np.ones((2, 2)), ("d", "theta"), FisherKind.CLASSICAL)
    with pytest.raises(SingularMatrixError) as info:
        crb(rank_deficient, 1.0)
    direction = info.value.null_direction
    assert set(direction) == {"d", "theta"} and direction["d"] == pytest.approx(-direction["theta"])


def test_reparametrize_round_trip(triangle):
    beat = cfi_closed_triangle(triangle, 2, Parametrization.BEAT)
    rng = reparametrize(beat, triangle, Parametrization.RANGE)
    back = reparametrize(rng, triangle, Parametrization.BEAT)
    assert np.allclose(back.matrix, beat.matrix, rtol=1e-14)
    assert rng.parameter_order == ("d", "v", "theta0", "theta1")
    slope_per_m = 2 * triangle.slope / C_LIGHT
    assert rng.matrix[0, 0] == pytest.approx(beat.matrix[0, 0] * slope_per_m ** 2, rel=1e-14)


def test_text_round_trip(triangle, sawtooth):
    results = [cfi_closed_triangle(triangle, 2), qfi_closed_sawtooth(sawtooth, 1, t0=1e-6)]
    text = "".join(fr.to_text() for fr in results)
    parsed = read_fisher_file(text)
    assert len(parsed) == 2
    for a, b in zip(results, parsed):
        assert b.kind is a.kind and b.parameter_order == a.parameter_order
        assert np.array_equal(a.matrix, b.matrix) and np.array_equal(a.inverse, b.inverse)
    assert parsed[0].meta["n"] == "2"


# --- numeric ------------------------------------------------------------------

@pytest.fixture(scope="module")
def triangle_cfi_numeric():
    cfg = optical(Family.TRIANGLE)
    return {n: cfi_numeric(NoonModel(n, cfg), TARGET) for n in (1, 2)}


def test_cfi_numeric_matches_closed(triangle, triangle_cfi_numeric):
    for n, numeric in triangle_cfi_numeric.items():
        closed = cfi_closed_triangle(triangle, n, Parametrization.BEAT)
        assert np.allclose(np.diag(numeric.matrix), np.diag(closed.matrix), rtol=1e-6, atol=0)
        off = normalized(numeric.matrix) - np.eye(4)
        assert np.max(np.abs(off)) <= 1e-8


def test_cfi_numeric_n_squared(triangle_cfi_numeric):
    one, two = triangle_cfi_numeric[1].matrix, triangle_cfi_numeric[2].matrix
    assert np.allclose(np.diag(two), 4 * np.diag(one), rtol=1e-6, atol=0)
    assert np.max(np.abs(normalized(two) - normalized(one))) <= 1e-8


def test_cfi_numeric_sawtooth_decorrelated():
    cfg = optical(Family.SAWTOOTH, -5e-6)
    numeric = cfi_numeric(NoonModel(1, cfg), Target(0.05))
    closed = cfi_closed_sawtooth(cfg, 1)
    assert np.allclose(np.diag(numeric.matrix), np.diag(closed.matrix), rtol=1e-6)
    assert abs(normalized(numeric.matrix)[0, 1]) <= 1e-8


@pytest.mark.parametrize("convention", list(StateConvention))
def test_qfi_numeric_matches_closed(triangle, convention):
    model = NoonModel(1, triangle)
    grid = TimeGrid.period_midpoints(triangle, QFI_CELLS)
    numeric = qfi_numeric(model, TARGET, grid, convention=convention)
    closed = qfi_closed_triangle(triangle, 1, Parametrization.BEAT, convention=convention)
    assert np.allclose(np.diag(numeric.matrix), np.diag(closed.matrix), rtol=1e-4)
    assert np.max(np.abs(normalized(numeric.matrix) - normalized(closed.matrix))) <= 1e-4
    assert numeric.meta["max_norm_error"] <= 1e-10


def test_qfi_numeric_sawtooth(sawtooth):
    model = NoonModel(2, sawtooth)
    grid = TimeGrid.period_midpoints(sawtooth, QFI_CELLS)
    numeric = qfi_numeric(model, Target(0.05), grid)
    closed = qfi_closed_sawtooth(sawtooth, 2)
    assert np.allclose(numeric.matrix, closed.matrix, rtol=1e-4)


def test_qfi_richardson_and_step_guard(triangle):
    model = NoonModel(1, triangle)
    grid = TimeGrid.period_midpoints(triangle, 2 ** 14)
    closed = qfi_closed_triangle(triangle, 1, Parametrization.BEAT)
    target = Target(0.01, 0.1)
    errors = []
    for step in (2e-2, 1e-2):
        numeric = qfi_numeric(model, target, grid, step=step)
        errors.append(abs(numeric.matrix[2, 2] / closed.matrix[2, 2] - 1))
    assert 3.5 < errors[0] / errors[1] < 4.5
    with pytest.raises(ToleranceError):
        qfi_numeric(model, target, grid, step=0.5)
    with pytest.raises(ConfigurationError):
        qfi_numeric(model, TARGET, TimeGrid.period_midpoints(triangle, 2 ** 8))


# --- SLDs -----------------------------------------------------------------------

def test_sld_structure(triangle):
    for n in (1, 2):
        pair = sld_pair(triangle, n)
        assert pair.basis_dim == 3
        assert pair.a == pytest.approx(math.sqrt(6) * C_LIGHT / (n * triangle.delta_omega), rel=1e-15)
        assert pair.b == pytest.approx(2 * math.sqrt(6) * C_LIGHT
                                       / (n * triangle.omega_c * triangle.period), rel=1e-15)
        for op in (pair.L_d, pair.L_v):
            assert np.array_equal(op, op.conj().T)
        assert np.array_equal(pair.rho @ pair.rho, pair.rho) and np.trace(pair.rho) == 1
        qfi = sld_qfi(pair)
        expected = 2 * n * n * triangle.delta_omega ** 2 / (3 * C_LIGHT ** 2)
        assert qfi[0, 0] == pytest.approx(expected, rel=1e-12)
        assert qfi[0, 1] == 0
        # agrees with the closed-form QFI in the range parametrization
        closed = qfi_closed_triangle(triangle, n)
        assert qfi[1, 1] == pytest.approx(closed.entry("v"), rel=1e-12)


def test_weak_commutativity(triangle):
    pair = sld_pair(triangle, 2)
    assert weak_commutativity(pair) == 0
    scaled = type(pair)(pair.rho, 3.7 * pair.L_d, 3.7 * pair.L_v, pair.a, pair.b)
    assert weak_commutativity(scaled) == 0
    for delta in (1e-3, 2e-3):
        lv = pair.L_v.copy()
        lv[0, 1] += 1j * delta
        lv[1, 0] -= 1j * delta
        perturbed = type(pair)(pair.rho, pair.L_d, lv, pair.a, pair.b)
        # Tr{rho [L_d, L_v]} = (L_d L_v - L_v L_d)[0,0] = 2/a * (lv[1,0] - lv[0,1])
        assert weak_commutativity(perturbed) == pytest.approx(2 / pair.a * 2 * delta, rel=1e-12)


@pytest.mark.parametrize("convention", list(StateConvention))
@pytest.mark.parametrize("n", [1, 2])
def test_sld_defining_relation(triangle, convention, n):
    pair = sld_pair(triangle, n)
    state = ContinuousNoonState(triangle, n, Target(0.01, 0.1), convention)
    basis = state.basis(pair.a, pair.b)
    gram = basis.conj() @ basis.T
    assert np.allclose(gram, np.eye(3), atol=1e-10)
    for which, op, scale in (("d", pair.L_d, pair.a), ("v", pair.L_v, pair.b)):
        numeric = state.rho_derivative(basis, which, 1e-3 * scale)
        sld_form = 0.5 * (pair.rho @ op + op @ pair.rho)
        assert np.max(np.abs(scale * (numeric - sld_form))) <= 1e-10
