"""Classical and quantum Fisher information, SLDs and Cramer-Rao bounds.

Every matrix is normalized per emitted state (per unit nu*T_m): the bound on
the covariance after ``total`` emissions is ``inverse / total``.

Triangle parameters are ordered (omega_b, omega_d, theta0, theta1) in the
beat parametrization and (d, v, theta0, theta1) in the range one; the two are
related by a diagonal Jacobian. Sawtooth matrices use (omega_b, theta) or
(d, theta).
"""
from __future__ import annotations

import enum
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad_vec

from .channel import BeatParams, DetectionWindows, Edge, Target, beat_parameters
from .errors import ConfigurationError, SingularMatrixError, ToleranceError, UnsupportedError
from .quantum import NoonModel, StateConvention, branch_amplitudes, port_probabilities
from .waveform import C_LIGHT, Family, ModulationConfig, TimeGrid


class FisherKind(enum.Enum):
    CLASSICAL = "ClassicalFI"
    QUANTUM = "QuantumFI"


class Parametrization(enum.Enum):
    BEAT = "beat"
    RANGE = "range"


TRIANGLE_LABELS = {
    Parametrization.BEAT: ("omega_b", "omega_d", "theta0", "theta1"),
    Parametrization.RANGE: ("d", "v", "theta0", "theta1"),
}
SAWTOOTH_LABELS = {
    Parametrization.BEAT: ("omega_b", "theta"),
    Parametrization.RANGE: ("d", "theta"),
}


def _scaled_inverse(matrix: np.ndarray, labels) -> np.ndarray:
    d = np.sqrt(np.abs(np.diag(matrix)))
    if np.any(d == 0):
        idx = int(np.argmin(d))
        raise SingularMatrixError(f"information matrix is singular along '{labels[idx]}'",
                                  {labels[idx]: 1.0})
    corr = matrix / np.outer(d, d)
    w, vecs = np.linalg.eigh(corr)
    if w[0] <= 1e-12 * w[-1]:
        null = vecs[:, 0] / d
        null = null / np.max(np.abs(null))
        direction = {lab: float(c) for lab, c in zip(labels, null) if abs(c) > 1e-9}
        raise SingularMatrixError(f"information matrix is singular along {direction}", direction)
    inv = np.linalg.inv(corr) / np.outer(d, d)
    return 0.5 * (inv + inv.T)


@dataclass
class FisherResult:
    matrix: np.ndarray
    parameter_order: tuple
    kind: FisherKind
    inverse: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=float)
        k = len(self.parameter_order)
        if self.matrix.shape != (k, k):
            raise ConfigurationError("matrix shape does not match parameter labels")
        if not np.allclose(self.matrix, self.matrix.T, rtol=1e-9,
                           atol=1e-12 * np.max(np.abs(self.matrix))):
            raise ConfigurationError("information matrix must be symmetric")
        if self.inverse is None:
            try:
                self.inverse = _scaled_inverse(self.matrix, self.parameter_order)
            except SingularMatrixError:
                self.inverse = None
        else:
            self.inverse = np.asarray(self.inverse, dtype=float)

    def index(self, label: str) -> int:
        return self.parameter_order.index(label)

    def entry(self, row: str, col: str | None = None, inverse: bool = False) -> float:
        m = self.inverse if inverse else self.matrix
        return float(m[self.index(row), self.index(col or row)])

    def to_text(self) -> str:
        buf = io.StringIO()
        buf.write(f"# kind={self.kind.value}\n")
        for key in sorted(self.meta):
            buf.write(f"# {key}={self.meta[key]}\n")
        for name, m in (("matrix", self.matrix), ("inverse", self.inverse)):
            if m is None:
                continue
            buf.write(f"[{name}]\nparam," + ",".join(self.parameter_order) + "\n")
            for lab, row in zip(self.parameter_order, m):
                buf.write(lab + "," + ",".join(repr(float(v)) for v in row) + "\n")
        return buf.getvalue()

    @classmethod
    def from_text(cls, text: str) -> "FisherResult":
        meta, blocks, current, labels, kind = {}, {}, None, None, None
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                if key == "kind":
                    kind = FisherKind(value)
                else:
                    meta[key] = value
            elif line.startswith("["):
                current = line.strip("[]")
                blocks[current] = []
            elif line.startswith("param,"):
                labels = tuple(line.split(",")[1:])
            else:
                blocks[current].append([float(v) for v in line.split(",")[1:]])
        return cls(np.array(blocks["matrix"]), labels, kind,
                   np.array(blocks["inverse"]) if "inverse" in blocks else None, meta)


def read_fisher_file(text: str) -> list[FisherResult]:
    """Parse a file holding several results separated by blank-line-delimited blocks."""
    chunks, cur = [], []
    for line in text.splitlines():
        if line.startswith("# kind=") and cur:
            chunks.append("\n".join(cur))
            cur = []
        cur.append(line)
    if cur:
        chunks.append("\n".join(cur))
    return [FisherResult.from_text(c) for c in chunks if c.strip()]


def range_jacobian(cfg: ModulationConfig) -> np.ndarray:
    """Diagonal d(beat params)/d(range params)."""
    slope_per_m = cfg.slope * 2 / C_LIGHT
    if cfg.family is Family.SAWTOOTH:
        return np.array([slope_per_m, 1.0])
    return np.array([slope_per_m, 2 * cfg.omega_c / C_LIGHT, 1.0, 1.0])


def reparametrize(fr: FisherResult, cfg: ModulationConfig, to: Parametrization) -> FisherResult:
    labels = (SAWTOOTH_LABELS if cfg.family is Family.SAWTOOTH else TRIANGLE_LABELS)
    current = Parametrization.BEAT if tuple(fr.parameter_order) == labels[Parametrization.BEAT] \
        else Parametrization.RANGE
    if current is to:
        return fr
    jac = range_jacobian(cfg)
    if to is Parametrization.BEAT:
        jac = 1 / jac
    matrix = fr.matrix * np.outer(jac, jac)
    inverse = None if fr.inverse is None else fr.inverse / np.outer(jac, jac)
    meta = dict(fr.meta, parametrization=to.value)
    return FisherResult(matrix, labels[to], fr.kind, inverse, meta)


# --- closed forms -----------------------------------------------------------

def _window_moments(lo: float, hi: float) -> tuple[float, float, float]:
    return hi - lo, (hi * hi - lo * lo) / 2, (hi ** 3 - lo ** 3) / 3


def _edge_gradients(edge: Edge) -> np.ndarray:
    """Coefficients (const, t) of d(beat argument)/d(omega_b, omega_d, theta0, theta1)."""
    if edge is Edge.RISING:
        return np.array([[0, 1], [0, 1], [1, 0], [0, 0]], dtype=float)
    return np.array([[0, -1], [0, 1], [0, 0], [1, 0]], dtype=float)


def _moment_blocks(model: NoonModel):
    for edge in model.edges():
        g = _edge_gradients(edge)
        m0, m1, m2 = _window_moments(*model.window(edge))
        # integral of h h^T and of h over the window, h = g @ (1, t)
        outer = (np.outer(g[:, 0], g[:, 0]) * m0
                 + (np.outer(g[:, 0], g[:, 1]) + np.outer(g[:, 1], g[:, 0])) * m1
                 + np.outer(g[:, 1], g[:, 1]) * m2)
        yield edge, outer, g[:, 0] * m0 + g[:, 1] * m1


def _triangle_result(cfg, n, parametrization, kind, matrix, inverse, meta):
    fr = FisherResult(matrix, TRIANGLE_LABELS[Parametrization.BEAT], kind, inverse,
                      dict(meta, family="triangle", n=n, parametrization="beat"))
    return reparametrize(fr, cfg, Parametrization(parametrization))


def _require(cfg: ModulationConfig, family: Family, hint: str) -> None:
    if cfg.family is not family:
        raise UnsupportedError(f"{family.value} only; use {hint}")


def cfi_closed_triangle(cfg: ModulationConfig, n: int,
                        parametrization: Parametrization = Parametrization.RANGE,
                        windows: DetectionWindows | None = None) -> FisherResult:
    """Binary-outcome CFI integrated over both edge windows.

    With the default windows the matrix is diagonal; its inverse is then
    written out term by term rather than computed numerically.
    """
    _require(cfg, Family.TRIANGLE, "cfi_closed_sawtooth")
    model = NoonModel(n, cfg, windows)
    T = cfg.period
    matrix = sum(outer for _, outer, _ in _moment_blocks(model)) * n * n / T
    inverse = None
    if model.windows == DetectionWindows.default(cfg):
        matrix = np.diag([n * n * T * T / 48, n * n * T * T / 48, n * n / 2, n * n / 2])
        inverse = np.diag([48 / (n * n * T * T), 48 / (n * n * T * T), 2 / (n * n), 2 / (n * n)])
    meta = {"t_d0": model.windows.t_d0, "t_d1": model.windows.t_d1, "normalization": "per nu*T_m"}
    return _triangle_result(cfg, n, parametrization, FisherKind.CLASSICAL, matrix, inverse, meta)


def qfi_closed_triangle(cfg: ModulationConfig, n: int,
                        parametrization: Parametrization = Parametrization.RANGE,
                        windows: DetectionWindows | None = None,
                        convention: "StateConvention" = None) -> FisherResult:
    """Pure-state QFI of the chirped NOON state over one triangle period."""
    _require(cfg, Family.TRIANGLE, "qfi_closed_sawtooth")
    convention = StateConvention(convention or StateConvention.CONJUGATE_RISING)
    model = NoonModel(n, cfg, windows)
    T = cfg.period
    second = np.zeros((4, 4))
    first = np.zeros(4)
    for edge, outer, mean in _moment_blocks(model):
        second += outer
        first += convention.edge_sign(edge) * mean
    matrix = n * n * (2 * second / T - np.outer(first, first) / (T * T))
    inverse = None
    if model.windows == DetectionWindows.default(cfg):
        s = -1.0 if convention is StateConvention.CONJUGATE_RISING else 1.0
        matrix = np.zeros((4, 4))
        matrix[0, 0] = matrix[1, 1] = n * n * T * T / 24
        matrix[2:, 2:] = n * n * np.array([[0.75, -0.25 * s], [-0.25 * s, 0.75]])
        inverse = np.zeros((4, 4))
        inverse[0, 0] = inverse[1, 1] = 24 / (n * n * T * T)
        inverse[2:, 2:] = np.array([[1.5, 0.5 * s], [0.5 * s, 1.5]]) / (n * n)
    meta = {"T1": model.windows.t1, "T2": model.windows.t2, "convention": convention.value,
            "normalization": "per nu*T_m"}
    return _triangle_result(cfg, n, parametrization, FisherKind.QUANTUM, matrix, inverse, meta)


def _sawtooth_result(cfg, n, t0, parametrization, kind, matrix, inverse):
    fr = FisherResult(matrix, SAWTOOTH_LABELS[Parametrization.BEAT], kind, inverse,
                      {"family": "sawtooth", "n": n, "t_origin": t0, "parametrization": "beat",
                       "normalization": "per N*nu*T_m"})
    return reparametrize(fr, cfg, Parametrization(parametrization))


def qfi_closed_sawtooth(cfg: ModulationConfig, n: int, t0: float | None = None,
                        parametrization: Parametrization = Parametrization.BEAT) -> FisherResult:
    _require(cfg, Family.SAWTOOTH, "qfi_closed_triangle")
    T = cfg.period
    t0 = cfg.t_origin if t0 is None else t0
    nn = n * n
    matrix = nn * np.array([[5 * T * T / 12 + t0 * (t0 + T), T / 2 + t0], [T / 2 + t0, 1.0]])
    off = -3 / (nn * T) - 6 * t0 / (nn * T * T)
    inverse = np.array([[6 / (nn * T * T), off],
                        [off, 5 / (2 * nn) + 6 * t0 * (t0 + T) / (nn * T * T)]])
    return _sawtooth_result(cfg, n, t0, parametrization, FisherKind.QUANTUM, matrix, inverse)


def cfi_closed_sawtooth(cfg: ModulationConfig, n: int, t_d: float | None = None,
                        parametrization: Parametrization = Parametrization.BEAT) -> FisherResult:
    _require(cfg, Family.SAWTOOTH, "cfi_closed_triangle")
    T = cfg.period
    t_d = cfg.t_origin if t_d is None else t_d
    nn = n * n
    matrix = nn * np.array([[T * T / 3 + t_d * (t_d + T), T / 2 + t_d], [T / 2 + t_d, 1.0]])
    off = -6 / (nn * T) - 12 * t_d / (nn * T * T)
    inverse = np.array([[12 / (nn * T * T), off],
                        [off, 4 / nn + 12 * t_d * (t_d + T) / (nn * T * T)]])
    return _sawtooth_result(cfg, n, t_d, parametrization, FisherKind.CLASSICAL, matrix, inverse)


def crb(fr: FisherResult, total_emissions: float) -> np.ndarray:
    if not total_emissions > 0:
        raise ConfigurationError("total_emissions must be > 0")
    inverse = fr.inverse if fr.inverse is not None else _scaled_inverse(fr.matrix, fr.parameter_order)
    return inverse / total_emissions


# --- numeric ------------------------------------------------------------------

@dataclass(frozen=True)
class QuadratureSettings:
    epsrel: float = 1e-10
    epsabs: float = 0.0
    fd_step: float = 1e-5   # relative to each parameter's natural scale
    limit: int = 2000


def natural_scales(cfg: ModulationConfig) -> np.ndarray:
    """Beat-parameter step scales matching c/dw for d, c/(w_c T) for v, 1 rad for phases."""
    jac = range_jacobian(cfg)
    if cfg.family is Family.SAWTOOTH:
        return np.array([jac[0] * C_LIGHT / cfg.delta_omega, 1.0])
    return np.array([jac[0] * C_LIGHT / cfg.delta_omega,
                     jac[1] * C_LIGHT / (cfg.omega_c * cfg.period), 1.0, 1.0])


def _beat_vector(model: NoonModel, beat: BeatParams) -> np.ndarray:
    if model.cfg.family is Family.SAWTOOTH:
        return np.array([beat.omega_b, beat.theta0])
    return np.array([beat.omega_b, beat.omega_d, beat.theta0, beat.theta1])


def _beat_from_vector(model: NoonModel, x) -> BeatParams:
    if model.cfg.family is Family.SAWTOOTH:
        return BeatParams(x[0], 0.0 * x[0], x[1], 0.0 * x[1])
    return BeatParams(*x)


def _labels(cfg: ModulationConfig):
    return (SAWTOOTH_LABELS if cfg.family is Family.SAWTOOTH else TRIANGLE_LABELS)[Parametrization.BEAT]


def cfi_numeric(model: NoonModel, target: Target, quad: QuadratureSettings | None = None,
                parametrization: Parametrization = Parametrization.BEAT) -> FisherResult:
    """Integrate the instantaneous binary-outcome CFI over the detection windows.

    Outcome derivatives come from central differences of the probabilities;
    the integral uses adaptive Gauss-Kronrod quadrature on the whole matrix.
    """
    quad = quad or QuadratureSettings()
    cfg = model.cfg
    x0 = _beat_vector(model, beat_parameters(target, cfg, model.windows))
    steps = quad.fd_step * natural_scales(cfg)
    k = x0.size
    eps_t = np.finfo(float).eps * cfg.period

    # rows: base point, then +step and -step along each parameter
    offsets = np.vstack([np.zeros(k), np.diag(steps), -np.diag(steps)])
    stacked = _beat_from_vector(model, (x0 + offsets).T)

    def probs(edge, t):
        return np.array(port_probabilities(model.n, stacked, edge, t))

    def integrand(t, edge):
        p = probs(edge, t)
        if np.min(p[:, 0]) < 1e-14:
            t = t + eps_t
            p = probs(edge, t)
        base = p[:, 0]
        grads = (p[:, 1:k + 1] - p[:, k + 1:]).T / (2 * steps[:, None])
        live = base > 0
        if np.any(~live & np.any(grads != 0, axis=0)):
            raise ToleranceError("outcome with zero probability has nonzero derivative")
        g = grads[:, live]
        return ((g / base[live]) @ g.T).ravel()

    total = np.zeros(k * k)
    for edge in model.edges():
        lo, hi = model.window(edge)
        val, err = quad_vec(integrand, lo, hi, args=(edge,), epsrel=quad.epsrel,
                            epsabs=quad.epsabs, limit=quad.limit, norm="max")
        if not np.all(np.isfinite(val)) or err > max(1e3 * quad.epsrel * np.max(np.abs(val)),
                                                     quad.epsabs):
            raise ToleranceError(f"CFI quadrature did not converge on the {edge.value} window "
                                 f"(error estimate {err:.3e})")
        total += val
    matrix = total.reshape(k, k) / cfg.period
    matrix = 0.5 * (matrix + matrix.T)
    fr = FisherResult(matrix, _labels(cfg), FisherKind.CLASSICAL,
                      meta={"n": model.n, "source": "numeric", "parametrization": "beat",
                            "fd_step": quad.fd_step})
    return reparametrize(fr, cfg, Parametrization(parametrization))


def _qfi_from_amplitudes(model, x0, steps, grid, convention):
    k = x0.size
    psi0 = branch_amplitudes(model, _beat_from_vector(model, x0), grid, convention).state()
    derivs, norms = [], []
    for i in range(k):
        dx = np.zeros(k)
        dx[i] = steps[i]
        plus = branch_amplitudes(model, _beat_from_vector(model, x0 + dx), grid, convention).state()
        minus = branch_amplitudes(model, _beat_from_vector(model, x0 - dx), grid, convention).state()
        norms += [np.vdot(plus, plus).real, np.vdot(minus, minus).real]
        derivs.append((plus - minus) / (2 * steps[i]))
    d = np.array(derivs)
    gram = d.conj() @ d.T
    overlap = d.conj() @ psi0
    return 4 * np.real(gram - np.outer(overlap, overlap.conj())), norms


def qfi_numeric(model: NoonModel, target: Target, grid: TimeGrid, step: float = 1e-6,
                parametrization: Parametrization = Parametrization.BEAT,
                convention: "StateConvention" = None) -> FisherResult:
    """Finite-difference pure-state QFI from the discretized state amplitudes.

    The truncation error is estimated by repeating with half the step; a
    relative change above 1e-3 means the step is too large.
    """
    cfg = model.cfg
    convention = StateConvention(convention or StateConvention.CONJUGATE_RISING)
    beat = beat_parameters(target, cfg, model.windows)
    fastest = model.n * max(abs(beat.omega_b1), abs(beat.omega_b2))
    if fastest * grid.dt > 2 * math.pi / 16:
        raise ConfigurationError("grid has fewer than 16 points per beat cycle")
    x0 = _beat_vector(model, beat)
    steps = step * natural_scales(cfg)
    full, norms = _qfi_from_amplitudes(model, x0, steps, grid, convention)
    half, _ = _qfi_from_amplitudes(model, x0, 0.5 * steps, grid, convention)
    scale = np.sqrt(np.outer(np.diag(full), np.diag(full)))
    trunc = np.max(np.abs(full - half) / scale) * 4 / 3
    if trunc > 1e-3:
        raise ToleranceError(f"finite-difference step too large: estimated second-order "
                             f"error {trunc:.2e} exceeds 1e-3")
    matrix = 0.5 * (full + full.T)
    fr = FisherResult(matrix, _labels(cfg), FisherKind.QUANTUM,
                      meta={"n": model.n, "source": "numeric", "parametrization": "beat",
                            "step": step, "convention": convention.value,
                            "max_norm_error": max(abs(v - 1) for v in norms),
                            "truncation_estimate": trunc})
    return reparametrize(fr, cfg, Parametrization(parametrization))


# --- SLDs ---------------------------------------------------------------------

@dataclass(frozen=True)
class SldPair:
    rho: np.ndarray
    L_d: np.ndarray
    L_v: np.ndarray
    a: float
    b: float
    basis_dim: int = 3


def sld_pair(cfg: ModulationConfig, n: int) -> SldPair:
    """SLDs for (d, v) in the basis {psi, a*d_d psi, b*d_v psi}."""
    _require(cfg, Family.TRIANGLE, "a triangle configuration")
    a = math.sqrt(6) * C_LIGHT / (n * cfg.delta_omega)
    b = 2 * math.sqrt(6) * C_LIGHT / (n * cfg.omega_c * cfg.period)
    rho = np.diag([1.0, 0.0, 0.0])
    L_d = np.zeros((3, 3), dtype=complex)
    L_v = np.zeros((3, 3), dtype=complex)
    L_d[0, 1] = L_d[1, 0] = 2 / a
    L_v[0, 2] = L_v[2, 0] = 2 / b
    return SldPair(rho, L_d, L_v, a, b)


def weak_commutativity(pair: SldPair) -> float:
    comm = pair.L_d @ pair.L_v - pair.L_v @ pair.L_d
    return float(abs(np.trace(pair.rho @ comm)))


def sld_qfi(pair: SldPair) -> np.ndarray:
    """QFI matrix Re Tr[rho (L_i L_j + L_j L_i)/2] in (d, v)."""
    ops = (pair.L_d, pair.L_v)
    out = np.empty((2, 2))
    for i, li in enumerate(ops):
        for j, lj in enumerate(ops):
            out[i, j] = np.real(np.trace(pair.rho @ (li @ lj + lj @ li))) / 2
    return out
