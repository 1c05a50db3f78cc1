"""
Arrival-time distributions at x = 0.

Sign convention: left-moving flux counts positive, so J = -(hbar/m) Im(psi* psi')
and every distribution here is classically positive for packets arriving from x > 0.
States are anything with ``amplitude``/``derivative``/``momentum_amplitude``
(GaussianPacket, GaussianSuperposition); ``current_j`` also accepts a SpatialField.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import integrate, interpolate

from qtimes_core import DEFAULT_PARAMS, GaussianPacket, GaussianSuperposition, PhaseSpaceField, TimeGrid
from qtimes_engine import EvolutionSpec, SpatialField, evolve_with_norms, free_evolve
from qtimes_errors import ConfigError, NumericalError, ValidityWarning
from qtimes_propagators import uniform_panels

DISTRIBUTION_KINDS = (
    "current_J", "complex_potential_Pi", "classical_Pi", "kijowski",
    "kinetic_energy_zeno", "kinetic_energy_normalized",
)
NON_NEGATIVE_KINDS = ("kijowski", "kinetic_energy_zeno", "kinetic_energy_normalized")

# validity thresholds for the resolution-function form
MIN_ENERGY_RATIO = 10.0
MIN_ABSORPTION_TIMES = 5.0

BACKFLOW_CUTOFF = 12.0
HERMITIAN_TOL = 1e-10


@dataclass(frozen=True)
class ArrivalDistribution:
    times: TimeGrid
    values: np.ndarray
    kind: str

    def __post_init__(self):
        if self.kind not in DISTRIBUTION_KINDS:
            raise ConfigError(f"unknown distribution kind '{self.kind}'")
        if self.values.shape != (self.times.n_samples,):
            raise ConfigError("one value per time sample required")
        if self.kind in NON_NEGATIVE_KINDS and np.any(self.values < -1e-14):
            raise NumericalError(f"{self.kind} went negative", estimate=float(self.values.min()), tolerance=0.0)

    def total(self) -> float:
        return float(integrate.trapezoid(self.values, self.times.samples()))


@dataclass(frozen=True)
class ResolutionFunction:
    """R(t) = (2 V0/hbar) theta(t) exp(-2 V0 t/hbar), the response of an absorbing step."""

    v0: float
    hbar: float = 1.0

    def __post_init__(self):
        if not self.v0 > 0:
            raise ConfigError(f"resolution function needs V0 > 0, got {self.v0}")

    @property
    def rate(self) -> float:
        return 2 * self.v0 / self.hbar

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return np.where(t >= 0, self.rate * np.exp(-self.rate * np.clip(t, 0, None)), 0.0)

    def convolve(self, signal, tau: float, t_start: float = 0.0, n_panels: int = 256) -> float:
        """int_{t_start}^tau R(tau - t) signal(t) dt with signal a vectorized callable."""
        if tau <= t_start:
            return 0.0
        nodes, weights = uniform_panels(t_start, tau, n_panels)
        return float(np.sum(weights * self(tau - nodes) * np.real(signal(nodes))))


# -- currents -----------------------------------------------------------------------------------

def _grid_current(field_: SpatialField, rtol: float, atol: float) -> float:
    x = field_.x
    i0 = int(np.argmin(np.abs(x)))
    if abs(x[i0]) > 1e-9 * field_.dx:
        raise ConfigError("x = 0 is not a grid point; choose x_min as a multiple of dx")
    if i0 < 2 or i0 > field_.n - 3:
        raise ConfigError("x = 0 too close to the grid edge")
    psi = field_.values
    dx = field_.dx
    d2 = (psi[i0 + 1] - psi[i0 - 1]) / (2 * dx)
    d4 = (-psi[i0 + 2] + 8 * psi[i0 + 1] - 8 * psi[i0 - 1] + psi[i0 - 2]) / (12 * dx)
    hbar, m = field_.params.hbar, field_.params.mass
    j2 = -(hbar / m) * np.imag(np.conj(psi[i0]) * d2)
    j4 = -(hbar / m) * np.imag(np.conj(psi[i0]) * d4)
    err = abs(j4 - j2)
    tol = atol + rtol * abs(j4)
    if err > tol:
        raise NumericalError("grid too coarse for the finite-difference current", estimate=err, tolerance=tol)
    return float(j4)


def current_j(state, t, rtol: float = 1e-2, atol: float = 1e-8):
    """J(0, t); analytic for packets, fourth-order finite differences for grid fields."""
    if isinstance(state, SpatialField):
        field_ = state if t == state.t else free_evolve(state, t - state.t)
        return _grid_current(field_, rtol, atol)
    hbar, m = state.hbar, state.mass
    psi = state.amplitude(0.0, t)
    dpsi = state.derivative(0.0, t)
    return -(hbar / m) * np.imag(np.conj(psi) * dpsi)


def window_probability(state, t1: float, t2: float, n_panels: int = 256) -> float:
    """int_{t1}^{t2} J dt, the probability of crossing x = 0 inside the window."""
    if t2 < t1:
        raise ConfigError("window needs t2 >= t1")
    nodes, weights = uniform_panels(t1, t2, n_panels)
    return float(np.sum(weights * current_j(state, nodes)))


def find_backflow_window(state, t_start: float, t_end: float, n: int = 20001):
    """Most negative contiguous window of J on [t_start, t_end]: (t1, t2, flux) or None."""
    t = np.linspace(t_start, t_end, n)
    j = current_j(state, t)
    negative = j < 0
    if not negative.any():
        return None
    edges = np.flatnonzero(np.diff(np.concatenate(([0], negative.astype(int), [0]))))
    best = None
    for lo, hi in zip(edges[::2], edges[1::2]):
        t1, t2 = t[max(lo - 1, 0)], t[min(hi, n - 1)]
        flux = window_probability(state, t1, t2, n_panels=32)
        if best is None or flux < best[2]:
            best = (float(t1), float(t2), flux)
    return best


# -- complex potential --------------------------------------------------------------------------

def _validity_flags(state, v0: float, tau: float):
    energy = getattr(state, "energy_mean", None)
    if energy is not None and energy / v0 <= MIN_ENERGY_RATIO:
        warnings.warn(f"E/V0 = {energy / v0:.3g} is not large; reflection from the step is not negligible",
                      ValidityWarning, stacklevel=3)
    if v0 * tau / state.hbar <= MIN_ABSORPTION_TIMES:
        warnings.warn(f"V0*tau = {v0 * tau:.3g} is not large; the resolution tail is truncated",
                      ValidityWarning, stacklevel=3)


def complex_potential_pi(state, v0: float, tau: float, mode: str = "convolution", n_panels: int = 256,
                         **grid) -> float:
    """
    Arrival density measured by an absorbing step -i V0 theta(-x).

    ``convolution`` smears the free current with the resolution function.
    ``norm_loss`` evolves on a grid and differentiates the surviving norm;
    ``grid`` forwards x_range, n and dt to :func:`norm_loss_pi`.
    """
    _validity_flags(state, v0, tau)
    if mode == "convolution":
        res = ResolutionFunction(v0, state.hbar)
        return res.convolve(lambda t: current_j(state, t), tau, n_panels=n_panels)
    if mode == "norm_loss":
        return float(norm_loss_pi(state, v0, [tau], **grid)[0])
    raise ConfigError(f"unknown mode '{mode}', expected 'convolution' or 'norm_loss'")


def norm_loss_pi(state, v0: float, taus, x_range=(-150.0, 50.0), n: int = 8192, dt: float = 0.002):
    """-dN/dtau on the grid by central differences of the recorded norm."""
    taus = np.atleast_1d(np.asarray(taus, dtype=float))
    start = SpatialField.from_state(state, x_range[0], x_range[1], n)
    start.check_resolution()
    steps = int(np.ceil(taus.max() / dt)) + 2
    spec = EvolutionSpec(potential="absorbing_step", strength=v0, dt=dt, steps=steps)
    _, times, norms = evolve_with_norms(start, spec)
    rate = -np.gradient(norms, times)
    return np.interp(taus, times, rate)


# -- classical ----------------------------------------------------------------------------------

def _classical_support(w0: PhaseSpaceField):
    total = w0.norm()
    positive = np.sum(w0.values[w0.p_grid > 0]) * w0.dp * w0.dq
    if positive > 1e-6 * abs(total):
        raise ConfigError("classical arrival needs w0 supported on p < 0")
    spline = interpolate.RectBivariateSpline(w0.p_grid, w0.q_grid, w0.values, kx=3, ky=3)
    q_lo, q_hi = w0.q_grid[0], w0.q_grid[-1]

    def w(p, q):
        inside = (q >= q_lo) & (q <= q_hi)
        return np.where(inside, spline.ev(p, np.clip(q, q_lo, q_hi)), 0.0)

    return w


def classical_current(w0: PhaseSpaceField, t):
    """J_cl(t) = int dp |p|/m w0(p, |p| t/m) for straight-line flow."""
    w = _classical_support(w0)
    m = w0.params.mass
    p = w0.p_grid[w0.p_grid <= 0]
    t = np.atleast_1d(np.asarray(t, dtype=float))
    P, T = np.meshgrid(p, t, indexing="ij")
    integrand = np.abs(P) / m * w(P, np.abs(P) * T / m)
    out = integrate.trapezoid(integrand, p, axis=0)
    return out if out.size > 1 else float(out[0])


def classical_pi(w0: PhaseSpaceField, v0: float, tau: float, route: str = "direct", n_q: int = 4000,
                 n_panels: int = 128) -> float:
    """
    Classical arrival density with an absorbing region q < 0.

    The direct route flows w0 along straight lines, weights each point by the
    survival exp(-2 V0 t_inside/hbar) and integrates the absorption rate over
    q < 0; the closed route convolves J_cl with the resolution function.
    """
    res = ResolutionFunction(v0, w0.params.hbar)
    if route == "closed":
        _classical_support(w0)
        return res.convolve(lambda t: classical_current(w0, t), tau, n_panels=n_panels)
    if route != "direct":
        raise ConfigError(f"unknown route '{route}', expected 'direct' or 'closed'")
    w = _classical_support(w0)
    m = w0.params.mass
    p = w0.p_grid[w0.p_grid < 0]
    q_lo = w0.q_grid[0] - np.abs(p).max() * tau / m
    q = np.linspace(min(q_lo, -1e-12), 0.0, n_q)
    P, Q = np.meshgrid(p, q, indexing="ij")
    inside_time = np.minimum(tau, np.abs(Q) * m / np.abs(P))
    w_tau = w(P, Q - P * tau / m) * np.exp(-res.rate * inside_time)
    return float(res.rate * integrate.trapezoid(integrate.trapezoid(w_tau, q, axis=1), p))


# -- Kijowski and Zeno forms --------------------------------------------------------------------

def _momentum_range(state, widths: float = 10.0):
    packets = getattr(state, "packets", (state,))
    lo = min(pk.p0 - widths * pk.momentum_width for pk in packets)
    hi = max(pk.p0 + widths * pk.momentum_width for pk in packets)
    return lo, hi


def _momentum_rule(a: float, b: float, t: float, mass: float, hbar: float):
    width = b - a
    p_abs = max(abs(a), abs(b))
    oscillations = p_abs * abs(t) * width / (2 * np.pi * mass * hbar)
    return uniform_panels(a, b, 64 + int(2 * oscillations))


def _kijowski_single(state, t: float) -> float:
    m, hbar = state.mass, state.hbar
    lo, hi = _momentum_range(state)
    total = 0.0
    for a, b in ((lo, min(hi, 0.0)), (max(lo, 0.0), hi)):
        if b <= a:
            continue
        nodes, weights = _momentum_rule(a, b, t, m, hbar)
        amp = np.sum(weights * np.sqrt(np.abs(nodes)) * state.momentum_amplitude(nodes, t))
        total += abs(amp) ** 2
    return total / (2 * np.pi * m * hbar)


def kijowski_pi(state, t):
    """(1/2 pi m hbar) sum over momentum signs of |int dp |p|^(1/2) psi~(p, t)|^2."""
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.array([_kijowski_single(state, ti) for ti in t_arr])
    return out if np.ndim(t) else float(out[0])


def mean_momentum(state) -> float:
    if hasattr(state, "p0"):
        return float(state.p0)
    lo, hi = _momentum_range(state)
    nodes, weights = uniform_panels(lo, hi, 256)
    dens = np.abs(state.momentum_amplitude(nodes)) ** 2
    return float(np.sum(weights * nodes * dens) / np.sum(weights * dens))


def zeno_regime_pi(state, t):
    """
    (hbar^2 |psi'(0,t)|^2 / m^2, hbar^2 |psi'(0,t)|^2 / (m |<p>|)).

    The first is the kinetic-energy density at the origin with the
    measurement-dependent constant dropped; the second integrates to one.
    """
    m, hbar = state.mass, state.hbar
    kinetic = hbar ** 2 * np.abs(state.derivative(0.0, t)) ** 2
    p_mean = mean_momentum(state)
    if abs(p_mean) < 1e-12:
        raise ConfigError("normalized Zeno form needs <p> != 0")
    return kinetic / m ** 2, kinetic / (m * abs(p_mean))


def arrival_distribution(state, kind: str, grid: TimeGrid, v0: Optional[float] = None,
                         w0: Optional[PhaseSpaceField] = None) -> ArrivalDistribution:
    t = grid.samples()
    if kind == "current_J":
        values = current_j(state, t)
    elif kind == "complex_potential_Pi":
        if v0 is None:
            raise ConfigError("complex_potential_Pi needs v0")
        res = ResolutionFunction(v0, state.hbar)
        values = np.array([res.convolve(lambda s: current_j(state, s), ti) for ti in t])
    elif kind == "classical_Pi":
        if v0 is None or w0 is None:
            raise ConfigError("classical_Pi needs v0 and w0")
        values = np.array([classical_pi(w0, v0, ti, route="closed") for ti in t])
    elif kind == "kijowski":
        values = kijowski_pi(state, t)
    elif kind == "kinetic_energy_zeno":
        values = zeno_regime_pi(state, t)[0]
    elif kind == "kinetic_energy_normalized":
        values = zeno_regime_pi(state, t)[1]
    else:
        raise ConfigError(f"unknown distribution kind '{kind}'")
    return ArrivalDistribution(grid, np.asarray(values, dtype=float), kind)


# -- backflow -----------------------------------------------------------------------------------

@dataclass
class BackflowResult:
    lambda_min: float
    eigenstate: np.ndarray
    p_nodes: np.ndarray
    weights: np.ndarray
    residual: float
    n_modes: int
    T: float

    def to_report(self) -> dict:
        return {"lambda_min": self.lambda_min, "n_modes": self.n_modes, "T": self.T,
                "residuals": {"hermitian": self.residual}}


def backflow_matrix(u: np.ndarray) -> np.ndarray:
    """
    <u|theta(x(0)) - theta(x(T))|u'> in the scaled momentum u = p sqrt(T/2m hbar).

    Written as -(u+u')/(2 pi) sinc((u-u')(u+u')/2pi) e^{i(u^2-u'^2)/2}, which
    contains the diagonal limit |u|/pi for u < 0.
    """
    U, V = np.meshgrid(u, u, indexing="ij")
    s = U + V
    return -s / (2 * np.pi) * np.sinc((U - V) * s / (2 * np.pi)) * np.exp(0.5j * (U ** 2 - V ** 2))


def backflow_eigenproblem(T: float, n_modes: int = 200, p_max: Optional[float] = None,
                          params=None) -> BackflowResult:
    """Most negative flux through x = 0 during [0, T] over states with only p < 0."""
    if T <= 0 or n_modes < 2:
        raise ConfigError("backflow needs T > 0 and at least two modes")
    mass = 1.0 if params is None else params.mass
    hbar = 1.0 if params is None else params.hbar
    scale = np.sqrt(T / (2 * mass * hbar))
    u_max = BACKFLOW_CUTOFF if p_max is None else p_max * scale
    x, w = np.polynomial.legendre.leggauss(n_modes)
    u = 0.5 * u_max * (x - 1.0)
    wu = 0.5 * u_max * w
    root_w = np.sqrt(wu)
    matrix = root_w[:, None] * backflow_matrix(u) * root_w[None, :]
    residual = float(np.max(np.abs(matrix - matrix.conj().T)))
    if residual > HERMITIAN_TOL:
        raise NumericalError("backflow matrix is not Hermitian", estimate=residual, tolerance=HERMITIAN_TOL)
    vals, vecs = np.linalg.eigh(0.5 * (matrix + matrix.conj().T))
    coeffs = vecs[:, 0] / root_w
    return BackflowResult(float(vals[0]), coeffs * np.sqrt(scale), u / scale, wu / scale, residual,
                          n_modes, float(T))


def backflow_witness_state(t_c: float = 0.0, params=None):
    """Two left-moving momenta, -1 and -9 with relative weight 1/3, both centred on 0 at t_c."""
    params = DEFAULT_PARAMS if params is None else params
    packets = [GaussianPacket(-p0 * t_c / params.mass, p0, 10.0, params) for p0 in (-1.0, -9.0)]
    return GaussianSuperposition(packets, [1.0, 1.0 / 3.0])
