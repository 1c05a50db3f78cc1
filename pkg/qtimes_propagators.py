"""
Closed-form propagators for free, step and delta potentials, and the
path-decomposition composition of a state across x = 0.

Conventions: the potential sits on x < 0; an absorbing step is
V(x) = -i V0 theta(-x). Complex square roots take the principal branch.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import integrate, special

from qtimes_core import DEFAULT_PARAMS, PhysParams
from qtimes_errors import ConfigError, NumericalError

KERNEL_IDS = ("free", "restricted", "step_full", "step_edge", "delta_full", "semiclassical_step")
PDX_MODES = ("exact", "semiclassical", "semiclassical_last")

# Gauss-Legendre rule used on every panel
GL_NODES, GL_WEIGHTS = np.polynomial.legendre.leggauss(8)
MIN_TIME = 1e-6
# refined panels allowed beside the kappa cut before a sample counts as on the edge
MAX_CUT_PANELS = 4096


@dataclass(frozen=True)
class StepPotential:
    height: complex
    side: str = "left_of_origin"

    @classmethod
    def absorbing(cls, v0: float) -> "StepPotential":
        if v0 < 0:
            raise ConfigError("absorbing strength V0 must be non-negative")
        return cls(-1j * v0)

    @property
    def is_absorbing(self) -> bool:
        return self.height.real == 0 and self.height.imag < 0


@dataclass(frozen=True)
class DeltaPotential:
    strength: float


@dataclass(frozen=True)
class KernelSample:
    value: complex
    x1: float
    x0: float
    t1: float
    t0: float
    kernel_id: str


def _check_time(t):
    if np.any(np.asarray(t) <= 0):
        raise ConfigError("propagators need t > 0")


def _prefactor(t, params: PhysParams):
    return np.sqrt(params.mass / (2j * np.pi * params.hbar * np.asarray(t, dtype=float)))


def free_kernel(x1, x0, t, params: PhysParams = DEFAULT_PARAMS):
    _check_time(t)
    m, hbar = params.mass, params.hbar
    d = np.asarray(x1, dtype=float) - np.asarray(x0, dtype=float)
    return _prefactor(t, params) * np.exp(1j * m * d ** 2 / (2 * hbar * np.asarray(t, dtype=float)))


def restricted_kernel(x1, x0, t, params: PhysParams = DEFAULT_PARAMS):
    """Method-of-images propagator restricted to x > 0."""
    x1 = np.asarray(x1, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    inside = (x1 > 0) & (x0 > 0)
    value = free_kernel(x1, x0, t, params) - free_kernel(-x1, x0, t, params)
    return np.where(inside, value, 0.0)


def edge_factor(u):
    """(1 - e^{-iu})/(iu) for complex u, with the series near u = 0."""
    u = np.asarray(u, dtype=complex)
    small = np.abs(u) < 1e-6
    safe = np.where(small, 1.0, u)
    out = -np.expm1(-1j * safe) / (1j * safe)
    series = 1 - 0.5j * u - u ** 2 / 6
    return np.where(small, series, out)


def absorption_factor(t, v0: float, hbar: float = 1.0):
    """f_V(t) = (1 - e^{-V0 t})/(V0 t)."""
    return np.real(edge_factor(-1j * v0 * np.asarray(t, dtype=float) / hbar))


def step_edge_kernel(t, v0, params: PhysParams = DEFAULT_PARAMS, absorbing: bool = False):
    """
    g(0, t | 0, 0) along the edge of a step.

    For a real step of height V0 the factor is (1 - e^{-i V0 t})/(i V0 t);
    with absorbing=True the height is -i V0 and the factor becomes f_V(t).
    """
    _check_time(t)
    height = -1j * v0 if absorbing else complex(v0)
    return _prefactor(t, params) * edge_factor(height * np.asarray(t, dtype=float) / params.hbar)


def step_scattering_amplitudes(p, v0: float, params: PhysParams = DEFAULT_PARAMS):
    """Transmission and reflection of a left-moving plane wave on -i V0 theta(-x)."""
    p = np.asarray(p, dtype=float)
    if np.any(p == 0):
        raise ConfigError("scattering amplitudes are singular at p = 0")
    if np.any(p > 0):
        raise ConfigError("scattering amplitudes need a left-moving wave, p < 0")
    if not v0 > 0:
        raise ConfigError(f"absorbing strength V0 must be positive, got {v0}")
    energy = p ** 2 / (2 * params.mass)
    transmitted = 2.0 / (1.0 + np.sqrt((energy + 1j * v0) / energy))
    return transmitted, transmitted - 1.0


def transmitted_wavenumber(p, v0: float, params: PhysParams = DEFAULT_PARAMS):
    """sqrt(2m(E + i V0))/hbar, decaying into x < 0."""
    energy = np.asarray(p, dtype=float) ** 2 / (2 * params.mass)
    return np.sqrt(2 * params.mass * (energy + 1j * v0)) / params.hbar


def _delta_tail(a, t, kappa, params: PhysParams):
    """int_0^inf e^{-kappa u} e^{i beta (a+u)^2} du in closed form via the Faddeeva function."""
    beta = params.mass / (2 * params.hbar * t)
    rot = np.exp(0.25j * np.pi)
    z = rot * np.sqrt(beta) * (a + 1j * kappa / (2 * beta))
    return np.exp(1j * beta * a ** 2) * rot * np.sqrt(np.pi) / (2 * np.sqrt(beta)) * special.wofz(z)


def delta_kernel(x1, x0, t, lam: float, params: PhysParams = DEFAULT_PARAMS, method: str = "closed"):
    """
    Propagator through V = lam * delta(x), lam >= 0.

    g = g_f - kappa int_0^inf du e^{-kappa u} g_f(|x1|+|x0|+u, t | 0, 0), kappa = m lam / hbar^2.
    method='quad' evaluates the u-integral by adaptive quadrature as a cross-check.
    """
    _check_time(t)
    if lam < 0:
        raise ConfigError("attractive delta (lam < 0) needs analytic continuation, not supported")
    free = free_kernel(x1, x0, t, params)
    if lam == 0:
        return free
    kappa = params.mass * lam / params.hbar ** 2
    a = np.abs(np.asarray(x1, dtype=float)) + np.abs(np.asarray(x0, dtype=float))
    if method == "closed":
        tail = _delta_tail(a, t, kappa, params)
        return free - kappa * _prefactor(t, params) * tail
    if method != "quad":
        raise ConfigError(f"unknown delta kernel method '{method}'")
    beta = params.mass / (2 * params.hbar * t)
    upper = 40.0 / kappa

    def tail_at(a_val):
        re = integrate.quad(lambda u: np.exp(-kappa * u) * np.cos(beta * (a_val + u) ** 2),
                            0, upper, limit=800, epsabs=1e-11)[0]
        im = integrate.quad(lambda u: np.exp(-kappa * u) * np.sin(beta * (a_val + u) ** 2),
                            0, upper, limit=800, epsabs=1e-11)[0]
        return re + 1j * im

    tail = np.vectorize(tail_at, otypes=[complex])(a)
    return free - kappa * _prefactor(t, params) * tail


def semiclassical_step_kernel(x1, x0, t, v0: float, params: PhysParams = DEFAULT_PARAMS):
    """Free kernel damped by e^{-V0 t_left} along the straight path, t_left = time spent in x < 0."""
    x1 = np.asarray(x1, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    span = np.abs(x1 - x0)
    left = np.where(x1 < 0, np.abs(np.minimum(x1, 0)), 0) + np.where(x0 < 0, np.abs(np.minimum(x0, 0)), 0)
    crossing = (x1 < 0) != (x0 < 0)
    frac = np.where(crossing, left / np.where(span > 0, span, 1), np.where(x1 < 0, 1.0, 0.0))
    return free_kernel(x1, x0, t, params) * np.exp(-v0 * frac * t / params.hbar)


def _descent_integral(amplitude: Callable[[np.ndarray], np.ndarray], distance: float, t: float, v0: float,
                      params: PhysParams, refine: int) -> complex:
    """
    int dk/2pi amplitude(k) e^{i k D - i a k^2}, a = hbar t/2m, along k = k* + r e^{-i pi/4}.

    The line crosses the real axis at the saddle k* = D/2a and runs parallel to the
    cut of kappa(k), which lies on Re k + Im k = 0 with |k| <= sqrt(2 m V0)/hbar.
    """
    a = params.hbar * t / (2 * params.mass)
    k_star = distance / (2 * a)
    reach = 9.0 / np.sqrt(a)
    width = 0.25 / (np.sqrt(a) * refine)
    edges = [np.linspace(-reach, reach, int(np.ceil(2 * reach / width)) + 1)]
    cut = np.sqrt(2 * params.mass * v0) / params.hbar
    if cut > 0:
        # the cut runs alongside the line at distance k*/sqrt2 for these r
        centre = -k_star / np.sqrt(2)
        lo = max(centre - cut - k_star, -reach)
        hi = min(centre + cut + k_star, reach)
        fine = min(width, k_star / (4 * np.sqrt(2) * refine))
        n_fine = int(np.ceil((hi - lo) / fine)) if hi > lo else 0
        if n_fine > MAX_CUT_PANELS * refine:
            raise NumericalError("kernel sample too close to the edge; use step_edge_kernel",
                                 estimate=float(n_fine), tolerance=float(MAX_CUT_PANELS * refine))
        if n_fine:
            edges.append(np.linspace(lo, hi, n_fine + 1))
    edges = np.unique(np.clip(np.concatenate(edges), -reach, reach))
    r, w = _panel_rule(edges)
    rot = np.exp(-0.25j * np.pi)
    k = k_star + r * rot
    gauss = np.exp(1j * distance ** 2 / (4 * a) - a * r ** 2)
    return complex(rot * np.sum(w * amplitude(k) * gauss) / (2 * np.pi))


def _step_wavenumbers(k, v0: float, params: PhysParams):
    """kappa(k) = k sqrt(1 + i c/k^2), c = 2 m V0/hbar^2, and kappa - k = i c/(kappa + k)."""
    c = 2 * params.mass * v0 / params.hbar ** 2
    kappa = k * np.sqrt(1 + 1j * c / k ** 2)
    return kappa, 1j * c / (kappa + k)


def _step_full_value(x1: float, x0: float, t: float, v0: float, params: PhysParams, refine: int) -> complex:
    if x0 < 0 <= x1:
        x1, x0 = x0, x1
    if x0 >= 0 and x1 >= 0:
        def reflected(k):
            kappa, _ = _step_wavenumbers(k, v0, params)
            return -2j * params.mass * v0 / params.hbar ** 2 / (k + kappa) ** 2

        free = complex(free_kernel(x1, x0, t, params))
        return free + _descent_integral(reflected, x1 + x0, t, v0, params, refine)
    if x0 >= 0:
        def transmitted(k):
            kappa, shift = _step_wavenumbers(k, v0, params)
            return 2 * k / (k + kappa) * np.exp(-1j * shift * x1)

        return _descent_integral(transmitted, x0 - x1, t, v0, params, refine)

    def inside(k):
        kappa, shift = _step_wavenumbers(k, v0, params)
        return k / kappa * shift / (kappa + k) * np.exp(-1j * shift * (x1 + x0))

    damped = complex(free_kernel(x1, x0, t, params)) * np.exp(-v0 * t / params.hbar)
    return damped + _descent_integral(inside, -(x1 + x0), t, v0, params, refine)


def step_full_kernel(x1: float, x0: float, t: float, v0: float, params: PhysParams = DEFAULT_PARAMS,
                     rtol: float = 1e-8, atol: float = 1e-12) -> complex:
    """
    Full propagator g(x1, t | x0, 0) in the absorbing step -i V0 theta(-x).

    Built from the energy Green's function: the free kernel plus R(k) e^{ik(x1+x0)}
    on x > 0, T(k) e^{ik x0 - i kappa x1} across the edge, and e^{-V0 t} g_f plus the
    internal reflection when both points sit in the absorber. The momentum integral
    is repeated with panels halved; disagreement above tolerance raises.
    """
    _check_time(t)
    if v0 < 0:
        raise ConfigError("absorbing strength V0 must be non-negative")
    x1, x0, t = float(x1), float(x0), float(t)
    if x1 == 0 and x0 == 0:
        return complex(step_edge_kernel(t, v0, params, absorbing=True))
    coarse = _step_full_value(x1, x0, t, v0, params, 1)
    fine = _step_full_value(x1, x0, t, v0, params, 2)
    estimate = abs(fine - coarse)
    tol = max(rtol * abs(fine), atol)
    if estimate > tol:
        raise NumericalError("step kernel momentum quadrature did not converge", estimate=estimate, tolerance=tol)
    return fine


def kernel_sample(kernel_id: str, x1, x0, t1, t0=0.0, params: PhysParams = DEFAULT_PARAMS,
                  v0: float = 0.0, lam: float = 0.0) -> KernelSample:
    t = t1 - t0
    if kernel_id == "free":
        value = free_kernel(x1, x0, t, params)
    elif kernel_id == "restricted":
        value = restricted_kernel(x1, x0, t, params)
    elif kernel_id == "step_edge":
        value = step_edge_kernel(t, v0, params, absorbing=True)
    elif kernel_id == "delta_full":
        value = delta_kernel(x1, x0, t, lam, params)
    elif kernel_id == "semiclassical_step":
        value = semiclassical_step_kernel(x1, x0, t, v0, params)
    elif kernel_id == "step_full":
        value = step_full_kernel(x1, x0, t, v0, params)
    else:
        raise ConfigError(f"unknown kernel id '{kernel_id}'")
    return KernelSample(complex(value), float(x1), float(x0), float(t1), float(t0), kernel_id)


# -- quadrature helpers -------------------------------------------------------------------------

def _panel_rule(edges: np.ndarray):
    """Nodes and weights of the 8-point rule on consecutive panels."""
    a, b = edges[:-1, None], edges[1:, None]
    half = 0.5 * (b - a)
    nodes = (a + b) * 0.5 + half * GL_NODES[None, :]
    weights = half * GL_WEIGHTS[None, :]
    return nodes.ravel(), weights.ravel()


def uniform_panels(a: float, b: float, n_panels: int):
    return _panel_rule(np.linspace(a, b, n_panels + 1))


def _phase_panels(a: float, b: float, rate: Callable[[float], float], refine: int, min_panels: int):
    """Panel edges so that each panel spans at most pi/refine of accumulated phase."""
    edges = [a]
    s = a
    widest = (b - a) / (min_panels * refine)
    while s < b:
        s = min(b, s + min(widest, np.pi / (refine * max(rate(s), 1e-12))))
        edges.append(s)
    return _panel_rule(np.asarray(edges))


def oscillatory_tail(a: float, alpha: float, upper: float, order: int):
    """[T_a, T_{a+1}, ...] with T_c = int_U^inf u^{-c} e^{i alpha u} du, starting from a = 1/2 or 3/2."""
    rot = np.exp(0.25j * np.pi)
    base = np.sqrt(np.pi / alpha) * rot * special.erfc(np.conj(rot) * np.sqrt(alpha * upper))
    values = [base]
    c = 0.5
    phase = np.exp(1j * alpha * upper)
    while c < a + order - 1:
        values.append((upper ** -c * phase + 1j * alpha * values[-1]) / c)
        c += 1.0
    start = int(round(a - 0.5))
    return values[start:start + order]


def endpoint_oscillatory_integral(h: Callable[[np.ndarray], np.ndarray], power: float, alpha: float,
                                  tau: float, omega: float, refine: int = 1, min_panels: int = 64):
    """
    int_0^tau s^{-power} e^{i alpha/s} h(s) ds for smooth h and alpha > 0.

    Panels on [1/U, tau] follow the local phase rate alpha/s^2 + omega; the part
    s < 1/U is summed analytically from a Taylor expansion of h around s = 0.
    """
    upper = max(3.0 * omega, 50.0 / alpha, 4.0 / tau)
    s_min = 1.0 / upper
    nodes, weights = _phase_panels(s_min, tau, lambda s: alpha / s ** 2 + omega, refine, min_panels)
    body = np.sum(weights * nodes ** -power * np.exp(1j * alpha / nodes) * h(nodes))
    delta = 1e-2 / max(omega, 1.0 / tau)
    samples = h(np.array([-delta, 0.0, delta]))
    h0 = samples[1]
    h1 = (samples[2] - samples[0]) / (2 * delta)
    h2 = (samples[2] - 2 * samples[1] + samples[0]) / delta ** 2
    # s^{-power} ds = u^{power-2} du
    tails = oscillatory_tail(2.0 - power, alpha, upper, 3)
    tail = h0 * tails[0] + h1 * tails[1] + 0.5 * h2 * tails[2]
    return body + tail


# -- path decomposition -------------------------------------------------------------------------

def _edge_amplitude(state, t2: np.ndarray, v0: float, params: PhysParams, n_panels: int):
    """
    psi_edge(t2) = (i hbar/m) int_0^t2 g_edge(t2 - t1) psi_f'(0, t1) dt1, via t1 = t2 - w^2.

    Equals the exact amplitude at the origin in the presence of the absorbing step.
    """
    xi, wx = uniform_panels(0.0, 1.0, n_panels)
    t2 = np.atleast_1d(np.asarray(t2, dtype=float))
    out = np.empty(t2.shape, dtype=complex)
    c = np.sqrt(params.mass / (2j * np.pi * params.hbar))
    for start in range(0, t2.size, 512):
        block = t2[start:start + 512, None]
        root = np.sqrt(np.clip(block, 0.0, None))
        w = root * xi[None, :]
        s = w ** 2
        deriv = state.derivative(0.0, block - s)
        integrand = 2 * c * absorption_factor(s, v0, params.hbar) * deriv
        out[start:start + 512] = np.sum(integrand * (root * wx[None, :]), axis=1)
    return 1j * params.hbar / params.mass * out


def _pdx_value(state, v0, x1, tau, params, quadrature_n, mode, refine, omega):
    m, hbar = params.mass, params.hbar
    alpha = m * x1 ** 2 / (2 * hbar)
    c = np.sqrt(m / (2j * np.pi * hbar))
    damping = lambda s: np.exp(-v0 * s / hbar)
    if mode == "exact":
        def h(s):
            return damping(s) * _edge_amplitude(state, tau - s, v0, params, quadrature_n * refine)
        return abs(x1) * c * endpoint_oscillatory_integral(h, 1.5, alpha, tau, omega, refine, quadrature_n)
    if mode == "semiclassical":
        def h(s):
            return damping(s) * state.derivative(0.0, tau - s)
        integral = endpoint_oscillatory_integral(h, 0.5, alpha, tau, omega, refine, quadrature_n)
        return 1j * hbar / m * c * integral
    def h(s):
        return damping(s) * state.amplitude(0.0, tau - s)
    return abs(x1) * c * endpoint_oscillatory_integral(h, 1.5, alpha, tau, omega, refine, quadrature_n)


def pdx_compose_first_crossing(initial, v0: float, x1: float, tau: float, quadrature_n: int = 64,
                               mode: str = "exact", rtol: float = 1e-4, atol: float = 1e-9,
                               full_output: bool = False):
    """
    Amplitude at x1 < 0 and time tau for a state starting in x > 0, composed across x = 0.

    mode='exact': first and last crossing with the exact edge kernel in between.
    mode='semiclassical': first crossing, the potential felt as e^{-V0 s} along straight paths.
    mode='semiclassical_last': last crossing with the free amplitude at the origin.
    The quadrature is repeated with panels halved; disagreement above tolerance raises.
    """
    if not x1 < 0:
        raise ConfigError("x1 must be on the potential side (x1 < 0)")
    if not tau > 0:
        raise ConfigError("tau must be positive")
    if mode not in PDX_MODES:
        raise ConfigError(f"unknown PDX mode '{mode}', expected one of {PDX_MODES}")
    params = initial.params
    energy = getattr(initial, "energy_mean", None)
    if energy is None:
        energy = max(p.energy_mean for p in initial.packets)
    omega = (energy + abs(v0)) / params.hbar
    coarse = _pdx_value(initial, v0, x1, tau, params, quadrature_n, mode, 1, omega)
    fine = _pdx_value(initial, v0, x1, tau, params, quadrature_n, mode, 2, omega)
    estimate = abs(fine - coarse)
    tol = max(rtol * abs(fine), atol)
    if estimate > tol:
        raise NumericalError("PDX time quadrature did not converge", estimate=estimate, tolerance=tol)
    if full_output:
        return complex(fine), float(estimate)
    return complex(fine)


def transmitted_amplitude_oracle(packet, v0: float, x1: float, tau: float, n_nodes: int = 4000):
    """Momentum-space synthesis of the amplitude behind the absorbing step from scattering states."""
    params = packet.params
    s = packet.momentum_width
    lo = packet.p0 - 10 * s
    hi = min(-1e-8, packet.p0 + 10 * s)
    if not hi > lo:
        raise ConfigError("packet has no negative-momentum content")
    p, w = uniform_panels(lo, hi, max(1, n_nodes // 8))
    trans, _ = step_scattering_amplitudes(p, v0, params)
    k_t = transmitted_wavenumber(p, v0, params)
    energy = p ** 2 / (2 * params.mass)
    amp = packet.momentum_amplitude(p, 0.0)
    integrand = trans * amp * np.exp(-1j * k_t * x1 - 1j * energy * tau / params.hbar)
    return complex(np.sum(w * integrand) / np.sqrt(2 * np.pi * params.hbar))
