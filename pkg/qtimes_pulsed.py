"""
Pulsed measurements: the return amplitude g_P(0, t | 0, 0) with sharp
projections onto x > 0, compared against the absorbing-step kernel.

Amplitudes are reported through the dimensionless factor f_P(t), the ratio
to the free kernel (m / 2 pi i hbar t)^(1/2). The lattice recursion works in
Euclidean time with projections at s = 1, 2, ...; f_P depends only on the
ratios of the time intervals, so it carries over to real time unchanged.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate, signal

from qtimes_core import DEFAULT_PARAMS, GaussianPacket, PhysParams, zeno_time
from qtimes_engine import EvolutionSpec, SpatialField, evolve, step_function
from qtimes_errors import ConfigError, NumericalError, ValidityWarning
from qtimes_propagators import absorption_factor, free_kernel

# V0 * epsilon at which the pulsed and absorbing kernels match on average
EQUIVALENCE_CONSTANT = 4.0 / 3.0


@dataclass(frozen=True)
class ProjectionSchedule:
    epsilon: float
    epsilon0: float
    epsilon_n: float
    n: int

    def __post_init__(self):
        if min(self.epsilon, self.epsilon0, self.epsilon_n) <= 0:
            raise ConfigError("all projection spacings must be positive")
        if self.n < 1:
            raise ConfigError("need at least one projection")

    @property
    def tau(self) -> float:
        return (self.n - 1) * self.epsilon + self.epsilon0 + self.epsilon_n

    def times(self) -> np.ndarray:
        return self.epsilon0 + self.epsilon * np.arange(self.n)

    @classmethod
    def covering(cls, epsilon: float, tau: float) -> "ProjectionSchedule":
        """Projections at epsilon, 2 epsilon, ... strictly before tau."""
        n = max(1, int(math.ceil(tau / epsilon - 1e-12)) - 1)
        return cls(epsilon, epsilon, tau - n * epsilon, n)


@dataclass(frozen=True)
class SawtoothModel:
    epsilon0: float
    epsilon: float

    def __post_init__(self):
        if self.epsilon0 <= 0 or self.epsilon <= 0:
            raise ConfigError("sawtooth spacings must be positive")

    def projection_time(self, k):
        return self.epsilon0 + k * self.epsilon


def _arctan_term(eps1, eps2, eps3):
    total = eps1 + eps2 + eps3
    return np.arctan(np.sqrt(eps1 * eps3 / (eps2 * total))), total


def tc_integral(eps1: float, eps2: float, eps3: float, signs: str = "++") -> float:
    if min(eps1, eps2, eps3) <= 0:
        raise ConfigError("all intervals must be positive")
    angle, total = _arctan_term(eps1, eps2, eps3)
    if signs == "++":
        return float((np.pi + 2 * angle) / (4 * np.pi * np.sqrt(total)))
    if signs == "+-":
        return float((np.pi - 2 * angle) / (4 * np.pi * np.sqrt(total)))
    raise ConfigError(f"unknown sign pattern '{signs}'")


def two_projection_factor(eps1, eps2, eps3):
    """f_P after projections at eps1 and eps1 + eps2, observed eps3 later."""
    angle, _ = _arctan_term(eps1, eps2, eps3)
    return 0.25 + angle / (2 * np.pi)


def gp_exact_factor(t: float, eps: float) -> float:
    if eps <= 0:
        raise ConfigError("eps must be positive")
    if 0 < t < eps:
        return 1.0
    if eps <= t < 2 * eps:
        return 0.5
    if 2 * eps <= t < 3 * eps:
        return float(two_projection_factor(eps, eps, t - 2 * eps))
    if math.isclose(t, 4 * eps, rel_tol=1e-12):
        return 0.25
    raise ConfigError(f"t = {t} lies outside the exactly covered regimes (0, 3 eps) and t = 4 eps")


def gp_exact_small_n(t: float, eps: float, params: PhysParams = DEFAULT_PARAMS) -> complex:
    """Exact g_P(0, t | 0, 0) for up to two projections and the t = 4 eps point."""
    factor = gp_exact_factor(t, eps)
    return complex(free_kernel(0.0, 0.0, t, params) * factor)


@dataclass
class LatticeTable:
    s: np.ndarray
    fp: np.ndarray
    peaks: np.ndarray
    troughs: np.ndarray
    lattice_dx: float
    tail_mass: float = 0.0

    def panel(self, k: int):
        mask = (self.s >= k) & (self.s <= k + 1)
        return self.s[mask], self.fp[mask]


def _heat_kernel(y, s):
    return np.exp(-y ** 2 / (2 * s)) / np.sqrt(2 * np.pi * s)


def gp_lattice_recursion(n_max: int, lattice_dx: float = 1e-3, s_samples: int = 32,
                         trough_delta: float = 1e-3) -> LatticeTable:
    """
    f_P(s) on [0, n_max + 1] by iterated half-line convolution on midpoint nodes.

    peaks[k-1] is f_P((k+1)^-) and troughs[k-1] is f_P((k+1)^+) for k = 1..n_max;
    troughs are extrapolated to zero offset in sqrt(delta).
    """
    if n_max < 1:
        raise ConfigError("n_max must be at least 1")
    if lattice_dx > 1e-2:
        raise ConfigError("lattice_dx must not exceed 1e-2")
    y_max = 10.0 * math.sqrt(n_max + 1)
    n_nodes = int(math.ceil(y_max / lattice_dx))
    y = (np.arange(n_nodes) + 0.5) * lattice_dx
    offsets = (np.arange(2 * n_nodes - 1) - (n_nodes - 1)) * lattice_dx
    step_kernel = _heat_kernel(offsets, 1.0)

    # states[n] holds the amplitude on y > 0 just after the projection at s = n + 1
    states = [_heat_kernel(y, 1.0)]
    for _ in range(n_max):
        states.append(signal.fftconvolve(states[-1], step_kernel, mode="same") * lattice_dx)
    tail_mass = 0.0
    for g in states:
        total = np.sum(np.abs(g))
        tail_mass = max(tail_mass, float(np.sum(np.abs(g[y > 0.9 * y_max])) / total))
    if tail_mass > 1e-10:
        raise NumericalError("lattice domain too short for the spreading amplitude",
                             estimate=tail_mass, tolerance=1e-10)

    def fp_at(s, n):
        # panel n covers (n, n+1] and starts from states[n - 1]
        value = np.sum(_heat_kernel(y, s - n) * states[n - 1]) * lattice_dx
        return value * math.sqrt(2 * math.pi * s)

    s_all = [np.linspace(0.0, 1.0, s_samples, endpoint=False)]
    fp_all = [np.ones(s_samples)]
    for n in range(1, n_max + 1):
        s_panel = np.linspace(n, n + 1, s_samples + 1)[1:]
        s_all.append(s_panel)
        fp_all.append(np.array([fp_at(s, n) for s in s_panel]))

    peaks = np.array([fp_at(k + 1.0, k) for k in range(1, n_max + 1)])
    troughs = np.empty(n_max)
    for k in range(1, n_max + 1):
        near = fp_at(k + 1.0 + trough_delta, k + 1)
        far = fp_at(k + 1.0 + 4 * trough_delta, k + 1)
        troughs[k - 1] = 2 * near - far
    return LatticeTable(np.concatenate(s_all), np.concatenate(fp_all), peaks, troughs, lattice_dx, tail_mass)


def sawtooth_fp(t, model: SawtoothModel):
    """Piecewise-linear f_P: 1 before the first projection, then ramps from 1/(2k) up to 1/(k+1)."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ConfigError("sawtooth_fp needs t >= 0")
    k = np.floor((t - model.epsilon0) / model.epsilon).astype(int) + 1
    k_safe = np.maximum(k, 1)
    t_prev = model.projection_time(k_safe - 1)
    t_next = model.projection_time(k_safe)
    ramp = (t - t_prev) / ((k_safe + 1) * model.epsilon) + (t_next - t) / (2 * k_safe * model.epsilon)
    out = np.where(t < model.epsilon0, 1.0, ramp)
    return out if out.ndim else float(out)


def s_function(t, fp: Callable, v0: float):
    """S(t) = f_P(t)/f_V(t) - 1."""
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise ConfigError("S(t) needs t > 0")
    return np.asarray(fp(t)) / absorption_factor(t, v0) - 1.0


def period_mean(fn: Callable, start: float, period: float, n: int = 2000) -> float:
    edges = np.linspace(start, start + period, n + 1)
    mids = 0.5 * (edges[1:] + edges[:-1])
    return float(np.mean(fn(mids)))


def time_averaged_factor(n: int, tau: float = 1.0) -> float:
    """Average of f_P(tau) over uniformly placed, ordered projection times (n = 1 or 2)."""
    if n == 1:
        value, _ = integrate.quad(lambda t1: projected_return_factor(t1, tau), 0.0, tau, epsabs=1e-10, epsrel=1e-10)
        return value / tau
    if n == 2:
        value, _ = integrate.dblquad(
            lambda t2, t1: two_projection_factor(t1, t2 - t1, tau - t2),
            0.0, tau, lambda t1: t1, lambda t1: tau, epsabs=1e-10, epsrel=1e-10,
        )
        return value / (0.5 * tau ** 2)
    raise ConfigError("time averages are implemented for n = 1 and n = 2")


def projected_return_factor(t1: float, tau: float, side: str = "right") -> float:
    """Euclidean f_P(tau) for one projection at t1 onto x > 0 (side='right') or x < 0."""
    lo, hi = (0.0, np.inf) if side == "right" else (-np.inf, 0.0)
    value, _ = integrate.quad(lambda y: _heat_kernel(y, tau - t1) * _heat_kernel(y, t1), lo, hi,
                              epsabs=1e-13, epsrel=1e-12)
    return value / _heat_kernel(0.0, tau)


def timescales(packet: GaussianPacket, epsilon: float) -> dict:
    energy = packet.energy_mean
    return {
        "inverse_energy": packet.hbar / energy,
        "zeno_time": zeno_time(packet),
        "epsilon": epsilon,
        "recommended_v0": EQUIVALENCE_CONSTANT / epsilon,
        "epsilon_energy": epsilon * energy / packet.hbar,
    }


@dataclass
class EquivalenceReport:
    max_wavefn_deviation: float
    reflection_prob_pulsed: float
    reflection_prob_potential: Optional[float]
    epsilon: float
    v0: float
    tau: float
    grid_n: int
    timescales: dict = field(default_factory=dict)


def _check_grid_for_projections(field_: SpatialField, epsilon: float):
    limit = math.sqrt(epsilon * field_.params.hbar / field_.params.mass) / 8.0
    if not field_.dx < limit:
        raise NumericalError("grid too coarse to resolve the chopped wavefunction",
                             estimate=field_.dx, tolerance=limit)


def pulsed_evolution(packet: GaussianPacket, epsilon: float, tau: float,
                     x_range=(-40.0, 40.0), n: int = 16384) -> SpatialField:
    start = SpatialField.from_state(packet, x_range[0], x_range[1], n)
    _check_grid_for_projections(start, epsilon)
    schedule = ProjectionSchedule.covering(epsilon, tau)
    spec = EvolutionSpec(potential="none", dt=tau, steps=1, projection_schedule=schedule)
    return evolve(start, spec)


def potential_evolution(packet: GaussianPacket, v0: float, tau: float,
                        x_range=(-40.0, 40.0), n: int = 16384, dt: Optional[float] = None) -> SpatialField:
    start = SpatialField.from_state(packet, x_range[0], x_range[1], n)
    start.check_resolution()
    if dt is None:
        e_max = max(start.content_momentum() ** 2 / (2 * packet.mass), v0)
        dt = 0.05 * packet.hbar / e_max
    steps = int(math.ceil(tau / dt))
    spec = EvolutionSpec(potential="absorbing_step", strength=v0, dt=tau / steps, steps=steps)
    return evolve(start, spec)


def equivalence_test(packet: GaussianPacket, epsilon: float, v0: Optional[float] = None, tau: float = 1.6,
                     x_range=(-40.0, 40.0), n: int = 16384, include_potential: bool = True) -> EquivalenceReport:
    """
    Repeated projections onto x > 0 every epsilon versus the absorbing step -i V0 theta(-x).

    The deviation is the L2 distance of the two final states restricted to x > 0,
    and the reflection probabilities are the final norms in x > 0.
    """
    v0 = EQUIVALENCE_CONSTANT / epsilon if v0 is None else v0
    passage = (packet.q0 + 4 * packet.sigma) * packet.mass / abs(packet.p0) if packet.p0 else math.inf
    if tau < passage:
        warnings.warn(f"tau={tau} ends before the packet has passed the origin (~{passage:.3g})",
                      ValidityWarning, stacklevel=2)
    pulsed = pulsed_evolution(packet, epsilon, tau, x_range, n)
    right = step_function(pulsed.x, "right")
    refl_pulsed = float(np.sum(right * np.abs(pulsed.values) ** 2) * pulsed.dx)
    deviation = math.nan
    refl_potential = None
    if include_potential:
        potential = potential_evolution(packet, v0, tau, x_range, n)
        refl_potential = float(np.sum(right * np.abs(potential.values) ** 2) * potential.dx)
        diff = right * np.abs(pulsed.values - potential.values) ** 2
        deviation = float(np.sqrt(np.sum(diff) * pulsed.dx))
    return EquivalenceReport(deviation, refl_pulsed, refl_potential, epsilon, v0, tau, n,
                             timescales(packet, epsilon))
