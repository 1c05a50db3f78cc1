"""
Model clocks coupled to the particle.

A linear clock H_c = p_y runs while the particle is in x > 0, so the reading
y = lambda t records the arrival time. Weak coupling smears the current with
|Phi(y, t)|^2; strong coupling turns the reading into the kinetic-energy
density at the origin. The same clock run over [-L, L] measures dwell times.
"""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import integrate

from qtimes_arrival import current_j, mean_momentum
from qtimes_core import DEFAULT_PARAMS, GaussianPacket, PhysParams
from qtimes_engine import CoupledField, evolve_coupled, step_function
from qtimes_errors import ConfigError, ValidityWarning
from qtimes_propagators import uniform_panels

CLOCK_HAMILTONIANS = ("linear_momentum",)
CLOCK_REGIONS = ("half_line_arrival", "interval_dwell")
REGIME_RATIO = 10.0

WindowFunction = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class ClockModel:
    """
    Clock coupled with strength ``coupling`` through coupling * theta(region) * H_c.

    ``window`` replaces |Phi(y, t)|^2 for clocks other than the linear one;
    it must accept broadcast arrays (y, t).
    """

    coupling: float
    clock_sigma: float = 1.0
    clock_p0: float = 0.0
    region: str = "half_line_arrival"
    L: Optional[float] = None
    clock_hamiltonian: str = "linear_momentum"
    window: Optional[WindowFunction] = None
    params: PhysParams = DEFAULT_PARAMS

    def __post_init__(self):
        if not self.coupling > 0:
            raise ConfigError(f"clock coupling must be positive, got {self.coupling}")
        if self.clock_hamiltonian not in CLOCK_HAMILTONIANS:
            raise ConfigError(f"unknown clock Hamiltonian '{self.clock_hamiltonian}'")
        if self.region not in CLOCK_REGIONS:
            raise ConfigError(f"unknown clock region '{self.region}'")
        if self.region == "interval_dwell" and not (self.L and self.L > 0):
            raise ConfigError("a dwell clock needs L > 0")

    @property
    def clock_initial(self) -> GaussianPacket:
        return GaussianPacket(0.0, self.clock_p0, self.clock_sigma, self.params)

    @property
    def energy_spread(self) -> float:
        """sigma_epsilon: the spread of H_c = p_y in the initial clock state."""
        return self.clock_initial.momentum_width

    def window_values(self, y, t):
        if self.window is not None:
            return np.asarray(self.window(y, t), dtype=float)
        return np.abs(clock_wavefn(self, y, t)) ** 2


@dataclass
class ClockDistribution:
    y_grid: np.ndarray
    values: np.ndarray
    coupling: float
    detected: Optional[float] = None

    @property
    def times(self) -> np.ndarray:
        return self.y_grid / self.coupling

    @property
    def time_density(self) -> np.ndarray:
        return self.values * self.coupling

    def total(self) -> float:
        return float(integrate.trapezoid(self.values, self.y_grid))

    def window_total(self, t1: float, t2: float) -> float:
        mask = (self.times >= t1) & (self.times <= t2)
        return float(integrate.trapezoid(self.values[mask], self.y_grid[mask]))

    def to_rows(self):
        return [(float(y), float(t), float(v)) for y, t, v in zip(self.y_grid, self.times, self.values)]


def clock_resolution(clock: ClockModel) -> float:
    """hbar / (lambda sigma_epsilon): readings closer than this in time are not distinguishable."""
    return clock.params.hbar / (clock.coupling * clock.energy_spread)


def clock_wavefn(clock: ClockModel, y, t):
    """Phi(y, t) = phi0(y - lambda t) for the linear clock."""
    if clock.clock_hamiltonian != "linear_momentum":
        raise ConfigError("only the linear clock has a closed-form wavefunction")
    y = np.asarray(y, dtype=float)
    t = np.asarray(t, dtype=float)
    return clock.clock_initial.amplitude(y - clock.coupling * t, 0.0)


def _energy_mean(state) -> float:
    if hasattr(state, "energy_mean"):
        return state.energy_mean
    return mean_momentum(state) ** 2 / (2 * state.mass)


def _time_nodes(clock: ClockModel, y_grid: np.ndarray, n_min: int = 256):
    """Quadrature over t >= 0 covering every reading in y_grid."""
    reach = 8 * clock.clock_sigma / clock.coupling
    t_lo = max(0.0, y_grid[0] / clock.coupling - reach)
    t_hi = y_grid[-1] / clock.coupling + reach
    if t_hi <= t_lo:
        raise ConfigError("y_grid lies entirely at negative clock readings")
    width = clock.clock_sigma / clock.coupling
    n_panels = max(n_min, int(4 * (t_hi - t_lo) / width))
    return uniform_panels(t_lo, t_hi, n_panels)


def _smear(clock: ClockModel, y_grid: np.ndarray, signal: np.ndarray, nodes: np.ndarray,
           weights: np.ndarray, workers: int) -> np.ndarray:
    chunks = np.array_split(np.arange(y_grid.size), max(1, workers))

    def part(idx):
        win = clock.window_values(y_grid[idx, None], nodes[None, :])
        return win @ (weights * signal)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        return np.concatenate(list(pool.map(part, chunks)))


def weak_coupling_arrival(state, clock: ClockModel, y_grid, workers: int = 1) -> ClockDistribution:
    """Pi(y) = int dt |Phi(y, t)|^2 J(t)."""
    y_grid = np.asarray(y_grid, dtype=float)
    energy = _energy_mean(state)
    if energy < REGIME_RATIO * clock.coupling * clock.energy_spread:
        warnings.warn(f"E={energy:.3g} is not large against lambda*sigma_eps="
                      f"{clock.coupling * clock.energy_spread:.3g}", ValidityWarning, stacklevel=2)
    nodes, weights = _time_nodes(clock, y_grid)
    values = _smear(clock, y_grid, current_j(state, nodes), nodes, weights, workers)
    return ClockDistribution(y_grid, values, clock.coupling)


def _momentum_nodes(state, n_panels: int):
    packets = getattr(state, "packets", (state,))
    lo = min(pk.p0 - 10 * pk.momentum_width for pk in packets)
    hi = max(pk.p0 + 10 * pk.momentum_width for pk in packets)
    return uniform_panels(lo, hi, n_panels)


def kinetic_density(state, t, n_panels: int = 64, block: int = 2048):
    """hbar^2 |psi'(0, t)|^2 from the momentum representation."""
    hbar = state.hbar
    nodes, weights = _momentum_nodes(state, n_panels)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.empty(t.size)
    for start in range(0, t.size, block):
        part = t[start:start + block]
        amp = state.momentum_amplitude(nodes[None, :], part[:, None])
        # psi'(0, t) = (2 pi hbar)^(-1/2) int dp (i p / hbar) psi~(p, t)
        dpsi = (amp * (1j * nodes / hbar)[None, :]) @ weights / math.sqrt(2 * math.pi * hbar)
        out[start:start + block] = hbar ** 2 * np.abs(dpsi) ** 2
    return out


def strong_coupling_arrival(state, clock: ClockModel, y_grid, workers: int = 1) -> ClockDistribution:
    """
    Clock readings when the coupling energy dominates.

    The particle mostly reflects; what is recorded follows the kinetic-energy
    density K(t) = hbar^2 |psi'(0, t)|^2, normalised by m |<p>|.

    ``detected`` is the total weight of the unnormalised readings. Past the
    step lambda * p_y the reading density is (2 / m^2) sqrt(2 m / step) K(t),
    and int K dt = m <|p|> over the whole passage, so
    detected = 4 <|p|> / sqrt(2 m step). It falls as the step grows.
    """
    y_grid = np.asarray(y_grid, dtype=float)
    m = state.mass
    energy = _energy_mean(state)
    step = clock.coupling * max(abs(clock.clock_p0), clock.energy_spread)
    if energy * REGIME_RATIO > step:
        warnings.warn(f"E={energy:.3g} is not small against the clock step {step:.3g}",
                      ValidityWarning, stacklevel=2)
    p_mean = mean_momentum(state)
    if abs(p_mean) < 1e-12:
        raise ConfigError("normalised kinetic-energy form needs <p> != 0")
    nodes, weights = _time_nodes(clock, y_grid)
    kinetic = kinetic_density(state, nodes)
    values = _smear(clock, y_grid, kinetic / (m * abs(p_mean)), nodes, weights, workers)
    p_nodes, p_weights = _momentum_nodes(state, 64)
    abs_p = float(np.sum(p_weights * np.abs(state.momentum_amplitude(p_nodes)) ** 2 * np.abs(p_nodes)))
    detected = 4 * abs_p / math.sqrt(2 * m * step)
    return ClockDistribution(y_grid, values, clock.coupling, detected=detected)


def dwell_time_semiclassical(p, L: float, mass: float = 1.0):
    return 2 * mass * L / np.abs(p)


def mean_dwell_time(packet, L: float, n_panels: int = 512) -> float:
    """int dp |psi~(p)|^2 2 m L / |p|."""
    lo, hi = packet.p0 - 10 * packet.momentum_width, packet.p0 + 10 * packet.momentum_width
    if lo <= 0 <= hi:
        raise ConfigError("momentum distribution reaches p = 0; dwell time diverges")
    nodes, weights = uniform_panels(lo, hi, n_panels)
    dens = np.abs(packet.momentum_amplitude(nodes)) ** 2
    return float(np.sum(weights * dens * dwell_time_semiclassical(nodes, L, packet.mass)))


def dwell_distribution(packet, clock: ClockModel, L: float, y_grid, n_panels: int = 512,
                       workers: int = 1) -> ClockDistribution:
    """Pi(y) = int dp |psi~(p)|^2 |Phi(y, 2 m L / |p|)|^2."""
    if not L > 0:
        raise ConfigError("dwell region needs L > 0")
    if abs(packet.p0) * L / packet.hbar < REGIME_RATIO:
        warnings.warn(f"|p0| L / hbar = {abs(packet.p0) * L / packet.hbar:.3g} is not large",
                      ValidityWarning, stacklevel=2)
    y_grid = np.asarray(y_grid, dtype=float)
    lo, hi = packet.p0 - 10 * packet.momentum_width, packet.p0 + 10 * packet.momentum_width
    if lo <= 0 <= hi:
        raise ConfigError("momentum distribution reaches p = 0; dwell time diverges")
    # the window is narrow in p where dt/dp = 2 m L / p^2 is large
    p_min = min(abs(lo), abs(hi))
    slope = 2 * packet.mass * L / p_min ** 2
    n_panels = max(n_panels, int(4 * (hi - lo) * slope * clock.coupling / clock.clock_sigma))
    nodes, weights = uniform_panels(lo, hi, n_panels)
    dens = np.abs(packet.momentum_amplitude(nodes)) ** 2
    times = dwell_time_semiclassical(nodes, L, packet.mass)
    values = _smear(clock, y_grid, dens, times, weights, workers)
    return ClockDistribution(y_grid, values, clock.coupling)


def coupled_grid_arrival(state, clock: ClockModel, t_final: float, x_range=(-30.0, 30.0),
                         y_range=(-4.0, 12.0), nx: int = 1024, ny: int = 256, dt: float = 0.0025) -> ClockDistribution:
    """
    Two-dimensional reference: evolve psi(x) phi0(y) under p_x^2/2m + lambda theta(x) p_y
    and read the clock where the particle has crossed, Pi(y) = int_{x<0} |Psi|^2 dx.
    """
    if clock.clock_hamiltonian != "linear_momentum" or clock.window is not None:
        raise ConfigError("the coupled grid reference needs the linear clock")
    x = np.linspace(x_range[0], x_range[1], nx, endpoint=False)
    y = np.linspace(y_range[0], y_range[1], ny, endpoint=False)
    psi = np.outer(state.amplitude(x), clock.clock_initial.amplitude(y))
    field = CoupledField(x_range[0], x_range[1], y_range[0], y_range[1], psi, 0.0, state.params)
    steps = max(1, int(round(t_final / dt)))
    out = evolve_coupled(field, clock.coupling, t_final / steps, steps)
    left = step_function(out.x, "left")
    values = np.sum(left[:, None] * np.abs(out.values) ** 2, axis=0) * out.dx
    return ClockDistribution(out.y, values, clock.coupling)
