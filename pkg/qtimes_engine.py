"""
Grid oracle: spectral split-operator evolution on periodic uniform grids.

Free segments are exact in momentum space. Potentials are applied as exact
exponential factors in position space, with Strang splitting between the two.
Sharp projections multiply by theta(x) with the x = 0 point weighted 1/2.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import fft, special

from qtimes_core import DEFAULT_PARAMS, PhysParams
from qtimes_errors import ConfigError, NumericalError

POTENTIALS = ("none", "real_step", "absorbing_step", "delta", "clock_coupled")
OBSERVABLES = (
    "theta_x", "theta_minus_x", "current_at_0", "kinetic_density_at_0", "theta_p", "theta_minus_p",
)

DEFAULT_N = 4096
DEFAULT_DOMAIN = (-60.0, 60.0)

# dt * E_max / hbar must stay below this for second-order splitting
SPLITTING_BOUND = 0.1
NORM_GROWTH_TOL = 1e-6


def _is_power_of_two(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


def step_function(x: np.ndarray, side: str = "right") -> np.ndarray:
    """theta(x) (side='right') or theta(-x), 1/2 on the x = 0 grid point."""
    theta = np.where(x > 0, 1.0, 0.0) if side == "right" else np.where(x < 0, 1.0, 0.0)
    dx = abs(x[1] - x[0]) if x.size > 1 else 1.0
    theta[np.abs(x) < 1e-9 * dx] = 0.5
    return theta


@dataclass(frozen=True)
class SpatialField:
    """Complex amplitude on the periodic grid x_j = x_min + j dx, dx = (x_max - x_min)/N."""

    x_min: float
    x_max: float
    values: np.ndarray
    t: float = 0.0
    params: PhysParams = DEFAULT_PARAMS

    def __post_init__(self):
        if not self.x_max > self.x_min:
            raise ConfigError("grid needs x_max > x_min")
        if not _is_power_of_two(self.values.shape[0]):
            raise ConfigError(f"grid size must be a power of two, got {self.values.shape[0]}")

    @classmethod
    def from_state(cls, state, x_min=DEFAULT_DOMAIN[0], x_max=DEFAULT_DOMAIN[1], n=DEFAULT_N, t=0.0):
        x = x_min + np.arange(n) * (x_max - x_min) / n
        values = np.asarray(state.amplitude(x, t), dtype=complex)
        return cls(x_min, x_max, values, t, state.params)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / self.n

    @property
    def x(self) -> np.ndarray:
        return self.x_min + np.arange(self.n) * self.dx

    @property
    def k(self) -> np.ndarray:
        return 2 * np.pi * fft.fftfreq(self.n, d=self.dx)

    @property
    def p(self) -> np.ndarray:
        return self.params.hbar * self.k

    def norm(self) -> float:
        return float(np.sum(np.abs(self.values) ** 2) * self.dx)

    def with_values(self, values, t=None) -> "SpatialField":
        return replace(self, values=values, t=self.t if t is None else t)

    def momentum_density(self) -> np.ndarray:
        """|psi~(p)|^2 on the fft-ordered momentum grid, normalised so sum * dp = norm."""
        coeffs = fft.fft(self.values) * self.dx / np.sqrt(2 * np.pi * self.params.hbar)
        return np.abs(coeffs) ** 2

    def content_momentum(self, threshold=1e-12) -> float:
        dens = self.momentum_density()
        significant = dens > threshold * dens.max()
        return float(np.max(np.abs(self.p[significant])))

    def check_resolution(self, p_max: Optional[float] = None) -> None:
        p_max = self.content_momentum() if p_max is None else p_max
        limit = np.pi * self.params.hbar / p_max if p_max > 0 else np.inf
        if not self.dx < limit:
            raise NumericalError("grid spacing does not resolve the momentum content",
                                 estimate=self.dx, tolerance=limit)


@dataclass(frozen=True)
class CoupledField:
    """Particle (x) times clock (y) amplitude for the coupled two-dimensional oracle."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float
    values: np.ndarray
    t: float = 0.0
    params: PhysParams = DEFAULT_PARAMS

    def __post_init__(self):
        nx, ny = self.values.shape
        if not (_is_power_of_two(nx) and _is_power_of_two(ny)):
            raise ConfigError("both grid sizes must be powers of two")

    @property
    def dx(self):
        return (self.x_max - self.x_min) / self.values.shape[0]

    @property
    def dy(self):
        return (self.y_max - self.y_min) / self.values.shape[1]

    @property
    def x(self):
        return self.x_min + np.arange(self.values.shape[0]) * self.dx

    @property
    def y(self):
        return self.y_min + np.arange(self.values.shape[1]) * self.dy

    def norm(self) -> float:
        return float(np.sum(np.abs(self.values) ** 2) * self.dx * self.dy)

    def with_values(self, values, t=None) -> "CoupledField":
        return replace(self, values=values, t=self.t if t is None else t)


@dataclass(frozen=True)
class EvolutionSpec:
    potential: str = "none"
    strength: float = 0.0
    dt: float = 1e-3
    steps: int = 0
    width: float = 0.0
    projection_schedule: object = None
    keep_side: str = "right"
    edge_mask_width: float = 0.0

    def __post_init__(self):
        if self.potential not in POTENTIALS:
            raise ConfigError(f"unknown potential '{self.potential}', expected one of {POTENTIALS}")
        if self.dt <= 0 or self.steps < 0:
            raise ConfigError("dt must be positive and steps non-negative")
        if self.potential == "delta" and self.width <= 0:
            raise ConfigError("delta potential needs a positive regularization width")

    @property
    def duration(self) -> float:
        return self.dt * self.steps

    @property
    def hermitian(self) -> bool:
        return self.potential != "absorbing_step"

    def projection_times(self) -> np.ndarray:
        sched = self.projection_schedule
        if sched is None:
            return np.empty(0)
        times = sched.times() if hasattr(sched, "times") else sched
        return np.sort(np.asarray(times, dtype=float))


def barrier_profile(x: np.ndarray, lam: float, width: float) -> np.ndarray:
    """Square barrier of height lam/width on [-width/2, width/2], averaged over each cell."""
    dx = x[1] - x[0]
    lo = np.maximum(x - dx / 2, -width / 2)
    hi = np.minimum(x + dx / 2, width / 2)
    overlap = np.clip(hi - lo, 0.0, None)
    return (lam / width) * overlap / dx


def potential_values(x: np.ndarray, spec: EvolutionSpec) -> np.ndarray:
    if spec.potential == "real_step":
        return spec.strength * step_function(x, "left") + 0j
    if spec.potential == "absorbing_step":
        return -1j * spec.strength * step_function(x, "left")
    if spec.potential == "delta":
        return barrier_profile(x, spec.strength, spec.width) + 0j
    return np.zeros_like(x, dtype=complex)


def edge_mask(x: np.ndarray, width: float) -> np.ndarray:
    """cos^(1/8) mask rising over `width` at both ends of the periodic box."""
    if width <= 0:
        return np.ones_like(x)
    lo, hi = x[0], x[-1]
    xi = np.maximum(np.maximum(lo + width - x, x - (hi - width)), 0.0)
    return np.cos(0.5 * np.pi * np.minimum(xi / width, 1.0)) ** 0.125


def free_evolve(field: SpatialField, t: float) -> SpatialField:
    """Exact free evolution by t (any sign) in momentum space."""
    if t == 0:
        return field
    hbar, m = field.params.hbar, field.params.mass
    phase = np.exp(-1j * hbar * field.k ** 2 * t / (2 * m))
    return field.with_values(fft.ifft(fft.fft(field.values) * phase), field.t + t)


def project(field: SpatialField, side: str = "right") -> SpatialField:
    return field.with_values(field.values * step_function(field.x, side))


def momentum_project(field: SpatialField, side: str = "negative") -> SpatialField:
    """theta(-p) (side='negative') or theta(p) applied spectrally, p = 0 weighted 1/2."""
    k = field.k
    weight = np.where(k < 0, 1.0, 0.0) if side == "negative" else np.where(k > 0, 1.0, 0.0)
    weight[k == 0] = 0.5
    return field.with_values(fft.ifft(fft.fft(field.values) * weight))


def _energy_bound(field: SpatialField, potential: np.ndarray) -> float:
    p_c = field.content_momentum()
    kinetic = p_c ** 2 / (2 * field.params.mass)
    return max(kinetic, float(np.max(np.abs(potential))) if potential.size else 0.0)


def _check_splitting(dt, e_max, hbar):
    if dt * e_max / hbar >= SPLITTING_BOUND:
        raise NumericalError("time step too large for second-order splitting",
                             estimate=dt * e_max / hbar, tolerance=SPLITTING_BOUND)


def _check_norm(spec: EvolutionSpec, start: float, now: float):
    if spec.hermitian and now > start * (1 + NORM_GROWTH_TOL):
        raise NumericalError("norm grew during a Hermitian evolution",
                             estimate=now / start - 1, tolerance=NORM_GROWTH_TOL)


def _iter_steps(field: SpatialField, spec: EvolutionSpec):
    """Yield the field after every step of a potential evolution, projections included."""
    hbar, m = field.params.hbar, field.params.mass
    x = field.x
    pot = potential_values(x, spec)
    _check_splitting(spec.dt, _energy_bound(field, pot), hbar)
    kin_half = np.exp(-1j * hbar * field.k ** 2 * spec.dt / (4 * m))
    pot_full = np.exp(-1j * pot * spec.dt / hbar)
    mask = edge_mask(x, spec.edge_mask_width)
    theta = step_function(x, spec.keep_side)
    proj_steps = set(np.rint((spec.projection_times() - field.t) / spec.dt).astype(int).tolist())
    psi = field.values.copy()
    for n in range(1, spec.steps + 1):
        psi = fft.ifft(fft.fft(psi) * kin_half)
        psi *= pot_full
        psi = fft.ifft(fft.fft(psi) * kin_half)
        if spec.edge_mask_width > 0:
            psi *= mask
        if n in proj_steps:
            psi *= theta
        yield n, psi


def _free_schedule(field: SpatialField, spec: EvolutionSpec) -> SpatialField:
    t_end = field.t + spec.duration
    current = field
    for t_proj in spec.projection_times():
        if t_proj < field.t or t_proj > t_end:
            continue
        current = project(free_evolve(current, t_proj - current.t), spec.keep_side)
    return free_evolve(current, t_end - current.t)


def evolve(field: SpatialField, spec: EvolutionSpec) -> SpatialField:
    """Evolve for spec.steps * spec.dt; free evolutions with projections are done exactly."""
    if spec.potential == "clock_coupled":
        raise ConfigError("clock_coupled evolution needs a CoupledField, use evolve_coupled")
    start = field.norm()
    if spec.potential == "none" and spec.edge_mask_width <= 0:
        out = _free_schedule(field, spec)
        _check_norm(spec, start, out.norm())
        return out
    psi = field.values
    for _, psi in _iter_steps(field, spec):
        pass
    out = field.with_values(psi, field.t + spec.duration)
    _check_norm(spec, start, out.norm())
    return out


def evolve_with_norms(field: SpatialField, spec: EvolutionSpec, record_every: int = 1):
    """Like evolve, also returning sampled (times, norms) including t = field.t."""
    if spec.potential == "clock_coupled":
        raise ConfigError("clock_coupled evolution needs a CoupledField, use evolve_coupled")
    times, norms = [field.t], [field.norm()]
    psi = field.values
    for n, psi in _iter_steps(field, spec):
        if n % record_every == 0:
            times.append(field.t + n * spec.dt)
            norms.append(float(np.sum(np.abs(psi) ** 2) * field.dx))
    out = field.with_values(psi, field.t + spec.duration)
    _check_norm(spec, norms[0], out.norm())
    return out, np.asarray(times), np.asarray(norms)


def evolve_delta(field: SpatialField, spec: EvolutionSpec) -> SpatialField:
    """Delta potential as the w -> 0 limit of barriers w, w/2, w/4 (error ~ w^2)."""
    if spec.potential != "delta":
        raise ConfigError("evolve_delta needs a delta potential spec")
    runs = [evolve(field, replace(spec, width=spec.width / 2 ** j)).values for j in range(3)]
    r1 = (4 * runs[1] - runs[0]) / 3
    r2 = (4 * runs[2] - runs[1]) / 3
    return field.with_values((16 * r2 - r1) / 15, field.t + spec.duration)


def evolve_coupled(field: CoupledField, coupling: float, dt: float, steps: int) -> CoupledField:
    """H = p_x^2/2m + coupling * theta(x) p_y, with the clock term applied spectrally in y."""
    hbar, m = field.params.hbar, field.params.mass
    nx, ny = field.values.shape
    kx = 2 * np.pi * fft.fftfreq(nx, d=field.dx)
    ky = 2 * np.pi * fft.fftfreq(ny, d=field.dy)
    theta = step_function(field.x, "right")
    # only the occupied clock momenta matter for the coupling energy
    dens_y = np.sum(np.abs(fft.fft(field.values, axis=1)) ** 2, axis=0)
    ky_c = np.max(np.abs(ky[dens_y > 1e-12 * dens_y.max()]))
    dens_x = np.sum(np.abs(fft.fft(field.values, axis=0)) ** 2, axis=1)
    kx_c = np.max(np.abs(kx[dens_x > 1e-12 * dens_x.max()]))
    e_max = max(hbar ** 2 * kx_c ** 2 / (2 * m), abs(coupling) * hbar * ky_c)
    _check_splitting(dt, e_max, hbar)
    kin_half = np.exp(-1j * hbar * kx ** 2 * dt / (4 * m))[:, None]
    clock = np.exp(-1j * coupling * theta[:, None] * ky[None, :] * dt)
    start = field.norm()
    psi = field.values.copy()
    for _ in range(steps):
        psi = fft.ifft(fft.fft(psi, axis=0) * kin_half, axis=0)
        psi = fft.ifft(fft.fft(psi, axis=1) * clock, axis=1)
        psi = fft.ifft(fft.fft(psi, axis=0) * kin_half, axis=0)
    out = field.with_values(psi, field.t + dt * steps)
    if out.norm() > start * (1 + NORM_GROWTH_TOL):
        raise NumericalError("norm grew in the coupled evolution",
                             estimate=out.norm() / start - 1, tolerance=NORM_GROWTH_TOL)
    return out


def sine_integral(u):
    """Si(u) = int_0^u sin(y)/y dy."""
    si, _ = special.sici(u)
    return si


def spectral_point(field: SpatialField, x0: float = 0.0):
    """Trigonometric interpolant of psi and d psi/dx at x0."""
    coeffs = fft.fft(field.values) / field.n
    k = field.k
    phase = np.exp(1j * k * (x0 - field.x_min))
    return complex(np.sum(coeffs * phase)), complex(np.sum(1j * k * coeffs * phase))


def expectation(field: SpatialField, observable: str) -> float:
    if observable not in OBSERVABLES:
        raise ConfigError(f"unknown observable '{observable}'")
    hbar, m = field.params.hbar, field.params.mass
    if observable in ("theta_x", "theta_minus_x"):
        side = "right" if observable == "theta_x" else "left"
        return float(np.sum(step_function(field.x, side) * np.abs(field.values) ** 2) * field.dx)
    if observable in ("theta_p", "theta_minus_p"):
        side = "positive" if observable == "theta_p" else "negative"
        return momentum_project(field, side).norm()
    psi0, dpsi0 = spectral_point(field, 0.0)
    if observable == "current_at_0":
        return float(-(hbar / m) * np.imag(np.conj(psi0) * dpsi0))
    return float(hbar ** 2 * abs(dpsi0) ** 2 / m)


# Checkpoint layout: <i8 N, <f8 x_min, x_max, t, then N little-endian complex128 values.

def checkpoint_save(field: SpatialField, path: str) -> None:
    with open(path, "wb") as f:
        f.write(np.array([field.n], dtype="<i8").tobytes())
        f.write(np.array([field.x_min, field.x_max, field.t], dtype="<f8").tobytes())
        f.write(np.asarray(field.values, dtype="<c16").tobytes())


def checkpoint_load(path: str, params: PhysParams = DEFAULT_PARAMS) -> SpatialField:
    with open(path, "rb") as f:
        raw = f.read()
    n = int(np.frombuffer(raw[:8], dtype="<i8")[0])
    x_min, x_max, t = np.frombuffer(raw[8:32], dtype="<f8")
    values = np.frombuffer(raw[32:], dtype="<c16")
    if values.size != n:
        raise ConfigError(f"checkpoint holds {values.size} values, header says {n}")
    return SpatialField(float(x_min), float(x_max), values.astype(complex), float(t), params)
