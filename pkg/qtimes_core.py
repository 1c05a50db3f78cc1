"""
Units, parameter records and analytic Gaussian wavepackets.

Everything here is a pure function of immutable inputs. Amplitudes accept
numpy arrays for ``x``/``p`` so the same call evaluates a whole grid.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from qtimes_errors import ConfigError


@dataclass(frozen=True)
class PhysParams:
    mass: float = 1.0
    hbar: float = 1.0

    def __post_init__(self):
        if not self.mass > 0:
            raise ConfigError(f"mass must be positive, got {self.mass}")
        if not self.hbar > 0:
            raise ConfigError(f"hbar must be positive, got {self.hbar}")


DEFAULT_PARAMS = PhysParams()


@dataclass(frozen=True)
class TimeGrid:
    t_start: float
    t_end: float
    n_samples: int

    def __post_init__(self):
        if not self.t_end > self.t_start:
            raise ConfigError("TimeGrid needs t_end > t_start")
        if self.n_samples < 2:
            raise ConfigError("TimeGrid needs at least two samples")

    def samples(self) -> np.ndarray:
        return np.linspace(self.t_start, self.t_end, self.n_samples)

    @property
    def step(self) -> float:
        return (self.t_end - self.t_start) / (self.n_samples - 1)


@dataclass(frozen=True)
class GaussianPacket:
    """Minimum-uncertainty packet centred at q0 with mean momentum p0 at t = 0."""

    q0: float
    p0: float
    sigma: float
    params: PhysParams = field(default_factory=PhysParams)

    def __post_init__(self):
        if not self.sigma > 0:
            raise ConfigError(f"sigma must be positive, got {self.sigma}")

    @property
    def mass(self) -> float:
        return self.params.mass

    @property
    def hbar(self) -> float:
        return self.params.hbar

    @property
    def momentum_width(self) -> float:
        return self.hbar / (2.0 * self.sigma)

    @property
    def energy_mean(self) -> float:
        return self.p0 ** 2 / (2 * self.mass) + self.hbar ** 2 / (8 * self.mass * self.sigma ** 2)

    @property
    def energy_spread(self) -> float:
        s = self.momentum_width
        return np.sqrt(4 * self.p0 ** 2 * s ** 2 + 2 * s ** 4) / (2 * self.mass)

    def center(self, t: float) -> float:
        return self.q0 + self.p0 * t / self.mass

    def amplitude(self, x, t=0.0, spreading=True):
        return gaussian_position_amplitude(self, x, t, spreading=spreading)

    def derivative(self, x, t=0.0, spreading=True):
        return gaussian_position_derivative(self, x, t, spreading=spreading)

    def momentum_amplitude(self, p, t=0.0):
        return gaussian_momentum_amplitude(self, p, t)

    def mirrored(self) -> "GaussianPacket":
        return GaussianPacket(-self.q0, -self.p0, self.sigma, self.params)


def _width(packet: GaussianPacket, t, spreading: bool):
    if not spreading:
        return np.asarray(packet.sigma ** 2, dtype=complex)
    return packet.sigma ** 2 + 1j * packet.hbar * np.asarray(t, dtype=float) / (2 * packet.mass)


def gaussian_position_amplitude(packet: GaussianPacket, x, t=0.0, spreading=True):
    """
    Free evolution of the packet, psi(x, t).

    With ``spreading=False`` the envelope keeps its initial width and only
    translates, which is the approximation used in crude timescale estimates.
    """
    m, hbar = packet.mass, packet.hbar
    a_t = _width(packet, t, spreading)
    x = np.asarray(x, dtype=float)
    shift = x - packet.q0 - packet.p0 * t / m
    phase = (packet.p0 * x - packet.p0 ** 2 * t / (2 * m)) / hbar
    pref = (2 * np.pi) ** -0.25 * np.sqrt(packet.sigma) / np.sqrt(a_t)
    return pref * np.exp(-shift ** 2 / (4 * a_t) + 1j * phase)


def gaussian_position_derivative(packet: GaussianPacket, x, t=0.0, spreading=True):
    a_t = _width(packet, t, spreading)
    x = np.asarray(x, dtype=float)
    shift = x - packet.q0 - packet.p0 * t / packet.mass
    factor = -shift / (2 * a_t) + 1j * packet.p0 / packet.hbar
    return gaussian_position_amplitude(packet, x, t, spreading) * factor


def gaussian_momentum_amplitude(packet: GaussianPacket, p, t=0.0):
    """psi~(p, t) = <p|exp(-i H0 t / hbar)|psi>, centred at p0 with width hbar/(2 sigma)."""
    hbar, s2 = packet.hbar, packet.sigma ** 2
    p = np.asarray(p, dtype=float)
    dp = p - packet.p0
    pref = (2 * s2 / (np.pi * hbar ** 2)) ** 0.25
    phase = -packet.q0 * dp / hbar - p ** 2 * t / (2 * packet.mass * hbar)
    return pref * np.exp(-s2 * dp ** 2 / hbar ** 2 + 1j * phase)


def zeno_time(packet: GaussianPacket) -> float:
    """hbar / Delta H from the exact energy variance of the Gaussian."""
    return packet.hbar / packet.energy_spread


def zeno_time_estimate(packet: GaussianPacket) -> float:
    """The order-of-magnitude form m sigma / |p0|."""
    if packet.p0 == 0:
        raise ConfigError("m*sigma/|p0| is undefined for p0 = 0")
    return packet.mass * packet.sigma / abs(packet.p0)


def gaussian_overlap(a: GaussianPacket, b: GaussianPacket) -> complex:
    """<a|b> at t = 0."""
    if a.params != b.params:
        raise ConfigError("overlap needs packets with identical PhysParams")
    hbar = a.hbar
    alpha_a = 1.0 / (4 * a.sigma ** 2)
    alpha_b = 1.0 / (4 * b.sigma ** 2)
    A = alpha_a + alpha_b
    B = 2 * alpha_a * a.q0 + 2 * alpha_b * b.q0 + 1j * (b.p0 - a.p0) / hbar
    C = -alpha_a * a.q0 ** 2 - alpha_b * b.q0 ** 2
    pref = (2 * np.pi * a.sigma ** 2) ** -0.25 * (2 * np.pi * b.sigma ** 2) ** -0.25
    return complex(pref * np.sqrt(np.pi / A) * np.exp(B ** 2 / (4 * A) + C))


class GaussianSuperposition:
    """
    Normalised linear combination of Gaussian packets.

    Used for mirror pairs, cat states and backflow witnesses. Exposes the
    same amplitude interface as GaussianPacket.
    """

    def __init__(self, packets: Sequence[GaussianPacket], weights: Sequence[complex]):
        if len(packets) == 0 or len(packets) != len(weights):
            raise ConfigError("need one weight per packet")
        params = packets[0].params
        if any(p.params != params for p in packets):
            raise ConfigError("all packets must share PhysParams")
        self.packets = tuple(packets)
        self.params = params
        raw = np.asarray(weights, dtype=complex)
        gram = np.array([[gaussian_overlap(a, b) for b in self.packets] for a in self.packets])
        norm2 = float(np.real(np.conj(raw) @ gram @ raw))
        if norm2 <= 0:
            raise ConfigError("superposition has zero norm")
        self.weights = raw / np.sqrt(norm2)

    @property
    def mass(self):
        return self.params.mass

    @property
    def hbar(self):
        return self.params.hbar

    def amplitude(self, x, t=0.0, spreading=True):
        return sum(w * p.amplitude(x, t, spreading) for w, p in zip(self.weights, self.packets))

    def derivative(self, x, t=0.0, spreading=True):
        return sum(w * p.derivative(x, t, spreading) for w, p in zip(self.weights, self.packets))

    def momentum_amplitude(self, p, t=0.0):
        return sum(w * pk.momentum_amplitude(p, t) for w, pk in zip(self.weights, self.packets))

    def mirrored(self) -> "GaussianSuperposition":
        return GaussianSuperposition([p.mirrored() for p in self.packets], self.weights)


def mirror_pair(packet: GaussianPacket, phase: float = 0.0) -> GaussianSuperposition:
    """psi(x) + e^{i phase} psi(-x): a left-mover and its mirror image."""
    return GaussianSuperposition([packet, packet.mirrored()], [1.0, np.exp(1j * phase)])


@dataclass(frozen=True)
class PhaseSpaceField:
    """Real distribution W(p, q) on uniform grids; values[i, j] sits at (p_grid[i], q_grid[j])."""

    p_grid: np.ndarray
    q_grid: np.ndarray
    values: np.ndarray
    params: PhysParams = DEFAULT_PARAMS

    def __post_init__(self):
        if self.values.shape != (self.p_grid.size, self.q_grid.size):
            raise ConfigError("values must have shape (len(p_grid), len(q_grid))")

    @property
    def dp(self) -> float:
        return float(self.p_grid[1] - self.p_grid[0])

    @property
    def dq(self) -> float:
        return float(self.q_grid[1] - self.q_grid[0])

    def norm(self) -> float:
        return float(np.sum(self.values) * self.dp * self.dq)

    def position_marginal(self) -> np.ndarray:
        return np.sum(self.values, axis=0) * self.dp

    def momentum_marginal(self) -> np.ndarray:
        return np.sum(self.values, axis=1) * self.dq

    def moments(self):
        """(<p>, <q>, var p, var q) by grid quadrature."""
        norm = self.norm()
        pm = self.momentum_marginal() * self.dp / norm
        qm = self.position_marginal() * self.dq / norm
        mean_p = float(np.sum(pm * self.p_grid))
        mean_q = float(np.sum(qm * self.q_grid))
        var_p = float(np.sum(pm * (self.p_grid - mean_p) ** 2))
        var_q = float(np.sum(qm * (self.q_grid - mean_q) ** 2))
        return mean_p, mean_q, var_p, var_q

    def with_values(self, values) -> "PhaseSpaceField":
        return PhaseSpaceField(self.p_grid, self.q_grid, values, self.params)

    @classmethod
    def gaussian(cls, packet: GaussianPacket, p_grid, q_grid) -> "PhaseSpaceField":
        """Wigner function of a Gaussian packet (positive everywhere)."""
        hbar = packet.hbar
        P, Q = np.meshgrid(np.asarray(p_grid, float), np.asarray(q_grid, float), indexing="ij")
        values = np.exp(-(Q - packet.q0) ** 2 / (2 * packet.sigma ** 2)
                        - 2 * packet.sigma ** 2 * (P - packet.p0) ** 2 / hbar ** 2) / (np.pi * hbar)
        return cls(np.asarray(p_grid, float), np.asarray(q_grid, float), values, packet.params)
