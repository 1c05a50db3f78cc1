"""
Decoherent histories for crossing the origin.

Class operators act on grid fields. Heisenberg projectors P(t) = U(t)^dag theta(x) U(t)
are applied as exact free evolution to t, a sharp cut, and free evolution back.
Times are absolute, measured on the same clock as ``field.t``.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import integrate

from qtimes_core import PhysParams
from qtimes_engine import (
    DEFAULT_DOMAIN, DEFAULT_N, EvolutionSpec, SpatialField, evolve, free_evolve, momentum_project, project,
    sine_integral, step_function,
)
from qtimes_errors import ConfigError, NumericalError

CLASS_OPERATOR_KINDS = ("nonconcross", "cross_interval", "cross_right", "cross_left", "cross_twosided_hermitian")

DECOHERENCE_THRESHOLD = 0.01
PROBABILITY_FLOOR = 1e-8
NORM_GROWTH_TOL = 1e-6
# kinds built only from products of projectors, so they cannot raise the norm
_CONTRACTIVE = ("cross_interval", "cross_right", "cross_left", "cross_twosided_hermitian")


@dataclass(frozen=True)
class ClassOperatorSpec:
    """
    One history. With ``v0`` the crossing is realized by an absorbing step switched
    on at t = 0 (field time) and integrated with step ``dt``.
    """

    kind: str
    t1: float
    t2: float
    v0: Optional[float] = None
    dt: float = 1e-3

    def __post_init__(self):
        if self.kind not in CLASS_OPERATOR_KINDS:
            raise ConfigError(f"unknown class operator '{self.kind}'")
        if self.t2 < self.t1:
            raise ConfigError("class operator needs t2 >= t1")
        if self.v0 is not None and self.kind not in ("nonconcross", "cross_interval"):
            raise ConfigError(f"{self.kind} has no complex-potential realization")


@dataclass
class DecoherenceReport:
    probabilities: np.ndarray
    offdiag: np.ndarray
    dm2_bounds: np.ndarray
    decoherence_measure: float
    q_values: np.ndarray
    threshold: float = DECOHERENCE_THRESHOLD
    sector_measures: dict = field(default_factory=dict)

    @property
    def backflow(self) -> bool:
        """Some candidate probability q_k is negative beyond rounding."""
        return bool(np.any(self.q_values < -1e-9))

    @property
    def decoherent(self) -> bool:
        return self.decoherence_measure < self.threshold and not self.backflow

    def to_json(self) -> dict:
        return {
            "probabilities": self.probabilities.tolist(),
            "q_values": self.q_values.tolist(),
            "offdiag_abs": np.abs(self.offdiag).tolist(),
            "dm2_bounds": self.dm2_bounds.tolist(),
            "decoherence_measure": self.decoherence_measure,
            "decoherent": self.decoherent,
            "backflow": self.backflow,
            "sector_measures": self.sector_measures,
        }


def crossing_specs(times: Sequence[float], v0: Optional[float] = None, dt: float = 1e-3):
    """Exhaustive set: crossing in each [t_k, t_k+1], then never crossing during [t_0, t_N]."""
    times = list(times)
    if len(times) < 2 or any(b <= a for a, b in zip(times, times[1:])):
        raise ConfigError("interval boundaries must be strictly increasing")
    specs = [ClassOperatorSpec("cross_interval", a, b, v0, dt) for a, b in zip(times, times[1:])]
    specs.append(ClassOperatorSpec("nonconcross", times[0], times[-1], v0, dt))
    return specs


# -- application --------------------------------------------------------------------------------

def heisenberg_projector(field_: SpatialField, t: float, side: str = "right") -> SpatialField:
    """theta(x) (or theta(-x)) at absolute time t, applied at the field's own time."""
    shift = t - field_.t
    return free_evolve(project(free_evolve(field_, shift), side), -shift)


def _absorbing_evolve(field_: SpatialField, v0: float, duration: float, dt: float) -> SpatialField:
    if duration <= 0:
        return field_
    steps = max(1, int(np.ceil(duration / dt)))
    return evolve(field_, EvolutionSpec(potential="absorbing_step", strength=v0, dt=duration / steps, steps=steps))


def _crossing_difference(field_: SpatialField, t1: float, t2: float) -> np.ndarray:
    return heisenberg_projector(field_, t1).values - heisenberg_projector(field_, t2).values


def _reference_part(spec: ClassOperatorSpec, field_: SpatialField) -> SpatialField:
    """The operator X with C = U(tau) X, returned at the field's time."""
    t1, t2 = spec.t1, spec.t2
    if spec.kind == "cross_interval":
        return field_.with_values(_crossing_difference(field_, t1, t2))
    if spec.kind == "nonconcross":
        return field_.with_values(field_.values - _crossing_difference(field_, t1, t2))
    if spec.kind == "cross_right":
        inside = heisenberg_projector(field_, t1, "right")
        return heisenberg_projector(inside, t2, "left")
    if spec.kind == "cross_left":
        inside = heisenberg_projector(field_, t1, "left")
        return heisenberg_projector(inside, t2, "right")
    # left-movers counted crossing from the right, right-movers from the left
    neg = momentum_project(field_, "negative")
    pos = momentum_project(field_, "positive")
    neg_part = momentum_project(neg.with_values(_crossing_difference(neg, t1, t2)), "negative")
    pos_part = momentum_project(pos.with_values(-_crossing_difference(pos, t1, t2)), "positive")
    return field_.with_values(neg_part.values + pos_part.values)


def _absorbing_class_operator(spec: ClassOperatorSpec, field_: SpatialField, tau: float) -> SpatialField:
    t0 = field_.t

    def survive_then_free(t):
        inside = _absorbing_evolve(field_, spec.v0, t - t0, spec.dt)
        return free_evolve(inside, tau - inside.t)

    if spec.kind == "nonconcross":
        if abs(spec.t1 - t0) > 1e-12:
            raise ConfigError("the absorbing non-crossing operator starts at the field time")
        return survive_then_free(spec.t2)
    first = survive_then_free(spec.t1)
    second = survive_then_free(spec.t2)
    return first.with_values(first.values - second.values)


def apply_class_operator(spec: ClassOperatorSpec, field_: SpatialField, tau: Optional[float] = None) -> SpatialField:
    """C|psi> in the Schroedinger picture at the reference time tau (default spec.t2)."""
    tau = spec.t2 if tau is None else tau
    if spec.v0 is not None:
        return _absorbing_class_operator(spec, field_, tau)
    start = field_.norm()
    reference = _reference_part(spec, field_)
    out = free_evolve(reference, tau - reference.t)
    if spec.kind in _CONTRACTIVE and out.norm() > start * (1 + NORM_GROWTH_TOL):
        raise NumericalError("class operator raised the norm; grid is aliasing",
                             estimate=out.norm() / start - 1, tolerance=NORM_GROWTH_TOL)
    return out


# -- decoherence functional ---------------------------------------------------------------------

def decoherence_measure(d_matrix: np.ndarray, indices: Optional[Sequence[int]] = None) -> float:
    """max over k != j of |D_kj|^2 / (p_k p_j), skipping histories with p below the floor."""
    probs = np.real(np.diag(d_matrix))
    idx = range(len(probs)) if indices is None else indices
    live = [k for k in idx if probs[k] > PROBABILITY_FLOOR]
    worst = 0.0
    for a, k in enumerate(live):
        for j in live[a + 1:]:
            worst = max(worst, abs(d_matrix[k, j]) ** 2 / (probs[k] * probs[j]))
    return float(worst)


def _interval_dm2(spec: ClassOperatorSpec, field_: SpatialField) -> float:
    if spec.kind != "cross_interval" or spec.t2 <= spec.t1:
        return float("nan")
    return dm2_bound(field_, spec.t1, spec.t2)


def decoherence_functional(specs: Sequence[ClassOperatorSpec], field_: SpatialField, tau: Optional[float] = None,
                           workers: int = 1, with_dm2: bool = False) -> DecoherenceReport:
    """
    D_kj = <C_j psi|C_k psi> for one exhaustive set, with q_k = Re <psi(tau)|C_k psi>.
    """
    if not specs:
        raise ConfigError("need at least one class operator")
    tau = max(s.t2 for s in specs) if tau is None else tau
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        branches = list(pool.map(lambda s: apply_class_operator(s, field_, tau).values, specs))
    c = np.vstack(branches)
    d_matrix = (c @ c.conj().T) * field_.dx
    reference = free_evolve(field_, tau - field_.t).values
    q = np.real(c @ reference.conj()) * field_.dx
    probs = np.real(np.diag(d_matrix)).copy()
    dm2 = np.array([_interval_dm2(s, field_) for s in specs]) if with_dm2 else np.full(len(specs), np.nan)
    return DecoherenceReport(probs, d_matrix, dm2, decoherence_measure(d_matrix), q)


def p12_sandwich(field_: SpatialField, t1: float, t2: float) -> float:
    """<theta(x1) theta(-x2) theta(x1)>: in x > 0 at t1, then in x < 0 at t2."""
    if t2 <= t1:
        raise ConfigError("sandwich needs t2 > t1")
    cut = project(free_evolve(field_, t1 - field_.t), "right")
    later = free_evolve(cut, t2 - t1)
    return float(np.sum(step_function(later.x, "left") * np.abs(later.values) ** 2) * later.dx)


def dm2_bound(state, t1: float, t2: float, x_range=DEFAULT_DOMAIN, n: int = DEFAULT_N) -> float:
    """<theta(-x1) theta(x2) theta(-x1)>: the recrossing probability bounding |d_kj|^2."""
    if t2 <= t1:
        raise ConfigError("d_m^2 needs t2 > t1")
    field_ = state if isinstance(state, SpatialField) else SpatialField.from_state(state, x_range[0], x_range[1], n)
    cut = project(free_evolve(field_, t1 - field_.t), "left")
    later = free_evolve(cut, t2 - t1)
    return float(np.sum(step_function(later.x, "right") * np.abs(later.values) ** 2) * later.dx)


def dm2_straddling_estimate(packet) -> float:
    """Large-interval value of d_m^2 for a Gaussian centred on the origin at t1."""
    return (2 * np.pi ** 3) ** -0.5 / (2 * abs(packet.p0) * packet.sigma / packet.hbar)


# -- Wigner route -------------------------------------------------------------------------------

def sine_kernel(u):
    """f(u) = pi/2 - Si(u): pi for u -> -inf, pi/2 at 0, 0 for u -> +inf."""
    return 0.5 * np.pi - sine_integral(u)


def wigner_kernels(p, q, t2_minus_t1: float, params: PhysParams = PhysParams()):
    """Wigner symbols (W_P, W_D) of theta(x1)theta(-x2)theta(x1) and theta(-x1)theta(x2)theta(-x1)."""
    if t2_minus_t1 <= 0:
        raise ConfigError("Wigner kernels need t2 > t1")
    hbar, m = params.hbar, params.mass
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    u = 2 * q * (p + m * q / t2_minus_t1) / hbar
    f = sine_kernel(u)
    norm = 1.0 / (2 * np.pi ** 2 * hbar)
    return norm * step_function(q, "right") * f, norm * step_function(q, "left") * f


def wigner_sandwich(w1, t2_minus_t1: float, which: str = "dm2") -> float:
    """2 pi hbar int W_A W(t1) dp dq for a PhaseSpaceField already evolved to t1."""
    P, Q = np.meshgrid(w1.p_grid, w1.q_grid, indexing="ij")
    w_p, w_d = wigner_kernels(P, Q, t2_minus_t1, w1.params)
    kernel = {"p12": w_p, "dm2": w_d}.get(which)
    if kernel is None:
        raise ConfigError(f"unknown sandwich '{which}', expected 'p12' or 'dm2'")
    inner = integrate.trapezoid(kernel * w1.values, w1.q_grid, axis=1)
    return float(2 * np.pi * w1.params.hbar * integrate.trapezoid(inner, w1.p_grid))


# -- two-sided crossing -------------------------------------------------------------------------

def _sector_flux(field_: SpatialField, t1: float, t2: float, sector: str) -> float:
    """<P(t1) - P(t2)> in the negative sector, <P(t2) - P(t1)> in the positive one."""
    part = momentum_project(field_, sector)
    ahead = heisenberg_projector(part, t1).values
    later = heisenberg_projector(part, t2).values
    sign = 1.0 if sector == "negative" else -1.0
    return sign * float(np.real(np.vdot(part.values, ahead - later)) * field_.dx)


def crossing_probabilities_twosided(state, intervals: Sequence[tuple], x_range=DEFAULT_DOMAIN,
                                    n: int = DEFAULT_N) -> np.ndarray:
    """Crossing probability per interval from either side, with no left/right interference."""
    field_ = state if isinstance(state, SpatialField) else SpatialField.from_state(state, x_range[0], x_range[1], n)
    out = []
    for t1, t2 in intervals:
        if t2 < t1:
            raise ConfigError("interval needs t2 >= t1")
        out.append(_sector_flux(field_, t1, t2, "negative") + _sector_flux(field_, t1, t2, "positive"))
    return np.asarray(out)


def _sector_branches(field_: SpatialField, times: Sequence[float], sector: str, tau: float) -> np.ndarray:
    """theta(+-p) X_k theta(+-p) psi at tau for every interval, X_k signed to count crossings positively."""
    part = momentum_project(field_, sector)
    sign = 1.0 if sector == "negative" else -1.0
    rows = []
    for a, b in zip(times, times[1:]):
        crossed = part.with_values(sign * _crossing_difference(part, a, b))
        rows.append(momentum_project(free_evolve(crossed, tau - part.t), sector).values)
    return np.vstack(rows)


def twosided_decoherence(field_: SpatialField, times: Sequence[float]) -> DecoherenceReport:
    """Sector-wise crossing functionals; combined D is their sum, decoherent iff each sector is."""
    times = list(times)
    tau = times[-1]
    reference = free_evolve(field_, tau - field_.t).values
    d_total, q_total, measures = 0.0, 0.0, {}
    for sector in ("negative", "positive"):
        c = _sector_branches(field_, times, sector, tau)
        d_sector = (c @ c.conj().T) * field_.dx
        measures[sector] = decoherence_measure(d_sector)
        d_total = d_total + d_sector
        q_total = q_total + np.real(c @ reference.conj()) * field_.dx
    probs = np.real(np.diag(d_total)).copy()
    return DecoherenceReport(probs, d_total, np.full(len(probs), np.nan), max(measures.values()), q_total,
                             sector_measures=measures)


def decoherence_scan(field_: SpatialField, t_centre: float, deltas: Sequence[float], t_start: float,
                     t_end: float, workers: int = 1) -> np.ndarray:
    """Decoherence measure between [t_c - Delta, t_c] and [t_c, t_c + Delta] as Delta grows."""
    out = []
    for delta in deltas:
        times = [t_start, t_centre - delta, t_centre, t_centre + delta, t_end]
        report = decoherence_functional(crossing_specs(times)[:-1], field_, tau=t_end, workers=workers)
        out.append(decoherence_measure(report.offdiag, indices=(1, 2)))
    return np.asarray(out)
