"""
Arrival times for a particle coupled to a thermal environment.

The dynamical model is quantum Brownian motion with dissipation neglected:
dW/dt = -(p/m) dW/dq + D d^2W/dp^2. Its propagator is a shear along free
trajectories followed by Gaussian smearing with covariance A(t), so momentum
variance grows by 2Dt.
"""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import fft, integrate, special

from qtimes_core import DEFAULT_PARAMS, PhaseSpaceField, PhysParams
from qtimes_errors import ConfigError, NumericalError, ValidityWarning
from qtimes_histories import wigner_sandwich

REGIMES = ("unitary", "intermediate", "strong")
EDGE_BAND = 0.05
EDGE_TOL = 1e-6
MAX_STEP_LOSS = 0.2
# E tau_l / hbar below this leaves no window between localisation and stochastic times
MIN_WINDOW_RATIO = 10.0


@dataclass(frozen=True)
class QbmParams:
    D: float
    gamma: float = 0.0
    params: PhysParams = DEFAULT_PARAMS

    def __post_init__(self):
        if not self.D > 0:
            raise ConfigError(f"diffusion constant must be positive, got {self.D}")
        if self.gamma < 0:
            raise ConfigError(f"gamma must be non-negative, got {self.gamma}")

    @property
    def tau_l(self) -> float:
        """Localisation time sqrt(2 m hbar / D)."""
        return math.sqrt(2 * self.params.mass * self.params.hbar / self.D)

    def tau_s(self, p0: float) -> float:
        """Stochastic time p0^2 / D."""
        return p0 ** 2 / self.D

    def lindblad_coefficients(self):
        """(a, b) of the Lindblad operator a x + i b p."""
        hbar = self.params.hbar
        return math.sqrt(2 * self.D) / hbar, self.gamma / math.sqrt(2 * self.D)

    def check_window(self, packet) -> None:
        ratio = packet.energy_mean * self.tau_l / self.params.hbar
        if ratio < MIN_WINDOW_RATIO:
            raise ConfigError(f"E*tau_l/hbar = {ratio:.3g}: no window between tau_l and tau_s")


@dataclass(frozen=True)
class GaussianKernelA:
    t: float
    qbm: QbmParams

    @property
    def matrix(self) -> np.ndarray:
        m, t, d = self.qbm.params.mass, self.t, self.qbm.D
        return d * t * np.array([[2.0, t / m], [t / m, 2 * t ** 2 / (3 * m ** 2)]])

    @property
    def det(self) -> float:
        return self.qbm.D ** 2 * self.t ** 4 / (3 * self.qbm.params.mass ** 2)

    def is_admissible(self) -> bool:
        """A smears any Wigner function into a positive one."""
        return self.det >= 0.25 * self.qbm.params.hbar ** 2 * (1 - 1e-12)


def positivity_time(qbm: QbmParams) -> float:
    return (3.0 / 16.0) ** 0.25 * qbm.tau_l


def earliest_povm_time(qbm: QbmParams) -> float:
    """First t1 at which A(t1) splits into a diagonal squeezed Husimi kernel plus a positive remainder."""
    m, hbar = qbm.params.mass, qbm.params.hbar
    return math.sqrt((math.sqrt(3.0) + 1.5) * m * hbar / qbm.D)


def _shear_matrix(t: float, mass: float) -> np.ndarray:
    """(p, q) -> (p, q + p t/m)."""
    return np.array([[1.0, 0.0], [t / mass, 1.0]])


def initial_frame_covariance(t: float, qbm: QbmParams) -> np.ndarray:
    s_inv = _shear_matrix(-t, qbm.params.mass)
    return s_inv @ GaussianKernelA(t, qbm).matrix @ s_inv.T


# -- grid helpers -------------------------------------------------------------------------------

def _mesh(w: PhaseSpaceField):
    return np.meshgrid(w.p_grid, w.q_grid, indexing="ij")


def _gaussian_smear(values: np.ndarray, dp: float, dq: float, cov: np.ndarray) -> np.ndarray:
    kp = 2 * np.pi * fft.fftfreq(values.shape[0], d=dp)
    kq = 2 * np.pi * fft.fftfreq(values.shape[1], d=dq)
    KP, KQ = np.meshgrid(kp, kq, indexing="ij")
    char = np.exp(-0.5 * (cov[0, 0] * KP ** 2 + 2 * cov[0, 1] * KP * KQ + cov[1, 1] * KQ ** 2))
    return np.real(fft.ifft2(fft.fft2(values) * char))


def _shear(values: np.ndarray, p: np.ndarray, dq: float, t: float, mass: float) -> np.ndarray:
    """W(p, q) -> W(p, q - p t/m) by spectral translation of every momentum row."""
    kq = 2 * np.pi * fft.fftfreq(values.shape[1], d=dq)
    phase = np.exp(-1j * kq[None, :] * p[:, None] * t / mass)
    return np.real(fft.ifft(fft.fft(values, axis=1) * phase, axis=1))


def _check_support(w: PhaseSpaceField) -> None:
    total = np.sum(np.abs(w.values))
    n_p, n_q = w.values.shape
    bp, bq = max(1, int(EDGE_BAND * n_p)), max(1, int(EDGE_BAND * n_q))
    inner = np.sum(np.abs(w.values[bp:n_p - bp, bq:n_q - bq]))
    edge = (total - inner) / total if total > 0 else 0.0
    if edge > EDGE_TOL:
        raise NumericalError("phase-space grid too small for the smeared support", estimate=edge,
                             tolerance=EDGE_TOL)


def _cell_step(q_lab: np.ndarray, dq: float) -> np.ndarray:
    """Fraction of each cell lying at q > 0."""
    return np.clip(q_lab / dq + 0.5, 0.0, 1.0)


# -- propagation --------------------------------------------------------------------------------

def qbm_wigner_propagate(w0: PhaseSpaceField, t: float, qbm: QbmParams) -> PhaseSpaceField:
    if not t > 0:
        raise ConfigError("propagation time must be positive")
    m = qbm.params.mass
    sheared = _shear(w0.values, w0.p_grid, w0.dq, t, m)
    out = w0.with_values(_gaussian_smear(sheared, w0.dp, w0.dq, GaussianKernelA(t, qbm).matrix))
    _check_support(out)
    return out


@dataclass(frozen=True)
class DensityGrid:
    """rho(x_i, x_j) on a uniform grid."""

    x: np.ndarray
    values: np.ndarray
    t: float = 0.0
    params: PhysParams = DEFAULT_PARAMS

    @property
    def dx(self) -> float:
        return float(self.x[1] - self.x[0])

    @classmethod
    def from_state(cls, state, x_min: float, x_max: float, n: int) -> "DensityGrid":
        x = np.linspace(x_min, x_max, n, endpoint=False)
        psi = np.asarray(state.amplitude(x), dtype=complex)
        return cls(x, np.outer(psi, psi.conj()), 0.0, state.params)

    def diagonal(self) -> np.ndarray:
        return np.real(np.diag(self.values))

    def trace(self) -> float:
        return float(np.sum(self.diagonal()) * self.dx)


def _grid_propagator(n: int, dx: float, t: float, params: PhysParams) -> np.ndarray:
    k = 2 * np.pi * fft.fftfreq(n, d=dx)
    phase = np.exp(-1j * params.hbar * k ** 2 * t / (2 * params.mass))
    return fft.ifft(phase[:, None] * fft.fft(np.eye(n), axis=0), axis=0)


def qbm_density_propagate(rho0: DensityGrid, t: float, qbm: QbmParams, workers: int = 1) -> DensityGrid:
    """
    rho_t(x, y) = sum K(x|x0) K*(y|y0) exp(-(Dt/3hbar^2)[xi^2 + xi xi0 + xi0^2]) rho0(x0, y0),
    xi = x - y, with the grid free propagator standing in for K.
    """
    if not t > 0:
        raise ConfigError("propagation time must be positive")
    x = rho0.x
    n = x.size
    u = _grid_propagator(n, rho0.dx, t, qbm.params)
    c = qbm.D * t / (3 * qbm.params.hbar ** 2)
    xi0 = x[:, None] - x[None, :]
    u_conj = u.conj()

    def row(i):
        xi = x[i] - x
        decay = np.exp(-c * (xi[:, None, None] ** 2 + xi[:, None, None] * xi0[None] + xi0[None] ** 2))
        weighted = u[i][:, None] * rho0.values
        inner = np.einsum("yab,ab->yb", decay, weighted)
        return np.sum(u_conj * inner, axis=1)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        rows = list(pool.map(row, range(n)))
    return DensityGrid(x, np.vstack(rows), rho0.t + t, rho0.params)


def wigner_from_state(state, p_grid, q_grid, y_max: Optional[float] = None, n_y: int = 512) -> PhaseSpaceField:
    """W(p, q) = (1/pi hbar) int dy psi*(q + y) psi(q - y) exp(2ipy/hbar) by direct quadrature."""
    hbar = state.hbar
    p_grid = np.asarray(p_grid, dtype=float)
    q_grid = np.asarray(q_grid, dtype=float)
    y_max = 0.5 * (q_grid[-1] - q_grid[0]) if y_max is None else y_max
    y = np.linspace(-y_max, y_max, n_y)
    wy = np.full(n_y, y[1] - y[0])
    wy[[0, -1]] *= 0.5
    corr = np.conj(state.amplitude(q_grid[:, None] + y[None, :])) * state.amplitude(q_grid[:, None] - y[None, :])
    phase = np.exp(2j * p_grid[:, None] * y[None, :] / hbar)
    values = np.real(phase @ (corr * wy[None, :]).T) / (np.pi * hbar)
    return PhaseSpaceField(p_grid, q_grid, values, state.params)


def density_to_wigner(rho: DensityGrid, p_grid) -> PhaseSpaceField:
    """Wigner function on the density grid's own points, W(p, x_i) from rho(x_i + y, x_i - y) e^{-2ipy/hbar}."""
    n = rho.x.size
    hbar = rho.params.hbar
    p_grid = np.asarray(p_grid, dtype=float)
    values = np.zeros((p_grid.size, n))
    for i in range(n):
        reach = min(i, n - 1 - i)
        j = np.arange(-reach, reach + 1)
        corr = rho.values[i + j, i - j]
        phase = np.exp(-2j * p_grid[:, None] * j[None, :] * rho.dx / hbar)
        values[:, i] = np.real(phase @ corr) * rho.dx / (np.pi * hbar)
    return PhaseSpaceField(p_grid, rho.x.copy(), values, rho.params)


def wigner_position_marginal(w: PhaseSpaceField) -> np.ndarray:
    return integrate.trapezoid(w.values, w.p_grid, axis=0)


# -- currents -----------------------------------------------------------------------------------

def _origin_index(grid: np.ndarray) -> int:
    j0 = int(np.argmin(np.abs(grid)))
    spacing = grid[1] - grid[0]
    if abs(grid[j0]) > 1e-9 * spacing or j0 == 0 or j0 == grid.size - 1:
        raise ConfigError("the origin must be an interior grid point")
    return j0


def open_current(state, qbm: QbmParams, t: Optional[float] = None):
    """
    (J, J_D) at the origin, left-moving flux positive.

    J_D = 2 hbar^2 b^2 d rho/dx is the diffusive correction carried by the
    momentum part of the Lindblad operator; it vanishes with gamma.
    """
    hbar, m = qbm.params.hbar, qbm.params.mass
    _, b = qbm.lindblad_coefficients()
    if isinstance(state, DensityGrid):
        if t:
            state = qbm_density_propagate(state, t, qbm)
        j0 = _origin_index(state.x)
        row = state.values[:, j0]
        d_rho = (row[j0 + 1] - row[j0 - 1]) / (2 * state.dx)
        current = -(hbar / m) * float(np.imag(d_rho))
        diag = state.diagonal()
        d_diag = (diag[j0 + 1] - diag[j0 - 1]) / (2 * state.dx)
    else:
        if t:
            state = qbm_wigner_propagate(state, t, qbm)
        j0 = _origin_index(state.q_grid)
        current = -float(integrate.trapezoid(state.p_grid / m * state.values[:, j0], state.p_grid))
        marginal = wigner_position_marginal(state)
        d_diag = (marginal[j0 + 1] - marginal[j0 - 1]) / (2 * state.dq)
    return current, 2 * hbar ** 2 * b ** 2 * float(d_diag)


def right_mass(w: PhaseSpaceField) -> float:
    """Probability in q > 0 with the q = 0 column weighted 1/2."""
    weight = np.where(w.q_grid > 0, 1.0, 0.0)
    weight[np.abs(w.q_grid) < 1e-9 * w.dq] = 0.5
    return float(np.sum(w.values * weight[None, :]) * w.dp * w.dq)


# -- POVM ---------------------------------------------------------------------------------------

def admissible_s_range(cov: np.ndarray, hbar: float = 1.0):
    """s-interval for which cov - hbar diag(s^2, 1/4s^2) stays positive semidefinite, or None."""
    a, b, c = cov[0, 0], cov[0, 1], cov[1, 1]
    det = a * c - b * b
    disc = (det + 0.25 * hbar ** 2) ** 2 - hbar ** 2 * a * c
    if disc < 0:
        return None
    lo = (det + 0.25 * hbar ** 2 - math.sqrt(disc)) / (2 * hbar * c)
    hi = (det + 0.25 * hbar ** 2 + math.sqrt(disc)) / (2 * hbar * c)
    lo, hi = max(lo, hbar / (4 * c)), min(hi, a / hbar)
    if hi < lo or hi <= 0:
        return None
    return math.sqrt(max(lo, 0.0)), math.sqrt(hi)


def _povm_covariance(t1: float, qbm: QbmParams, s: Optional[float]):
    hbar = qbm.params.hbar
    cov = initial_frame_covariance(t1, qbm)
    s_range = admissible_s_range(cov, hbar)
    if s_range is None:
        raise ConfigError(f"no admissible s at t1={t1:.4g}; the squeezed Husimi split needs "
                          f"t1 >= {earliest_povm_time(qbm):.4g} (positivity time {positivity_time(qbm):.4g})")
    if s is None:
        s = math.sqrt(s_range[0] * s_range[1])
    elif not s_range[0] <= s <= s_range[1]:
        raise ConfigError(f"B is not positive semidefinite for s={s:.4g}; admissible s in "
                          f"[{s_range[0]:.4g}, {s_range[1]:.4g}]")
    return cov, s


def arrival_povm(w0: PhaseSpaceField, t1: float, t2: float, qbm: QbmParams, s: Optional[float] = None) -> float:
    """
    p(t1, t2) = int dz Q_B(z) [theta(q + p t1/m) - theta(q + p t2/m)] on the initial phase space.

    Q_B is the Husimi function for squeezing s, further smeared by the positive
    remainder B; together they amount to smearing W0 with the initial-frame image of A(t1).
    """
    if t2 <= t1:
        raise ConfigError("POVM window needs t2 > t1")
    if t2 - t1 > 0.5 * qbm.tau_l:
        warnings.warn(f"window {t2 - t1:.3g} is not short against tau_l={qbm.tau_l:.3g}",
                      ValidityWarning, stacklevel=2)
    cov, _ = _povm_covariance(t1, qbm, s)
    q_func = _gaussian_smear(w0.values, w0.dp, w0.dq, cov)
    P, Q = _mesh(w0)
    m = qbm.params.mass
    window = _cell_step(Q + P * t1 / m, w0.dq) - _cell_step(Q + P * t2 / m, w0.dq)
    return float(np.sum(q_func * window) * w0.dp * w0.dq)


def povm_partition(w0: PhaseSpaceField, times: Sequence[float], qbm: QbmParams):
    """Window probabilities over consecutive times and the mass still at q > 0 at the end."""
    times = list(times)
    probs = np.array([arrival_povm(w0, a, b, qbm) for a, b in zip(times, times[1:])])
    cov, _ = _povm_covariance(times[-2], qbm, None)
    q_func = _gaussian_smear(w0.values, w0.dp, w0.dq, cov)
    P, Q = _mesh(w0)
    survivor = float(np.sum(q_func * _cell_step(Q + P * times[-1] / qbm.params.mass, w0.dq)) * w0.dp * w0.dq)
    return probs, survivor


# -- restricted propagation ---------------------------------------------------------------------

@dataclass
class RestrictedResult:
    field: PhaseSpaceField
    times: np.ndarray
    survival: np.ndarray

    @property
    def first_passage(self):
        """(midpoint times, -d survival/dt)."""
        mids = 0.5 * (self.times[1:] + self.times[:-1])
        return mids, -np.diff(self.survival) / np.diff(self.times)


def restricted_wigner_propagate(w0: PhaseSpaceField, t: float, qbm: QbmParams, epsilon_steps: int = 100,
                                boundary: str = "sharp") -> RestrictedResult:
    """
    Propagation with the region q < 0 removed after every sub-step.

    Works in the initial frame, where free flow is the identity and the cut is
    the moving line q + p t/m = 0. ``boundary='inflow'`` removes only p > 0
    mass behind the line, so nothing re-enters from the left.
    """
    if epsilon_steps < 10:
        raise ConfigError("restricted propagation needs at least 10 sub-steps")
    if boundary not in ("sharp", "inflow"):
        raise ConfigError(f"unknown boundary '{boundary}'")
    m = qbm.params.mass
    dt = t / epsilon_steps
    P, Q = _mesh(w0)
    cell = w0.dp * w0.dq
    increment = GaussianKernelA(dt, qbm).matrix
    keep_prev = _cell_step(Q, w0.dq)
    values = w0.values * (keep_prev if boundary == "sharp" else np.where(P > 0, keep_prev, 1.0))
    survival = [float(np.sum(values * (1.0 if boundary == "sharp" else keep_prev)) * cell)]
    for k in range(1, epsilon_steps + 1):
        t_k = k * dt
        s_inv = _shear_matrix(-t_k, m)
        values = _gaussian_smear(values, w0.dp, w0.dq, s_inv @ increment @ s_inv.T)
        keep = _cell_step(Q + P * t_k / m, w0.dq)
        ratio = np.divide(keep, keep_prev, out=np.zeros_like(keep), where=keep_prev > 0)
        values = values * (ratio if boundary == "sharp" else np.where(P > 0, ratio, 1.0))
        keep_prev = keep
        mass = float(np.sum(values * (1.0 if boundary == "sharp" else keep)) * cell)
        if survival[-1] > 0 and (survival[-1] - mass) / survival[-1] > MAX_STEP_LOSS:
            raise NumericalError("sub-step too coarse: too much mass removed in one step",
                                 estimate=(survival[-1] - mass) / survival[-1], tolerance=MAX_STEP_LOSS)
        survival.append(mass)
    lab = w0.with_values(_shear(values, w0.p_grid, w0.dq, t, m))
    return RestrictedResult(lab, np.linspace(0.0, t, epsilon_steps + 1), np.asarray(survival))


# -- recrossing diagnostic ----------------------------------------------------------------------

def _check_regime(regime: str, t1: float, t2: float, qbm: QbmParams):
    tau_l = qbm.tau_l
    window = t2 - t1
    fits = {
        "unitary": t2 <= 0.3 * tau_l,
        "intermediate": window < tau_l,
        "strong": window > tau_l,
    }[regime]
    if not fits:
        warnings.warn(f"{regime} regime used outside its window (t1={t1:.3g}, t2={t2:.3g}, tau_l={tau_l:.3g})",
                      ValidityWarning, stacklevel=3)


def delta_diagnostic(w0: PhaseSpaceField, t1: float, t2: float, qbm: QbmParams, regime: str = "unitary") -> float:
    """
    Tr(P(t2) Pbar(t1) rho Pbar(t1)): in x < 0 at t1 and back in x > 0 at t2.

    Unitary and intermediate regimes apply the sine-integral kernel to the
    open-system Wigner function at t1; the strong regime treats t1 -> t2 as
    diffusive free flow with an erfc crossing kernel.
    """
    if regime not in REGIMES:
        raise ConfigError(f"unknown regime '{regime}', expected one of {REGIMES}")
    if t2 <= t1:
        raise ConfigError("diagnostic needs t2 > t1")
    _check_regime(regime, t1, t2, qbm)
    w1 = qbm_wigner_propagate(w0, t1, qbm) if t1 > 0 else w0
    if regime != "strong":
        return wigner_sandwich(w1, t2 - t1, "dm2")
    m = qbm.params.mass
    window = t2 - t1
    P, Q = _mesh(w1)
    scale = math.sqrt(3 * m ** 2 / (4 * qbm.D * window ** 3))
    back = 0.5 * special.erfc(-(Q + P * window / m) * scale)
    left = np.where(Q < 0, 1.0, 0.0)
    return float(np.sum(left * w1.values * back) * w1.dp * w1.dq)


def unitary_delta_estimate(packet, t1: float) -> float:
    """Large-window unitary value for a Gaussian, scaled by its density at the origin at t1."""
    centre = packet.q0 + packet.p0 * t1 / packet.mass
    return ((2 * math.pi) ** -1.5 * packet.hbar / (packet.sigma * abs(packet.p0))
            * math.exp(-centre ** 2 / (2 * packet.sigma ** 2)))


def intermediate_delta_bound(packet, t1: float, qbm: QbmParams) -> float:
    m, hbar = qbm.params.mass, qbm.params.hbar
    return math.sqrt(2 * m * hbar / (packet.p0 ** 2 * t1)) * (qbm.tau_l / t1) / 16.0
