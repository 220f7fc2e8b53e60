"""Mean-field dynamics of the normalised spins ``s_i = <S_i> / N``.

Deterministic part (per site, with ``gamma_i`` evaluated at ``k_j = N (1 + s_j) / 2``)::

    ds_i/dt = alpha * (-N gamma_i s_i^2 - 2 s_i + gamma_i (2 + N))

The stochastic version adds ``sqrt(2 alpha [(1 + s)(1 - s) + (2/N)(1 - gamma s)]) dW``.
In the occupation fraction ``z = (1 + s) / 2`` the same process has drift
``A = (alpha/2)[...]`` and diffusion ``B = (alpha/2)[...]``, which is what
:func:`sde_coefficients` returns; the change of variables doubles the drift
and multiplies the noise amplitude by two.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .kmc import Trajectory, sample_grid
from .model import ModelError, NetworkSpec, ThermoParams, fields_from_spins, gamma_from_field
from .oracle import NumericalError
from .schedule import BetaSchedule

# allowed excursion outside [-1, 1] for the deterministic integrator
ODE_BAND = 0.01
SDE_DT_WARN = 0.1


def mean_field_gammas(spec: NetworkSpec, beta: float, s) -> np.ndarray:
    return gamma_from_field(fields_from_spins(spec, s), beta)


def _drift(s, g, N, alpha):
    return alpha * (-N * g * s * s - 2.0 * s + g * (2.0 + N))


def ode_rhs(spec: NetworkSpec, thermo: ThermoParams, s) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    g = mean_field_gammas(spec, thermo.beta, s)
    return _drift(s, g, spec.N, thermo.alpha)


def steady_state_roots(N: int, g: float):
    """Roots of ``-N g s^2 - 2 s + g (2 + N) = 0``, smaller first."""
    if g == 0:
        return (0.0,)
    disc = math.sqrt(1.0 + N * g * g * (N + 2.0))
    # cancellation-free pair (linear coefficient is always +2)
    q = -(1.0 + disc)
    r1 = q / (N * g)
    r2 = -(N + 2.0) * g / q  # c / q
    return tuple(sorted((r1, r2)))


def _rk4_step(f, s, dt):
    k1 = f(s)
    k2 = f(s + 0.5 * dt * k1)
    k3 = f(s + 0.5 * dt * k2)
    k4 = f(s + dt * k3)
    return s + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _steps_per_sample(dt, sample_dt):
    if not dt > 0:
        raise ModelError("dt must be positive")
    if sample_dt is None:
        return 1
    n = int(round(sample_dt / dt))
    if n < 1 or abs(n * dt - sample_dt) > 1e-9 * sample_dt:
        raise ModelError("sample_dt must be a whole multiple of dt")
    return n


def integrate_ode(spec: NetworkSpec, thermo, s0, t_max: float, dt: float,
                  sample_dt: float | None = None) -> Trajectory:
    """Synchronous fixed-step RK4 integration of the coupled mean-field equations."""
    schedule = BetaSchedule.coerce(thermo)
    per = _steps_per_sample(dt, sample_dt)
    s = np.array(s0, dtype=float)
    if s.shape != (spec.M,) or np.any(np.abs(s) > 1):
        raise ModelError(f"initial spins must be a length-{spec.M} vector in [-1, 1]")
    times = sample_grid(t_max, dt * per)
    out = np.empty((times.size, spec.M))
    out[0] = s
    N, alpha = spec.N, schedule.alpha
    for n in range(1, times.size):
        for step in range(per):
            t = times[n - 1] + step * dt
            beta = schedule.beta(t)

            def f(x, beta=beta):
                return _drift(x, mean_field_gammas(spec, beta, x), N, alpha)

            s = _rk4_step(f, s, dt)
        if not np.all(np.isfinite(s)) or np.any(np.abs(s) > 1.0 + ODE_BAND):
            raise NumericalError(
                f"mean-field spins left [-1, 1] at t={times[n]:.6g}; dt={dt:.3g} is too large "
                f"(try dt <= {0.1 / (alpha * (N + 2)):.3g})"
            )
        out[n] = s
    return Trajectory(times, out, engine="ode", meta={"dt": dt, "schedule": schedule.describe()})


def analytic_single_site(N: int, alpha: float, gamma: float, s0: float, t):
    """Closed-form solution of the single-site mean-field equation.

    ``s(t) = A tanh(alpha gamma A N t + K0) - 1/(N gamma)`` with
    ``A = sqrt(1 + 2/N + 1/(N gamma)^2)`` and ``K0`` fixed by ``s(0) = s0``.
    For ``gamma = 0`` the equation is linear and ``s(t) = s0 exp(-2 alpha t)``.
    """
    t = np.asarray(t, dtype=float)
    if gamma == 0:
        return s0 * np.exp(-2.0 * alpha * t)
    A = math.sqrt(1.0 + 2.0 / N + 1.0 / (N * gamma) ** 2)
    shift = 1.0 / (N * gamma)
    x = (s0 + shift) / A
    if abs(x) > 1.0:
        raise ModelError(f"s0={s0} is outside the range reachable by the tanh solution")
    if abs(x) == 1.0:
        # s0 sits on a steady state
        return np.full_like(t, s0)
    K0 = math.atanh(x)
    return A * np.tanh(alpha * gamma * A * N * t + K0) - shift


def single_site_limit(N: int, gamma: float) -> float:
    """``t -> inf`` limit of :func:`analytic_single_site` for ``gamma != 0``."""
    A = math.sqrt(1.0 + 2.0 / N + 1.0 / (N * gamma) ** 2)
    return math.copysign(A, gamma) - 1.0 / (N * gamma)


def sde_coefficients(spec: NetworkSpec, thermo: ThermoParams, s, i: int):
    """``(drift, diffusion)`` of site ``i`` in occupation-fraction units.

    ``drift = ode_rhs_i / 2`` and
    ``diffusion = (alpha/2) [(1 + s_i)(1 - s_i) + (2/N)(1 - gamma_i s_i)]`` clipped at 0.
    """
    s = np.asarray(s, dtype=float)
    if not 0 <= i < spec.M:
        raise IndexError(f"site {i} out of range for M={spec.M}")
    g = float(mean_field_gammas(spec, thermo.beta, s)[i])
    si = float(s[i])
    drift = 0.5 * float(_drift(si, g, spec.N, thermo.alpha))
    diffusion = 0.5 * thermo.alpha * ((1 + si) * (1 - si) + 2.0 / spec.N * (1 - g * si))
    return drift, max(diffusion, 0.0)


@dataclass
class SdeParams:
    dt: float
    seed: int = 0
    clip_noise: bool = True
    noise: bool = True
    sample_dt: float | None = None

    def __post_init__(self):
        if not self.dt > 0:
            raise ModelError("dt must be positive")


@dataclass
class SdeResult:
    trajectory: Trajectory
    steps: int
    clip_events: int

    @property
    def clip_fraction(self) -> float:
        return self.clip_events / max(1, self.steps)


def _reflect(s):
    # fold back into [-1, 1]; loops only for steps longer than the interval
    while True:
        hi = s > 1.0
        lo = s < -1.0
        if not (hi.any() or lo.any()):
            return s
        s = np.where(hi, 2.0 - s, s)
        s = np.where(lo, -2.0 - s, s)


def integrate_sde(spec: NetworkSpec, schedule, s0, t_max: float, sde: SdeParams) -> SdeResult:
    """Euler-Maruyama integration with reflecting boundaries at ``s = +-1``.

    Each site gets an independent ``N(0, dt)`` increment per step.  A negative
    diffusion bracket (only possible outside ``[-1, 1]``) is clipped to zero and
    counted in ``clip_events`` per site and step.
    """
    schedule = BetaSchedule.coerce(schedule)
    N, alpha, dt = spec.N, schedule.alpha, sde.dt
    if dt * alpha * N > SDE_DT_WARN:
        warnings.warn(f"dt*alpha*N = {dt * alpha * N:.3g} > {SDE_DT_WARN}; the Euler-Maruyama "
                      "step is coarse relative to the relaxation time", RuntimeWarning, stacklevel=2)
    per = _steps_per_sample(dt, sde.sample_dt)
    s = np.array(s0, dtype=float)
    if s.shape != (spec.M,) or np.any(np.abs(s) > 1):
        raise ModelError(f"initial spins must be a length-{spec.M} vector in [-1, 1]")
    rng = np.random.default_rng(sde.seed)
    times = sample_grid(t_max, dt * per)
    out = np.empty((times.size, spec.M))
    out[0] = s
    clips = 0
    sqrt_dt = math.sqrt(dt)
    steps = 0
    for n in range(1, times.size):
        for step in range(per):
            beta = schedule.beta(times[n - 1] + step * dt)
            g = mean_field_gammas(spec, beta, s)
            drift = _drift(s, g, N, alpha)
            if sde.noise:
                bracket = (1.0 + s) * (1.0 - s) + 2.0 / N * (1.0 - g * s)
                neg = bracket < 0.0
                if neg.any():
                    clips += int(neg.sum())
                    if sde.clip_noise:
                        bracket = np.where(neg, 0.0, bracket)
                    else:
                        raise NumericalError("negative diffusion coefficient")
                xi = rng.standard_normal(spec.M)
                s = s + drift * dt + np.sqrt(2.0 * alpha * bracket) * sqrt_dt * xi
            else:
                s = s + drift * dt
            s = _reflect(s)
            steps += 1
        if not np.all(np.isfinite(s)):
            raise NumericalError(f"non-finite spins at t={times[n]:.6g}; reduce dt")
        out[n] = s
    traj = Trajectory(times, out, seed=sde.seed, engine="sde",
                      meta={"dt": dt, "schedule": schedule.describe()})
    return SdeResult(traj, steps * spec.M, clips)


@dataclass
class SdeEnsemble:
    times: np.ndarray
    mean: np.ndarray  # (n_samples, M)
    var: np.ndarray
    final: np.ndarray  # (n_paths, M)
    n_paths: int
    steps: int
    clip_events: int

    @property
    def stderr(self) -> np.ndarray:
        if self.n_paths < 2:
            return np.zeros_like(self.mean)
        return np.sqrt(self.var / (self.n_paths - 1))

    @property
    def clip_fraction(self) -> float:
        return self.clip_events / max(1, self.steps)


def sde_ensemble(spec: NetworkSpec, schedule, s0, t_max: float, sde: SdeParams,
                 n_paths: int) -> SdeEnsemble:
    """Integrate ``n_paths`` independent paths side by side.

    All paths share one generator seeded with ``sde.seed``; every step draws an
    ``(n_paths, M)`` block of independent normals, so the result is the same as
    running the paths separately up to the order in which noise is consumed.
    """
    schedule = BetaSchedule.coerce(schedule)
    if n_paths < 1:
        raise ModelError("n_paths must be >= 1")
    N, alpha, dt = spec.N, schedule.alpha, sde.dt
    if dt * alpha * N > SDE_DT_WARN:
        warnings.warn(f"dt*alpha*N = {dt * alpha * N:.3g} > {SDE_DT_WARN}", RuntimeWarning, stacklevel=2)
    per = _steps_per_sample(dt, sde.sample_dt)
    s = np.array(s0, dtype=float)
    if s.ndim == 1:
        s = np.tile(s, (n_paths, 1))
    if s.shape != (n_paths, spec.M) or np.any(np.abs(s) > 1):
        raise ModelError("initial spins must be in [-1, 1] with shape (M,) or (n_paths, M)")
    rng = np.random.default_rng(sde.seed)
    times = sample_grid(t_max, dt * per)
    mean = np.empty((times.size, spec.M))
    var = np.empty((times.size, spec.M))
    mean[0] = s.mean(axis=0)
    var[0] = s.var(axis=0)
    JT = spec.coupling.T
    sqrt_dt = math.sqrt(dt)
    clips = 0
    steps = 0
    for n in range(1, times.size):
        for step in range(per):
            beta = schedule.beta(times[n - 1] + step * dt)
            g = gamma_from_field(-N * (s @ JT) + spec.lam, beta)
            drift = _drift(s, g, N, alpha)
            if sde.noise:
                bracket = (1.0 + s) * (1.0 - s) + 2.0 / N * (1.0 - g * s)
                neg = bracket < 0.0
                if neg.any():
                    clips += int(neg.sum())
                    if not sde.clip_noise:
                        raise NumericalError("negative diffusion coefficient")
                    bracket = np.where(neg, 0.0, bracket)
                xi = rng.standard_normal(s.shape)
                s = s + drift * dt + np.sqrt(2.0 * alpha * bracket) * sqrt_dt * xi
            else:
                s = s + drift * dt
            s = _reflect(s)
            steps += 1
        if not np.all(np.isfinite(s)):
            raise NumericalError(f"non-finite spins at t={times[n]:.6g}; reduce dt")
        mean[n] = s.mean(axis=0)
        var[n] = s.var(axis=0)
    return SdeEnsemble(times, mean, var, s, n_paths, steps * n_paths * spec.M, clips)
