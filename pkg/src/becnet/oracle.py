"""Exact master-equation evolution on the full occupation lattice.

The probability vector has one entry per multi-index ``k`` in
``{0..N}^M``, flattened in C order.  This is a reference for small instances
(dense storage, explicit RK4), not a production engine.
"""

from __future__ import annotations

import logging
import math

import numpy as np

from .model import (
    ModelError,
    NetworkSpec,
    ThermoParams,
    energies_of,
    gamma_from_field,
    occupations_to_spins,
    weights_from_gamma,
)

log = logging.getLogger(__name__)

MAX_STATES = 10**6
# generator matrices are only built densely for tests and M = 1 solves
MAX_DENSE_GENERATOR = 5000
NEGATIVE_CLIP = 1e-12
NEGATIVE_ABORT = 1e-7


class InstanceTooLarge(ModelError):
    pass


class NumericalError(RuntimeError):
    pass


def n_states(spec: NetworkSpec) -> int:
    return (spec.N + 1) ** spec.M


def check_size(spec: NetworkSpec, limit: int = MAX_STATES) -> int:
    n = n_states(spec)
    if n > limit:
        raise InstanceTooLarge(f"(N+1)^M = {n} states exceeds the limit of {limit}")
    return n


def all_states(spec: NetworkSpec) -> np.ndarray:
    """Every occupation vector, shape ``((N+1)^M, M)``, in flattening order."""
    check_size(spec)
    grids = np.indices((spec.N + 1,) * spec.M).reshape(spec.M, -1).T
    return grids.astype(np.int64)


def state_index(k, N: int) -> int:
    k = np.asarray(k, dtype=np.int64)
    return int(np.ravel_multi_index(tuple(k), (N + 1,) * k.size))


def uniform_distribution(spec: NetworkSpec) -> np.ndarray:
    n = check_size(spec)
    return np.full(n, 1.0 / n)


class MasterEquation:
    """Precomputed weight grids for a fixed ``(spec, thermo)`` pair."""

    def __init__(self, spec: NetworkSpec, thermo: ThermoParams):
        check_size(spec)
        self.spec = spec
        self.thermo = thermo
        M, N = spec.M, spec.N
        self.shape = (N + 1,) * M
        ks = all_states(spec)
        h = (spec.N - 2.0 * ks) @ spec.coupling.T + spec.lam
        g = gamma_from_field(h, thermo.beta)
        up, down = weights_from_gamma(ks, N, g, thermo.alpha)
        # (M, N+1, ..., N+1)
        self.w_up = np.moveaxis(up.reshape(self.shape + (M,)), -1, 0).copy()
        self.w_down = np.moveaxis(down.reshape(self.shape + (M,)), -1, 0).copy()
        self.exit_rate = (self.w_up + self.w_down).sum(axis=0)
        self.spins = occupations_to_spins(ks, N)

    @property
    def max_exit_rate(self) -> float:
        return float(self.exit_rate.max())

    def default_dt(self) -> float:
        # Gershgorin: every generator eigenvalue lies within 2 * max exit rate of 0
        rate = self.max_exit_rate
        return 0.1 / rate if rate > 0 else math.inf

    def rhs(self, p: np.ndarray) -> np.ndarray:
        P = p.reshape(self.shape)
        out = -self.exit_rate * P
        for i in range(self.spec.M):
            flow_up = self.w_up[i] * P
            flow_down = self.w_down[i] * P
            lo = [slice(None)] * self.spec.M
            hi = [slice(None)] * self.spec.M
            lo[i] = slice(0, -1)
            hi[i] = slice(1, None)
            lo, hi = tuple(lo), tuple(hi)
            out[hi] += flow_up[lo]
            out[lo] += flow_down[hi]
        return out.reshape(-1)

    def generator(self) -> np.ndarray:
        """Dense ``Q`` with ``dp/dt = Q p``; columns sum to zero."""
        n = n_states(self.spec)
        if n > MAX_DENSE_GENERATOR:
            raise InstanceTooLarge(f"dense generator limited to {MAX_DENSE_GENERATOR} states")
        Q = np.zeros((n, n))
        eye = np.eye(n)
        for col in range(n):
            Q[:, col] = self.rhs(eye[col])
        return Q

    def mean_spins(self, p: np.ndarray) -> np.ndarray:
        return p @ self.spins

    def spin_variances(self, p: np.ndarray) -> np.ndarray:
        mean = p @ self.spins
        return p @ self.spins**2 - mean**2


def master_rhs(spec: NetworkSpec, thermo: ThermoParams, p) -> np.ndarray:
    """``dp/dt`` of the master equation for probability vector ``p``."""
    p = np.asarray(p, dtype=float)
    if p.shape != (n_states(spec),):
        raise ModelError(f"probability vector must have length {n_states(spec)}")
    return MasterEquation(spec, thermo).rhs(p)


def _rk4(f, p, dt):
    k1 = f(p)
    k2 = f(p + 0.5 * dt * k1)
    k3 = f(p + 0.5 * dt * k2)
    k4 = f(p + dt * k3)
    return p + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def _tidy(p: np.ndarray, t: float) -> np.ndarray:
    if not np.all(np.isfinite(p)):
        raise NumericalError(f"non-finite probability at t={t:.6g}; reduce dt")
    worst = p.min()
    if worst < -NEGATIVE_ABORT:
        raise NumericalError(f"probability {worst:.3g} < 0 at t={t:.6g}; reduce dt")
    if worst < -NEGATIVE_CLIP:
        log.debug("clipping negative probability %.3g at t=%.6g", worst, t)
    p = np.maximum(p, 0.0)
    return p / p.sum()


def _kl(p, pi):
    mask = p > 0
    return float(np.sum(p[mask] * np.log(p[mask] / pi[mask])))


def evolve_at(spec: NetworkSpec, thermo: ThermoParams, p0, times, dt=None,
              track_kl: bool = False):
    """Evolve ``p0`` and return the distributions at the requested ``times``.

    Returns ``(ps, kl)`` where ``ps`` has shape ``(len(times), n_states)`` and
    ``kl`` holds the Kullback-Leibler divergence to the stationary
    distribution at each requested time (empty unless ``track_kl``).
    """
    eq = MasterEquation(spec, thermo)
    p = np.asarray(p0, dtype=float).copy()
    if p.shape != (n_states(spec),):
        raise ModelError(f"probability vector must have length {n_states(spec)}")
    if abs(p.sum() - 1.0) > 1e-9 or p.min() < -NEGATIVE_CLIP:
        raise ModelError("initial vector is not a probability distribution")
    times = np.asarray(times, dtype=float)
    if np.any(np.diff(times) < 0) or (times.size and times[0] < 0):
        raise ModelError("times must be non-negative and non-decreasing")
    dt_max = eq.default_dt() if dt is None else float(dt)
    if not dt_max > 0:
        raise ModelError("dt must be positive")
    pi = None
    if track_kl and not thermo.zero_temperature:
        pi = stationary_distribution(spec, thermo)
    out = np.empty((times.size, p.size))
    kls = []
    t = 0.0
    for n, target in enumerate(times):
        span = target - t
        if span > 0:
            steps = max(1, math.ceil(span / dt_max - 1e-9))
            h = span / steps
            for s in range(steps):
                p = _tidy(_rk4(eq.rhs, p, h), t + (s + 1) * h)
            t = float(target)
        out[n] = p
        if pi is not None:
            kls.append(_kl(p, pi))
            if len(kls) > 1 and kls[-1] > kls[-2] + 1e-9:
                log.warning("KL divergence increased from %.6g to %.6g at t=%.6g", kls[-2], kls[-1], t)
    return out, np.array(kls)


def evolve(spec: NetworkSpec, thermo: ThermoParams, p0, t_final: float, dt=None) -> np.ndarray:
    """Probability vector at ``t_final`` (fixed-step RK4)."""
    if t_final < 0:
        raise ModelError("t_final must be >= 0")
    ps, _ = evolve_at(spec, thermo, p0, [t_final], dt)
    return ps[0]


def mean_spin_trajectory(spec: NetworkSpec, thermo: ThermoParams, times, p0=None, dt=None):
    """Exact ``<s_i>(t)`` and ``Var s_i(t)`` at ``times``; ``p0`` defaults to uniform."""
    eq = MasterEquation(spec, thermo)
    if p0 is None:
        p0 = uniform_distribution(spec)
    ps, _ = evolve_at(spec, thermo, p0, times, dt)
    return ps @ eq.spins, ps @ eq.spins**2 - (ps @ eq.spins) ** 2


def stationary_distribution(spec: NetworkSpec, thermo: ThermoParams) -> np.ndarray:
    """Boltzmann weights ``exp(-beta E(k))``, normalised.

    At ``beta = INFINITE`` the distribution is uniform over the minimum-energy
    states.
    """
    check_size(spec)
    E = energies_of(spec, all_states(spec))
    E = E - E.min()
    if thermo.zero_temperature:
        scale = max(1.0, float(np.abs(E).max()))
        p = (E <= 1e-12 * scale).astype(float)
    else:
        p = np.exp(-thermo.beta * E)
    return p / p.sum()
