"""Kinetic Monte Carlo sampling of the bosonic master equation.

Each step computes the raising/lowering weight of every site, picks one event
with probability proportional to its weight and advances time by
``-ln(r) / W_tot`` with ``r`` uniform on ``(0, 1]``.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .model import (
    ModelError,
    NetworkSpec,
    ThermoParams,
    check_occupations,
    gamma_from_field,
    occupations_to_spins,
    weights_from_gamma,
)
from .schedule import BetaSchedule

WORKERS_ENV = "BECNET_WORKERS"
# ensembles are merged in fixed-size blocks so results do not depend on the worker count
ENSEMBLE_BLOCK = 64


@dataclass
class KmcState:
    k: np.ndarray
    t: float
    rng: np.random.Generator
    terminal: bool = False


@dataclass
class Trajectory:
    """Spins sampled on a regular time grid."""

    times: np.ndarray
    spins: np.ndarray  # (n_samples, M)
    seed: int | None = None
    engine: str = "kmc"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise ModelError("trajectory times must be strictly increasing")


@dataclass
class EnsembleResult:
    times: np.ndarray
    mean: np.ndarray  # (n_samples, M)
    var: np.ndarray  # population variance, ddof = 0
    n_traj: int
    base_seed: int

    @property
    def stderr(self) -> np.ndarray:
        if self.n_traj < 2:
            return np.zeros_like(self.mean)
        return np.sqrt(self.var / (self.n_traj - 1))


def trajectory_seeds(base_seed: int, n: int) -> list[int]:
    """Independent per-trajectory seeds derived from one base seed."""
    ss = np.random.SeedSequence(base_seed)
    return [int(x) for x in ss.generate_state(n, dtype=np.uint64)]


def sample_grid(t_max: float, sample_dt: float) -> np.ndarray:
    if t_max < 0 or not sample_dt > 0:
        raise ModelError("need t_max >= 0 and sample_dt > 0")
    n = int(math.floor(t_max / sample_dt + 1e-9)) + 1
    return np.arange(n) * sample_dt


def uniform_initial(spec: NetworkSpec, rng: np.random.Generator) -> np.ndarray:
    return rng.integers(0, spec.N + 1, size=spec.M)


def _rates(spec, beta, alpha, k):
    h = spec.coupling @ (spec.N - 2.0 * k) + spec.lam
    return weights_from_gamma(k, spec.N, gamma_from_field(h, beta), alpha)


def _pick(w_up, w_down, u):
    """Site and direction of the event selected by ``u`` in [0, 1)."""
    w = np.empty(2 * w_up.size)
    w[0::2] = w_up
    w[1::2] = w_down
    cum = np.cumsum(w)
    total = cum[-1]
    idx = int(np.searchsorted(cum, u * total, side="right"))
    idx = min(idx, w.size - 1)
    while w[idx] == 0.0:  # u * total landed on a boundary; step back to a live event
        idx -= 1
    return idx // 2, (1 if idx % 2 == 0 else -1), total


def kmc_step(state: KmcState, spec: NetworkSpec, thermo: ThermoParams) -> KmcState:
    """One kinetic Monte Carlo event.

    Absorbing states (zero total weight, only possible at ``beta = INFINITE``)
    return a copy flagged ``terminal`` with time unchanged.
    """
    k = check_occupations(spec, state.k).astype(np.int64)
    w_up, w_down = _rates(spec, thermo.beta, thermo.alpha, k)
    total = float(w_up.sum() + w_down.sum())
    if total <= 0.0:
        return KmcState(k.copy(), state.t, state.rng, terminal=True)
    u, r = state.rng.random(2)
    i, d, total = _pick(w_up, w_down, u)
    k = k.copy()
    k[i] += d
    dt = -math.log(1.0 - r) / total
    return KmcState(k, state.t + dt, state.rng)


# below this site count the event loop runs on Python floats; numpy call
# overhead dominates for tiny vectors
SMALL_M = 16
_RNG_BLOCK = 512


class _Uniforms:
    """Block-buffered ``rng.random()``; consumes the stream in the same order.

    ``next_pair`` returns the event uniform and leaves the time uniform in ``r``.
    """

    def __init__(self, rng):
        self.rng = rng
        self.buf = []
        self.pos = 0
        self.r = 0.0

    def next_pair(self):
        if self.pos + 2 > len(self.buf):
            self.buf = self.buf[self.pos:] + self.rng.random(_RNG_BLOCK).tolist()
            self.pos = 0
        u, self.r = self.buf[self.pos], self.buf[self.pos + 1]
        self.pos += 2
        return u


class _SmallRates:
    def __init__(self, spec):
        self.rows = spec.coupling.tolist()
        self.lam = spec.lam.tolist()
        self.N = spec.N
        self.M = spec.M

    def __call__(self, k, beta, alpha):
        N = self.N
        m = [N - 2 * kj for kj in k]
        w = []
        for i in range(self.M):
            row = self.rows[i]
            h = self.lam[i]
            for j in range(self.M):
                h += row[j] * m[j]
            if beta == math.inf:
                g = -1.0 if h > 0 else (1.0 if h < 0 else 0.0)
            else:
                g = math.tanh(-beta * h)
            ki = k[i]
            w.append(alpha * (1.0 + g) * (ki + 1) * (N - ki))
            w.append(alpha * (1.0 - g) * ki * (N - ki + 1))
        return w


def _pick_small(w, draws):
    total = 0.0
    for x in w:
        total += x
    if total <= 0.0:
        return -1, 0, 0.0
    u = draws.next_pair()
    target = u * total
    acc = 0.0
    last = -1
    for idx, x in enumerate(w):
        if x > 0.0:
            last = idx
            acc += x
            if acc > target:
                break
    return last // 2, (1 if last % 2 == 0 else -1), total


def _initial(spec, k0, rng):
    if k0 is None:
        return uniform_initial(spec, rng)
    return check_occupations(spec, k0).astype(np.int64).copy()


def _events(spec, schedule, k, rng):
    """Yield ``(t_next, site, direction)`` forever; ``site = -1`` marks an absorbing state."""
    N, alpha = spec.N, schedule.alpha
    const_beta = schedule.beta(0.0) if schedule.is_constant else None
    draws = _Uniforms(rng)
    t = 0.0
    if spec.M <= SMALL_M:
        rates = _SmallRates(spec)
        kl = [int(x) for x in k]
        while True:
            beta = const_beta if const_beta is not None else schedule.beta(t)
            w = rates(kl, beta, alpha)
            i, d, total = _pick_small(w, draws)
            if i < 0:
                yield t, -1, 0
                return
            t -= math.log(1.0 - draws.r) / total
            kl[i] += d
            yield t, i, d
    else:
        k = k.copy()
        while True:
            beta = const_beta if const_beta is not None else schedule.beta(t)
            w_up, w_down = _rates(spec, beta, alpha, k)
            if not (w_up.sum() + w_down.sum()) > 0.0:
                yield t, -1, 0
                return
            u = draws.next_pair()
            i, d, total = _pick(w_up, w_down, u)
            t -= math.log(1.0 - draws.r) / total
            k[i] += d
            yield t, i, d


def run_trajectory(spec: NetworkSpec, thermo, k0, t_max: float, sample_dt: float,
                   seed: int) -> Trajectory:
    """Sample one trajectory on the grid ``0, sample_dt, 2 sample_dt, ... <= t_max``.

    ``thermo`` may be a :class:`ThermoParams` or a :class:`BetaSchedule`; a
    schedule is evaluated at the current time before each event.  ``k0=None``
    draws every ``k_i`` uniformly from ``0..N`` using the trajectory's stream.
    Repeated :func:`kmc_step` calls on the same generator visit the same states.
    """
    schedule = BetaSchedule.coerce(thermo)
    times = sample_grid(t_max, sample_dt)
    rng = np.random.default_rng(seed)
    k = _initial(spec, k0, rng)
    N = spec.N
    out = np.empty((times.size, spec.M))
    kl = k.tolist()
    s = [(2 * x - N) / N for x in kl]
    n = 0
    n_samples = times.size
    grid = times.tolist()
    for t_next, i, d in _events(spec, schedule, k, rng):
        if i < 0:
            out[n:] = s
            n = n_samples
            break
        # the state is piecewise constant until t_next
        while n < n_samples and grid[n] < t_next:
            out[n] = s
            n += 1
        if n == n_samples:
            break
        kl[i] += d
        s[i] = (2 * kl[i] - N) / N
    return Trajectory(times, out, seed=seed, engine="kmc",
                      meta={"schedule": schedule.describe(), "N": N, "M": spec.M})


def first_passage_time(spec: NetworkSpec, thermo, k0, predicate, t_limit: float, seed: int):
    """Time at which ``predicate(spins)`` first holds, or ``None`` if not before ``t_limit``."""
    schedule = BetaSchedule.coerce(thermo)
    rng = np.random.default_rng(seed)
    k = _initial(spec, k0, rng)
    if predicate(occupations_to_spins(k, spec.N)):
        return 0.0
    for t, i, d in _events(spec, schedule, k, rng):
        if i < 0 or t >= t_limit:
            return None
        k[i] += d
        if predicate(occupations_to_spins(k, spec.N)):
            return t
    return None


def _block_sums(args):
    spec, thermo, k0, t_max, sample_dt, seeds = args
    acc = None
    acc2 = None
    for seed in seeds:
        s = run_trajectory(spec, thermo, k0, t_max, sample_dt, seed).spins
        if acc is None:
            acc = s.copy()
            acc2 = s * s
        else:
            acc += s
            acc2 += s * s
    return acc, acc2


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def run_ensemble(spec: NetworkSpec, thermo, n_traj: int, t_max: float, sample_dt: float,
                 base_seed: int, k0=None, workers: int | None = None) -> EnsembleResult:
    """Mean and variance of ``s_i`` across ``n_traj`` independent trajectories.

    Trajectory ``n`` uses seed ``trajectory_seeds(base_seed, n_traj)[n]``.
    Partial sums are formed over fixed blocks and combined in block order, so
    the output is identical for any worker count.
    """
    if n_traj < 1:
        raise ModelError("n_traj must be >= 1")
    seeds = trajectory_seeds(base_seed, n_traj)
    blocks = [seeds[i:i + ENSEMBLE_BLOCK] for i in range(0, n_traj, ENSEMBLE_BLOCK)]
    jobs = [(spec, thermo, k0, t_max, sample_dt, b) for b in blocks]
    workers = worker_count() if workers is None else workers
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_block_sums, jobs))
    else:
        parts = [_block_sums(j) for j in jobs]
    total = parts[0][0].copy()
    total2 = parts[0][1].copy()
    for a, a2 in parts[1:]:
        total += a
        total2 += a2
    mean = total / n_traj
    var = np.maximum(total2 / n_traj - mean**2, 0.0)
    if n_traj == 1:
        var = np.zeros_like(mean)
    return EnsembleResult(sample_grid(t_max, sample_dt), mean, var, n_traj, base_seed)
