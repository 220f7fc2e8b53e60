"""Experiment drivers: pattern completion, N sweeps and single-site settling times."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .hebbian import Pattern, TrainingSet, hamming_distances, hebbian_train, load_pattern_grid, render_grid
from .io import ConfigError, ExperimentConfig
from .kmc import run_ensemble, run_trajectory, worker_count
from .meanfield import SdeParams, integrate_ode, integrate_sde
from .model import ModelError, NetworkSpec, ThermoParams, occupations_to_spins, spins_to_occupations
from .schedule import BetaSchedule

EPS_CONV = 0.05
DEFAULT_EPS = (0.3, 0.1, 0.05)


def load_patterns(paths) -> list[Pattern]:
    out = []
    for p in paths:
        try:
            out.append(load_pattern_grid(p.read_text(), name=p.stem))
        except ModelError as exc:
            raise ConfigError(f"{p}: {exc}") from None
    if len({pat.M for pat in out}) > 1:
        raise ConfigError("pattern files have different sizes")
    return out


def schedule_from_config(cfg: ExperimentConfig) -> BetaSchedule:
    if cfg.schedule is None:
        return BetaSchedule.constant(cfg.beta, cfg.alpha)
    sch = cfg.schedule
    try:
        if "scales" in sch:
            return BetaSchedule.from_scale_ramp(cfg.beta, sch["times"], sch["scales"], cfg.alpha)
        return BetaSchedule(sch["times"], sch["betas"], cfg.alpha)
    except (ModelError, TypeError, ValueError) as exc:
        raise ConfigError(f"field 'schedule': {exc}") from None


def network_from_config(cfg: ExperimentConfig):
    """The network to simulate and the patterns it was trained on (possibly empty).

    With a ``training`` section the couplings are learned from zero at the
    configured temperature; the recall network has zero fields.
    """
    if cfg.training is None:
        if cfg.network is None:
            raise ConfigError("config needs a 'network' or a 'training' section")
        return cfg.network, []
    tc = cfg.training
    patterns = load_patterns(tc.patterns)
    M = patterns[0].M
    N = tc.N or (cfg.network.N if cfg.network is not None else None)
    if N is None:
        raise ConfigError("field 'training.N' is required when no network is given")
    spec0 = NetworkSpec(np.zeros((M, M)), np.zeros(M), N)
    training = TrainingSet.from_patterns(patterns, tc.lambda0, tc.c, epochs=tc.epochs)
    rng = np.random.default_rng(cfg.seed)
    thermo = ThermoParams(cfg.beta, cfg.alpha)
    result = hebbian_train(spec0, thermo, training, equilibrator=tc.equilibrator, rng=rng)
    return result.spec, patterns


def initial_spins(cfg: ExperimentConfig, spec: NetworkSpec, rng: np.random.Generator) -> np.ndarray:
    """Initial normalised spins for the configured mode.

    ``pattern-fragment`` keeps the first ``fraction`` of the pattern's entries
    (row-major, so the top rows of a grid) and sets the rest to 0.
    """
    ic = cfg.initial
    M, N = spec.M, spec.N
    if ic.mode == "uniform-random":
        return occupations_to_spins(rng.integers(0, N + 1, size=M), N)
    if ic.mode == "half-filled":
        return occupations_to_spins(np.full(M, N // 2), N)
    if ic.mode == "random-spins":
        return rng.uniform(-1.0, 1.0, size=M)
    if ic.mode == "pattern-fragment":
        pat = load_patterns([ic.file])[0]
        if pat.M != M:
            raise ConfigError(f"fragment pattern has {pat.M} entries but the network has M={M}")
        return fragment(pat.values, ic.fraction)
    if ic.mode == "explicit":
        k = np.asarray(ic.values)
        if k.shape != (M,):
            raise ConfigError(f"field 'initial.values': expected {M} occupations")
        if np.any(k < 0) or np.any(k > N) or np.any(k != np.round(k)):
            raise ConfigError(f"field 'initial.values': occupations must be integers in [0, {N}]")
        return occupations_to_spins(k.astype(np.int64), N)
    raise ConfigError(f"unknown initial mode {ic.mode!r}")


def fragment(values, fraction: float) -> np.ndarray:
    s = np.array(values, dtype=float)
    keep = int(math.floor(fraction * s.size + 1e-9))
    s[keep:] = 0.0
    return s


def crossing_time(times, values, eps: float):
    """First time ``values`` drops below ``eps``, linearly interpolated; ``None`` if never."""
    values = np.asarray(values, dtype=float)
    below = np.nonzero(values < eps)[0]
    if below.size == 0:
        return None
    n = int(below[0])
    if n == 0:
        return float(times[0])
    v0, v1 = values[n - 1], values[n]
    t0, t1 = times[n - 1], times[n]
    return float(t0 + (v0 - eps) / (v0 - v1) * (t1 - t0))


def default_dt(spec: NetworkSpec, alpha: float) -> float:
    return 0.01 / (alpha * (spec.N + 2))


def _sample_every(dt: float, sample_dt: float | None, t_max: float) -> float:
    if sample_dt is None:
        return dt * max(1, int(round(t_max / dt / 200)))
    per = max(1, int(round(sample_dt / dt)))
    return dt * per


@dataclass
class CompletionResult:
    times: np.ndarray
    distances: np.ndarray  # (T, P)
    spins: np.ndarray  # (T, M)
    eps_conv: float
    initial_nearest: int
    final_nearest: int
    t_conv: float | None
    grid: str = ""

    @property
    def converged(self) -> bool:
        return bool(self.distances[-1].min() < self.eps_conv)

    @property
    def final_distance(self) -> float:
        return float(self.distances[-1].min())


def run_pattern_completion(spec: NetworkSpec, schedule, s0, targets, t_max: float, *,
                           dt: float | None = None, sample_dt: float | None = None,
                           eps_conv: float = EPS_CONV, engine: str = "ode", seed: int = 0,
                           shape: tuple | None = None) -> CompletionResult:
    """Evolve from ``s0`` and track the Hamming distance to every target.

    Non-convergence is reported through :attr:`CompletionResult.converged`,
    never raised.
    """
    schedule = BetaSchedule.coerce(schedule)
    targets = np.array([getattr(t, "values", t) for t in targets], dtype=float)
    s0 = np.asarray(s0, dtype=float)
    if targets.ndim != 2 or targets.shape[1] != spec.M:
        raise ModelError(f"targets must have length M={spec.M}")
    if engine in ("ode", "sde"):
        dt = default_dt(spec, schedule.alpha) if dt is None else dt
        sample_dt = _sample_every(dt, sample_dt, t_max)
        if engine == "ode":
            traj = integrate_ode(spec, schedule, s0, t_max, dt, sample_dt=sample_dt)
        else:
            traj = integrate_sde(spec, schedule, s0, t_max, SdeParams(dt, seed=seed, sample_dt=sample_dt)).trajectory
    elif engine == "kmc":
        sample_dt = t_max / 200 if sample_dt is None else sample_dt
        traj = run_trajectory(spec, schedule, spins_to_occupations(s0, spec.N), t_max, sample_dt, seed)
    else:
        raise ModelError(f"pattern completion supports ode, sde and kmc, not {engine!r}")
    D = hamming_distances(traj.spins, targets)
    winner = int(np.argmin(D[-1]))
    t_conv = crossing_time(traj.times, D[:, winner], eps_conv)
    grid = render_grid(traj.spins[-1], *shape) if shape else ""
    return CompletionResult(traj.times, D, traj.spins, eps_conv,
                            int(np.argmin(hamming_distances(s0, targets)[0])), winner, t_conv, grid)


# ---------------------------------------------------------------------------
# N sweeps

@dataclass
class SweepRow:
    N: int
    epsilon: float
    t_epsilon: float | None
    engine: str
    seed: int
    status: str = "ok"  # "censored": never reached; "initial": already below at t = 0

    @property
    def censored(self) -> bool:
        return self.status != "ok"


@dataclass
class SweepResult:
    rows: list
    slopes: dict = field(default_factory=dict)  # epsilon -> fitted slope (nan if not enough points)
    fit_N: dict = field(default_factory=dict)  # epsilon -> N values used in the fit

    def times(self, eps: float):
        rows = [r for r in self.rows if r.epsilon == eps]
        return np.array([r.N for r in rows]), np.array([np.nan if r.censored else r.t_epsilon for r in rows])


def fit_loglog_slope(x, y) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    x = np.log(np.asarray(x, dtype=float))
    y = np.log(np.asarray(y, dtype=float))
    if x.size < 2:
        return math.nan
    return float(np.polyfit(x, y, 1)[0])


def _sweep_one(args):
    spec, schedule, s0, targets, N, eps_list, engine, seed, horizon, steps_per_unit, target, n_traj = args
    spec_n = spec.with_N(N)
    scale = schedule.alpha * N
    dt = 1.0 / (steps_per_unit * scale)
    t_max = horizon / scale
    if engine == "ode":
        traj = integrate_ode(spec_n, schedule, s0, t_max, dt, sample_dt=dt)
        times, spins = traj.times, traj.spins
    elif engine == "kmc":
        k0 = spins_to_occupations(s0, N)
        ens = run_ensemble(spec_n, schedule, n_traj, t_max, dt, seed, k0=k0, workers=1)
        times, spins = ens.times, ens.mean
    else:
        raise ModelError(f"N sweeps support ode and kmc, not {engine!r}")
    D = hamming_distances(spins, targets)
    idx = int(np.argmin(D[-1])) if target is None else int(target)
    return N, [crossing_time(times, D[:, idx], eps) for eps in eps_list]


def run_n_sweep(spec: NetworkSpec, schedule, s0, targets, N_list, eps_list=DEFAULT_EPS, *,
                engine: str = "ode", seed: int = 0, horizon: float = 50.0, steps_per_unit: int = 100,
                target: int | None = None, n_traj: int = 100, fit_top: int | None = None,
                workers: int | None = None) -> SweepResult:
    """First time ``D < epsilon`` for every ``(N, epsilon)``, plus log-log slopes.

    Runs last ``horizon / (alpha N)`` with ``steps_per_unit`` steps per
    ``1 / (alpha N)``.  ``engine="kmc"`` uses the mean of an ``n_traj``
    ensemble.  The slope for each epsilon is fitted on the ``fit_top`` largest
    uncensored N values (default: the top half, at least two).
    """
    schedule = BetaSchedule.coerce(schedule)
    Ns = sorted(int(n) for n in N_list)
    if len(set(Ns)) != len(Ns) or Ns[0] < 1:
        raise ModelError("N values must be distinct positive integers")
    targets = np.array([getattr(t, "values", t) for t in targets], dtype=float)
    jobs = [(spec, schedule, np.asarray(s0, dtype=float), targets, N, list(eps_list), engine, seed,
             horizon, steps_per_unit, target, n_traj) for N in Ns]
    workers = worker_count() if workers is None else workers
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_one, jobs))
    else:
        results = [_sweep_one(j) for j in jobs]
    results.sort(key=lambda r: r[0])
    rows = []
    for N, ts in results:
        for eps, t in zip(eps_list, ts):
            if t is None:
                rows.append(SweepRow(N, eps, None, engine, seed, "censored"))
            elif t <= 0.0:
                rows.append(SweepRow(N, eps, None, engine, seed, "initial"))
            else:
                rows.append(SweepRow(N, eps, t, engine, seed))
    out = SweepResult(rows)
    top = fit_top or max(2, math.ceil(len(Ns) / 2))
    for eps in eps_list:
        ok = [r for r in rows if r.epsilon == eps and not r.censored][-top:]
        out.fit_N[eps] = [r.N for r in ok]
        out.slopes[eps] = fit_loglog_slope([r.N for r in ok], [r.t_epsilon for r in ok]) if len(ok) >= 2 else math.nan
    return out


# ---------------------------------------------------------------------------
# single-site settling

def single_site_settling_time(N: int, alpha: float, gamma: float, s0: float, tol: float) -> float:
    """Time for the closed-form single-site solution to come within ``tol`` of its limit."""
    if gamma == 0:
        return 0.0 if abs(s0) < tol else math.log(abs(s0) / tol) / (2 * alpha)
    A = math.sqrt(1.0 + 2.0 / N + 1.0 / (N * gamma) ** 2)
    shift = 1.0 / (N * gamma)
    sgn = math.copysign(1.0, gamma)
    limit = sgn * A - shift
    if abs(s0 - limit) < tol:
        return 0.0
    K0 = math.atanh((s0 + shift) / A)
    x = math.atanh(sgn * (1.0 - tol / A))
    return (x - K0) / (alpha * gamma * A * N)


def kmc_settling_time(N: int, alpha: float, lam: float, k0: int, tol: float, n_traj: int,
                      seed: int, horizon: float = 10.0, samples: int = 2000):
    """Time for the ensemble-mean spin of one zero-temperature site to come within ``tol`` of its limit.

    At ``beta = INFINITE`` with ``lam != 0`` the site is absorbed at the
    filled (``lam < 0``) or empty end, so the limit is ``+1`` or ``-1``.
    Returns ``(t, EnsembleResult)``.
    """
    if lam == 0:
        raise ModelError("need a non-zero field")
    spec = NetworkSpec(np.zeros((1, 1)), np.array([lam]), N)
    thermo = ThermoParams(math.inf, alpha)
    t_max = horizon / (alpha * N)
    ens = run_ensemble(spec, thermo, n_traj, t_max, t_max / samples, seed, k0=np.array([k0]))
    limit = -math.copysign(1.0, lam)
    return crossing_time(ens.times, np.abs(ens.mean[:, 0] - limit), tol), ens
