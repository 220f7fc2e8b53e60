"""Command-line entry point (``becnet``)."""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .experiments import (
    initial_spins,
    load_patterns,
    network_from_config,
    run_n_sweep,
    run_pattern_completion,
    schedule_from_config,
)
from .io import ConfigError, ExperimentConfig, format_csv, parse_config, write_spec
from .kmc import run_ensemble, run_trajectory
from .meanfield import SdeParams, integrate_ode, integrate_sde, sde_ensemble
from .metropolis import empirical_distribution, run_chain, total_variation
from .model import ModelError, ThermoParams, spins_to_occupations
from .oracle import (
    NumericalError,
    mean_spin_trajectory,
    n_states,
    state_index,
    stationary_distribution,
    uniform_distribution,
)

log = logging.getLogger("becnet")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_NOT_CONVERGED = 4
EXIT_VERIFY_FAILED = 5

VERIFY_MAX_STATES = 10**4
# --verify-oracle tolerances
KMC_VERIFY_SE = 4.0
KMC_VERIFY_FLOOR = 1e-3
SDE_VERIFY_ABS = 0.1
METROPOLIS_VERIFY_TV = 0.05


class VerificationFailed(RuntimeError):
    pass


def _provenance(cfg: ExperimentConfig, command: str, **extra) -> dict:
    prov = {
        "command": command,
        "config_sha256": cfg.digest,
        "seed": cfg.seed,
        "engine": extra.pop("engine", cfg.engine),
        "version": __version__,
    }
    prov.update(extra)
    return prov


def _emit(text: str, out: Path | None):
    if out is None:
        sys.stdout.write(text)
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text)


def _spin_header(M, prefix="s"):
    return [f"{prefix}_{i + 1}" for i in range(M)]


def _constant_thermo(cfg: ExperimentConfig, command: str) -> ThermoParams:
    if cfg.schedule is not None:
        raise ConfigError(f"'{command}' needs a constant beta; remove the 'schedule' section")
    return ThermoParams(cfg.beta, cfg.alpha)


def _sample_dt(cfg: ExperimentConfig) -> float:
    return cfg.sample_dt if cfg.sample_dt is not None else cfg.t_max / 100


def _initial_k(cfg, spec, rng):
    return spins_to_occupations(initial_spins(cfg, spec, rng), spec.N)


def _oracle_p0(cfg, spec, rng):
    if cfg.initial.mode == "uniform-random":
        return uniform_distribution(spec)
    p0 = np.zeros(n_states(spec))
    p0[state_index(_initial_k(cfg, spec, rng), spec.N)] = 1.0
    return p0


def _check_verifiable(spec):
    if n_states(spec) > VERIFY_MAX_STATES:
        raise ConfigError(f"--verify-oracle needs (N+1)^M <= {VERIFY_MAX_STATES}, got {n_states(spec)}")


# ---------------------------------------------------------------------------
# commands; each returns (csv text or None, exit code)

def cmd_oracle(cfg, args):
    spec, _ = network_from_config(cfg)
    thermo = _constant_thermo(cfg, "oracle")
    rng = np.random.default_rng(cfg.seed)
    times = np.arange(int(math.floor(cfg.t_max / _sample_dt(cfg) + 1e-9)) + 1) * _sample_dt(cfg)
    mean, var = mean_spin_trajectory(spec, thermo, times, p0=_oracle_p0(cfg, spec, rng))
    header = ["t"] + _spin_header(spec.M, "mean") + _spin_header(spec.M, "var")
    rows = [[t, *m, *v] for t, m, v in zip(times, mean, var)]
    return format_csv(header, rows, _provenance(cfg, "oracle", engine="oracle")), EXIT_OK


def _verify_against_oracle(cfg, spec, thermo, times, mean, stderr, tol_abs, tol_se, label):
    _check_verifiable(spec)
    rng = np.random.default_rng(cfg.seed)
    exact, _ = mean_spin_trajectory(spec, thermo, times, p0=_oracle_p0(cfg, spec, rng))
    allowed = tol_abs + tol_se * stderr
    worst = float(np.max(np.abs(mean - exact) - allowed))
    dev = float(np.max(np.abs(mean - exact)))
    log.info("%s vs oracle: max |deviation| = %.4g", label, dev)
    if worst > 0:
        raise VerificationFailed(f"{label} ensemble mean deviates from the oracle by up to {dev:.4g}")
    return dev


def cmd_simulate_kmc(cfg, args):
    spec, _ = network_from_config(cfg)
    schedule = schedule_from_config(cfg)
    sample_dt = _sample_dt(cfg)
    rng = np.random.default_rng(cfg.seed)
    k0 = None if cfg.initial.mode == "uniform-random" else _initial_k(cfg, spec, rng)
    extra = {"engine": "kmc", "n_traj": cfg.n_traj}
    if cfg.n_traj == 1:
        if k0 is None:
            k0 = _initial_k(cfg, spec, rng)
        traj = run_trajectory(spec, schedule, k0, cfg.t_max, sample_dt, cfg.seed)
        header = ["t"] + _spin_header(spec.M)
        rows = [[t, *s] for t, s in zip(traj.times, traj.spins)]
        if args.verify_oracle:
            raise ConfigError("--verify-oracle needs an ensemble (n_traj >= 2)")
    else:
        ens = run_ensemble(spec, schedule, cfg.n_traj, cfg.t_max, sample_dt, cfg.seed, k0=k0)
        header = ["t"] + _spin_header(spec.M, "mean") + _spin_header(spec.M, "var")
        rows = [[t, *m, *v] for t, m, v in zip(ens.times, ens.mean, ens.var)]
        if args.verify_oracle:
            thermo = _constant_thermo(cfg, "simulate-kmc --verify-oracle")
            dev = _verify_against_oracle(cfg, spec, thermo, ens.times, ens.mean, ens.stderr,
                                         KMC_VERIFY_FLOOR, KMC_VERIFY_SE, "kmc")
            extra["oracle_max_deviation"] = repr(dev)
    return format_csv(header, rows, _provenance(cfg, "simulate-kmc", **extra)), EXIT_OK


def cmd_simulate_ode(cfg, args):
    spec, _ = network_from_config(cfg)
    schedule = schedule_from_config(cfg)
    dt = cfg.dt if cfg.dt is not None else 0.01 / (cfg.alpha * (spec.N + 2))
    s0 = initial_spins(cfg, spec, np.random.default_rng(cfg.seed))
    traj = integrate_ode(spec, schedule, s0, cfg.t_max, dt, sample_dt=cfg.sample_dt)
    header = ["t"] + _spin_header(spec.M)
    rows = [[t, *s] for t, s in zip(traj.times, traj.spins)]
    extra = {"engine": "ode", "dt": repr(dt)}
    if args.verify_oracle:
        # the mean-field closure is an approximation; the deviation is reported, not asserted
        _check_verifiable(spec)
        thermo = _constant_thermo(cfg, "simulate-ode --verify-oracle")
        p0 = np.zeros(n_states(spec))
        p0[state_index(spins_to_occupations(s0, spec.N), spec.N)] = 1.0
        exact, _ = mean_spin_trajectory(spec, thermo, traj.times, p0=p0)
        extra["oracle_max_deviation"] = repr(float(np.max(np.abs(traj.spins - exact))))
    return format_csv(header, rows, _provenance(cfg, "simulate-ode", **extra)), EXIT_OK


def cmd_simulate_sde(cfg, args):
    spec, _ = network_from_config(cfg)
    schedule = schedule_from_config(cfg)
    dt = cfg.dt if cfg.dt is not None else 0.01 / (cfg.alpha * (spec.N + 2))
    rng = np.random.default_rng(cfg.seed)
    params = SdeParams(dt, seed=cfg.seed, clip_noise=cfg.sde_clip, sample_dt=cfg.sample_dt)
    extra = {"engine": "sde", "dt": repr(dt), "n_traj": cfg.n_traj}
    if cfg.n_traj == 1:
        res = integrate_sde(spec, schedule, initial_spins(cfg, spec, rng), cfg.t_max, params)
        header = ["t"] + _spin_header(spec.M)
        rows = [[t, *s] for t, s in zip(res.trajectory.times, res.trajectory.spins)]
        extra["clip_fraction"] = repr(res.clip_fraction)
        if args.verify_oracle:
            raise ConfigError("--verify-oracle needs an ensemble (n_traj >= 2)")
    else:
        if cfg.initial.mode in ("uniform-random", "random-spins"):
            s0 = np.array([initial_spins(cfg, spec, rng) for _ in range(cfg.n_traj)])
        else:
            s0 = initial_spins(cfg, spec, rng)
        ens = sde_ensemble(spec, schedule, s0, cfg.t_max, params, cfg.n_traj)
        header = ["t"] + _spin_header(spec.M, "mean") + _spin_header(spec.M, "var")
        rows = [[t, *m, *v] for t, m, v in zip(ens.times, ens.mean, ens.var)]
        extra["clip_fraction"] = repr(ens.clip_fraction)
        if args.verify_oracle:
            thermo = _constant_thermo(cfg, "simulate-sde --verify-oracle")
            dev = _verify_against_oracle(cfg, spec, thermo, ens.times, ens.mean, ens.stderr,
                                         SDE_VERIFY_ABS, 3.0, "sde")
            extra["oracle_max_deviation"] = repr(dev)
    return format_csv(header, rows, _provenance(cfg, "simulate-sde", **extra)), EXIT_OK


def _chain_rows(res):
    return [[sw, e, *s] for sw, e, s in zip(res.sweeps, res.energies, res.spins)]


def cmd_sample_metropolis(cfg, args):
    spec, _ = network_from_config(cfg)
    schedule = schedule_from_config(cfg)
    rng = np.random.default_rng(cfg.seed)
    k0 = _initial_k(cfg, spec, rng)
    if args.verify_oracle:
        _check_verifiable(spec)
    res = run_chain(spec, schedule, k0, cfg.n_sweeps, rng, burn_in=cfg.burn_in,
                    histogram=bool(args.verify_oracle))
    extra = {"engine": "metropolis", "acceptance": repr(res.accepted / max(1, res.proposed))}
    if args.verify_oracle:
        thermo = _constant_thermo(cfg, "sample-metropolis --verify-oracle")
        tv = total_variation(empirical_distribution(res.counts), stationary_distribution(spec, thermo))
        extra["oracle_total_variation"] = repr(tv)
        if tv > METROPOLIS_VERIFY_TV:
            raise VerificationFailed(f"histogram is {tv:.4g} from the Boltzmann distribution in total variation")
    header = ["sweep", "energy"] + _spin_header(spec.M)
    return format_csv(header, _chain_rows(res), _provenance(cfg, "sample-metropolis", **extra)), EXIT_OK


def cmd_anneal(cfg, args):
    spec, _ = network_from_config(cfg)
    schedule = schedule_from_config(cfg)
    if not schedule.non_decreasing:
        raise ConfigError("field 'schedule': annealing needs a non-decreasing beta")
    if args.verify_oracle:
        raise ConfigError("--verify-oracle is not available for anneal")
    rng = np.random.default_rng(cfg.seed)
    k0 = _initial_k(cfg, spec, rng)
    res = run_chain(spec, schedule, k0, cfg.n_sweeps, rng)
    extra = {
        "engine": "metropolis",
        "schedule": schedule.describe(),
        "best_energy": repr(res.energy_best),
        "best_state": " ".join(str(int(x)) for x in res.k_best),
    }
    header = ["sweep", "energy"] + _spin_header(spec.M)
    return format_csv(header, _chain_rows(res), _provenance(cfg, "anneal", **extra)), EXIT_OK


def cmd_learn(cfg, args):
    if cfg.training is None:
        raise ConfigError("'learn' needs a 'training' section")
    spec, patterns = network_from_config(cfg)
    out = args.out or cfg.output
    if out is None:
        raise ConfigError("'learn' needs --out or 'output' for the network file")
    write_spec(spec, out)
    log.info("trained M=%d network on %d pattern(s); written to %s", spec.M, len(patterns), out)
    return None, EXIT_OK


def cmd_complete_pattern(cfg, args):
    spec, patterns = network_from_config(cfg)
    targets = load_patterns(cfg.targets) if cfg.targets else patterns
    if not targets:
        raise ConfigError("'complete-pattern' needs 'targets' or a 'training' section")
    if cfg.engine not in ("ode", "sde", "kmc"):
        raise ConfigError(f"field 'engine': pattern completion supports ode, sde and kmc, not {cfg.engine!r}")
    schedule = schedule_from_config(cfg)
    s0 = initial_spins(cfg, spec, np.random.default_rng(cfg.seed))
    shape = (targets[0].rows, targets[0].cols)
    res = run_pattern_completion(spec, schedule, s0, targets, cfg.t_max, dt=cfg.dt, sample_dt=cfg.sample_dt,
                                 eps_conv=cfg.eps_conv, engine=cfg.engine, seed=cfg.seed, shape=shape)
    names = [t.name or str(n + 1) for n, t in enumerate(targets)]
    header = ["t"] + [f"D_{n}" for n in names] + _spin_header(spec.M)
    rows = [[t, *d, *s] for t, d, s in zip(res.times, res.distances, res.spins)]
    status = "converged" if res.converged else "not-converged"
    extra = {
        "engine": cfg.engine,
        "status": status,
        "nearest_initial": names[res.initial_nearest],
        "nearest_final": names[res.final_nearest],
        "final_distance": repr(res.final_distance),
    }
    text = format_csv(header, rows, _provenance(cfg, "complete-pattern", **extra))
    out = args.out or cfg.output
    if out is not None:
        _emit(res.grid, Path(str(out) + ".grid.txt"))
    else:
        sys.stderr.write(res.grid)
    if not res.converged:
        log.error("no pattern reached D < %g by t = %g (closest: %s at D = %.4g)",
                  cfg.eps_conv, cfg.t_max, names[res.final_nearest], res.final_distance)
        return text, EXIT_NOT_CONVERGED
    return text, EXIT_OK


def cmd_sweep_n(cfg, args):
    if cfg.sweep is None:
        raise ConfigError("'sweep-n' needs a 'sweep' section")
    spec, patterns = network_from_config(cfg)
    targets = load_patterns(cfg.targets) if cfg.targets else patterns
    if not targets:
        raise ConfigError("'sweep-n' needs 'targets' or a 'training' section")
    engine = cfg.engine if cfg.engine in ("ode", "kmc") else None
    if engine is None:
        raise ConfigError(f"field 'engine': N sweeps support ode and kmc, not {cfg.engine!r}")
    sw = cfg.sweep
    s0 = initial_spins(cfg, spec, np.random.default_rng(cfg.seed))
    res = run_n_sweep(spec, schedule_from_config(cfg), s0, targets, sw.N_list, sw.eps_list, engine=engine,
                      seed=cfg.seed, horizon=sw.horizon, steps_per_unit=sw.steps_per_unit,
                      target=sw.target, n_traj=cfg.n_traj, fit_top=sw.fit_top)
    extra = {"engine": engine}
    for eps in sw.eps_list:
        extra[f"slope_eps_{eps!r}"] = f"{res.slopes[eps]!r} (N = {' '.join(map(str, res.fit_N[eps]))})"
    header = ["N", "epsilon", "t_epsilon", "engine", "seed", "status"]
    rows = [[r.N, r.epsilon, r.t_epsilon, r.engine, r.seed, r.status] for r in res.rows]
    text = format_csv(header, rows, _provenance(cfg, "sweep-n", **extra))
    if all(r.status == "censored" for r in res.rows):
        return text, EXIT_NOT_CONVERGED
    return text, EXIT_OK


COMMANDS = {
    "oracle": (cmd_oracle, "exact master-equation mean spins"),
    "simulate-kmc": (cmd_simulate_kmc, "kinetic Monte Carlo trajectory or ensemble"),
    "simulate-ode": (cmd_simulate_ode, "mean-field ODE integration"),
    "simulate-sde": (cmd_simulate_sde, "Euler-Maruyama integration of the diffusion approximation"),
    "sample-metropolis": (cmd_sample_metropolis, "Metropolis sampling at fixed or scheduled beta"),
    "anneal": (cmd_anneal, "Metropolis annealing towards a ground state"),
    "learn": (cmd_learn, "Hebbian training from pattern files; writes a network file"),
    "complete-pattern": (cmd_complete_pattern, "pattern completion with Hamming-distance tracking"),
    "sweep-n": (cmd_sweep_n, "completion time versus boson number"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="becnet", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, type=Path, help="YAML experiment config")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", type=Path, default=None, help="output file (default: config 'output' or stdout)")
        p.add_argument("--verify-oracle", action="store_true",
                       help="cross-check against the exact master equation on small instances")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    func = COMMANDS[args.command][0]
    try:
        if args.seed is not None and args.seed < 0:
            raise ConfigError("--seed must be >= 0")
        cfg = parse_config(args.config, overrides={"seed": args.seed})
        text, code = func(cfg, args)
        if text is not None:
            _emit(text, args.out or cfg.output)
        return code
    except VerificationFailed as exc:
        log.error("verification failed: %s", exc)
        return EXIT_VERIFY_FAILED
    except (ConfigError, ModelError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except (NumericalError, FloatingPointError) as exc:
        log.error("numerical abort: %s", exc)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
