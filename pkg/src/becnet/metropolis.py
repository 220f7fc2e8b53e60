"""Metropolis sampling and annealing on occupation states.

A proposal picks a site uniformly and a direction ``+1``/``-1`` with equal
probability.  Moves that would leave ``[0, N]`` are rejected rather than
redrawn, which keeps the proposal symmetric.  Acceptance uses the energy change
``2 * direction * h_i``; there is no bosonic stimulation factor here, so the
chain reproduces equilibrium averages but carries no physical time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import ModelError, NetworkSpec, ThermoParams, check_occupations, energy
from .schedule import BetaSchedule

RESYNC_EVERY = 256


def _accept(dE: float, beta: float, u: float) -> bool:
    if dE < 0.0:
        return True
    if math.isinf(beta):
        # zero temperature: uphill never, flat moves with probability 1/2
        return dE == 0.0 and u < 0.5
    return u < math.exp(-beta * dE)


def metropolis_step(k, spec: NetworkSpec, thermo: ThermoParams, rng: np.random.Generator) -> np.ndarray:
    """One proposal.  Draws site, direction and acceptance uniform, in that order."""
    k = check_occupations(spec, k).astype(np.int64).copy()
    i = int(rng.integers(spec.M))
    d = 1 if rng.integers(2) == 1 else -1
    u = float(rng.random())
    target = k[i] + d
    if target < 0 or target > spec.N:
        return k
    h = float(spec.coupling[i] @ (spec.N - 2.0 * k) + spec.lam[i])
    if _accept(2.0 * d * h, thermo.beta, u):
        k[i] = target
    return k


@dataclass
class ChainResult:
    sweeps: np.ndarray  # 1..n_sweeps
    energies: np.ndarray  # energy after each sweep
    spins: np.ndarray | None  # (n_sweeps, M) if recorded
    k_final: np.ndarray
    k_best: np.ndarray
    energy_best: float
    best_trace: np.ndarray  # lowest energy seen up to each sweep
    counts: np.ndarray | None  # visits per flattened state, after burn-in
    accepted: int
    proposed: int


def run_chain(spec: NetworkSpec, schedule, k0, n_sweeps: int, rng: np.random.Generator, *,
              burn_in: int = 0, record_spins: bool = True, histogram: bool = False) -> ChainResult:
    """Run ``n_sweeps`` sweeps of ``M`` proposals each.

    ``schedule`` is a :class:`ThermoParams` or a :class:`BetaSchedule` indexed by
    sweep number (``beta(0)`` for the first sweep).  ``histogram`` counts the
    state reached after every post-burn-in sweep, indexed in the oracle's
    flattening order.

    Random numbers are drawn per block of sweeps: all sites, then all direction
    bits, then all acceptance uniforms, each shaped ``(sweeps_in_block, M)``.
    """
    schedule = BetaSchedule.coerce(schedule)
    if n_sweeps < 0 or burn_in < 0:
        raise ModelError("sweep counts must be non-negative")
    M, N = spec.M, spec.N
    k = check_occupations(spec, k0).tolist()
    rows = spec.coupling.tolist()
    lam = spec.lam.tolist()
    m = [N - 2 * x for x in k]

    e = energy(spec, np.array(k))
    best_e = e
    best_k = list(k)
    energies = np.empty(n_sweeps)
    best_trace = np.empty(n_sweeps)
    spins = np.empty((n_sweeps, M)) if record_spins else None
    counts = None
    strides = None
    if histogram:
        counts = np.zeros((N + 1) ** M, dtype=np.int64)
        strides = [(N + 1) ** (M - 1 - i) for i in range(M)]
    accepted = 0
    const_beta = schedule.beta(0.0) if schedule.is_constant else None

    block = max(1, min(n_sweeps, 4096 // M))
    sites = dirs = us = None
    for sweep in range(n_sweeps):
        b = sweep % block
        if b == 0:
            # random numbers are drawn for a block of sweeps at a time
            n = min(block, n_sweeps - sweep)
            sites = rng.integers(M, size=(n, M)).tolist()
            dirs = rng.integers(2, size=(n, M)).tolist()
            us = rng.random((n, M)).tolist()
        beta = const_beta if const_beta is not None else schedule.beta(float(sweep))
        for i, dbit, u in zip(sites[b], dirs[b], us[b]):
            d = 1 if dbit == 1 else -1
            ki = k[i] + d
            if ki < 0 or ki > N:
                continue
            row = rows[i]
            h = lam[i]
            for j in range(M):
                if j != i:
                    h += row[j] * m[j]
            dE = 2.0 * d * h
            if _accept(dE, beta, u):
                k[i] = ki
                m[i] = N - 2 * ki
                e += dE
                accepted += 1
                if e < best_e:
                    best_e = e
                    best_k = list(k)
        if sweep % RESYNC_EVERY == RESYNC_EVERY - 1:
            # resynchronise the running energy to stop round-off drift
            e = energy(spec, np.array(k))
            if e < best_e:
                best_e = e
                best_k = list(k)
        energies[sweep] = e
        best_trace[sweep] = best_e
        if spins is not None:
            spins[sweep] = [(2 * x - N) / N for x in k]
        if counts is not None and sweep >= burn_in:
            counts[sum(a * b for a, b in zip(k, strides))] += 1

    best_k_arr = np.array(best_k, dtype=np.int64)
    return ChainResult(
        sweeps=np.arange(1, n_sweeps + 1),
        energies=energies,
        spins=spins,
        k_final=np.array(k, dtype=np.int64),
        k_best=best_k_arr,
        energy_best=energy(spec, best_k_arr),
        best_trace=best_trace,
        counts=counts,
        accepted=accepted,
        proposed=n_sweeps * M,
    )


def anneal(spec: NetworkSpec, beta_schedule: BetaSchedule, k0, n_sweeps: int,
           rng: np.random.Generator):
    """Metropolis annealing; returns the lowest-energy state visited and its energy."""
    beta_schedule = BetaSchedule.coerce(beta_schedule)
    if not beta_schedule.non_decreasing:
        raise ModelError("annealing schedule must be non-decreasing in beta")
    res = run_chain(spec, beta_schedule, k0, n_sweeps, rng, record_spins=False)
    return res.k_best, res.energy_best


def empirical_distribution(counts: np.ndarray) -> np.ndarray:
    total = counts.sum()
    if total == 0:
        raise ModelError("no samples recorded")
    return counts / total


def total_variation(p, q) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())
