"""Hebbian training of the couplings and pattern utilities.

Training applies each field configuration ``lambda^(n)``, lets the network
relax to its equilibrium spins ``s`` under the current couplings, and then
updates the couplings with the outer product of ``s`` and ``lambda^(n)``.

Sign convention: the site field here is ``h_i = sum_j J_ij (N - 2 k_j) + lambda_i``,
in which a *positive* ``J_ij`` aligns sites ``i`` and ``j``.  The classical
Hebbian increment ``c s_i lambda_j`` is written for couplings that enter the
energy as ``+J S_i S_j`` (negative = aligning), so in this package it is
applied as ``J_ij -= c s_i lambda_j``.  With that sign each trained pattern is
a zero-temperature fixed point; with the opposite sign it is a maximum of the
energy.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .meanfield import integrate_ode
from .metropolis import run_chain
from .model import (
    ModelError,
    NetworkSpec,
    ThermoParams,
    equilibrium_spin,
    fields_from_spins,
    spins_to_occupations,
)

log = logging.getLogger(__name__)

EQUILIBRATORS = ("analytic", "metropolis", "ode")


class HebbianSymmetryWarning(UserWarning):
    pass


@dataclass
class Pattern:
    values: np.ndarray  # +-1, row-major
    rows: int
    cols: int
    name: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(-1)
        if self.values.size != self.rows * self.cols:
            raise ModelError("pattern size does not match its grid shape")
        if not np.all(np.abs(self.values) == 1.0):
            raise ModelError("pattern entries must be +1 or -1")

    @property
    def M(self) -> int:
        return self.values.size

    def render(self) -> str:
        return render_grid(self.values, self.rows, self.cols)


def load_pattern_grid(text: str, name: str = "") -> Pattern:
    """Parse a ``#``/``.`` grid (``#`` = +1, ``.`` = -1), flattened row-major.

    Blank lines and trailing whitespace are ignored.
    """
    lines = [ln.rstrip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines:
        raise ModelError("empty pattern grid")
    cols = len(lines[0])
    values = []
    for r, ln in enumerate(lines, start=1):
        if len(ln) != cols:
            raise ModelError(f"ragged pattern grid: row {r} has {len(ln)} cells, expected {cols}")
        for c, ch in enumerate(ln, start=1):
            if ch == "#":
                values.append(1.0)
            elif ch == ".":
                values.append(-1.0)
            else:
                raise ModelError(f"invalid character {ch!r} at row {r}, column {c}")
    return Pattern(np.array(values), len(lines), cols, name)


def render_grid(s, rows: int, cols: int, threshold: float = 0.0) -> str:
    """Inverse of :func:`load_pattern_grid`; entries above ``threshold`` render as ``#``."""
    s = np.asarray(s, dtype=float).reshape(rows, cols)
    return "\n".join("".join("#" if v > threshold else "." for v in row) for row in s) + "\n"


def hamming_distance(s, target) -> float:
    """``(1 / 2M) sum_i |s_i - target_i|``."""
    s = np.asarray(s, dtype=float)
    target = np.asarray(target, dtype=float)
    if s.shape != target.shape:
        raise ModelError(f"length mismatch: {s.shape} vs {target.shape}")
    return float(np.abs(s - target).sum() / (2 * s.size))


def hamming_distances(spins, targets) -> np.ndarray:
    """Distances of every row of ``spins`` (T, M) to every target (P, M) -> (T, P)."""
    spins = np.atleast_2d(np.asarray(spins, dtype=float))
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    M = spins.shape[1]
    return np.abs(spins[:, None, :] - targets[None, :, :]).sum(axis=2) / (2 * M)


@dataclass
class TrainingSet:
    fields: list  # list of length-M field vectors
    c: float
    order: list | None = None  # exposure order; defaults to 0..n-1
    epochs: int = 1

    def __post_init__(self):
        self.fields = [np.asarray(f, dtype=float).reshape(-1) for f in self.fields]
        if not self.fields:
            raise ModelError("training set is empty")
        M = self.fields[0].size
        if any(f.size != M for f in self.fields):
            raise ModelError("all training fields must have the same length")
        if not self.c >= 0:
            raise ModelError("learning constant c must be non-negative")
        if self.epochs < 1:
            raise ModelError("epochs must be >= 1")
        if self.order is None:
            self.order = list(range(len(self.fields)))

    @classmethod
    def from_patterns(cls, patterns, lambda0: float, c: float, epochs: int = 1) -> "TrainingSet":
        return cls([lambda0 * np.asarray(getattr(p, "values", p), dtype=float) for p in patterns],
                   c, epochs=epochs)


def analytic_equilibrium(spec: NetworkSpec, thermo: ThermoParams, s0=None, *, damping: float = 0.5,
                         tol: float = 1e-8, max_iter: int = 10_000) -> np.ndarray:
    """Damped fixed-point iteration of ``s = Phi(beta h(s), N)``.

    With zero couplings this is reached in one step.
    """
    s = np.zeros(spec.M) if s0 is None else np.array(s0, dtype=float)
    for it in range(max_iter):
        target = np.asarray(equilibrium_spin(fields_from_spins(spec, s), thermo.beta, spec.N), dtype=float)
        if not np.any(spec.coupling):
            return target
        step = target - s
        if np.max(np.abs(step)) < tol:
            return target
        s = s + damping * step
    log.warning("fixed-point iteration did not converge in %d iterations", max_iter)
    return s


def _metropolis_equilibrium(spec, thermo, rng, sweeps=2000, burn_in=500):
    k0 = spins_to_occupations(np.zeros(spec.M), spec.N)
    res = run_chain(spec, thermo, k0, sweeps, rng, record_spins=True)
    return res.spins[burn_in:].mean(axis=0)


def _ode_equilibrium(spec, thermo, t_relax=None):
    scale = thermo.alpha * (spec.N + 2)
    t_max = 20.0 / scale if t_relax is None else t_relax
    dt = 0.01 / scale
    traj = integrate_ode(spec, thermo, np.zeros(spec.M), t_max, dt, sample_dt=t_max / 10 if t_max / 10 >= dt else None)
    return traj.spins[-1]


def equilibrate(spec: NetworkSpec, thermo: ThermoParams, method: str = "analytic", rng=None):
    if method == "analytic":
        return analytic_equilibrium(spec, thermo)
    if method == "metropolis":
        return _metropolis_equilibrium(spec, thermo, rng if rng is not None else np.random.default_rng(0))
    if method == "ode":
        return _ode_equilibrium(spec, thermo)
    raise ModelError(f"unknown equilibrator {method!r}; choose from {EQUILIBRATORS}")


@dataclass
class TrainingResult:
    spec: NetworkSpec
    learned_spins: list = field(default_factory=list)  # equilibrium spins per exposure


def symmetrize(J: np.ndarray) -> np.ndarray:
    J = 0.5 * (J + J.T)
    np.fill_diagonal(J, 0.0)
    return J


def hebbian_train(spec0: NetworkSpec, thermo: ThermoParams, training: TrainingSet,
                  equilibrator: str = "analytic", rng=None, refresh: bool = False) -> TrainingResult:
    """Train couplings from zero, one exposure at a time.

    Each exposure measures the equilibrium spins under the accumulated
    couplings with the exposure's fields applied, adds ``-c s lambda^T`` (see
    the module docstring for the sign) and re-symmetrises with a zero diagonal.
    With ``refresh`` the spins are always measured with ``J = 0``, which makes
    the result a plain sum over exposures.  The returned spec carries the
    original ``spec0`` fields.
    """
    if np.any(spec0.J != 0):
        raise ModelError("training must start from J = 0")
    if training.fields[0].size != spec0.M:
        raise ModelError("training fields do not match the network size")
    J = np.zeros((spec0.M, spec0.M))
    learned = []
    asymmetric = 0
    for _ in range(training.epochs):
        for n in training.order:
            lam = training.fields[n]
            J_eq = np.zeros_like(J) if refresh else J
            s = equilibrate(NetworkSpec(J_eq, lam, spec0.N), thermo, equilibrator, rng)
            learned.append(np.asarray(s, dtype=float))
            raw = J - training.c * np.outer(s, lam)
            if not np.allclose(raw, raw.T, rtol=0, atol=1e-12 * max(1.0, np.abs(raw).max())):
                asymmetric += 1
            J = symmetrize(raw)
    if asymmetric:
        warnings.warn(f"{asymmetric} Hebbian update(s) were asymmetric and have been symmetrised",
                      HebbianSymmetryWarning, stacklevel=2)
    return TrainingResult(NetworkSpec(J, spec0.lam, spec0.N), learned)
