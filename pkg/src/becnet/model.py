"""Problem definition, state conversions and pointwise formulas.

Every dynamics engine in the package (master equation, kinetic Monte Carlo,
Metropolis, mean-field ODE/SDE) reads its rates from the functions here, so
there is a single definition of the site field ``h_i``::

    h_i(k) = sum_{j != i} J_ij (N - 2 k_j) + lambda_i

The transition weights use ``gamma_i = tanh(-beta h_i)`` and the energy change
of raising ``k_i`` by one is ``+2 h_i``.  The energy function below is the one
consistent with that field::

    E(S) = -1/2 sum_{i != j} J_ij S_i S_j + sum_i lambda_i S_i,   S_i = 2 k_i - N

Diagonal couplings are stored but never used.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

INFINITE = math.inf

# |z (N + 1)| below this uses the series expansion of the activation.
_PHI_SERIES_CUTOFF = 1e-2


class ModelError(ValueError):
    """Invalid network definition, state or parameter."""


@dataclass(frozen=True, eq=False)
class NetworkSpec:
    """Couplings ``J`` (M x M, symmetric), local fields ``lam`` and bosons per site ``N``."""

    J: np.ndarray
    lam: np.ndarray
    N: int
    _offdiag: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        J = np.array(self.J, dtype=float)
        lam = np.array(self.lam, dtype=float).reshape(-1)
        if J.ndim != 2 or J.shape[0] != J.shape[1]:
            raise ModelError(f"J must be square, got shape {J.shape}")
        if J.shape[0] != lam.shape[0]:
            raise ModelError(f"J is {J.shape[0]}x{J.shape[0]} but lambda has length {lam.shape[0]}")
        if J.shape[0] < 1:
            raise ModelError("need at least one site")
        if int(self.N) != self.N or self.N < 1:
            raise ModelError(f"N must be a positive integer, got {self.N}")
        if not (np.all(np.isfinite(J)) and np.all(np.isfinite(lam))):
            raise ModelError("J and lambda must be finite")
        bad = np.argwhere(J != J.T)
        if bad.size:
            i, j = bad[0]
            raise ModelError(f"J is not symmetric: J[{i}][{j}]={J[i, j]!r} != J[{j}][{i}]={J[j, i]!r}")
        J.setflags(write=False)
        lam.setflags(write=False)
        off = J.copy()
        np.fill_diagonal(off, 0.0)
        off.setflags(write=False)
        object.__setattr__(self, "J", J)
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "N", int(self.N))
        object.__setattr__(self, "_offdiag", off)

    @property
    def M(self) -> int:
        return self.lam.shape[0]

    @property
    def coupling(self) -> np.ndarray:
        """``J`` with the diagonal zeroed; this is what the dynamics use."""
        return self._offdiag

    def with_N(self, N: int) -> "NetworkSpec":
        return NetworkSpec(self.J, self.lam, N)

    def with_fields(self, lam) -> "NetworkSpec":
        return NetworkSpec(self.J, lam, self.N)

    def __eq__(self, other):
        if not isinstance(other, NetworkSpec):
            return NotImplemented
        return (
            self.N == other.N
            and np.array_equal(self.J, other.J)
            and np.array_equal(self.lam, other.lam)
        )

    __hash__ = None


@dataclass(frozen=True)
class ThermoParams:
    """Inverse temperature ``beta`` (``INFINITE`` for T = 0) and rate constant ``alpha``."""

    beta: float
    alpha: float = 1.0

    def __post_init__(self):
        if not self.alpha > 0 or not math.isfinite(self.alpha):
            raise ModelError(f"alpha must be positive and finite, got {self.alpha}")
        if math.isnan(self.beta) or self.beta < 0:
            raise ModelError(f"beta must be >= 0 or INFINITE, got {self.beta}")

    @property
    def zero_temperature(self) -> bool:
        return math.isinf(self.beta)


# ---------------------------------------------------------------------------
# state conversions

def check_occupations(spec: NetworkSpec, k) -> np.ndarray:
    k = np.asarray(k)
    if k.shape != (spec.M,):
        raise ModelError(f"occupation vector must have length {spec.M}, got shape {k.shape}")
    if k.dtype.kind not in "iu":
        if not np.all(k == np.round(k)):
            raise ModelError("occupations must be integers")
        k = k.astype(np.int64)
    if np.any(k < 0) or np.any(k > spec.N):
        raise ModelError(f"occupations must lie in [0, {spec.N}]")
    return k


def occupations_to_spins(k, N: int) -> np.ndarray:
    """``s_i = (2 k_i - N) / N``."""
    return (2.0 * np.asarray(k, dtype=float) - N) / N


def spins_to_occupations(s, N: int) -> np.ndarray:
    """Inverse of :func:`occupations_to_spins`, rounding to the nearest occupation."""
    k = np.rint(N * (1.0 + np.asarray(s, dtype=float)) / 2.0).astype(np.int64)
    return np.clip(k, 0, N)


def total_spin(k, N: int) -> np.ndarray:
    return 2 * np.asarray(k, dtype=np.int64) - N


# ---------------------------------------------------------------------------
# fields, rates, energies

def local_fields(spec: NetworkSpec, k) -> np.ndarray:
    """All site fields ``h`` for occupation vector ``k``."""
    m = spec.N - 2.0 * np.asarray(k, dtype=float)
    return spec.coupling @ m + spec.lam


def local_field(spec: NetworkSpec, k, i: int) -> float:
    _check_site(spec, i)
    m = spec.N - 2.0 * np.asarray(k, dtype=float)
    return float(spec.coupling[i] @ m + spec.lam[i])


def fields_from_spins(spec: NetworkSpec, s) -> np.ndarray:
    """Mean-field version of :func:`local_fields` with ``k_j = N (1 + s_j) / 2``."""
    return -spec.N * (spec.coupling @ np.asarray(s, dtype=float)) + spec.lam


def gamma_from_field(h, beta: float):
    """``tanh(-beta h)``; at ``beta = INFINITE`` this is ``-sign(h)`` with ``sign(0) = 0``."""
    if math.isinf(beta):
        return -np.sign(h)
    return np.tanh(-beta * np.asarray(h, dtype=float))


def gamma(spec: NetworkSpec, thermo: ThermoParams, k, i: int) -> float:
    return float(gamma_from_field(local_field(spec, k, i), thermo.beta))


def gammas(spec: NetworkSpec, thermo: ThermoParams, k) -> np.ndarray:
    return gamma_from_field(local_fields(spec, k), thermo.beta)


def weights_from_gamma(k, N: int, g, alpha: float):
    """Raising and lowering weights for occupations ``k`` given ``gamma`` values."""
    k = np.asarray(k, dtype=float)
    w_up = alpha * (1.0 + g) * (k + 1.0) * (N - k)
    w_down = alpha * (1.0 - g) * k * (N - k + 1.0)
    return w_up, w_down


def transition_weights(spec: NetworkSpec, thermo: ThermoParams, k, i: int):
    """``(w_up, w_down)`` for site ``i``: rates of ``k_i -> k_i + 1`` and ``k_i -> k_i - 1``."""
    k = check_occupations(spec, k)
    g = gamma(spec, thermo, k, i)
    w_up, w_down = weights_from_gamma(k[i], spec.N, g, thermo.alpha)
    return float(w_up), float(w_down)


def all_transition_weights(spec: NetworkSpec, thermo: ThermoParams, k):
    """Vectorised :func:`transition_weights` over every site."""
    g = gammas(spec, thermo, k)
    return weights_from_gamma(k, spec.N, g, thermo.alpha)


def _quadratic_energy(spec: NetworkSpec, S: np.ndarray) -> float:
    return float(-0.5 * S @ (spec.coupling @ S) + spec.lam @ S)


def energy(spec: NetworkSpec, k) -> float:
    """Energy of occupation state ``k`` (see module docstring for the convention)."""
    k = check_occupations(spec, k)
    return _quadratic_energy(spec, total_spin(k, spec.N).astype(float))


def energy_from_spins(spec: NetworkSpec, s) -> float:
    """Energy evaluated at ``S_i = N s_i``."""
    s = np.asarray(s, dtype=float)
    if s.shape != (spec.M,):
        raise ModelError(f"spin vector must have length {spec.M}")
    return _quadratic_energy(spec, spec.N * s)


def energies_of(spec: NetworkSpec, ks: np.ndarray) -> np.ndarray:
    """Energies of a stack of occupation vectors, shape ``(n, M)``."""
    S = 2.0 * np.asarray(ks, dtype=float) - spec.N
    return -0.5 * np.einsum("ni,ij,nj->n", S, spec.coupling, S) + S @ spec.lam


def delta_energy_flip(spec: NetworkSpec, k, i: int, direction: int) -> float:
    """Energy change of ``k_i -> k_i + direction``; equals ``2 * direction * h_i``."""
    if direction not in (1, -1):
        raise ModelError("direction must be +1 or -1")
    k = check_occupations(spec, k)
    _check_site(spec, i)
    target = k[i] + direction
    if target < 0 or target > spec.N:
        raise ModelError(f"move k[{i}] -> {target} leaves [0, {spec.N}]")
    return 2.0 * direction * local_field(spec, k, i)


def _check_site(spec: NetworkSpec, i: int):
    if not 0 <= i < spec.M:
        raise IndexError(f"site {i} out of range for M={spec.M}")


# ---------------------------------------------------------------------------
# equilibrium activation

def _inv_expm1_series(x, n1):
    # 1/expm1(x) - n1/expm1(n1 x) expanded in x (Bernoulli numbers), exact to O(x^7)
    return (
        (n1 - 1) / 2.0
        + x / 12.0 * (1 - n1**2)
        - x**3 / 720.0 * (1 - n1**4)
        + x**5 / 30240.0 * (1 - n1**6)
    )


def activation_phi(z, N: int):
    """Equilibrium mean spin of one site with ``p_k ~ exp(-2 z k)``, ``k = 0..N``.

    Evaluated as ``-1 + (2/N) <k>`` with
    ``<k> = 1/expm1(2z) - (N+1)/expm1(2z(N+1))``, which is the closed form of the
    finite geometric sum.  Near ``z = 0`` a series is used instead; the function
    is odd, so negative ``z`` is mapped through ``Phi(-z) = -Phi(z)``.
    """
    if N < 1:
        raise ModelError("N must be >= 1")
    z_arr = np.asarray(z, dtype=float)
    scalar = z_arr.ndim == 0
    z_arr = np.atleast_1d(z_arr)
    sign = np.where(z_arr < 0, -1.0, 1.0)
    a = np.abs(z_arr)
    x = 2.0 * a
    n1 = N + 1.0
    out = np.empty_like(a)
    small = a * n1 < _PHI_SERIES_CUTOFF
    out[small] = _inv_expm1_series(x[small], n1)
    big = ~small
    with np.errstate(over="ignore"):
        xb = x[big]
        out[big] = 1.0 / np.expm1(xb) - n1 / np.expm1(n1 * xb)
    phi = sign * (-1.0 + 2.0 * out / N)
    phi[np.isnan(z_arr)] = np.nan
    return float(phi[0]) if scalar else phi


def equilibrium_spin(h, beta: float, N: int):
    """``Phi(beta h, N)``; at ``beta = INFINITE`` this is ``-sign(h)``."""
    if math.isinf(beta):
        return -np.sign(h)
    return activation_phi(beta * np.asarray(h, dtype=float), N)


def activation_phi_approx(z, N: int):
    """``tanh(-z (N + 2) / 3)``; same slope as :func:`activation_phi` at ``z = 0``."""
    return np.tanh(-np.asarray(z, dtype=float) * (N + 2) / 3.0)
