"""Inverse-temperature schedules.

A schedule is piecewise linear in ``beta`` against time (or sweep index for
Metropolis runs) and constant outside its knots.  ``INFINITE`` is only allowed
as a constant schedule.
"""

from __future__ import annotations

import math

import numpy as np

from .model import ModelError, ThermoParams


class BetaSchedule:
    def __init__(self, times, betas, alpha: float = 1.0):
        times = np.asarray(times, dtype=float).reshape(-1)
        betas = np.asarray(betas, dtype=float).reshape(-1)
        if times.shape != betas.shape or times.size == 0:
            raise ModelError("schedule needs matching, non-empty time and beta lists")
        if np.any(np.diff(times) <= 0):
            raise ModelError("schedule times must be strictly increasing")
        if np.any(betas < 0) or np.any(np.isnan(betas)):
            raise ModelError("schedule betas must be >= 0")
        if np.any(np.isinf(betas)) and betas.size > 1:
            raise ModelError("an infinite beta is only allowed as a constant schedule")
        self.times = times
        self.betas = betas
        self.alpha = float(alpha)
        ThermoParams(0.0, self.alpha)  # validates alpha

    @classmethod
    def constant(cls, beta: float, alpha: float = 1.0) -> "BetaSchedule":
        return cls([0.0], [beta], alpha)

    @classmethod
    def linear(cls, beta_start: float, beta_end: float, duration: float, alpha: float = 1.0):
        return cls([0.0, duration], [beta_start, beta_end], alpha)

    @classmethod
    def from_scale_ramp(cls, beta: float, times, scales, alpha: float = 1.0):
        """Fixed ``beta`` with ``J`` and ``lambda`` multiplied by a ramped factor.

        Scaling every coupling and field by ``c`` multiplies each site field by
        ``c``, which leaves every ``gamma`` equal to that of ``beta * c``.
        """
        scales = np.asarray(scales, dtype=float)
        if np.any(scales < 0):
            raise ModelError("scale factors must be non-negative")
        return cls(times, beta * scales, alpha)

    @classmethod
    def coerce(cls, thermo_or_schedule) -> "BetaSchedule":
        if isinstance(thermo_or_schedule, BetaSchedule):
            return thermo_or_schedule
        if isinstance(thermo_or_schedule, ThermoParams):
            return cls.constant(thermo_or_schedule.beta, thermo_or_schedule.alpha)
        raise TypeError(f"expected ThermoParams or BetaSchedule, got {type(thermo_or_schedule).__name__}")

    @property
    def is_constant(self) -> bool:
        return self.betas.size == 1 or bool(np.all(self.betas == self.betas[0]))

    @property
    def non_decreasing(self) -> bool:
        return bool(np.all(np.diff(self.betas) >= 0))

    def beta(self, t: float) -> float:
        if self.betas.size == 1:
            return float(self.betas[0])
        return float(np.interp(t, self.times, self.betas))

    def __call__(self, t: float) -> float:
        return self.beta(t)

    def thermo(self, t: float) -> ThermoParams:
        return ThermoParams(self.beta(t), self.alpha)

    def describe(self) -> dict:
        if self.betas.size == 1:
            b = float(self.betas[0])
            return {"beta": "inf" if math.isinf(b) else b, "alpha": self.alpha}
        return {"times": self.times.tolist(), "betas": self.betas.tolist(), "alpha": self.alpha}

    def __repr__(self):
        return f"BetaSchedule({self.describe()})"
