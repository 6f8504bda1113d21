"""Noise schedule for the forward/reverse diffusion processes.

The linear beta range (1e-4, 2e-2) is the convention of the pretrained
family this mirrors at T=1000. Shorter schedules keep beta_start and scale
beta_end by 1000/T, so the total injected noise stays comparable and the
terminal marginal remains close to a standard normal while alpha_bar[0]
stays near 1.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import ScheduleError

BETA_START_REF = 1e-4
BETA_END_REF = 2e-2
T_REF = 1000


@dataclass(frozen=True)
class NoiseSchedule:
    beta: np.ndarray  # (T,) float64, 0 < beta[t] < 1

    def __post_init__(self) -> None:
        b = np.asarray(self.beta, dtype=np.float64)
        if b.ndim != 1 or b.size < 1:
            raise ScheduleError("beta must be a nonempty 1-D array")
        if not ((b > 0) & (b < 1)).all():
            raise ScheduleError("betas must lie strictly in (0, 1)")
        object.__setattr__(self, "beta", b)

    @property
    def T(self) -> int:
        return int(self.beta.size)

    @cached_property
    def alpha(self) -> np.ndarray:
        return 1.0 - self.beta

    @cached_property
    def alpha_bar(self) -> np.ndarray:
        return np.cumprod(self.alpha)

    @cached_property
    def sqrt_alpha_bar(self) -> np.ndarray:
        return np.sqrt(self.alpha_bar)

    @cached_property
    def sqrt_one_minus_alpha_bar(self) -> np.ndarray:
        return np.sqrt(1.0 - self.alpha_bar)

    @cached_property
    def alpha_bar_prev(self) -> np.ndarray:
        """alpha_bar[t-1] with the t=0 convention alpha_bar[-1] = 1."""
        return np.concatenate(([1.0], self.alpha_bar[:-1]))

    @cached_property
    def posterior_variance(self) -> np.ndarray:
        """Variance of q(x_{t-1} | x_t, x_0); zero at t=0."""
        return self.beta * (1.0 - self.alpha_bar_prev) / (1.0 - self.alpha_bar)

    def check_t(self, t: int) -> int:
        t = int(t)
        if not 0 <= t < self.T:
            raise ScheduleError(f"timestep {t} outside [0, {self.T})")
        return t


def build_schedule(T: int, kind: str = "linear") -> NoiseSchedule:
    """Linear beta schedule over T steps; invariants checked on construction."""
    if T < 1:
        raise ScheduleError(f"T must be >= 1, got {T}")
    if kind != "linear":
        raise ScheduleError(f"unknown schedule kind {kind!r}")
    scale = T_REF / T
    # start stays at the reference value so alpha_bar[0] is always near 1;
    # the end scales with 1000/T to keep the total injected noise comparable.
    beta = np.linspace(BETA_START_REF, BETA_END_REF * scale, T, dtype=np.float64)
    beta = np.minimum(beta, 1.0 - 1e-3)  # very short schedules would scale past 1
    sched = NoiseSchedule(beta=beta)
    ab = sched.alpha_bar
    if not (np.diff(ab) < 0).all():
        raise ScheduleError("alpha_bar not strictly decreasing")  # pragma: no cover
    if ab[0] <= 0.99:
        raise ScheduleError("alpha_bar[0] must exceed 0.99")  # pragma: no cover
    return sched


def forward_noise(x0, t: int, eps, schedule: NoiseSchedule):
    """Noise a clean image to timestep t: sqrt(ab_t) * x0 + sqrt(1 - ab_t) * eps.

    Works on numpy arrays and torch tensors alike (scalar coefficients).
    """
    t = schedule.check_t(t)
    if getattr(x0, "shape", None) != getattr(eps, "shape", None):
        raise ScheduleError(f"x0/eps shape mismatch: {x0.shape} vs {eps.shape}")
    a = float(schedule.sqrt_alpha_bar[t])
    b = float(schedule.sqrt_one_minus_alpha_bar[t])
    return a * x0 + b * eps
