"""Noise schedules and the sampler algebra.

Timesteps run ``1..T``; index ``0`` is the clean signal with
``alpha_bar[0] == 1``.  Schedule arrays are stored with a leading entry for
``t = 0`` so ``schedule.alpha_bars[t]`` reads naturally.

All functions are pure; randomness comes in through an explicit
``torch.Generator``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .errors import ParameterError, ScheduleError, ShapeError

ALPHA_BAR_FLOOR = 1e-12


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step beta/alpha/alpha-bar/sigma arrays, each of length ``T + 1``.

    Entry 0 is the clean-signal convention (beta 0, alpha 1, alpha-bar 1,
    sigma 0).  ``sigmas`` follow the DDIM family scaled by ``eta``.
    """

    T: int
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray
    sigmas: np.ndarray
    eta: float

    def eta_t(self, t: int) -> float:
        """Weight of the predicted noise in the guided step."""
        _check_t(t, self)
        rem = 1.0 - self.alpha_bars[t - 1] - self.sigmas[t] ** 2
        if rem < -1e-12:
            raise ScheduleError(f"1 - alpha_bar[{t - 1}] - sigma[{t}]^2 = {rem:.3e} < 0")
        return math.sqrt(max(rem, 0.0))

    def validate(self) -> None:
        b = self.betas[1:]
        if not np.all((b > 0) & (b < 1)):
            raise ParameterError("betas", "every beta must lie strictly inside (0, 1)")
        if np.any(np.diff(self.alpha_bars) >= 0):
            raise ScheduleError("alpha_bars must be strictly decreasing")
        if np.any(self.sigmas < 0) or np.any(1.0 - self.alpha_bars[:-1] - self.sigmas[1:] ** 2 < -1e-12):
            raise ScheduleError("sigma_t too large for a real-valued noise weight")


def _check_t(t: int, schedule: NoiseSchedule) -> None:
    if not 1 <= t <= schedule.T:
        raise ParameterError("t", f"must satisfy 1 <= t <= {schedule.T}, got {t}")


def ddim_sigmas(alpha_bars: np.ndarray, eta: float) -> np.ndarray:
    """``eta * sqrt((1 - ab[t-1]) / (1 - ab[t])) * sqrt(1 - ab[t] / ab[t-1])``, with ``sigma_0 = 0``."""
    ab = alpha_bars
    sig = np.zeros_like(ab)
    sig[1:] = eta * np.sqrt((1 - ab[:-1]) / (1 - ab[1:])) * np.sqrt(1 - ab[1:] / ab[:-1])
    return sig


def schedule_from_betas(betas, eta: float = 0.0) -> NoiseSchedule:
    betas = np.asarray(betas, dtype=np.float64)
    if betas.ndim != 1 or betas.size < 1:
        raise ParameterError("betas", "need a non-empty 1-D sequence")
    if not np.all((betas > 0) & (betas < 1)):
        raise ParameterError("betas", "every beta must lie strictly inside (0, 1)")
    if not 0.0 <= eta <= 1.0:
        raise ParameterError("eta", f"must lie in [0, 1], got {eta}")
    full_b = np.concatenate([[0.0], betas])
    alphas = 1.0 - full_b
    alpha_bars = np.ones_like(alphas)
    for t in range(1, len(alphas)):
        alpha_bars[t] = alpha_bars[t - 1] * alphas[t]
    sched = NoiseSchedule(T=len(betas), betas=full_b, alphas=alphas, alpha_bars=alpha_bars,
                          sigmas=ddim_sigmas(alpha_bars, eta), eta=float(eta))
    sched.validate()
    return sched


def make_linear_schedule(T: int, beta_start: float, beta_end: float, eta: float = 0.0) -> NoiseSchedule:
    """Betas spaced linearly from ``beta_start`` to ``beta_end`` over ``T`` steps."""
    if int(T) != T or T < 1:
        raise ParameterError("T", f"must be an integer >= 1, got {T}")
    if not beta_start > 0:
        raise ParameterError("beta_start", f"must be > 0, got {beta_start}")
    if not beta_start <= beta_end:
        raise ParameterError("beta_end", f"must be >= beta_start ({beta_start}), got {beta_end}")
    if not beta_end < 1:
        raise ParameterError("beta_end", f"must be < 1, got {beta_end}")
    if not 0.0 <= eta <= 1.0:
        raise ParameterError("eta", f"must lie in [0, 1], got {eta}")
    return schedule_from_betas(np.linspace(beta_start, beta_end, int(T)), eta)


def make_default_schedule(T: int = 4, eta: float = 0.0, base_steps: int = 1000) -> NoiseSchedule:
    """Few-step schedule matching a ``base_steps`` linear (1e-4 -> 0.02) schedule.

    The cumulative products of the long schedule are sampled at ``T`` evenly
    spaced timesteps and the per-step betas are recovered from their ratios,
    so step ``T`` reaches the same noise level as the long schedule's last
    step.
    """
    if int(T) != T or T < 1:
        raise ParameterError("T", f"must be an integer >= 1, got {T}")
    base = np.cumprod(1.0 - np.linspace(1e-4, 0.02, base_steps))
    idx = np.round(np.linspace(0, base_steps, T + 1)).astype(int)[1:] - 1
    ab = np.concatenate([[1.0], base[idx]])
    return schedule_from_betas(1.0 - ab[1:] / ab[:-1], eta)


def _same_shape(a, b, what: str) -> None:
    if tuple(a.shape) != tuple(b.shape):
        raise ShapeError(f"{what}: shapes {tuple(a.shape)} and {tuple(b.shape)} differ")


def forward_diffuse(x0, t: int, eps, schedule: NoiseSchedule):
    """``sqrt(ab_t) * x0 + sqrt(1 - ab_t) * eps``."""
    _check_t(t, schedule)
    _same_shape(x0, eps, "forward_diffuse")
    ab = schedule.alpha_bars[t]
    return math.sqrt(ab) * x0 + math.sqrt(1.0 - ab) * eps


def estimate_x0(x_t, eps_pred, t: int, schedule: NoiseSchedule):
    """One-shot clean estimate ``(x_t - sqrt(1 - ab_t) * eps) / sqrt(ab_t)``."""
    _check_t(t, schedule)
    _same_shape(x_t, eps_pred, "estimate_x0")
    ab = schedule.alpha_bars[t]
    if ab <= ALPHA_BAR_FLOOR:
        raise ScheduleError(f"alpha_bar[{t}] = {ab:.3e} is too small to invert")
    return (x_t - math.sqrt(1.0 - ab) * eps_pred) / math.sqrt(ab)


def posterior_mean(x_t, eps_pred, t: int, schedule: NoiseSchedule):
    """Ancestral-sampling mean ``(x_t - (1 - a_t) * eps) / sqrt(a_t)``."""
    _check_t(t, schedule)
    _same_shape(x_t, eps_pred, "posterior_mean")
    a = schedule.alphas[t]
    return (x_t - (1.0 - a) * eps_pred) / math.sqrt(a)


def guided_denoise_step(x_t, x0_ref, eps_pred, t: int, schedule: NoiseSchedule,
                        rng: torch.Generator | None = None):
    """Step to ``t - 1`` around a supplied clean-latent estimate.

    Returns ``sqrt(ab_{t-1}) * x0_ref + eta_t * eps_pred + sigma_t * z`` with
    ``eta_t = sqrt(1 - ab_{t-1} - sigma_t^2)`` and ``z`` standard normal.  At
    ``t = 1`` the result is ``x0_ref`` itself.  No noise is drawn when
    ``sigma_t == 0``.
    """
    _check_t(t, schedule)
    _same_shape(x_t, x0_ref, "guided_denoise_step")
    _same_shape(x_t, eps_pred, "guided_denoise_step")
    ab_prev = schedule.alpha_bars[t - 1]
    sigma = schedule.sigmas[t]
    out = math.sqrt(ab_prev) * x0_ref + schedule.eta_t(t) * eps_pred
    if sigma > 0:
        z = torch.randn(tuple(x_t.shape), generator=rng, dtype=torch.float64)
        z = z.to(x_t.dtype) if isinstance(x_t, torch.Tensor) else z.numpy()
        out = out + sigma * z
    return out
