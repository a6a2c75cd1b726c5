"""Noise PSD tracking, decision-directed prior SNR and SNR quantization."""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

PSD_FLOOR = 1e-12


class Activity(str, Enum):
    VOICE = "voice"
    NOISE = "noise"
    QUIET = "quiet"


@dataclass(frozen=True)
class SnrAxes:
    prior_db_min: float = -19.0
    prior_db_max: float = 40.0
    posterior_db_min: float = -30.0
    posterior_db_max: float = 40.0
    I: int = 60
    J: int = 70

    def __post_init__(self):
        if not (self.prior_db_min < self.prior_db_max
                and self.posterior_db_min < self.posterior_db_max):
            raise ValueError("axis minimum must be below maximum")
        if self.I < 1 or self.J < 1:
            raise ValueError("I and J must be >= 1")

    def prior_centers_db(self) -> np.ndarray:
        step = (self.prior_db_max - self.prior_db_min) / self.I
        return self.prior_db_min + step * (np.arange(self.I) + 0.5)

    def posterior_centers_db(self) -> np.ndarray:
        step = (self.posterior_db_max - self.posterior_db_min) / self.J
        return self.posterior_db_min + step * (np.arange(self.J) + 0.5)


@dataclass
class SnrState:
    """Per-stream estimator state (one per channel)."""

    n_bins: int
    alpha: float = 0.98
    zeta_min: float = 10 ** (-1.9)
    alpha_noise: float = 0.95
    init_frames: int = 6
    noise_psd: np.ndarray = field(default=None)
    prev_amp: np.ndarray = field(default=None)
    frames_seen: int = 0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.noise_psd is None:
            self.noise_psd = np.full(self.n_bins, PSD_FLOOR)
        if self.prev_amp is None:
            self.prev_amp = np.zeros(self.n_bins)


def posterior_snr(magnitudes, noise_psd):
    """``R^2 / lambda_d`` with the PSD floored."""
    return np.asarray(magnitudes, dtype=float) ** 2 / np.maximum(noise_psd, PSD_FLOOR)


def decision_directed_prior(state: SnrState, magnitudes, noise_psd):
    """Prior SNR from the previous amplitude estimate and the current frame."""
    lam = np.maximum(noise_psd, PSD_FLOOR)
    xi = np.asarray(magnitudes, dtype=float) ** 2 / lam
    return (state.alpha * state.prev_amp ** 2 / lam
            + (1.0 - state.alpha) * np.maximum(xi - 1.0, state.zeta_min))


def update_noise_psd(state: SnrState, magnitudes, background) -> None:
    """Running mean over the first ``init_frames`` frames, then recursive
    averaging on Noise/Quiet frames; Voice frames leave the PSD untouched."""
    power = np.asarray(magnitudes, dtype=float) ** 2
    if state.frames_seen < state.init_frames:
        n = state.frames_seen
        state.noise_psd = (state.noise_psd * n + power) / (n + 1) if n else power.copy()
    elif Activity(background) is not Activity.VOICE:
        a = state.alpha_noise
        state.noise_psd = a * state.noise_psd + (1.0 - a) * power
    np.maximum(state.noise_psd, PSD_FLOOR, out=state.noise_psd)
    state.frames_seen += 1


def _bin_index(value_db, lo, hi, count):
    idx = np.floor((value_db - lo) * (count / (hi - lo)))
    return np.clip(idx, 0, count - 1).astype(int)


def to_db(x):
    return 10.0 * np.log10(np.maximum(x, 1e-300))


def quantize_snr(zeta, xi, axes: SnrAxes):
    """Uniform dB bins, clamped at both ends; returns ``(i, j)``."""
    i = _bin_index(to_db(zeta), axes.prior_db_min, axes.prior_db_max, axes.I)
    j = _bin_index(to_db(xi), axes.posterior_db_min, axes.posterior_db_max, axes.J)
    if np.ndim(i) == 0:
        return int(i), int(j)
    return i, j
