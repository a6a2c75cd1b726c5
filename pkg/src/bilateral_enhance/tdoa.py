"""Interaural delay estimation by generalized cross-correlation."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum

import numpy as np


class Reference(str, Enum):
    INPUT1 = "input1"   # left
    INPUT2 = "input2"   # right

    @property
    def index(self) -> int:
        return 0 if self is Reference.INPUT1 else 1


@dataclass(frozen=True)
class DelayEstimate:
    """``tau`` > 0 means the right signal lags the left one by ``tau`` samples."""

    tau: int
    confidence: float


def _pick_lag(corr: np.ndarray, lags: np.ndarray) -> DelayEstimate:
    # Visit lags by increasing |lag| so that argmax ties resolve toward 0.
    order = np.argsort(np.abs(lags), kind="stable")
    best = order[np.argmax(corr[order])]
    mean = np.mean(np.abs(corr))
    conf = float(corr[best] / mean) if mean > 0 else 0.0
    return DelayEstimate(int(lags[best]), conf)


def _correlate(cross: np.ndarray, nfft: int, max_lag: int, phat: bool):
    if phat:
        mag = np.abs(cross)
        cross = np.where(mag > 1e-20, cross / np.where(mag > 1e-20, mag, 1.0), 0.0)
    cc = np.fft.irfft(cross, nfft)
    lags = np.arange(-max_lag, max_lag + 1)
    return cc[lags % nfft], lags


def gcc_delay(frame_left, frame_right, max_lag: int = 24, phat: bool = True) -> DelayEstimate:
    """Delay of ``frame_right`` relative to ``frame_left`` within ``+-max_lag``.

    Uses zero-padded FFTs, so the correlation is linear rather than circular.
    """
    x = np.asarray(frame_left, dtype=float)
    y = np.asarray(frame_right, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("frames must be 1-D and of equal length")
    if x.size < 2 * max_lag:
        raise ValueError("frames shorter than 2 * max_lag")
    if not np.any(x) and not np.any(y):
        return DelayEstimate(0, 0.0)
    nfft = 1 << (2 * x.size - 1).bit_length()
    cross = np.fft.rfft(y, nfft) * np.conj(np.fft.rfft(x, nfft))
    corr, lags = _correlate(cross, nfft, max_lag, phat)
    return _pick_lag(corr, lags)


def gcc_delay_spectra(bins_left, bins_right, fft_size: int, max_lag: int = 24,
                      phat: bool = True) -> DelayEstimate:
    """GCC on already-computed (windowed, un-padded) frame spectra.

    Circular over ``fft_size``; used inside the frame loop to reuse the
    analysis FFTs.
    """
    if not np.any(bins_left) and not np.any(bins_right):
        return DelayEstimate(0, 0.0)
    cross = np.asarray(bins_right) * np.conj(bins_left)
    corr, lags = _correlate(cross, fft_size, max_lag, phat)
    return _pick_lag(corr, lags)


@dataclass
class DelayTracker:
    """Median filter over the most recent raw delay estimates."""

    size: int = 20
    history: deque = field(default=None)
    filtered: int = 0

    def __post_init__(self):
        if self.history is None:
            self.history = deque(maxlen=self.size)


def update_tracker(tracker: DelayTracker, estimate) -> int:
    """Push a raw estimate, return the (lower) median of the stored window."""
    tau = estimate.tau if isinstance(estimate, DelayEstimate) else estimate
    tracker.history.append(int(tau))
    ordered = sorted(tracker.history)
    tracker.filtered = ordered[(len(ordered) - 1) // 2]
    return tracker.filtered


def quantize_delay(tau, L: int, tau_max: float):
    """Index of the nearest of ``L`` uniformly spaced points on ``[-tau_max, tau_max]``."""
    if L < 1:
        raise ValueError("L must be >= 1")
    if L == 1 or tau_max <= 0:
        return 0 if np.ndim(tau) == 0 else np.zeros(np.shape(tau), dtype=int)
    pos = (np.asarray(tau, dtype=float) + tau_max) / (2 * tau_max) * (L - 1)
    l = np.clip(np.floor(pos + 0.5), 0, L - 1).astype(int)
    return int(l) if l.ndim == 0 else l


def select_reference(tau) -> Reference:
    """The leading input is the reference; a zero delay keeps input 1."""
    return Reference.INPUT1 if tau >= 0 else Reference.INPUT2
