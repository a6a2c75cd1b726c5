"""MFCC / delta-MFCC features and two-microphone fusion."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.fft import dct

from ..audio_io import frame_stream, hann

N_FILTERS = 40
N_LINEAR = 13
LOWEST_HZ = 400.0 / 3.0
LINEAR_SPACING_HZ = 200.0 / 3.0
HIGHEST_HZ = 4000.0
N_COEFFS = 13
ENERGY_FLOOR = 1e-10
FEATURE_DIM = 2 * N_COEFFS


def filter_frequencies(n_filters: int = N_FILTERS, n_linear: int = N_LINEAR,
                       lowest: float = LOWEST_HZ, spacing: float = LINEAR_SPACING_HZ,
                       highest: float = HIGHEST_HZ) -> np.ndarray:
    """``n_filters + 2`` edge/centre frequencies: linear steps first, then a
    constant ratio reaching ``highest`` at the last upper edge."""
    lin = lowest + spacing * np.arange(n_linear)
    n_log = n_filters + 2 - n_linear
    ratio = (highest / lin[-1]) ** (1.0 / n_log)
    logs = lin[-1] * ratio ** np.arange(1, n_log + 1)
    return np.concatenate([lin, logs])


@dataclass(frozen=True)
class MelFilterbank:
    weights: np.ndarray     # (n_filters, n_bins)
    sample_rate: int
    fft_size: int

    @property
    def n_bins(self) -> int:
        return self.weights.shape[1]


def mel_filterbank(sample_rate: int = 22050, fft_size: int = 256) -> MelFilterbank:
    """Equal-area triangular filters on the DFT bin grid."""
    f = filter_frequencies()
    if f[-1] > sample_rate / 2:
        raise ValueError("filterbank exceeds Nyquist")
    bins = np.arange(fft_size // 2 + 1) * sample_rate / fft_size
    lo, mid, hi = f[:-2, None], f[1:-1, None], f[2:, None]
    up = (bins - lo) / (mid - lo)
    down = (hi - bins) / (hi - mid)
    tri = np.clip(np.minimum(up, down), 0.0, None)
    weights = tri * (2.0 / (hi - lo))
    return MelFilterbank(weights, sample_rate, fft_size)


def mfcc(magnitudes, filterbank: MelFilterbank) -> np.ndarray:
    """Cepstral coefficients 0..12 of one magnitude spectrum."""
    mags = np.asarray(magnitudes, dtype=float)
    if mags.shape[-1] != filterbank.n_bins:
        raise ValueError("spectrum size does not match the filterbank")
    energies = mags @ filterbank.weights.T
    logs = np.log(np.maximum(energies, ENERGY_FLOOR))
    return dct(logs, type=2, norm="ortho", axis=-1)[..., :N_COEFFS]


def delta_mfcc(current, previous=None) -> np.ndarray:
    current = np.asarray(current, dtype=float)
    if previous is None:
        return current.copy()
    return current - np.asarray(previous, dtype=float)


def fuse_features(left, right) -> np.ndarray:
    left = np.asarray(left, dtype=float)
    right = np.asarray(right, dtype=float)
    if left.shape[-1] != FEATURE_DIM or right.shape[-1] != FEATURE_DIM:
        raise ValueError(f"both inputs must be {FEATURE_DIM}-dimensional")
    return np.concatenate([left, right], axis=-1)


class FeatureTracker:
    """Per-channel 26-dim feature stream (MFCC followed by its delta)."""

    def __init__(self, filterbank: MelFilterbank):
        self.filterbank = filterbank
        self.previous = None

    def __call__(self, magnitudes) -> np.ndarray:
        c = mfcc(magnitudes, self.filterbank)
        d = delta_mfcc(c, self.previous)
        self.previous = c
        return np.concatenate([c, d])


def feature_matrix(samples, sample_rate: int = 22050, frame_len: int = 256,
                   hop: int = 128) -> np.ndarray:
    """26-dim features for every Hann-windowed frame of a mono signal."""
    frames = frame_stream(samples, frame_len, hop) * hann(frame_len)
    mags = np.abs(np.fft.rfft(frames, axis=1))
    c = mfcc(mags, mel_filterbank(sample_rate, frame_len))
    d = np.diff(c, axis=0, prepend=np.zeros((1, N_COEFFS)))
    return np.hstack([c, d])
