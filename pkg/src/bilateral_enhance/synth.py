"""Deterministic synthetic signals: speech-like harmonic sources, white and
amplitude-modulated noise, SNR mixing and small on-disk corpora."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .audio_io import DEFAULT_RATE, AudioBuffer, write_wav

SPEECH_RMS = 0.05


def speech_like(duration_s: float, sample_rate: int = DEFAULT_RATE, seed: int = 0,
                rms: float = SPEECH_RMS, floor_db: float | None = -50.0) -> np.ndarray:
    """Voiced 'syllables' separated by short pauses.

    Each syllable has a gliding f0 between 90 and 260 Hz, harmonics under a
    two-formant envelope and a raised-cosine amplitude contour. A white
    recording floor ``floor_db`` below the speech level is added (``None``
    leaves the pauses digitally silent).
    """
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * sample_rate))
    out = np.zeros(n)
    pos = int(rng.uniform(0.05, 0.15) * sample_rate)
    while pos < n:
        length = int(rng.uniform(0.12, 0.35) * sample_rate)
        seg = min(length, n - pos)
        t = np.arange(seg) / sample_rate
        f0 = rng.uniform(90, 260) * (1 + rng.uniform(-0.15, 0.15) * t / max(t[-1], 1e-9)) \
            if seg > 1 else np.full(seg, 150.0)
        phase = 2 * np.pi * np.cumsum(f0) / sample_rate
        f1, f2 = rng.uniform(300, 900), rng.uniform(900, 2500)
        sig = np.zeros(seg)
        for k in range(1, 40):
            fk = k * np.mean(f0)
            if fk > 0.45 * sample_rate:
                break
            env = (1.0 / k + 2.0 / (1 + ((fk - f1) / 120) ** 2)
                   + 1.0 / (1 + ((fk - f2) / 200) ** 2))
            sig += env * np.sin(k * phase + rng.uniform(0, 2 * np.pi))
        contour = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(seg) / max(seg - 1, 1))
        out[pos:pos + seg] = sig * contour * rng.uniform(0.5, 1.0)
        pos += length + int(rng.uniform(0.04, 0.2) * sample_rate)
    active = out[np.abs(out) > 0]
    level = np.sqrt(np.mean(active ** 2)) if active.size else 1.0
    out *= rms / level
    if floor_db is not None:
        out += rng.standard_normal(n) * rms * 10 ** (floor_db / 20)
    return out


def white_noise(n: int, seed: int = 0, rms: float = 1.0) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal(n) * rms


def modulated_noise(n: int, sample_rate: int = DEFAULT_RATE, seed: int = 0,
                    rate_hz: float = 2.0, depth: float = 0.8, rms: float = 1.0) -> np.ndarray:
    """White noise under a sinusoidal amplitude envelope."""
    t = np.arange(n) / sample_rate
    env = 1.0 + depth * np.sin(2 * np.pi * rate_hz * t)
    x = white_noise(n, seed) * env
    return x * (rms / np.sqrt(np.mean(x ** 2)))


def fit_length(noise, n: int) -> np.ndarray:
    """Tile or cut ``noise`` to ``n`` samples."""
    noise = np.asarray(noise, dtype=float)
    if noise.size == 0:
        raise ValueError("empty noise signal")
    reps = -(-n // noise.size)
    return np.tile(noise, reps)[:n]


def scale_to_snr(clean, noise, snr_db: float) -> np.ndarray:
    """Noise rescaled so that clean/noise power equals ``snr_db``.
    An all-zero noise stays zero."""
    clean = np.asarray(clean, dtype=float)
    noise = fit_length(noise, clean.size)
    pn = np.mean(noise ** 2)
    if pn == 0:
        return noise
    ps = np.mean(clean ** 2)
    return noise * np.sqrt(ps / (pn * 10 ** (snr_db / 10)))


def make_corpus(root, n_clean: int = 10, duration_s: float = 2.0,
                sample_rate: int = DEFAULT_RATE, seed: int = 0) -> tuple[Path, Path]:
    """Write ``clean/`` speech-like files and ``noise/`` (white, modulated)
    files under ``root``; returns the two directories."""
    root = Path(root)
    clean_dir, noise_dir = root / "clean", root / "noise"
    clean_dir.mkdir(parents=True, exist_ok=True)
    noise_dir.mkdir(parents=True, exist_ok=True)
    for k in range(n_clean):
        x = speech_like(duration_s, sample_rate, seed=seed * 1000 + k)
        write_wav(clean_dir / f"s{k:02d}.wav", AudioBuffer(x, sample_rate))
    n = int(duration_s * sample_rate)
    noises = {
        "white": white_noise(n, seed + 501, rms=0.1),
        "modulated": modulated_noise(n, sample_rate, seed + 502, rms=0.1),
    }
    for name, x in noises.items():
        write_wav(noise_dir / f"{name}.wav", AudioBuffer(x, sample_rate))
    return clean_dir, noise_dir
