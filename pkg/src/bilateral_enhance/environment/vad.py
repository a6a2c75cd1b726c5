"""Subband-power-difference voice activity detector with a quiet state."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from ..audio_io import frame_stream
from ..snr import Activity
from ..spectral import subband_split

BUFFER_SIZE = 32
SCAN_STEP = 4
SCAN_JUMP = 0.008
SMOOTHING = 0.9


def spd(low_coeffs, high_coeffs) -> float:
    """Absolute difference of the low- and high-band energies."""
    low = np.asarray(low_coeffs, dtype=float)
    high = np.asarray(high_coeffs, dtype=float)
    if low.shape != high.shape:
        raise ValueError("subbands must have equal length")
    return float(abs(np.dot(low, low) - np.dot(high, high)))


def weight_compress(spd_value: float, frame_power: float, prev_dc: float | None = None,
                    smoothing: float = SMOOTHING) -> float:
    """Energy-weighted, tanh-compressed SPD, optionally low-pass smoothed
    against ``prev_dc``."""
    if spd_value < 0 or frame_power < 0:
        raise ValueError("spd and power must be non-negative")
    dw = spd_value * (0.5 + 16.0 / np.log(2.0) * np.log1p(2.0 * frame_power))
    dc = float(np.tanh(dw))
    if prev_dc is not None:
        dc = smoothing * prev_dc + (1.0 - smoothing) * dc
    return dc


@dataclass
class VadState:
    k_q: float = 0.01
    alpha_v: float = 0.975
    tv: float = 0.01
    buffer_size: int = BUFFER_SIZE
    quiet_hangover: int = 10
    noise_hangover: int = 3
    dc_buffer: deque = field(default=None)
    prev_dc: float | None = None
    seeded: bool = False
    frames: int = 0
    output: Activity = Activity.NOISE
    quiet_run: int = 0
    nonvoice_run: int = 0

    def __post_init__(self):
        if not 0.0 <= self.k_q <= 1.0:
            raise ValueError("k_q must lie in [0, 1]")
        if self.tv < 0:
            raise ValueError("Tv must be >= 0")
        if self.dc_buffer is None:
            self.dc_buffer = deque(maxlen=self.buffer_size)


def threshold_candidate(values) -> float | None:
    """First sorted value that rises by more than the jump over 4 positions."""
    dcs = np.sort(np.asarray(values, dtype=float))
    if dcs.size <= SCAN_STEP:
        return None
    rise = dcs[SCAN_STEP:] - dcs[:-SCAN_STEP]
    hits = np.flatnonzero(rise > SCAN_JUMP)
    return float(dcs[hits[0] + SCAN_STEP]) if hits.size else None


def update_threshold(state: VadState, dc: float) -> float:
    """Push ``dc`` and adapt Tv once the buffer is full. The first candidate
    after warm-up replaces the initial Tv outright."""
    state.dc_buffer.append(float(dc))
    if len(state.dc_buffer) == state.buffer_size:
        cand = threshold_candidate(state.dc_buffer)
        if cand is not None:
            if state.seeded:
                state.tv = state.alpha_v * state.tv + (1.0 - state.alpha_v) * cand
            else:
                state.tv = cand
                state.seeded = True
    return state.tv


def raw_decision(dc: float, tv: float, k_q: float) -> Activity:
    if dc >= tv:
        return Activity.VOICE
    if dc >= k_q * tv:
        return Activity.NOISE
    return Activity.QUIET


def vad_decide(state: VadState, dc: float) -> Activity:
    """Three-way decision with hangover. Must be called after
    :func:`update_threshold` for the same frame."""
    state.frames += 1
    if state.frames <= state.buffer_size:
        state.output = Activity.NOISE
        return state.output
    raw = raw_decision(dc, state.tv, state.k_q)
    if raw is Activity.VOICE:
        state.quiet_run = state.nonvoice_run = 0
        state.output = Activity.VOICE
        return state.output
    state.nonvoice_run += 1
    state.quiet_run = state.quiet_run + 1 if raw is Activity.QUIET else 0
    if state.quiet_run >= state.quiet_hangover:
        state.output = Activity.QUIET
    elif state.output is Activity.VOICE and state.nonvoice_run < state.noise_hangover:
        pass
    else:
        state.output = Activity.NOISE
    return state.output


def combine_vad(left: Activity, right: Activity) -> Activity:
    left, right = Activity(left), Activity(right)
    if Activity.VOICE in (left, right):
        return Activity.VOICE
    if left is Activity.QUIET and right is Activity.QUIET:
        return Activity.QUIET
    return Activity.NOISE


class Vad:
    """Frame-by-frame detector for one channel."""

    def __init__(self, k_q: float = 0.01, **kw):
        self.state = VadState(k_q=k_q, **kw)
        self.last_dc = 0.0

    def __call__(self, frame) -> Activity:
        x = np.asarray(frame, dtype=float)
        low, high = subband_split(x)
        dc = weight_compress(spd(low, high), float(np.dot(x, x)), self.state.prev_dc)
        self.state.prev_dc = dc
        self.last_dc = dc
        update_threshold(self.state, dc)
        return vad_decide(self.state, dc)


def run_vad(samples, frame_len: int = 256, hop: int = 128, k_q: float = 0.01) -> list[Activity]:
    """Label every analysis frame of a mono signal."""
    vad = Vad(k_q=k_q)
    return [vad(f) for f in frame_stream(samples, frame_len, hop)]
