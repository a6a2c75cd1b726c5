"""Audio file I/O, framing / overlap-add and binaural scene simulation."""
from __future__ import annotations

import os
import tempfile
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DEFAULT_RATE = 22050
SPEED_OF_SOUND = 343.0
_HRIR_HALF_KERNEL = 8
_HRIR_TAPS = 40


class AudioFormatError(ValueError):
    """Raised for unsupported, truncated or otherwise unusable audio data."""


@dataclass
class AudioBuffer:
    """Samples in [-1, 1], shape ``(n,)`` for mono or ``(n, 2)`` for stereo."""

    samples: np.ndarray
    sample_rate: int = DEFAULT_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.ndim not in (1, 2) or (
            self.samples.ndim == 2 and self.samples.shape[1] not in (1, 2)
        ):
            raise ValueError(f"bad sample array shape {self.samples.shape}")
        if self.samples.ndim == 2 and self.samples.shape[1] == 1:
            self.samples = self.samples[:, 0]
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("samples must be finite")

    @property
    def channels(self) -> int:
        return 1 if self.samples.ndim == 1 else 2

    def __len__(self) -> int:
        return self.samples.shape[0]

    def channel(self, idx: int) -> np.ndarray:
        if self.channels == 1:
            if idx != 0:
                raise IndexError("mono buffer has a single channel")
            return self.samples
        return self.samples[:, idx]

    @classmethod
    def stereo(cls, left, right, sample_rate=DEFAULT_RATE) -> "AudioBuffer":
        left = np.asarray(left, dtype=float)
        right = np.asarray(right, dtype=float)
        if left.shape != right.shape:
            raise ValueError("left/right length mismatch")
        return cls(np.stack([left, right], axis=1), sample_rate)


@dataclass
class HrirPair:
    left: np.ndarray
    right: np.ndarray
    azimuth_deg: float = 0.0
    sample_rate: int = DEFAULT_RATE

    def __post_init__(self):
        self.left = np.asarray(self.left, dtype=float).ravel()
        self.right = np.asarray(self.right, dtype=float).ravel()
        for name, h in (("left", self.left), ("right", self.right)):
            if h.size == 0 or not np.all(np.isfinite(h)):
                raise ValueError(f"{name} impulse response must be non-empty and finite")


# --------------------------------------------------------------------- WAV

def read_wav(path) -> AudioBuffer:
    """Read a 16-bit PCM RIFF/WAVE file, scaling samples by 1/32768."""
    try:
        with wave.open(str(path), "rb") as wf:
            if wf.getcomptype() != "NONE":
                raise AudioFormatError(f"{path}: compressed WAV not supported")
            if wf.getsampwidth() != 2:
                raise AudioFormatError(
                    f"{path}: only 16-bit PCM supported (got {8 * wf.getsampwidth()}-bit)")
            nch = wf.getnchannels()
            if nch not in (1, 2):
                raise AudioFormatError(f"{path}: {nch} channels not supported")
            rate = wf.getframerate()
            nframes = wf.getnframes()
            raw = wf.readframes(nframes)
    except wave.Error as exc:
        raise AudioFormatError(f"{path}: {exc}") from exc
    except EOFError as exc:
        raise AudioFormatError(f"{path}: truncated file") from exc
    if nframes == 0 or len(raw) == 0:
        raise AudioFormatError(f"{path}: zero-length audio")
    if len(raw) != nframes * nch * 2:
        raise AudioFormatError(f"{path}: truncated file")
    data = np.frombuffer(raw, dtype="<i2").astype(float) / 32768.0
    if nch == 2:
        data = data.reshape(-1, 2)
    return AudioBuffer(data, rate)


def to_pcm16(samples: np.ndarray) -> np.ndarray:
    """Saturating quantization of [-1, 1] floats to int16."""
    samples = np.asarray(samples, dtype=float)
    if np.any(np.isnan(samples)):
        raise ValueError("cannot quantize NaN samples")
    return np.clip(np.round(samples * 32768.0), -32768, 32767).astype("<i2")


def write_wav(path, buffer: AudioBuffer) -> None:
    """Write ``buffer`` as 16-bit PCM, atomically (temp file + rename)."""
    pcm = to_pcm16(buffer.samples)
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", suffix=".tmp")
    os.close(fd)
    try:
        with wave.open(tmp, "wb") as wf:
            wf.setnchannels(buffer.channels)
            wf.setsampwidth(2)
            wf.setframerate(int(buffer.sample_rate))
            wf.writeframes(pcm.tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ------------------------------------------------------------ framing / OLA

def hann(n: int) -> np.ndarray:
    """Periodic Hann window; sums to a constant 1 at hop n/2."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def n_frames(n_samples: int, hop: int) -> int:
    return -(-n_samples // hop)


def frame_stream(samples, frame_len: int, hop: int) -> np.ndarray:
    """Split a 1-D signal into frames; frame k starts at ``k * hop``.

    Frames are produced while the start index lies inside the signal, the
    trailing partial frames are zero-padded. Returns ``(n_frames, frame_len)``.
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim != 1:
        raise ValueError("frame_stream expects a single channel")
    if not frame_len >= hop >= 1:
        raise ValueError("need frame_len >= hop >= 1")
    if x.size == 0:
        raise ValueError("empty buffer")
    count = n_frames(x.size, hop)
    padded = np.zeros((count - 1) * hop + frame_len)
    padded[: x.size] = x
    idx = np.arange(count)[:, None] * hop + np.arange(frame_len)[None, :]
    return padded[idx]


def cola_gain(window: np.ndarray, hop: int, tol: float = 1e-10) -> float:
    """Constant overlap-add sum of ``window`` at ``hop``; raises if not constant."""
    window = np.asarray(window, dtype=float)
    n = window.size
    if hop < 1 or hop > n:
        raise ValueError("hop must be in [1, len(window)]")
    acc = np.zeros(hop)
    for start in range(0, n, hop):
        seg = window[start:start + hop]
        acc[: seg.size] += seg
    if np.ptp(acc) > tol * max(1.0, abs(acc.mean())) or acc.mean() <= 0:
        raise ValueError("window/hop pair violates constant overlap-add")
    return float(acc.mean())


def overlap_add(frames, hop: int, window=None, sample_rate: int = DEFAULT_RATE,
                length: int | None = None) -> AudioBuffer:
    """Overlap-add analysis-windowed frames and undo the window's COLA gain.

    ``window`` is the analysis window the frames carry (``None`` means
    rectangular). ``length`` trims the result.
    """
    frames = np.asarray(frames, dtype=float)
    if frames.ndim != 2:
        raise ValueError("frames must be 2-D")
    count, flen = frames.shape
    if window is None:
        window = np.ones(flen)
    if len(window) != flen:
        raise ValueError("window length differs from frame length")
    gain = cola_gain(window, hop)
    out = np.zeros((count - 1) * hop + flen)
    for k in range(count):
        out[k * hop:k * hop + flen] += frames[k]
    out /= gain
    if length is not None:
        out = out[:length]
    return AudioBuffer(out, sample_rate)


# ------------------------------------------------------------------- HRIRs

def convolve_hrir(mono: AudioBuffer, hrir: HrirPair) -> AudioBuffer:
    """Full linear convolution of a mono signal with both ears' responses."""
    if mono.channels != 1:
        raise ValueError("convolve_hrir expects a mono buffer")
    if mono.sample_rate != hrir.sample_rate:
        raise ValueError(
            f"sample rate mismatch: signal {mono.sample_rate} Hz, HRIR {hrir.sample_rate} Hz")
    x = mono.samples
    n = x.size + max(hrir.left.size, hrir.right.size) - 1
    nfft = 1 << (n - 1).bit_length()
    spec = np.fft.rfft(x, nfft)
    left = np.fft.irfft(spec * np.fft.rfft(hrir.left, nfft), nfft)[:n]
    right = np.fft.irfft(spec * np.fft.rfft(hrir.right, nfft), nfft)[:n]
    return AudioBuffer.stereo(left, right, mono.sample_rate)


def woodworth_itd(azimuth_deg: float, head_radius_m: float = 0.0875) -> float:
    """Interaural delay in seconds of a rigid spherical head."""
    theta = np.deg2rad(abs(azimuth_deg))
    return head_radius_m / SPEED_OF_SOUND * (theta + np.sin(theta))


def synth_hrir(azimuth_deg: float, sample_rate: int = DEFAULT_RATE,
               head_radius_m: float = 0.0875) -> HrirPair:
    """Deterministic spherical-head HRIR pair.

    Negative azimuths place the source on the left. The far ear gets the
    integer Woodworth delay, a broadband head-shadow attenuation and a
    symmetric (forward-backward) one-pole low-pass whose cutoff falls with
    ``|azimuth|``; the kernel is zero-phase so the interaural delay stays an
    exact integer number of samples.
    """
    if not -80.0 <= azimuth_deg <= 80.0:
        raise ValueError("azimuth must lie in [-80, 80] degrees")
    itd = int(round(woodworth_itd(azimuth_deg, head_radius_m) * sample_rate))
    s = abs(np.sin(np.deg2rad(azimuth_deg)))
    base = _HRIR_HALF_KERNEL
    near = np.zeros(_HRIR_TAPS)
    near[base] = 1.0
    far = np.zeros(_HRIR_TAPS)
    pole = 0.5 * s
    offs = np.arange(-_HRIR_HALF_KERNEL, _HRIR_HALF_KERNEL + 1)
    kernel = pole ** np.abs(offs)
    kernel /= kernel.sum()
    shadow = 1.0 - 0.5 * s
    far[base + itd + offs] = shadow * kernel
    if azimuth_deg < 0:
        return HrirPair(near, far, azimuth_deg, sample_rate)
    if azimuth_deg > 0:
        return HrirPair(far, near, azimuth_deg, sample_rate)
    return HrirPair(near, near.copy(), azimuth_deg, sample_rate)


def write_hrir(path, taps, sample_rate: int, azimuth_deg: float) -> None:
    path = Path(path)
    lines = [f"hrir v1 {int(sample_rate)} {azimuth_deg!r}"]
    lines += [repr(float(v)) for v in np.asarray(taps, dtype=float)]
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", suffix=".tmp")
    with os.fdopen(fd, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(tmp, path)


def read_hrir(path) -> tuple[np.ndarray, int, float]:
    """Read one ear's HRIR text file; returns ``(taps, sample_rate, azimuth)``."""
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 4 or header[:2] != ["hrir", "v1"]:
            raise AudioFormatError(f"{path}: bad HRIR header")
        rate, azimuth = int(header[2]), float(header[3])
        taps = np.array([float(line) for line in fh if line.strip()])
    if taps.size == 0 or not np.all(np.isfinite(taps)):
        raise AudioFormatError(f"{path}: empty or non-finite HRIR")
    return taps, rate, azimuth


def load_hrir_pair(left_path, right_path) -> HrirPair:
    left, rate_l, az_l = read_hrir(left_path)
    right, rate_r, az_r = read_hrir(right_path)
    if rate_l != rate_r or az_l != az_r:
        raise AudioFormatError("left/right HRIR headers disagree")
    return HrirPair(left, right, az_l, rate_l)


def load_hrir_dir(directory) -> list[HrirPair]:
    """Load ``<stem>_left.txt`` / ``<stem>_right.txt`` pairs, sorted by azimuth."""
    directory = Path(directory)
    pairs = []
    for left in sorted(directory.glob("*_left.txt")):
        right = left.with_name(left.name[: -len("_left.txt")] + "_right.txt")
        if not right.exists():
            raise AudioFormatError(f"missing right-ear file for {left.name}")
        pairs.append(load_hrir_pair(left, right))
    if not pairs:
        raise AudioFormatError(f"{directory}: no HRIR pairs found")
    return sorted(pairs, key=lambda p: p.azimuth_deg)
