"""Spectral analysis/synthesis, bark bands, interaural phase differences and
the level-1 wavelet split used by the VAD."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Zwicker critical-band upper edges (Hz).
ZWICKER_EDGES_HZ = (
    100, 200, 300, 400, 510, 630, 770, 920, 1080, 1270, 1480, 1720, 2000,
    2320, 2700, 3150, 3700, 4400, 5300, 6400, 7700, 9500, 12000, 15500,
)

_SQ3 = np.sqrt(3.0)
# Daubechies 4-tap orthonormal low-pass analysis filter.
D4_LOW = np.array([1 + _SQ3, 3 + _SQ3, 3 - _SQ3, 1 - _SQ3]) / (4 * np.sqrt(2.0))
D4_HIGH = np.array([(-1) ** k * D4_LOW[3 - k] for k in range(4)])


@dataclass
class Spectrum:
    """One-sided DFT of a windowed frame, bins ``0 .. fft_size/2``.

    Stored as complex bins; magnitudes and phases are derived views.
    """

    bins: np.ndarray
    fft_size: int
    sample_rate: int = 22050

    def __post_init__(self):
        self.bins = np.asarray(self.bins, dtype=complex)
        if self.bins.shape != (self.fft_size // 2 + 1,):
            raise ValueError(
                f"expected {self.fft_size // 2 + 1} bins, got {self.bins.shape}")

    @property
    def magnitudes(self) -> np.ndarray:
        return np.abs(self.bins)

    @property
    def phases(self) -> np.ndarray:
        ph = np.angle(self.bins)
        return np.where(ph <= -np.pi, np.pi, ph)

    @classmethod
    def from_polar(cls, magnitudes, phases, fft_size, sample_rate=22050) -> "Spectrum":
        magnitudes = np.asarray(magnitudes, dtype=float)
        if np.any(magnitudes < 0) or not np.all(np.isfinite(magnitudes)):
            raise ValueError("magnitudes must be finite and non-negative")
        return cls(magnitudes * np.exp(1j * np.asarray(phases, dtype=float)),
                   fft_size, sample_rate)

    def with_magnitudes(self, magnitudes) -> "Spectrum":
        return Spectrum.from_polar(magnitudes, self.phases, self.fft_size, self.sample_rate)


@dataclass(frozen=True)
class BandPartition:
    """Contiguous bin bands; band b covers ``edges[b] <= k < edges[b+1]``."""

    edges: tuple
    scale: str = "bark"

    def __post_init__(self):
        e = np.asarray(self.edges)
        if e.size < 2 or e[0] != 0 or np.any(np.diff(e) <= 0):
            raise ValueError("band edges must start at 0 and increase strictly")

    @property
    def n_bands(self) -> int:
        return len(self.edges) - 1

    @property
    def n_bins(self) -> int:
        return int(self.edges[-1])

    def band_of_bin(self) -> np.ndarray:
        """Band index of every bin."""
        return np.repeat(np.arange(self.n_bands), np.diff(self.edges))


def analyze(frame, window=None, sample_rate: int = 22050) -> Spectrum:
    """Windowed DFT of a frame (``window=None`` is rectangular)."""
    frame = np.asarray(frame, dtype=float)
    if window is not None:
        window = np.asarray(window, dtype=float)
        if window.shape != frame.shape:
            raise ValueError("frame/window length mismatch")
        frame = frame * window
    return Spectrum(np.fft.rfft(frame), frame.size, sample_rate)


def synthesize(spectrum: Spectrum) -> np.ndarray:
    """Inverse of :func:`analyze` (returns the windowed frame)."""
    return np.fft.irfft(spectrum.bins, spectrum.fft_size)


def bark_bands(sample_rate: int, fft_size: int) -> BandPartition:
    """Map Zwicker critical-band edges onto DFT bins.

    Edges at or above Nyquist are dropped, edges that collapse onto the same
    bin are merged, and a leading band holding only the DC bin is folded into
    the next band.
    """
    n_bins = fft_size // 2 + 1
    nyquist = sample_rate / 2.0
    df = sample_rate / fft_size
    edges = [0]
    for f in ZWICKER_EDGES_HZ:
        if f >= nyquist:
            break
        k = int(np.floor(f / df + 0.5))
        if edges[-1] < k < n_bins:
            edges.append(k)
    edges.append(n_bins)
    if len(edges) > 2 and edges[1] == 1:
        del edges[1]
    return BandPartition(tuple(edges))


def _wrap_half_open(angle):
    """Map onto (-pi, pi]."""
    angle = np.asarray(angle, dtype=float)
    return np.where(angle <= -np.pi, angle + 2 * np.pi, angle)


def compute_ipd(spec_left: Spectrum, spec_right: Spectrum, bands: BandPartition,
                eps: float = 1e-12) -> np.ndarray:
    """Per-band interaural phase difference.

    Each band sums ``R_L R_R exp(j(theta_L - theta_R))`` over its bins, which is
    the band cross-spectrum ``X_L conj(X_R)``; the IPD is the angle of that sum.
    Bands whose summed magnitude is below ``eps`` get an IPD of 0.
    """
    if spec_left.fft_size != spec_right.fft_size:
        raise ValueError("spectra have different fft sizes")
    if bands.n_bins != spec_left.bins.size:
        raise ValueError("band partition does not match spectrum size")
    lb, rb = spec_left.bins, spec_right.bins
    # explicit parts keep the imaginary sum exactly zero for identical inputs
    cross = (lb.real * rb.real + lb.imag * rb.imag) + 1j * (lb.imag * rb.real - lb.real * rb.imag)
    sums = np.add.reduceat(cross, np.asarray(bands.edges[:-1]))
    ipd = np.where(np.abs(sums) < eps, 0.0, np.angle(sums))
    return _wrap_half_open(ipd)


def quantize_ipd(ipd, q_count: int):
    """Uniform direction index over [-pi, pi), clamped to ``Q - 1``."""
    if q_count < 1:
        raise ValueError("Q must be >= 1")
    q = np.floor((np.asarray(ipd, dtype=float) + np.pi) / (2 * np.pi / q_count))
    q = np.clip(q, 0, q_count - 1).astype(int)
    return int(q) if q.ndim == 0 else q


def subband_split(frame) -> tuple[np.ndarray, np.ndarray]:
    """Level-1 periodic D4 wavelet analysis: ``(low, high)``, each N/2 long."""
    x = np.asarray(frame, dtype=float)
    n = x.size
    if n % 2:
        raise ValueError("frame length must be even")
    idx = (2 * np.arange(n // 2)[:, None] + np.arange(4)[None, :]) % n
    seg = x[idx]
    return seg @ D4_LOW, seg @ D4_HIGH
