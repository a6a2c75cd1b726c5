"""Training-set construction: simulate bilateral pairs through HRIRs and run
the runtime front-end to assign every spectral sample to its cells."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..audio_io import AudioBuffer, HrirPair, convolve_hrir, frame_stream, hann, load_hrir_dir, \
    read_wav, synth_hrir
from ..environment.vad import Vad, combine_vad
from ..gain import GainTable, gain_log_mmse
from ..pipeline import DirectionTracker
from ..snr import Activity, SnrAxes, SnrState, decision_directed_prior, posterior_snr, \
    quantize_snr, update_noise_psd
from ..spectral import Spectrum, bark_bands
from ..synth import scale_to_snr
from .accumulator import TrainAccumulator

DEFAULT_AZIMUTHS = (-60.0, -30.0, 0.0, 30.0, 60.0)


@dataclass
class TrainConfig:
    snr_db: float = 5.0
    azimuths: tuple = DEFAULT_AZIMUTHS
    model: str = "tdoa"
    p: float = 0.0
    L: int = 7
    tau_max: float = 16.0
    Q: int = 13
    axes: SnrAxes = field(default_factory=SnrAxes)
    frame_len: int = 256
    hop: int = 128
    sample_rate: int = 22050
    k_q: float = 0.01
    max_lag: int = 24
    bootstrap: GainTable | None = None   # gain used for the previous-frame estimate

    def __post_init__(self):
        if self.model not in ("tdoa", "ipd"):
            raise ValueError(f"unknown HRTF model {self.model!r}")
        if self.hop * 2 != self.frame_len:
            raise ValueError("hop must be half the frame length")

    @property
    def bands(self):
        return bark_bands(self.sample_rate, self.frame_len)

    def new_accumulator(self) -> TrainAccumulator:
        edges = tuple(self.bands.edges) if self.model == "ipd" else None
        return TrainAccumulator(self.axes, self.model, self.p, self.L, self.tau_max,
                                self.Q, edges)


def _frames(x, cfg: TrainConfig) -> np.ndarray:
    """Same padding and framing as the runtime file processor."""
    lead = np.zeros(cfg.frame_len - cfg.hop)
    return frame_stream(np.concatenate([lead, x, lead]), cfg.frame_len, cfg.hop)


def _spectra(x, cfg: TrainConfig) -> np.ndarray:
    return np.fft.rfft(_frames(x, cfg) * hann(cfg.frame_len), axis=1)


def _estimate(state: SnrState, mags, cfg: TrainConfig):
    zeta = decision_directed_prior(state, mags, state.noise_psd)
    xi = posterior_snr(mags, state.noise_psd)
    i, j = quantize_snr(zeta, xi, cfg.axes)
    if cfg.bootstrap is not None:
        g = cfg.bootstrap.values[i, j]
    else:
        g = gain_log_mmse(np.maximum(zeta, 1e-12), np.maximum(xi, 1e-12))
    return i, j, g


def accumulate_pair(acc: TrainAccumulator, clean: AudioBuffer, noisy: AudioBuffer,
                    cfg: TrainConfig) -> None:
    """Run the front-end over one simulated stereo pair and add its samples."""
    if clean.channels != 2 or noisy.channels != 2 or len(clean) != len(noisy):
        raise ValueError("clean and noisy must be stereo buffers of equal length")
    A = [_spectra(clean.channel(c), cfg) for c in (0, 1)]
    Y = [_spectra(noisy.channel(c), cfg) for c in (0, 1)]
    noisy_frames = [_frames(noisy.channel(c), cfg) for c in (0, 1)]
    n_bins = cfg.frame_len // 2 + 1
    direction = DirectionTracker(cfg.model, cfg.L, cfg.tau_max, cfg.Q, cfg.bands, cfg.max_lag)
    vads = [Vad(cfg.k_q), Vad(cfg.k_q)]
    state = SnrState(n_bins)
    band_of_bin = cfg.bands.band_of_bin()
    for k in range(A[0].shape[0]):
        sl = Spectrum(Y[0][k], cfg.frame_len, cfg.sample_rate)
        sr = Spectrum(Y[1][k], cfg.frame_len, cfg.sample_rate)
        ref, key = direction.update(sl, sr)
        vad = combine_vad(vads[0](noisy_frames[0][k]), vads[1](noisy_frames[1][k]))
        r = ref.index
        mags = np.abs(Y[r][k])
        update_noise_psd(state, mags, vad)
        if vad is Activity.QUIET:
            state.prev_amp = mags
            continue
        i, j, g = _estimate(state, mags, cfg)
        state.prev_amp = g * mags
        dcell = key if cfg.model == "tdoa" else (np.asarray(key)[band_of_bin], band_of_bin)
        acc.accumulate(np.abs(A[r][k]), mags, np.abs(A[1 - r][k]), i, j, dcell)


def simulate_pair(clean_mono, noise_mono, hrir: HrirPair, snr_db: float):
    """Mix at ``snr_db`` and pass clean and noisy signals through the HRIR pair."""
    noise = scale_to_snr(clean_mono, noise_mono, snr_db)
    rate = hrir.sample_rate
    clean = convolve_hrir(AudioBuffer(np.asarray(clean_mono, dtype=float), rate), hrir)
    noisy = convolve_hrir(AudioBuffer(np.asarray(clean_mono, dtype=float) + noise, rate), hrir)
    return clean, noisy


def _wav_files(directory) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"not a directory: {directory}")
    files = sorted(directory.glob("*.wav"))
    if not files:
        raise FileNotFoundError(f"no .wav files in {directory}")
    return files


def resolve_hrirs(source, azimuths, sample_rate: int) -> list[HrirPair]:
    """``"synth"`` (spherical-head model), a directory of HRIR text files,
    or an explicit list of pairs."""
    if isinstance(source, (list, tuple)):
        return list(source)
    if source is None or source == "synth":
        return [synth_hrir(az, sample_rate) for az in azimuths]
    pairs = load_hrir_dir(source)
    if not pairs:
        raise FileNotFoundError(f"no HRIR pairs in {source}")
    return pairs


def build_training_set(clean_dir, noise_dir, hrir_source="synth",
                       config: TrainConfig | None = None) -> TrainAccumulator:
    """Accumulate statistics over every clean file x HRIR direction. Noise
    files are assigned to clean files round-robin."""
    cfg = config or TrainConfig()
    clean_files = _wav_files(clean_dir)
    noise_files = _wav_files(noise_dir)
    noises = []
    for f in noise_files:
        buf = read_wav(f)
        if buf.sample_rate != cfg.sample_rate:
            raise ValueError(f"{f}: sample rate {buf.sample_rate} != {cfg.sample_rate}")
        noises.append(buf.channel(0))
    hrirs = resolve_hrirs(hrir_source, cfg.azimuths, cfg.sample_rate)
    for h in hrirs:
        if h.sample_rate != cfg.sample_rate:
            raise ValueError(f"HRIR at {h.azimuth_deg} deg has rate {h.sample_rate}")
    acc = cfg.new_accumulator()
    for n, f in enumerate(clean_files):
        buf = read_wav(f)
        if buf.sample_rate != cfg.sample_rate:
            raise ValueError(f"{f}: sample rate {buf.sample_rate} != {cfg.sample_rate}")
        x = buf.channel(0)
        for h in hrirs:
            clean, noisy = simulate_pair(x, noises[n % len(noises)], h, cfg.snr_db)
            accumulate_pair(acc, clean, noisy, cfg)
    return acc
