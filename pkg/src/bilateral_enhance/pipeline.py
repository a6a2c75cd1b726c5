"""Frame-synchronous bilateral enhancement: direction tracking, activity and
background decisions, reference-side suppression and non-reference
reconstruction, plus an architecture timing benchmark."""
from __future__ import annotations

import csv
import os
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio_io import AudioBuffer, frame_stream, hann, overlap_add
from .environment.decision import (Background, BackgroundClassifier, BackgroundDecision,
                                   decide_background)
from .environment.features import FeatureTracker, fuse_features, mel_filterbank
from .environment.gmm import ClassifierBundle
from .environment.vad import Vad, combine_vad
from .gain import (GainTable, HrtfGain, apply_suppression, load_model,
                   reconstruct_nonref_ipd, reconstruct_nonref_tdoa, storage_bits)
from .snr import Activity, SnrState, update_noise_psd
from .spectral import Spectrum, bark_bands, compute_ipd, quantize_ipd, synthesize
from .tdoa import (DelayTracker, Reference, gcc_delay_spectra, quantize_delay,
                   select_reference, update_tracker)

DEFAULT_CLASS = "default"


# --------------------------------------------------------------- direction

class DirectionTracker:
    """Turns a pair of frame spectra into a reference choice and an HRTF key.

    Delay model: GCC-PHAT delay, median-filtered, quantized to ``l``; the
    reference follows the sign of the filtered delay but only switches after
    ``flip_frames`` consecutive frames disagree with it. IPD model: per-band
    direction indices with the left input as reference.
    """

    def __init__(self, model: str = "tdoa", L: int = 7, tau_max: float = 16.0, Q: int = 13,
                 bands=None, max_lag: int = 24, tracker_size: int = 20, flip_frames: int = 20):
        if model not in ("tdoa", "ipd"):
            raise ValueError(f"unknown HRTF model {model!r}")
        if model == "ipd" and bands is None:
            raise ValueError("ipd tracking needs a band partition")
        self.model, self.L, self.tau_max, self.Q, self.bands = model, L, tau_max, Q, bands
        self.max_lag = max_lag
        self.tracker = DelayTracker(tracker_size)
        self.flip_frames = flip_frames
        self.reference: Reference | None = None
        self.flip_count = 0
        self.tau = 0

    def _follow(self, tau: int) -> Reference:
        want = select_reference(tau)
        if self.reference is None:
            self.reference = want
        elif want is not self.reference and tau != 0:
            self.flip_count += 1
            if self.flip_count >= self.flip_frames:
                self.reference, self.flip_count = want, 0
        else:
            self.flip_count = 0
        return self.reference

    def update(self, spec_left: Spectrum, spec_right: Spectrum):
        if self.model == "ipd":
            self.reference = Reference.INPUT1
            q = quantize_ipd(compute_ipd(spec_left, spec_right, self.bands), self.Q)
            return self.reference, np.atleast_1d(q)
        raw = gcc_delay_spectra(spec_left.bins, spec_right.bins, spec_left.fft_size,
                                self.max_lag)
        self.tau = update_tracker(self.tracker, raw)
        ref = self._follow(self.tau)
        return ref, quantize_delay(self.tau, self.L, self.tau_max)


def key_repr(key) -> str:
    if np.ndim(key) == 0:
        return str(int(key))
    return ";".join(str(int(k)) for k in key)


# ------------------------------------------------------------------ config

@dataclass
class PipelineConfig:
    models: dict                          # noise class -> (GainTable, HrtfGain)
    bundle: ClassifierBundle | None = None
    frame_len: int = 256
    hop: int = 128
    sample_rate: int = 22050
    k_q: float = 0.01
    vote: int = 20
    bypass_quiet: bool = True
    bypass_music: bool = True
    suppress: bool = True
    max_lag: int = 24
    tracker_size: int = 20
    flip_frames: int = 20
    force_reference: Reference | None = None

    def __post_init__(self):
        if isinstance(self.models, tuple):
            self.models = {DEFAULT_CLASS: self.models}
        if not self.models:
            raise ValueError("at least one gain model is required")
        tables = [t for t, _ in self.models.values()]
        hrtfs = [h for _, h in self.models.values()]
        if len({t.axes for t in tables}) != 1:
            raise ValueError("gain tables use different SNR axes")
        if len({(h.model, h.values.shape, h.tau_max) for h in hrtfs}) != 1:
            raise ValueError("HRTF gains differ in form or size")
        h = hrtfs[0]
        if h.model == "ipd":
            expected = bark_bands(self.sample_rate, self.frame_len)
            if tuple(h.bands.edges) != tuple(expected.edges):
                raise ValueError("HRTF band partition does not match frame size / rate")
        if self.hop * 2 != self.frame_len:
            raise ValueError("hop must be half the frame length (Hann overlap-add)")

    @property
    def hrtf_model(self) -> str:
        return next(iter(self.models.values()))[1].model

    @property
    def default_class(self) -> str:
        return DEFAULT_CLASS if DEFAULT_CLASS in self.models else next(iter(self.models))


def load_models(path) -> dict:
    """A single ``.gt`` file, or a directory of ``<class>.gt`` files."""
    path = Path(path)
    if path.is_dir():
        files = sorted(path.glob("*.gt"))
        if not files:
            raise FileNotFoundError(f"no .gt model files in {path}")
        return {f.stem: load_model(f) for f in files}
    return {DEFAULT_CLASS: load_model(path)}


# ------------------------------------------------------------------- state

@dataclass
class PipelineState:
    config: PipelineConfig
    snr: SnrState = field(default=None)
    vads: list = field(default=None)
    direction: DirectionTracker = field(default=None)
    classifier: BackgroundClassifier | None = None
    features: list = field(default=None)
    active_class: str = ""
    frame_index: int = 0
    window: np.ndarray = field(default=None)

    def __post_init__(self):
        cfg = self.config
        n_bins = cfg.frame_len // 2 + 1
        # one estimator state that follows whichever input is the reference
        self.snr = SnrState(n_bins)
        self.vads = [Vad(cfg.k_q), Vad(cfg.k_q)]
        table, hrtf = next(iter(cfg.models.values()))
        self.direction = DirectionTracker(
            hrtf.model, L=hrtf.values.shape[0], tau_max=hrtf.tau_max or 16.0,
            Q=hrtf.values.shape[0], bands=hrtf.bands, max_lag=cfg.max_lag,
            tracker_size=cfg.tracker_size, flip_frames=cfg.flip_frames)
        if cfg.bundle is not None:
            self.classifier = BackgroundClassifier(cfg.bundle, cfg.vote)
            fb = mel_filterbank(cfg.sample_rate, cfg.frame_len)
            self.features = [FeatureTracker(fb), FeatureTracker(fb)]
        self.active_class = cfg.default_class
        self.window = hann(cfg.frame_len)

    @property
    def active_model(self) -> tuple[GainTable, HrtfGain]:
        return self.config.models[self.active_class]


# ------------------------------------------------------------------- frame

def analyze_pair(state: PipelineState, frame_left, frame_right):
    w = state.window
    rate = state.config.sample_rate
    n = state.config.frame_len
    return (Spectrum(np.fft.rfft(frame_left * w), n, rate),
            Spectrum(np.fft.rfft(frame_right * w), n, rate))


def _background(state: PipelineState, vad: Activity, spec_l, spec_r) -> BackgroundDecision:
    if state.classifier is None:
        if vad is Activity.QUIET:
            return BackgroundDecision(Background.QUIET)
        kind = Background.VOICE if vad is Activity.VOICE else Background.NOISE
        return BackgroundDecision(kind, state.active_class)
    fl = state.features[0](spec_l.magnitudes)
    fr = state.features[1](spec_r.magnitudes)
    feats = fuse_features(fl, fr) if state.classifier.bundle.dim == 2 * fl.size else fl
    return decide_background(vad, feats, state.classifier)


def enhance_pair(state: PipelineState, spec_l: Spectrum, spec_r: Spectrum, ref: Reference,
                 key, vad: Activity, bypass: bool):
    """Suppress the reference and rebuild the other input (or pass both
    through). Returns the two output spectra."""
    specs = (spec_l, spec_r)
    r = ref.index
    mags = specs[r].magnitudes
    update_noise_psd(state.snr, mags, vad)
    if bypass:
        state.snr.prev_amp = mags
        return spec_l, spec_r
    table, hrtf = state.active_model
    enh_ref = apply_suppression(specs[r], table, state.snr)
    if hrtf.model == "tdoa":
        enh_non = reconstruct_nonref_tdoa(enh_ref, hrtf, key, specs[1 - r])
    else:
        enh_non = reconstruct_nonref_ipd(enh_ref, hrtf, key, specs[1 - r])
    return (enh_ref, enh_non) if r == 0 else (enh_non, enh_ref)


def process_frame(state: PipelineState, frame_left, frame_right, inject: dict | None = None):
    """One analysis frame. ``inject`` may fix ``vad``, ``decision``,
    ``reference`` and ``key`` instead of estimating them.

    Returns the two output frames (Hann-weighted, ready for overlap-add),
    the background decision and a diagnostics dict.
    """
    cfg = state.config
    inject = inject or {}
    fl = np.asarray(frame_left, dtype=float)
    fr = np.asarray(frame_right, dtype=float)
    if fl.shape != (cfg.frame_len,) or fr.shape != (cfg.frame_len,):
        raise ValueError(f"frames must hold {cfg.frame_len} samples")
    spec_l, spec_r = analyze_pair(state, fl, fr)

    if "reference" in inject:
        ref, key = inject["reference"], inject["key"]
    else:
        ref, key = state.direction.update(spec_l, spec_r)
        if cfg.force_reference is not None:
            ref = cfg.force_reference

    if "vad" in inject:
        vad = Activity(inject["vad"])
    else:
        vad = combine_vad(state.vads[0](fl), state.vads[1](fr))

    if "decision" in inject:
        decision = inject["decision"]
    else:
        decision = _background(state, vad, spec_l, spec_r)
    if decision.kind is Background.NOISE and decision.label in cfg.models:
        state.active_class = decision.label

    bypass = (not cfg.suppress
              or (decision.kind is Background.QUIET and cfg.bypass_quiet)
              or (decision.kind is Background.MUSIC and cfg.bypass_music))
    out_l, out_r = enhance_pair(state, spec_l, spec_r, ref, key, vad, bypass)
    diag = {
        "frame": state.frame_index,
        "vad": vad,
        "background": decision.kind,
        "class": state.active_class,
        "tau_or_q": key_repr(state.direction.tau if state.direction.model == "tdoa" else key),
        "ref_channel": ref,
        "key": key,
        "bypass": bypass,
    }
    state.frame_index += 1
    return synthesize(out_l), synthesize(out_r), decision, diag


# -------------------------------------------------------------------- file

def _pad(x, cfg: PipelineConfig):
    lead = cfg.frame_len - cfg.hop
    return np.concatenate([np.zeros(lead), x, np.zeros(lead)])


def process_file(config: PipelineConfig, stereo: AudioBuffer, inject=None):
    """Enhance a stereo buffer. Returns ``(AudioBuffer, decision log rows)``.

    ``inject`` is an optional per-frame list of injection dicts.
    """
    if stereo.channels != 2:
        raise ValueError("process_file needs a stereo buffer")
    if stereo.sample_rate != config.sample_rate:
        raise ValueError(f"sample rate {stereo.sample_rate} != configured {config.sample_rate}")
    state = PipelineState(config)
    n = len(stereo)
    fl = frame_stream(_pad(stereo.channel(0), config), config.frame_len, config.hop)
    fr = frame_stream(_pad(stereo.channel(1), config), config.frame_len, config.hop)
    out_l = np.empty_like(fl)
    out_r = np.empty_like(fr)
    log = []
    for k in range(fl.shape[0]):
        inj = inject[k] if inject is not None else None
        out_l[k], out_r[k], _, diag = process_frame(state, fl[k], fr[k], inj)
        log.append(diag)
    return _assemble(out_l, out_r, config, n), log


def _assemble(out_l, out_r, config: PipelineConfig, n: int) -> AudioBuffer:
    lead = config.frame_len - config.hop
    w = hann(config.frame_len)
    left = overlap_add(out_l, config.hop, w, config.sample_rate).samples[lead:lead + n]
    right = overlap_add(out_r, config.hop, w, config.sample_rate).samples[lead:lead + n]
    return AudioBuffer.stereo(left, right, config.sample_rate)


LOG_FIELDS = ("frame", "vad", "background", "class", "tau_or_q", "ref_channel")


def _atomic_csv(path, header, rows) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows(rows)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _cell(v):
    return v.value if hasattr(v, "value") else v


def write_decision_log(path, log) -> None:
    _atomic_csv(path, LOG_FIELDS, ([_cell(d[k]) for k in LOG_FIELDS] for d in log))


# ------------------------------------------------------------------- bench

def _suppress_channel(state: PipelineState, specs, log) -> np.ndarray:
    """Unilateral run of the table on one channel (G only)."""
    models = state.config.models
    snr = state.snr
    out = []
    for k, spec in enumerate(specs):
        d = log[k]
        mags = spec.magnitudes
        update_noise_psd(snr, mags, d["vad"])
        if d["bypass"]:
            snr.prev_amp = mags
            out.append(spec.bins)
        else:
            out.append(apply_suppression(spec, models[d["class"]][0], snr).bins)
    return _synthesize_all(out, state.config.frame_len)


# analysis and synthesis are batched in every mode; only the per-frame
# suppression path differs between architectures
def _analyze_channel(frames, window, rate):
    n = frames.shape[1]
    return [Spectrum(b, n, rate) for b in np.fft.rfft(frames * window, axis=1)]


def _synthesize_all(bins, n) -> np.ndarray:
    return np.fft.irfft(np.asarray(bins), n, axis=1)


def bench_modes(config: PipelineConfig, stereo: AudioBuffer, repetitions: int = 3):
    """Time the suppression path of three architectures on shared decisions.

    Detection (activity, background, direction) runs once and is replayed to
    every mode with the reference fixed to the one chosen most often, so the
    reference output is comparable bit for bit. Returns a dict with per-mode
    median seconds, per-frame microseconds, storage bits and the reference
    outputs of each mode.
    """
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    _, log = process_file(config, stereo)
    refs = [d["ref_channel"] for d in log]
    ref = max((Reference.INPUT1, Reference.INPUT2), key=refs.count)
    fixed = PipelineConfig(**{**config.__dict__, "force_reference": ref})
    n = len(stereo)
    fl = frame_stream(_pad(stereo.channel(0), config), config.frame_len, config.hop)
    fr = frame_stream(_pad(stereo.channel(1), config), config.frame_len, config.hop)
    frames = (fl, fr)
    r = ref.index
    window = hann(config.frame_len)

    def proposed():
        st = PipelineState(fixed)
        specs_l = _analyze_channel(fl, window, config.sample_rate)
        specs_r = _analyze_channel(fr, window, config.sample_rate)
        out = ([], [])
        for k, d in enumerate(log):
            st.active_class = d["class"]
            ol, orr = enhance_pair(st, specs_l[k], specs_r[k], ref, d["key"], d["vad"],
                                   d["bypass"])
            out[0].append(ol.bins)
            out[1].append(orr.bins)
        res = [_synthesize_all(o, config.frame_len) for o in out]
        return res[r]

    def unilateral(channel):
        st = PipelineState(fixed)
        specs = _analyze_channel(frames[channel], window, config.sample_rate)
        return _suppress_channel(st, specs, log)

    def sequential():
        a = unilateral(r)
        unilateral(1 - r)
        return a

    timings = {"proposed": [], "sequential": [], "independent": []}
    outputs = {}
    for _ in range(repetitions):
        t0 = time.perf_counter()
        outputs["proposed"] = proposed()
        t1 = time.perf_counter()
        outputs["sequential"] = sequential()
        t2 = time.perf_counter()
        times = []
        for c in (r, 1 - r):
            tc = time.perf_counter()
            o = unilateral(c)
            times.append(time.perf_counter() - tc)
            if c == r:
                outputs["independent"] = o
        timings["proposed"].append(t1 - t0)
        timings["sequential"].append(t2 - t1)
        timings["independent"].append(max(times))
    ref_out = {m: _assemble(o, o, config, n).channel(0) for m, o in outputs.items()}
    base = ref_out["proposed"].tobytes()
    if any(v.tobytes() != base for v in ref_out.values()):
        raise AssertionError("reference-channel outputs differ between modes")
    table, hrtf = next(iter(config.models.values()))
    I, J = table.axes.I, table.axes.J
    Ld = int(np.prod(hrtf.values.shape))
    storage = {"proposed": storage_bits("proposed", I, J, Ld),
               "sequential": storage_bits("double", I, J),
               "independent": storage_bits("double", I, J)}
    n_fr = fl.shape[0]
    report = {}
    for m, ts in timings.items():
        med = float(np.median(ts))
        report[m] = {"total_s": med, "per_frame_us": med / n_fr * 1e6,
                     "storage_bits": storage[m], "runs": ts}
    return {"modes": report, "reference": ref, "frames": n_fr, "reference_output": ref_out}


def write_timing_report(path, report) -> None:
    rows = [(m, repr(v["total_s"]), repr(v["per_frame_us"]), v["storage_bits"])
            for m, v in report["modes"].items()]
    _atomic_csv(path, ("mode", "total_s", "per_frame_us", "storage_bits"), rows)
