"""Suppression gains, HRTF reconstruction gains, storage model and model files."""
from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import special

from .snr import SnrAxes, SnrState, decision_directed_prior, quantize_snr, PSD_FLOOR
from .spectral import BandPartition, Spectrum

G_MAX = 40.0
MODEL_MAGIC = "gaintab v1"
CRITERIA = ("WE", "LE", "WC", "direct")


class ModelFormatError(ValueError):
    """Malformed or inconsistent model file."""


# ------------------------------------------------------------ model gains

def _check_positive(zeta, xi):
    zeta = np.asarray(zeta, dtype=float)
    xi = np.asarray(xi, dtype=float)
    if np.any(zeta <= 0) or np.any(xi <= 0):
        raise ValueError("prior and posterior SNR must be positive")
    return zeta, xi


def gain_mmse(zeta, xi):
    """MMSE short-time spectral amplitude gain.

    The confluent hypergeometric term uses
    ``Phi(-1/2; 1; -v) = exp(-v/2) [(1 + v) I0(v/2) + v I1(v/2)]`` with
    exponentially scaled Bessel functions, so large ``v`` does not overflow.
    """
    zeta, xi = _check_positive(zeta, xi)
    v = zeta * xi / (1.0 + zeta)
    phi = (1.0 + v) * special.i0e(v / 2) + v * special.i1e(v / 2)
    g = np.sqrt(np.pi * v) / (2.0 * xi) * phi
    return np.clip(g, 0.0, G_MAX)


def gain_log_mmse(zeta, xi):
    """MMSE log-spectral amplitude gain ``zeta/(1+zeta) * exp(E1(v)/2)``."""
    zeta, xi = _check_positive(zeta, xi)
    v = zeta * xi / (1.0 + zeta)
    g = zeta / (1.0 + zeta) * np.exp(0.5 * special.exp1(v))
    return np.clip(g, 0.0, G_MAX)


# ------------------------------------------------------------------ tables

@dataclass
class GainTable:
    values: np.ndarray
    axes: SnrAxes = field(default_factory=SnrAxes)
    criterion: str = "WE"
    p: float = 0.0
    noise_class: str = "default"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.axes.I, self.axes.J):
            raise ValueError(
                f"table shape {self.values.shape} != ({self.axes.I}, {self.axes.J})")
        if not np.all(np.isfinite(self.values)) or np.any(self.values < 0):
            raise ValueError("gains must be finite and non-negative")
        if self.criterion not in CRITERIA:
            raise ValueError(f"unknown criterion {self.criterion!r}")

    @classmethod
    def constant(cls, value: float, axes: SnrAxes | None = None, **kw) -> "GainTable":
        axes = axes or SnrAxes()
        return cls(np.full((axes.I, axes.J), float(value)), axes, **kw)

    @classmethod
    def from_model(cls, fn, axes: SnrAxes | None = None, **kw) -> "GainTable":
        """Tabulate a model-based gain ``fn(zeta, xi)`` at the cell centres."""
        axes = axes or SnrAxes()
        zeta = 10 ** (axes.prior_centers_db() / 10)[:, None]
        xi = 10 ** (axes.posterior_centers_db() / 10)[None, :]
        return cls(fn(zeta, xi), axes, criterion="direct", **kw)


@dataclass
class HrtfGain:
    """Either a delay-indexed vector (``model='tdoa'``) or an IPD-direction x
    band matrix (``model='ipd'``)."""

    model: str
    values: np.ndarray
    tau_max: float | None = None
    bands: BandPartition | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(self.values)) or np.any(self.values < 0):
            raise ValueError("HRTF gains must be finite and non-negative")
        if self.model == "tdoa":
            if self.values.ndim != 1 or self.tau_max is None or self.bands is not None:
                raise ValueError("tdoa form needs a 1-D vector and tau_max only")
        elif self.model == "ipd":
            if self.values.ndim != 2 or self.bands is None or self.tau_max is not None:
                raise ValueError("ipd form needs a QxB matrix and a band partition only")
            if self.values.shape[1] != self.bands.n_bands:
                raise ValueError("matrix columns differ from band count")
        else:
            raise ValueError(f"unknown HRTF model {self.model!r}")

    @property
    def L(self) -> int:
        return self.values.shape[0]

    @property
    def Q(self) -> int:
        return self.values.shape[0]

    @classmethod
    def ones_tdoa(cls, L: int = 7, tau_max: float = 16.0) -> "HrtfGain":
        return cls("tdoa", np.ones(L), tau_max=tau_max)

    @classmethod
    def ones_ipd(cls, Q: int, bands: BandPartition) -> "HrtfGain":
        return cls("ipd", np.ones((Q, bands.n_bands)), bands=bands)


def lookup(table: GainTable, i, j):
    return table.values[i, j]


def suppression_gains(table: GainTable, state: SnrState, magnitudes, noise_psd):
    """Per-bin table gains and cell indices for one frame (no state update)."""
    lam = np.maximum(noise_psd, PSD_FLOOR)
    xi = np.asarray(magnitudes, dtype=float) ** 2 / lam
    zeta = decision_directed_prior(state, magnitudes, lam)
    i, j = quantize_snr(zeta, xi, table.axes)
    return table.values[i, j], i, j


def apply_suppression(spectrum: Spectrum, table: GainTable, snr_state: SnrState,
                      noise_psd=None) -> Spectrum:
    """Scale each bin's magnitude by its table gain; phases pass through.

    Updates ``snr_state.prev_amp`` with the enhanced amplitudes.
    """
    if noise_psd is None:
        noise_psd = snr_state.noise_psd
    mags = spectrum.magnitudes
    g, _, _ = suppression_gains(table, snr_state, mags, noise_psd)
    snr_state.prev_amp = g * mags
    return Spectrum(spectrum.bins * g, spectrum.fft_size, spectrum.sample_rate)


def _with_phase_of(magnitudes, phase_source: Spectrum) -> Spectrum:
    b = phase_source.bins
    mag_src = np.abs(b)
    unit = np.divide(b, mag_src, out=np.ones_like(b), where=mag_src > 0)
    return Spectrum(magnitudes * unit, phase_source.fft_size, phase_source.sample_rate)


def reconstruct_nonref_tdoa(enhanced_ref: Spectrum, hrtf: HrtfGain, l: int,
                            nonref_noisy: Spectrum) -> Spectrum:
    """Non-reference spectrum: ``H_l`` times the enhanced reference magnitudes,
    carrying the non-reference input's own phase."""
    if hrtf.model != "tdoa":
        raise ValueError("HRTF gain is not in tdoa form")
    return _with_phase_of(hrtf.values[l] * enhanced_ref.magnitudes, nonref_noisy)


def reconstruct_nonref_ipd(enhanced_ref: Spectrum, hrtf: HrtfGain, q_per_band,
                           nonref_noisy: Spectrum) -> Spectrum:
    """Band-wise ``H[q_b, b]`` scaling of the enhanced reference magnitudes."""
    if hrtf.model != "ipd":
        raise ValueError("HRTF gain is not in ipd form")
    q_per_band = np.asarray(q_per_band, dtype=int)
    if q_per_band.shape != (hrtf.bands.n_bands,):
        raise ValueError("need one direction index per band")
    band_gain = hrtf.values[q_per_band, np.arange(hrtf.bands.n_bands)]
    per_bin = band_gain[hrtf.bands.band_of_bin()]
    return _with_phase_of(per_bin * enhanced_ref.magnitudes, nonref_noisy)


def storage_bits(mode: str, I: int, J: int, L: int = 0, W: int = 16) -> int:
    """Gain storage per noise class for the three bilateral architectures."""
    if min(I, J, W) < 1:
        raise ValueError("I, J and W must be positive")
    if mode == "double":
        return 2 * I * J * W
    if mode == "per_direction":
        return L * I * J * W
    if mode == "proposed":
        return (I * J + L) * W
    raise ValueError(f"unknown storage mode {mode!r}")


# ------------------------------------------------------------- model files

def _fmt(x: float) -> str:
    return repr(float(x))


def save_model(path, table: GainTable, hrtf: HrtfGain) -> None:
    ax = table.axes
    head = [
        MODEL_MAGIC,
        f"criterion={table.criterion}",
        f"p={_fmt(table.p)}",
        f"noise_class={table.noise_class}",
        f"I={ax.I}",
        f"J={ax.J}",
        f"prior_db_min={_fmt(ax.prior_db_min)}",
        f"prior_db_max={_fmt(ax.prior_db_max)}",
        f"posterior_db_min={_fmt(ax.posterior_db_min)}",
        f"posterior_db_max={_fmt(ax.posterior_db_max)}",
        f"hrtf_model={hrtf.model}",
    ]
    if hrtf.model == "tdoa":
        head += [f"L={hrtf.L}", f"tau_max={_fmt(hrtf.tau_max)}"]
    else:
        head += [f"Q={hrtf.Q}", f"B={hrtf.bands.n_bands}",
                 "band_edges=" + ",".join(str(int(e)) for e in hrtf.bands.edges)]
    body = "\n".join(head) + "\n\n"
    body += "\n".join(_fmt(v) for v in table.values.ravel()) + "\n\n"
    body += "\n".join(_fmt(v) for v in hrtf.values.ravel()) + "\n"
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", suffix=".tmp")
    with os.fdopen(fd, "w") as fh:
        fh.write(body)
    os.replace(tmp, path)


def _numbers(lines, count, what):
    if len(lines) != count:
        raise ModelFormatError(f"expected {count} {what} values, found {len(lines)}")
    try:
        vals = np.array([float(s) for s in lines])
    except ValueError as exc:
        raise ModelFormatError(f"unparsable {what} value: {exc}") from exc
    if not np.all(np.isfinite(vals)):
        raise ModelFormatError(f"non-finite {what} value in model file")
    return vals


def load_model(path) -> tuple[GainTable, HrtfGain]:
    text = Path(path).read_text()
    sections = text.strip("\n").split("\n\n")
    if not sections or not sections[0].startswith("gaintab"):
        raise ModelFormatError(f"{path}: not a gain-table model file")
    head = sections[0].splitlines()
    if head[0].strip() != MODEL_MAGIC:
        raise ModelFormatError(f"{path}: unsupported version {head[0].strip()!r}")
    if len(sections) != 3:
        raise ModelFormatError(f"{path}: expected header, gain and HRTF sections")
    meta = {}
    for line in head[1:]:
        if "=" not in line:
            raise ModelFormatError(f"{path}: bad header line {line!r}")
        k, v = line.split("=", 1)
        meta[k.strip()] = v.strip()
    try:
        axes = SnrAxes(float(meta["prior_db_min"]), float(meta["prior_db_max"]),
                       float(meta["posterior_db_min"]), float(meta["posterior_db_max"]),
                       int(meta["I"]), int(meta["J"]))
        gains = _numbers(sections[1].splitlines(), axes.I * axes.J, "gain")
        table = GainTable(gains.reshape(axes.I, axes.J), axes, meta["criterion"],
                          float(meta["p"]), meta["noise_class"])
        model = meta["hrtf_model"]
        if model == "tdoa":
            L = int(meta["L"])
            h = _numbers(sections[2].splitlines(), L, "HRTF")
            hrtf = HrtfGain("tdoa", h, tau_max=float(meta["tau_max"]))
        elif model == "ipd":
            Q, B = int(meta["Q"]), int(meta["B"])
            edges = tuple(int(e) for e in meta["band_edges"].split(","))
            if len(edges) != B + 1:
                raise ModelFormatError(f"{path}: band_edges disagree with B")
            h = _numbers(sections[2].splitlines(), Q * B, "HRTF")
            hrtf = HrtfGain("ipd", h.reshape(Q, B), bands=BandPartition(edges))
        else:
            raise ModelFormatError(f"{path}: unknown hrtf_model {model!r}")
    except KeyError as exc:
        raise ModelFormatError(f"{path}: missing header key {exc}") from exc
    except ModelFormatError:
        raise
    except ValueError as exc:
        raise ModelFormatError(f"{path}: {exc}") from exc
    return table, hrtf
