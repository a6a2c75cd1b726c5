"""Closed-form initialization, the alternating WE solver and the momentum
gradient-descent optimizer."""
from __future__ import annotations

import csv
import os
import tempfile
from dataclasses import dataclass

import numpy as np

from ..gain import GainTable, HrtfGain, gain_log_mmse
from ..snr import SnrAxes
from ..spectral import BandPartition
from .accumulator import TrainAccumulator
from .objective import CRITERIA, GRADIENTS, grad_generalized, total_distortion

DEFAULT_LEARNING_RATES = {"WE": 0.5, "LE": 1e-6, "WC": 5e-7}
REL_TOL = 1e-9


class DivergenceError(RuntimeError):
    """Optimization blew up; ``trace`` holds the losses seen so far."""

    def __init__(self, message: str, trace: list[float]):
        super().__init__(message)
        self.trace = trace


# ------------------------------------------------------------- empty cells

def _nearest_fill_axis(values: np.ndarray, known: np.ndarray, axis: int):
    """Copy each unknown entry from the nearest known entry along ``axis``
    (ties go to the lower index). Returns updated values and mask."""
    v = np.moveaxis(values.copy(), axis, -1)
    k = np.moveaxis(known.copy(), axis, -1)
    flat_v = v.reshape(-1, v.shape[-1])
    flat_k = k.reshape(-1, k.shape[-1])
    pos = np.arange(flat_v.shape[1])
    for row_v, row_k in zip(flat_v, flat_k):
        idx = np.flatnonzero(row_k)
        if idx.size == 0 or idx.size == row_k.size:
            continue
        # distance to every known index; argmin picks the lower index on ties
        nearest = idx[np.argmin(np.abs(pos[:, None] - idx[None, :]), axis=1)]
        missing = ~row_k
        row_v[missing] = row_v[nearest[missing]]
        row_k[:] = True
    return np.moveaxis(v, -1, axis), np.moveaxis(k, -1, axis)


def fill_empty_gains(values, counts, axes: SnrAxes) -> np.ndarray:
    """Propagate trained gains into cells that saw no data: along the prior
    axis, then the posterior axis, then fall back to log-MMSE at cell centres."""
    known = np.asarray(counts) > 0
    v, known = _nearest_fill_axis(np.asarray(values, dtype=float), known, 0)
    v, known = _nearest_fill_axis(v, known, 1)
    if not known.all():
        zeta = 10 ** (axes.prior_centers_db() / 10)
        xi = 10 ** (axes.posterior_centers_db() / 10)
        fallback = gain_log_mmse(zeta[:, None], xi[None, :])
        v = np.where(known, v, fallback)
    return v


def fill_empty_hrtf(values, counts) -> np.ndarray:
    """Nearest trained direction cell (per band for the IPD form), else 1."""
    known = np.asarray(counts) > 0
    v, known = _nearest_fill_axis(np.asarray(values, dtype=float), known, 0)
    return np.where(known, v, 1.0)


def _ref_counts(acc):
    return acc.ref.n


def _dir_counts(acc):
    return acc.nonref.n.sum(axis=(0, 1))


def _wrap(acc: TrainAccumulator, G, H, criterion: str, fill: bool = True):
    G = np.asarray(G, dtype=float)
    H = np.asarray(H, dtype=float)
    if fill:
        G = fill_empty_gains(G, _ref_counts(acc), acc.axes)
        H = fill_empty_hrtf(H, _dir_counts(acc))
    table = GainTable(G, acc.axes, criterion=criterion, p=acc.p)
    if acc.model == "tdoa":
        hrtf = HrtfGain("tdoa", H, tau_max=acc.tau_max)
    else:
        hrtf = HrtfGain("ipd", H, bands=BandPartition(tuple(acc.band_edges)))
    return table, hrtf


# ------------------------------------------------------------ closed forms

def _safe_ratio(num, den, default=1.0):
    return np.divide(num, den, out=np.full(np.shape(num), float(default)), where=den > 0)


def unilateral_closed_form(acc: TrainAccumulator, criterion: str = "WE") -> np.ndarray:
    """Per-cell minimizer of the reference-side distortion (raw, unfilled).
    Empty cells hold 1."""
    r = acc.ref
    if criterion == "WE":
        return _safe_ratio(r.s1, r.s2)
    if criterion == "WC":
        return np.sqrt(_safe_ratio(r.c1, r.c2))
    if criterion == "LE":
        return np.exp(_safe_ratio(r.la - r.lr, r.n, 0.0))
    raise ValueError(f"unknown criterion {criterion!r}")


def init_unilateral(acc: TrainAccumulator, criterion: str = "WE", fill: bool = True) -> GainTable:
    """Weighted-Euclidean (or the named criterion's) unilateral gain table."""
    G = unilateral_closed_form(acc, criterion)
    if fill:
        G = fill_empty_gains(G, acc.ref.n, acc.axes)
    return GainTable(G, acc.axes, criterion=criterion, p=acc.p)


def _h_update(acc: TrainAccumulator, G, weights=None):
    s = acc.nonref
    Ge = G.reshape(G.shape + (1,) * (s.s1.ndim - 2))
    w = 1.0 if weights is None else weights
    num = (w * Ge * s.s1).sum(axis=(0, 1))
    den = (w * Ge * Ge * s.s2).sum(axis=(0, 1))
    return _safe_ratio(num, den)


def _g_update(acc: TrainAccumulator, H, beta, wr=None, wn=None):
    r, s = acc.ref, acc.nonref
    He = H.reshape((1, 1) + H.shape)
    axes = tuple(range(2, s.s1.ndim))
    if wr is None:
        num = r.s1 + beta * (He * s.s1).sum(axis=axes)
        den = r.s2 + beta * (He * He * s.s2).sum(axis=axes)
    else:
        # multiply through by the reference weight's inverse so that beta = 0
        # reduces to the plain s1 / s2 quotient
        scale = np.divide(wn, wr.reshape(wr.shape + (1,) * len(axes)),
                          out=np.zeros_like(wn), where=wr.reshape(wr.shape + (1,) * len(axes)) > 0)
        num = r.s1 + beta * (scale * He * s.s1).sum(axis=axes)
        den = r.s2 + beta * (scale * He * He * s.s2).sum(axis=axes)
    return _safe_ratio(num, den)


def solve_we_quasistatic(acc: TrainAccumulator, beta: float = 1.0, iterations: int = 200,
                         normalized: bool = False, fill: bool = True):
    """Alternate exact H and G updates starting from the unilateral table.

    With ``normalized=False`` each half-step exactly minimizes the plain
    sum-of-errors objective; ``normalized=True`` uses the cell-averaged
    weights instead. Returns ``(GainTable, HrtfGain, trace)`` where ``trace``
    lists the total distortion (in the chosen form) before the first update
    and after each iteration.
    """
    G, H, trace = _quasistatic(acc, beta, iterations, normalized)
    table, hrtf = _wrap(acc, G, H, "WE", fill)
    return table, hrtf, trace


def _quasistatic(acc: TrainAccumulator, beta: float, iterations: int, normalized: bool):
    if acc.p < 0:
        raise ValueError("p must be >= 0")
    G = unilateral_closed_form(acc, "WE")
    H = np.ones(acc.direction_shape)
    wr = wn = None
    if normalized:
        ij = acc.axes.I * acc.axes.J
        wr = np.divide(1.0, acc.ref.n, out=np.zeros_like(acc.ref.n), where=acc.ref.n > 0) / ij
        wn = np.divide(1.0, acc.nonref.n, out=np.zeros_like(acc.nonref.n),
                       where=acc.nonref.n > 0) / (ij * acc.n_direction_cells)
    trace = [total_distortion(acc, G, H, "WE", beta, normalized)]
    if beta != 0:
        for _ in range(iterations):
            H_new = _h_update(acc, G, wn)
            G_new = _g_update(acc, H_new, beta, wr, wn)
            d_new = total_distortion(acc, G_new, H_new, "WE", beta, normalized)
            if d_new > trace[-1]:
                # only rounding noise can raise the loss of an exact block update
                break
            change = max(_rel_change(G_new, G), _rel_change(H_new, H))
            G, H = G_new, H_new
            trace.append(d_new)
            if change < REL_TOL:
                break
    return G, H, trace


def _rel_change(new, old):
    den = np.maximum(np.abs(old), 1e-300)
    return float(np.max(np.abs(new - old) / den)) if np.size(new) else 0.0


# --------------------------------------------------------------- optimizer

@dataclass
class OptimizerConfig:
    criterion: str = "WE"
    learning_rate: float | None = None
    momentum: float = 0.9
    iterations: int = 200
    beta: float = 1.0
    p: float = 0.0
    min_gain: float = 1e-4
    engine: str = "direct"          # "direct" or "generalized"
    divergence_factor: float = 1e6

    def __post_init__(self):
        if self.criterion not in CRITERIA:
            raise ValueError(f"unknown criterion {self.criterion!r}")
        if self.learning_rate is None:
            self.learning_rate = DEFAULT_LEARNING_RATES[self.criterion]
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.engine not in ("direct", "generalized"):
            raise ValueError(f"unknown engine {self.engine!r}")


def bilateral_init(acc: TrainAccumulator, criterion: str):
    """Unilateral closed-form G and, given that G, the per-direction-cell
    closed-form H of the same criterion."""
    G = unilateral_closed_form(acc, criterion)
    s = acc.nonref
    Ge = G.reshape(G.shape + (1,) * (s.s1.ndim - 2))
    w = np.divide(1.0, s.n, out=np.zeros_like(s.n), where=s.n > 0)
    if criterion == "WE":
        H = _safe_ratio((w * Ge * s.s1).sum(axis=(0, 1)), (w * Ge * Ge * s.s2).sum(axis=(0, 1)))
    elif criterion == "WC":
        H = np.sqrt(_safe_ratio((w * s.c1 / Ge).sum(axis=(0, 1)), (w * Ge * s.c2).sum(axis=(0, 1))))
    else:
        used = s.n > 0
        num = np.where(used, w * (s.la - s.lr) - np.log(Ge), 0.0).sum(axis=(0, 1))
        H = np.exp(_safe_ratio(num, used.sum(axis=(0, 1)).astype(float), 0.0))
    return G, H


def optimize(acc: TrainAccumulator, config: OptimizerConfig, init=None, fill: bool = True):
    """Steepest descent with momentum on the averaged total distortion.

    ``init`` is ``(G, H)`` arrays. The default start is the cell-averaged WE
    quasi-static solution, which keeps the WC and LE steps well scaled.
    Returns ``(GainTable, HrtfGain, trace)``; ``trace[0]`` is the initial loss.
    Raises :class:`DivergenceError` when the loss exceeds
    ``divergence_factor`` times its initial value or becomes non-finite.
    """
    crit = config.criterion
    if init is None:
        G, H, _ = _quasistatic(acc, config.beta, 200, normalized=True)
    else:
        G, H = (np.array(x, dtype=float) for x in init)
    if G.shape != acc.ref.shape or H.shape != acc.direction_shape:
        raise ValueError("init dimensions do not match the accumulator")
    G = np.maximum(G, config.min_gain)
    H = np.maximum(H, config.min_gain)
    if config.engine == "generalized":
        grad = lambda g, h: grad_generalized(acc, g, h, crit, config.beta)   # noqa: E731
    else:
        grad = lambda g, h: GRADIENTS[crit](acc, g, h, config.beta)          # noqa: E731
    vG = np.zeros_like(G)
    vH = np.zeros_like(H)
    loss0 = total_distortion(acc, G, H, crit, config.beta)
    trace = [loss0]
    limit = config.divergence_factor * max(abs(loss0), 1e-300)
    lr, mu = config.learning_rate, config.momentum
    for _ in range(config.iterations):
        dG, dH = grad(G, H)
        vG = mu * vG - lr * dG
        vH = mu * vH - lr * dH
        G = np.maximum(G + vG, config.min_gain)
        H = np.maximum(H + vH, config.min_gain)
        loss = total_distortion(acc, G, H, crit, config.beta)
        trace.append(loss)
        if not np.isfinite(loss) or loss > limit:
            raise DivergenceError(f"{crit} optimization diverged (loss {loss:.4g})", trace)
    table, hrtf = _wrap(acc, G, H, crit, fill)
    return table, hrtf, trace


def write_loss_trace(path, trace) -> None:
    """``iteration,distortion`` CSV, written atomically."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "distortion"])
            for k, d in enumerate(trace):
                w.writerow([k, repr(float(d))])
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
