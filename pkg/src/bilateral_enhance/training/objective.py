"""Total distortion and its gradients with respect to the suppression gains G
and the HRTF gains H, computed from accumulated cell statistics.

Two gradient engines are provided. The per-criterion functions
(:func:`grad_we`, :func:`grad_le`, :func:`grad_wc`) differentiate the
objective returned by :func:`total_distortion`. :func:`grad_generalized`
assembles the same derivatives from parameter-dependent K / Lambda factors and
data-dependent Phi / Psi averages; its Euclidean and log-Euclidean
distortions carry a 1/2 factor, so for WE and LE it returns half the
per-criterion gradient (WC has no such factor).
"""
from __future__ import annotations

import numpy as np

from .accumulator import CellStats, TrainAccumulator

CRITERIA = ("WE", "LE", "WC")
GENERALIZED_SCALE = {"WE": 0.5, "LE": 0.5, "WC": 1.0}


def _check(acc: TrainAccumulator, G, H):
    G = np.asarray(G, dtype=float)
    H = np.asarray(H, dtype=float)
    if G.shape != acc.ref.shape:
        raise ValueError(f"G shape {G.shape} != {acc.ref.shape}")
    if H.shape != acc.direction_shape:
        raise ValueError(f"H shape {H.shape} != {acc.direction_shape}")
    if acc.ref.n.sum() == 0 and acc.nonref.n.sum() == 0:
        raise ValueError("empty accumulator")
    return G, H


def _expand(G, H):
    """Broadcast G over direction axes and H over SNR axes."""
    extra = H.ndim
    return G.reshape(G.shape + (1,) * extra), H.reshape((1, 1) + H.shape)


def _inv(n):
    return np.divide(1.0, n, out=np.zeros_like(n), where=n > 0)


def _weights(acc: TrainAccumulator, normalized: bool):
    """Per-cell weights: 1/(IJ M) and 1/(IJ Ld M') for the averaged objective,
    plain 1 for the unnormalized sum-of-errors objective."""
    if not normalized:
        return (acc.ref.n > 0).astype(float), (acc.nonref.n > 0).astype(float)
    ij = acc.axes.I * acc.axes.J
    return _inv(acc.ref.n) / ij, _inv(acc.nonref.n) / (ij * acc.n_direction_cells)


def _cell_sums(st: CellStats, g, criterion):
    """Sum over a cell's samples of d(A, g R)."""
    if criterion == "WE":
        return st.s0 - 2 * g * st.s1 + g * g * st.s2
    if criterion == "LE":
        lg = np.log(g)
        return st.lq - 2 * lg * (st.la - st.lr) + st.n * lg * lg
    if criterion == "WC":
        return st.c1 / g + g * st.c2 - st.ap
    raise ValueError(f"unknown criterion {criterion!r}")


def total_distortion(acc: TrainAccumulator, G, H, criterion: str = "WE", beta: float = 1.0,
                     normalized: bool = True) -> float:
    """``D = D_ref + beta * D_nonref``.

    ``normalized=True`` averages within each cell and then over cells (1/IJ
    and 1/(IJ*Ld)); ``normalized=False`` is the plain sum of sample errors.
    Empty cells contribute nothing.
    """
    G, H = _check(acc, G, H)
    if criterion not in CRITERIA:
        raise ValueError(f"unknown criterion {criterion!r}")
    wr, wn = _weights(acc, normalized)
    Ge, He = _expand(G, H)
    with np.errstate(divide="ignore", invalid="ignore"):
        dr = np.where(acc.ref.n > 0, _cell_sums(acc.ref, G, criterion), 0.0)
        dn = np.where(acc.nonref.n > 0, _cell_sums(acc.nonref, Ge * He, criterion), 0.0)
    return float(np.sum(wr * dr) + beta * np.sum(wn * dn))


def _sum_dirs(x, H=None):
    return x.reshape(x.shape[:2] + (-1,)).sum(axis=2)


def _sum_snr(x):
    return x.sum(axis=(0, 1))


def grad_we(acc: TrainAccumulator, G, H, beta: float = 1.0, normalized: bool = True):
    """Weighted-Euclidean gradients ``(dD/dG, dD/dH)``."""
    G, H = _check(acc, G, H)
    wr, wn = _weights(acc, normalized)
    r, s = acc.ref, acc.nonref
    Ge, He = _expand(G, H)
    dG = -2 * wr * (r.s1 - G * r.s2)
    dG = dG - 2 * beta * _sum_dirs(wn * (He * s.s1 - He * He * Ge * s.s2), H)
    dH = -2 * beta * _sum_snr(wn * (Ge * s.s1 - Ge * Ge * He * s.s2))
    return dG, dH


def grad_le(acc: TrainAccumulator, G, H, beta: float = 1.0, normalized: bool = True):
    """Log-Euclidean gradients; P terms rebuilt as ``sum log A - sum log R - M log g``."""
    G, H = _check(acc, G, H)
    wr, wn = _weights(acc, normalized)
    r, s = acc.ref, acc.nonref
    Ge, He = _expand(G, H)
    p_ref = r.la - r.lr - r.n * np.log(G)
    p_non = s.la - s.lr - s.n * (np.log(Ge) + np.log(He))
    dG = -2 / G * (wr * p_ref + beta * _sum_dirs(wn * p_non, H))
    dH = -2 * beta / H * _sum_snr(wn * p_non)
    return dG, dH


def grad_wc(acc: TrainAccumulator, G, H, beta: float = 1.0, normalized: bool = True):
    """Weighted-cosh gradients."""
    G, H = _check(acc, G, H)
    wr, wn = _weights(acc, normalized)
    r, s = acc.ref, acc.nonref
    Ge, He = _expand(G, H)
    dG = (-1 / G ** 2 * (wr * r.c1 + beta * _sum_dirs(wn * s.c1 / He, H))
          + wr * r.c2 + beta * _sum_dirs(wn * He * s.c2, H))
    dH = beta * _sum_snr(wn * (-s.c1 / (He * He * Ge) + Ge * s.c2))
    return dG, dH


GRADIENTS = {"WE": grad_we, "LE": grad_le, "WC": grad_wc}


def _data_quantities(st: CellStats, criterion):
    """Cell averages (Phi, Psi) of the criterion's basis functions."""
    inv = _inv(st.n)
    if criterion == "WE":
        return st.s1 * inv, st.s2 * inv
    if criterion == "WC":
        return st.c1 * inv, st.c2 * inv
    if criterion == "LE":
        return st.la * inv, st.lr * inv
    raise ValueError(f"unknown criterion {criterion!r}")


def _parameter_quantities(G, H, criterion):
    """(K0, K_Phi, K_Psi) for the reference cell, the same for the
    non-reference cell w.r.t. G, and (Lambda0, Lambda_Phi, Lambda_Psi) w.r.t. H."""
    if criterion == "WE":
        zero = np.zeros(np.broadcast_shapes(G.shape, H.shape))
        return ((0.0, -1.0, G),
                (zero, -H, H * H * G),
                (zero, -G, G * G * H))
    if criterion == "WC":
        return ((0.0, -1.0 / G ** 2, 1.0),
                (0.0, -1.0 / (G ** 2 * H), H),
                (0.0, -1.0 / (H ** 2 * G), G))
    if criterion == "LE":
        lgh = np.log(G * H)
        return ((np.log(G) / G, -1.0 / G, 1.0 / G),
                (lgh / G, -1.0 / G, 1.0 / G),
                (lgh / H, -1.0 / H, 1.0 / H))
    raise ValueError(f"unknown criterion {criterion!r}")


def grad_generalized(acc: TrainAccumulator, G, H, criterion: str, beta: float = 1.0):
    """Gradients of the half-scaled (WE, LE) / plain (WC) averaged objective
    from K, Lambda, Phi and Psi quantities."""
    G, H = _check(acc, G, H)
    if criterion not in CRITERIA:
        raise ValueError(f"unknown criterion {criterion!r}")
    ij = acc.axes.I * acc.axes.J
    nd = acc.n_direction_cells
    Ge, He = _expand(G, H)
    phi_r, psi_r = _data_quantities(acc.ref, criterion)
    phi_n, psi_n = _data_quantities(acc.nonref, criterion)
    k0, kphi, kpsi = _parameter_quantities(G, np.ones(()), criterion)[0]
    _, (kn0, knphi, knpsi), (l0, lphi, lpsi) = _parameter_quantities(Ge, He, criterion)
    has_r = acc.ref.n > 0
    has_n = acc.nonref.n > 0
    d_ref = np.where(has_r, k0 + kphi * phi_r + kpsi * psi_r, 0.0)
    d_non_g = np.where(has_n, kn0 + knphi * phi_n + knpsi * psi_n, 0.0)
    d_non_h = np.where(has_n, l0 + lphi * phi_n + lpsi * psi_n, 0.0)
    dG = (d_ref + beta / nd * _sum_dirs(d_non_g, H)) / ij
    dH = beta / (ij * nd) * _sum_snr(d_non_h)
    return dG, dH


def generalized_distortion(acc: TrainAccumulator, G, H, criterion: str, beta: float = 1.0) -> float:
    """Objective whose gradient :func:`grad_generalized` returns."""
    return GENERALIZED_SCALE[criterion] * total_distortion(acc, G, H, criterion, beta)
