"""Objective quality measures and confusion-weighted expected quality."""
from __future__ import annotations

import csv
import os
import tempfile

import numpy as np

SEG_FRAME = 256
SEG_MIN_DB = -10.0
SEG_MAX_DB = 35.0
SILENCE_DB = 40.0
AMP_FLOOR = 1e-10


def segmental_snr(clean, test, frame: int = SEG_FRAME) -> float:
    """Mean clamped per-frame SNR over frames within 40 dB of the loudest."""
    s = np.asarray(clean, dtype=float)
    y = np.asarray(test, dtype=float)
    if s.shape != y.shape:
        raise ValueError("signals must have equal length")
    n = s.size // frame
    if n == 0:
        raise ValueError("signal shorter than one frame")
    s = s[: n * frame].reshape(n, frame)
    e = s - y[: n * frame].reshape(n, frame)
    sig = np.sum(s * s, axis=1)
    err = np.sum(e * e, axis=1)
    active = sig > sig.max() * 10 ** (-SILENCE_DB / 10)
    if not active.any():
        raise ValueError("clean signal is silent")
    with np.errstate(divide="ignore"):
        snr = 10 * np.log10(sig[active] / np.maximum(err[active], 1e-300))
    return float(np.mean(np.clip(snr, SEG_MIN_DB, SEG_MAX_DB)))


def segmental_snr_improvement(clean, noisy, enhanced, frame: int = SEG_FRAME) -> float:
    if not (np.shape(clean) == np.shape(noisy) == np.shape(enhanced)):
        raise ValueError("signals must have equal length")
    return segmental_snr(clean, enhanced, frame) - segmental_snr(clean, noisy, frame)


def distortion_metric(clean_amps, enhanced_amps, criterion: str = "WE", p: float = 0.0) -> float:
    """Mean per-bin spectral distortion between amplitude sequences."""
    a = np.maximum(np.asarray(clean_amps, dtype=float), AMP_FLOOR)
    b = np.maximum(np.asarray(enhanced_amps, dtype=float), AMP_FLOOR)
    if a.shape != b.shape:
        raise ValueError("amplitude arrays must have equal shape")
    c = criterion.upper()
    if c == "WE":
        d = a ** p * (a - b) ** 2
    elif c == "LE":
        d = (np.log(a) - np.log(b)) ** 2
    elif c == "WC":
        d = a ** p * (a / b + b / a - 1.0)
    else:
        raise ValueError(f"unknown criterion {criterion!r}")
    return float(np.mean(d))


def _check_confusion(P):
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ValueError("confusion matrix must be square")
    if np.any(P < 0) or np.any(P > 1):
        raise ValueError("confusion entries must lie in [0, 1]")
    if np.any(np.abs(P.sum(axis=0) - 1.0) > 1e-9):
        raise ValueError("confusion matrix columns must sum to 1")
    return P


def expected_quality(P, Q, priors=None):
    """``(per-class expected quality, overall expected quality)``.

    ``P[i, j]`` is the probability of deciding class i when j is true and
    ``Q[i, j]`` the quality obtained with class-i parameters on class j.
    """
    P = _check_confusion(P)
    Q = np.asarray(Q, dtype=float)
    if Q.shape != P.shape:
        raise ValueError("P and Q must have the same shape")
    n = P.shape[0]
    priors = np.full(n, 1.0 / n) if priors is None else np.asarray(priors, dtype=float)
    if priors.shape != (n,) or abs(priors.sum() - 1.0) > 1e-9 or np.any(priors < 0):
        raise ValueError("priors must be a probability vector of length N")
    per_class = np.sum(P * Q, axis=0)
    return per_class, float(priors @ per_class)


def suppression_advantage(q_pipeline, q_none):
    """Quality gain over no suppression, elementwise for per-class inputs."""
    diff = np.asarray(q_pipeline, dtype=float) - np.asarray(q_none, dtype=float)
    return float(diff) if diff.ndim == 0 else diff


def quiet_detection_score(actual, estimated) -> float:
    q = np.asarray(actual, dtype=float)
    qh = np.asarray(estimated, dtype=float)
    if q.shape != qh.shape:
        raise ValueError("label sequences must have equal length")
    if q.size == 0:
        raise ValueError("empty label sequences")
    return float(1.0 - np.mean(np.abs(q - qh)))


RESULT_FIELDS = ("metric", "channel", "noise_class", "azimuth", "value")


def write_results(path, rows) -> None:
    """Atomic CSV with ``metric,channel,noise_class,azimuth,value`` columns;
    ``rows`` are dicts or 5-tuples."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(RESULT_FIELDS)
            for r in rows:
                vals = [r[k] for k in RESULT_FIELDS] if isinstance(r, dict) else list(r)
                if len(vals) != len(RESULT_FIELDS):
                    raise ValueError("result rows need five fields")
                w.writerow(vals)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
