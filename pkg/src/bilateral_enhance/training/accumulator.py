"""Per-cell sufficient statistics for gain / HRTF training."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..snr import SnrAxes

AMP_FLOOR = 1e-10

# Every moment the objective and gradient code needs, for one side.
#   s0  = sum A^(p+2)          s1 = sum A^(p+1) R      s2 = sum A^p R^2
#   la  = sum log A            lr = sum log R          lq = sum (log A - log R)^2
#   c1  = sum A^(p+1) / R      c2 = sum A^(p-1) R      ap = sum A^p
#   n   = sample count
FIELDS = ("s0", "s1", "s2", "la", "lr", "lq", "c1", "c2", "ap", "n")


@dataclass
class CellStats:
    """Moment arrays sharing one cell shape."""

    shape: tuple
    arrays: dict = field(default=None)

    def __post_init__(self):
        if self.arrays is None:
            self.arrays = {f: np.zeros(self.shape) for f in FIELDS}

    def __getattr__(self, name):
        arrays = self.__dict__.get("arrays")
        if arrays is not None and name in arrays:
            return arrays[name]
        raise AttributeError(name)

    def add(self, index: tuple, amp_clean, amp_noisy, p: float) -> None:
        a = np.maximum(np.asarray(amp_clean, dtype=float), AMP_FLOOR)
        r = np.maximum(np.asarray(amp_noisy, dtype=float), AMP_FLOOR)
        ap = a ** p
        log_a, log_r = np.log(a), np.log(r)
        contrib = {
            "s0": ap * a * a,
            "s1": ap * a * r,
            "s2": ap * r * r,
            "la": log_a,
            "lr": log_r,
            "lq": (log_a - log_r) ** 2,
            "c1": ap * a / r,
            "c2": ap / a * r,
            "ap": ap,
            "n": np.ones_like(a),
        }
        flat = np.ravel_multi_index(index, self.shape)
        size = int(np.prod(self.shape))
        for f in FIELDS:
            self.arrays[f] += np.bincount(flat, weights=contrib[f], minlength=size).reshape(self.shape)

    def merged(self, other: "CellStats") -> "CellStats":
        if other.shape != self.shape:
            raise ValueError("cannot merge statistics of different shapes")
        return CellStats(self.shape, {f: self.arrays[f] + other.arrays[f] for f in FIELDS})

    def copy(self) -> "CellStats":
        return CellStats(self.shape, {f: v.copy() for f, v in self.arrays.items()})


@dataclass
class TrainAccumulator:
    """Reference-side statistics on the (I, J) grid and non-reference statistics
    on (I, J, L) for the delay model or (I, J, Q, B) for the IPD model."""

    axes: SnrAxes
    model: str = "tdoa"
    p: float = 0.0
    L: int = 7
    tau_max: float = 16.0
    Q: int = 13
    band_edges: tuple | None = None
    ref: CellStats = field(default=None)
    nonref: CellStats = field(default=None)

    def __post_init__(self):
        if self.model not in ("tdoa", "ipd"):
            raise ValueError(f"unknown model {self.model!r}")
        if self.model == "ipd" and self.band_edges is None:
            raise ValueError("ipd accumulator needs band_edges")
        if self.ref is None:
            self.ref = CellStats((self.axes.I, self.axes.J))
        if self.nonref is None:
            self.nonref = CellStats((self.axes.I, self.axes.J) + self.direction_shape)

    @property
    def B(self) -> int:
        return len(self.band_edges) - 1 if self.band_edges is not None else 0

    @property
    def direction_shape(self) -> tuple:
        return (self.L,) if self.model == "tdoa" else (self.Q, self.B)

    @property
    def n_direction_cells(self) -> int:
        return int(np.prod(self.direction_shape))

    def accumulate(self, amp_ref_clean, amp_ref_noisy, amp_nonref_clean, i, j, dcell) -> None:
        """Add samples. ``dcell`` is an ``l`` index array (tdoa) or a ``(q, b)``
        pair of index arrays (ipd); all arrays broadcast together."""
        i, j, _ = np.broadcast_arrays(np.asarray(i), np.asarray(j), np.asarray(amp_ref_noisy))
        self.ref.add((i.ravel(), j.ravel()), np.ravel(amp_ref_clean), np.ravel(amp_ref_noisy), self.p)
        if self.model == "tdoa":
            d = (np.broadcast_to(dcell, i.shape).ravel(),)
        else:
            q, b = dcell
            d = (np.broadcast_to(q, i.shape).ravel(), np.broadcast_to(b, i.shape).ravel())
        self.nonref.add((i.ravel(), j.ravel()) + d, np.ravel(amp_nonref_clean),
                        np.ravel(amp_ref_noisy), self.p)

    def compatible(self, other: "TrainAccumulator") -> bool:
        return (self.axes == other.axes and self.model == other.model and self.p == other.p
                and self.direction_shape == other.direction_shape
                and self.band_edges == other.band_edges and self.tau_max == other.tau_max)

    def merge(self, other: "TrainAccumulator") -> "TrainAccumulator":
        if not self.compatible(other):
            raise ValueError("incompatible accumulators")
        return TrainAccumulator(self.axes, self.model, self.p, self.L, self.tau_max, self.Q,
                                self.band_edges, self.ref.merged(other.ref),
                                self.nonref.merged(other.nonref))
