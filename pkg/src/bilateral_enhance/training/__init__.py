"""Offline estimation of suppression gains and HRTF gains."""
from .accumulator import CellStats, TrainAccumulator
from .corpus import TrainConfig, accumulate_pair, build_training_set, simulate_pair
from .objective import (generalized_distortion, grad_generalized, grad_le, grad_wc, grad_we,
                        total_distortion)
from .solver import (DivergenceError, OptimizerConfig, bilateral_init, fill_empty_gains,
                     fill_empty_hrtf, init_unilateral, optimize, solve_we_quasistatic,
                     write_loss_trace)


def accumulate(acc: TrainAccumulator, amp_ref_clean, amp_ref_noisy, amp_nonref_clean,
               i, j, dcell) -> None:
    """Function form of :meth:`TrainAccumulator.accumulate`."""
    acc.accumulate(amp_ref_clean, amp_ref_noisy, amp_nonref_clean, i, j, dcell)


__all__ = [
    "CellStats", "DivergenceError", "OptimizerConfig", "TrainAccumulator", "TrainConfig",
    "accumulate", "accumulate_pair", "bilateral_init", "build_training_set",
    "fill_empty_gains", "fill_empty_hrtf", "generalized_distortion", "grad_generalized",
    "grad_le", "grad_wc", "grad_we", "init_unilateral", "optimize", "simulate_pair",
    "solve_we_quasistatic", "total_distortion", "write_loss_trace",
]
