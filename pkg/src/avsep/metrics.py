"""Separation quality metrics and the training objective.

All dB-valued functions return ``math.inf`` (the documented sentinel) when
the residual is exactly zero; they never return NaN. Report writers clamp
the sentinel for display, see :data:`DISPLAY_CLAMP_DB`.
"""

from __future__ import annotations

import itertools
import math
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor

__all__ = [
    "DISPLAY_CLAMP_DB",
    "si_snr",
    "si_snri",
    "sdr",
    "sdri",
    "pit_best",
    "si_snr_loss",
    "pit_si_snr_loss",
]

DISPLAY_CLAMP_DB = 60.0
_LOG10 = math.log(10.0)


def _flat(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64).reshape(-1)
    return a


def si_snr(reference, estimate) -> float:
    """Scale-invariant SNR in dB.

    The estimate is projected onto the reference (omega = <est, ref> /
    <ref, ref>); the ratio compares the projected target power with the
    residual power. No mean subtraction is applied.
    """
    a = _flat(reference)
    est = _flat(estimate)
    if a.shape != est.shape:
        raise ValueError("reference/estimate length mismatch")
    energy = float(a @ a)
    if energy == 0.0:
        raise ValueError("reference signal is all zero")
    omega = float(est @ a) / energy
    target = omega * a
    residual = est - target
    res_pow = float(residual @ residual)
    if res_pow == 0.0:
        return math.inf
    return 10.0 * math.log10(float(target @ target) / res_pow)


def si_snri(mixture, reference, estimate) -> float:
    """Improvement of the estimate over the unprocessed mixture."""
    return si_snr(reference, estimate) - si_snr(reference, mixture)


def sdr(reference, estimate) -> float:
    """Signal-to-distortion ratio in dB (not scale invariant)."""
    a = _flat(reference)
    est = _flat(estimate)
    if a.shape != est.shape:
        raise ValueError("reference/estimate length mismatch")
    diff = a - est
    dist = float(diff @ diff)
    if dist == 0.0:
        return math.inf
    return 10.0 * math.log10(float(a @ a) / dist)


def sdri(mixture, reference, estimate) -> float:
    return sdr(reference, estimate) - sdr(reference, mixture)


def pit_best(
    references: Sequence, estimates: Sequence,
    metric: Callable[[np.ndarray, np.ndarray], float] = si_snr,
) -> tuple[tuple[int, ...], float]:
    """Exhaustive assignment search: the permutation of estimates that
    maximizes the mean metric against the references.

    Ties keep the lexicographically smallest permutation (permutations are
    enumerated in lexicographic order and replaced only on strict
    improvement).
    """
    c = len(references)
    if c != len(estimates):
        raise ValueError("reference/estimate count mismatch")
    best_perm: tuple[int, ...] | None = None
    best_val = -math.inf
    for perm in itertools.permutations(range(c)):
        val = sum(metric(references[i], estimates[perm[i]]) for i in range(c)) / c
        if best_perm is None or val > best_val:
            best_perm, best_val = perm, val
    return best_perm, best_val


# ---------------------------------------------------------------------------
# differentiable objective


def si_snr_loss(estimate: Tensor, reference: np.ndarray) -> Tensor:
    """Negated scale-invariant SNR as a scalar loss tensor."""
    ref = np.asarray(reference, dtype=estimate.dtype).reshape(estimate.shape)
    energy = float(ref.reshape(-1) @ ref.reshape(-1))
    if energy == 0.0:
        raise ValueError("reference signal is all zero")
    ref_t = Tensor(ref)
    omega = T.scale(T.sum_all(T.ew_mul(estimate, ref_t)), 1.0 / energy)
    target = T.ew_mul(omega, ref_t)
    residual = T.ew_sub(estimate, target)
    target_pow = T.sum_all(T.ew_mul(target, target))
    res_pow = T.sum_all(T.ew_mul(residual, residual))
    snr = T.scale(T.ew_sub(T.log(target_pow), T.log(res_pow)), 10.0 / _LOG10)
    return T.scale(snr, -1.0)


def pit_si_snr_loss(estimates: Sequence[Tensor], references: Sequence[np.ndarray]) -> Tensor:
    """Permutation-invariant loss: minimum mean negated SNR over all
    assignments, enumerated exhaustively."""
    c = len(references)
    if c != len(estimates):
        raise ValueError("reference/estimate count mismatch")
    best: Tensor | None = None
    best_val = math.inf
    for perm in itertools.permutations(range(c)):
        terms = [si_snr_loss(estimates[perm[i]], references[i]) for i in range(c)]
        acc = terms[0]
        for t in terms[1:]:
            acc = T.ew_add(acc, t)
        loss = T.scale(acc, 1.0 / c)
        val = loss.item()
        if val < best_val:
            best, best_val = loss, val
    return best
