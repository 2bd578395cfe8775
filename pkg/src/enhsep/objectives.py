"""Scalar training objectives with permutation- and mixture-invariant resolution.

These are evaluated, never differentiated: there is no learning loop here.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .masks import TimeFreqMask
from .metrics import Signal, as_mono, si_snr
from .permutation import MAX_SOURCES, best_permutation
from .stft import ComplexSpectrogram

CE_CLAMP = 1e-7


class ObjectiveError(ValueError):
    pass


@dataclass
class LossValue:
    value: float
    permutation: Tuple[int, ...]
    per_pair: Optional[np.ndarray] = None


def mask_loss(est: TimeFreqMask, ref: TimeFreqMask, kind: str = "mse") -> float:
    e, r = est.values, ref.values
    if e.shape != r.shape:
        raise ObjectiveError(f"mask shapes differ: {e.shape} vs {r.shape}")
    if kind == "mse":
        return float(np.mean((e - r) ** 2))
    if kind == "ce":
        if np.any((r < 0) | (r > 1)):
            raise ObjectiveError("cross-entropy targets must lie in [0, 1]")
        e = np.clip(e, CE_CLAMP, 1 - CE_CLAMP)
        return float(np.mean(-(r * np.log(e) + (1 - r) * np.log(1 - e))))
    raise ObjectiveError(f"unknown mask loss {kind!r}")


def signal_approx_loss(est: ComplexSpectrogram, ref: ComplexSpectrogram, domain: str = "magnitude") -> float:
    e, r = est.values, ref.values
    if e.shape != r.shape:
        raise ObjectiveError(f"spectrogram shapes differ: {e.shape} vs {r.shape}")
    if domain == "magnitude":
        return float(np.mean((np.abs(e) - np.abs(r)) ** 2))
    if domain == "complex":
        return float(np.mean(np.abs(e - r) ** 2))
    raise ObjectiveError(f"unknown domain {domain!r}")


def si_snr_loss(est: Signal, ref: Signal) -> float:
    """Negative SI-SNR in dB (bounded below by -120)."""
    return -si_snr(est, ref)


def pit_resolve(loss_matrix) -> LossValue:
    """Best estimate-to-reference pairing for ``loss_matrix[est, ref]``."""
    L = np.asarray(loss_matrix, dtype=float)
    if L.ndim != 2 or L.shape[0] != L.shape[1] or L.shape[0] < 1:
        raise ObjectiveError(f"loss matrix must be square and non-empty, got {L.shape}")
    if L.shape[0] > MAX_SOURCES:
        raise ObjectiveError(f"PIT supports at most {MAX_SOURCES} sources, got {L.shape[0]}")
    if not np.all(np.isfinite(L)):
        raise ObjectiveError("loss matrix has non-finite entries")
    perm, total = best_permutation(L)
    return LossValue(total / L.shape[0], tuple(perm), L)


def pit_si_snr_loss(ests: Sequence[Signal], refs: Sequence[Signal]) -> LossValue:
    L = np.array([[si_snr_loss(e, r) for r in refs] for e in ests])
    return pit_resolve(L)


def mixit_loss(ests: Sequence[Signal], mixtures: Sequence[Signal]) -> LossValue:
    """Mixture-invariant loss over two mixtures.

    ``permutation[i]`` is the mixture (0 or 1) that estimate i is assigned to;
    the value is the mean negative SI-SNR over both mixtures.
    """
    if len(mixtures) != 2:
        raise ObjectiveError(f"MixIT uses exactly two mixtures, got {len(mixtures)}")
    M = len(ests)
    if not 2 <= M <= MAX_SOURCES:
        raise ObjectiveError(f"MixIT needs 2..{MAX_SOURCES} estimates, got {M}")
    est = np.stack([as_mono(e) for e in ests])
    mix = np.stack([as_mono(m) for m in mixtures])
    if est.shape[1] != mix.shape[1]:
        raise ObjectiveError("estimates and mixtures differ in length")

    best, best_value = None, None
    for assign in itertools.product((0, 1), repeat=M):
        a = np.array(assign)
        value = 0.5 * sum(si_snr_loss(est[a == j].sum(axis=0), mix[j]) for j in (0, 1))
        if best is None or value < best_value:
            best, best_value = assign, value
    return LossValue(float(best_value), tuple(best))
