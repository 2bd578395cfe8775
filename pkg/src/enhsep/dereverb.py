"""Batch weighted prediction error (WPE) dereverberation."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .beamforming import BeamformingError, diagonal_loading, hermitian_solve, stack_taps
from .stft import ComplexSpectrogram


class DereverbError(ValueError):
    pass


@dataclass(frozen=True)
class WpeConfig:
    taps: int = 10
    delay: int = 3
    iterations: int = 3
    eps: float = 1e-10

    def __post_init__(self):
        if self.taps < 0 or self.delay < 1 or self.iterations < 0:
            raise DereverbError(f"invalid WPE config {self}")


@dataclass
class WpeTrace:
    """Per-iteration diagnostics.

    Each step minimises, for a power estimate held fixed,
    ``sum_t |y - G^H y_ctx|^2 / lambda + loading * ||G||_F^2`` (the loading
    term comes from the diagonal loading of the correlation matrix).
    ``before``/``after`` hold that objective, shape (F,), evaluated at the
    previous and the new filter. ``filter`` is the final (F, C*K, C) filter.
    """

    before: List[np.ndarray] = field(default_factory=list)
    after: List[np.ndarray] = field(default_factory=list)
    filter: Optional[np.ndarray] = None


def _power(d: np.ndarray, eps: float) -> np.ndarray:
    return np.maximum(np.mean(np.abs(d) ** 2, axis=-1), eps)


def _objective(d: np.ndarray, lam: np.ndarray, G: np.ndarray, loading: np.ndarray) -> np.ndarray:
    error = np.sum(np.sum(np.abs(d) ** 2, axis=-1) / lam, axis=0)
    return error + loading * np.sum(np.abs(G) ** 2, axis=(1, 2))


def apply_prediction_filter(spec: ComplexSpectrogram, G: np.ndarray, cfg: WpeConfig) -> ComplexSpectrogram:
    """Subtract the late reverberation predicted by filter ``G`` from ``spec``."""
    Y = spec.values
    context = stack_taps(Y, cfg.delay, cfg.taps)
    return spec.with_values(Y - np.einsum("fac,tfa->tfc", G.conj(), context))


def wpe(spec: ComplexSpectrogram, cfg: WpeConfig = WpeConfig(), trace: Optional[WpeTrace] = None) -> ComplexSpectrogram:
    Y = spec.values
    T, F, C = Y.shape
    if cfg.iterations == 0 or cfg.taps == 0:
        return spec.with_values(Y.copy())
    if T <= cfg.delay + cfg.taps:
        raise DereverbError(f"need more than delay+taps={cfg.delay + cfg.taps} frames, got {T}")

    context = stack_taps(Y, cfg.delay, cfg.taps)  # (T, F, C*K)
    G = np.zeros((F, C * cfg.taps, C), dtype=complex)
    d = Y
    for _ in range(cfg.iterations):
        lam = _power(d, cfg.eps)
        weighted = context / lam[:, :, None]
        R = np.einsum("tfa,tfb->fab", weighted, context.conj())
        P = np.einsum("tfa,tfc->fac", weighted, Y.conj())
        if trace is not None:
            loading = diagonal_loading(R)
            trace.before.append(_objective(d, lam, G, loading))
        try:
            G = hermitian_solve(R, P)
        except BeamformingError as exc:
            raise DereverbError(f"WPE correlation matrix: {exc}") from exc
        d = Y - np.einsum("fac,tfa->tfc", G.conj(), context)
        if trace is not None:
            trace.after.append(_objective(d, lam, G, loading))
    if trace is not None:
        trace.filter = G
    return spec.with_values(d)
