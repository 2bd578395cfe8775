"""Mask-driven spatial covariance estimation and MVDR / MPDR / WPD beamformers.

Shapes follow the spectrogram layout: observations are (T, F, C), covariance
stacks are (F, C, C) and weight vectors are (F, C) or (F, C*(K+1)) for the
convolutional WPD filter.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .masks import TimeFreqMask
from .stft import ComplexSpectrogram

EPS = 1e-8
POWER_FLOOR = 1e-10
POWER_ITERATIONS = 200


class BeamformingError(ValueError):
    pass


@dataclass
class SpatialCovariance:
    matrices: np.ndarray  # (F, C, C)
    mask_mass: np.ndarray  # (F,)

    @property
    def num_channels(self) -> int:
        return self.matrices.shape[-1]

    def scaled(self, factor: float) -> "SpatialCovariance":
        return SpatialCovariance(self.matrices * factor, self.mask_mass)


@dataclass
class BeamformerWeights:
    weights: np.ndarray  # (F, C) or (F, C*(K+1))
    ref_channel: int = 0


def diagonal_loading(matrices: np.ndarray) -> np.ndarray:
    """Per-matrix loading 1e-6 * trace / C + 1e-8."""
    size = matrices.shape[-1]
    trace = np.real(np.trace(matrices, axis1=-2, axis2=-1))
    return 1e-6 * trace / size + 1e-8


def hermitian_solve(matrices: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve (A + loading*I) X = B for a stack of Hermitian PSD matrices A.

    ``rhs`` may be (..., N) or (..., N, M).
    """
    size = matrices.shape[-1]
    loaded = matrices + diagonal_loading(matrices)[..., None, None] * np.eye(size)
    loaded = 0.5 * (loaded + np.conj(np.swapaxes(loaded, -1, -2)))
    try:
        chol = np.linalg.cholesky(loaded)
    except np.linalg.LinAlgError as exc:
        raise BeamformingError("matrix is not positive definite after diagonal loading") from exc
    vector = rhs.ndim == matrices.ndim - 1
    b = rhs[..., None] if vector else rhs
    tmp = np.linalg.solve(chol, b)
    x = np.linalg.solve(np.conj(np.swapaxes(chol, -1, -2)), tmp)
    return x[..., 0] if vector else x


def estimate_scm(spec: ComplexSpectrogram, mask: TimeFreqMask) -> SpatialCovariance:
    Y = spec.values
    if mask.shape != Y.shape[:2]:
        raise BeamformingError(f"mask shape {mask.shape} does not match spectrogram {Y.shape[:2]}")
    m = mask.values
    mass = m.sum(axis=0)
    phi = np.einsum("tf,tfc,tfd->fcd", m, Y, Y.conj()) / (mass + EPS)[:, None, None]
    phi = 0.5 * (phi + np.conj(np.swapaxes(phi, -1, -2)))
    return SpatialCovariance(phi, mass)


def _fix_phase(vectors: np.ndarray) -> np.ndarray:
    """Rotate each row so its first non-negligible entry is real positive."""
    mags = np.abs(vectors)
    significant = mags > 1e-12 * mags.max(axis=-1, keepdims=True)
    first = np.argmax(significant, axis=-1)
    pivot = np.take_along_axis(vectors, first[..., None], axis=-1)
    phase = np.where(np.abs(pivot) > 0, pivot / np.where(np.abs(pivot) > 0, np.abs(pivot), 1), 1)
    return vectors * np.conj(phase)


def principal_eigenvectors(matrices: np.ndarray, fallback: Optional[int] = None) -> np.ndarray:
    """Unit-norm principal eigenvectors of an (F, C, C) Hermitian stack by power iteration.

    Zero matrices raise unless ``fallback`` names a channel whose selector
    vector is returned instead.
    """
    n_freq, size, _ = matrices.shape
    diag = np.real(np.einsum("fcc->fc", matrices))
    scale = np.max(np.abs(matrices).reshape(n_freq, -1), axis=-1)
    zero = scale == 0
    if np.any(zero) and fallback is None:
        raise BeamformingError(f"zero covariance matrix at frequency {int(np.flatnonzero(zero)[0])}")

    # start from the column with the largest diagonal entry
    start = np.take_along_axis(matrices, np.argmax(diag, axis=-1)[:, None, None], axis=-1)[..., 0]
    norms = np.linalg.norm(start, axis=-1)
    degenerate = norms == 0
    start[degenerate] = 1.0
    v = start / np.linalg.norm(start, axis=-1, keepdims=True)
    eig = np.real(np.einsum("fc,fcd,fd->f", v.conj(), matrices, v))
    for _ in range(POWER_ITERATIONS):
        u = np.einsum("fcd,fd->fc", matrices, v)
        unorm = np.linalg.norm(u, axis=-1, keepdims=True)
        v = np.where(unorm > 0, u / np.where(unorm > 0, unorm, 1), v)
        new = np.real(np.einsum("fc,fcd,fd->f", v.conj(), matrices, v))
        change = np.abs(new - eig) / np.maximum(np.abs(new), np.finfo(float).tiny)
        eig = new
        if np.all((change < 1e-12) | zero):
            break
    v = _fix_phase(v)
    if np.any(zero):
        v[zero] = 0
        v[zero, fallback] = 1
    return v


def steering_vector(scm: SpatialCovariance, f: int) -> np.ndarray:
    return principal_eigenvectors(scm.matrices[f : f + 1])[0]


def select_reference_channel(scm_s: SpatialCovariance, scm_n: SpatialCovariance) -> int:
    """Channel with the largest summed target-to-noise power ratio."""
    ps = np.real(np.einsum("fcc->fc", scm_s.matrices))
    pn = np.real(np.einsum("fcc->fc", scm_n.matrices))
    return int(np.argmax(np.sum(ps / (pn + EPS), axis=0)))


def mvdr_souden(
    scm_s: SpatialCovariance, scm_n: SpatialCovariance, ref_channel: int = 0
) -> BeamformerWeights:
    numerator = hermitian_solve(scm_n.matrices, scm_s.matrices)
    trace = np.trace(numerator, axis1=-2, axis2=-1)
    if not np.all(np.isfinite(trace)) or np.any(trace == 0):
        raise BeamformingError("non-finite or zero trace in MVDR normalisation")
    w = numerator[:, :, ref_channel] / trace[:, None]
    return BeamformerWeights(w, ref_channel)


def _distortionless(matrices: np.ndarray, steering: np.ndarray, ref_channel: int) -> np.ndarray:
    numerator = hermitian_solve(matrices, steering)
    denom = np.einsum("fc,fc->f", steering.conj(), numerator)
    if np.any(np.real(denom) <= 0) or not np.all(np.isfinite(denom)):
        raise BeamformingError("d^H R^-1 d is not positive")
    # conj(d_ref) scaling makes the response to d equal the reference image
    return numerator / np.real(denom)[:, None] * np.conj(steering[:, ref_channel])[:, None]


def mpdr(scm_y: SpatialCovariance, steering: np.ndarray, ref_channel: int = 0) -> BeamformerWeights:
    steering = np.asarray(steering, dtype=complex)
    if steering.ndim == 1:
        steering = np.broadcast_to(steering, scm_y.matrices.shape[:2])
    if steering.shape != scm_y.matrices.shape[:2]:
        raise BeamformingError(f"steering shape {steering.shape} does not match covariance")
    return BeamformerWeights(_distortionless(scm_y.matrices, steering, ref_channel), ref_channel)


def stack_taps(Y: np.ndarray, delay: int, taps: int, include_current: bool = False) -> np.ndarray:
    """Zero-padded delayed context [y(t-D); ...; y(t-D-K+1)] for (T, F, C) input.

    With ``include_current`` the current frame is prepended. Output is
    (T, F, C * n_blocks), channel index fastest within each tap block.
    """
    T = Y.shape[0]
    blocks = [Y] if include_current else []
    for k in range(taps):
        shift = delay + k
        shifted = np.zeros_like(Y)
        if shift < T:
            shifted[shift:] = Y[: T - shift]
        blocks.append(shifted)
    if not blocks:
        return np.zeros(Y.shape[:2] + (0,), dtype=Y.dtype)
    return np.concatenate(blocks, axis=-1)


def wpd_power(spec: ComplexSpectrogram, source_mask: TimeFreqMask) -> np.ndarray:
    Y = spec.values
    return np.maximum(np.mean(source_mask.values[:, :, None] * np.abs(Y) ** 2, axis=-1), POWER_FLOOR)


def wpd_weights(
    spec: ComplexSpectrogram,
    source_mask: TimeFreqMask,
    delay: int = 3,
    taps: int = 5,
    ref_channel: int = 0,
    power: Optional[np.ndarray] = None,
) -> Tuple[BeamformerWeights, np.ndarray]:
    """WPD convolutional filter and the stacked steering vector it preserves.

    ``power`` overrides the mask-derived time-varying power estimate.
    """
    Y = spec.values
    T, _, C = Y.shape
    if T <= delay + taps:
        raise BeamformingError(f"need more than delay+taps={delay + taps} frames, got {T}")
    if source_mask.shape != Y.shape[:2]:
        raise BeamformingError("mask shape does not match spectrogram")
    lam = wpd_power(spec, source_mask) if power is None else np.asarray(power, dtype=float)
    stacked = stack_taps(Y, delay, taps, include_current=True)
    R = np.einsum("tfa,tfb->fab", stacked / lam[:, :, None], stacked.conj())
    d = principal_eigenvectors(estimate_scm(spec, source_mask).matrices, fallback=ref_channel)
    d_stacked = np.concatenate([d, np.zeros((d.shape[0], C * taps), dtype=complex)], axis=-1)
    try:
        w = _distortionless(R, d_stacked, ref_channel)
    except BeamformingError as exc:
        raise BeamformingError(f"WPD: {exc}") from exc
    return BeamformerWeights(w, ref_channel), d_stacked


def wpd(
    spec: ComplexSpectrogram,
    source_mask: TimeFreqMask,
    delay: int = 3,
    taps: int = 5,
    ref_channel: int = 0,
) -> ComplexSpectrogram:
    weights, _ = wpd_weights(spec, source_mask, delay, taps, ref_channel)
    stacked = stack_taps(spec.values, delay, taps, include_current=True)
    out = np.einsum("fc,tfc->tf", weights.weights.conj(), stacked)
    return spec.with_values(out[:, :, None])


def apply_beamformer(weights: BeamformerWeights, spec: ComplexSpectrogram) -> ComplexSpectrogram:
    w = weights.weights
    Y = spec.values
    if w.shape != (Y.shape[1], Y.shape[2]):
        raise BeamformingError(f"weights {w.shape} do not match spectrogram bins/channels {Y.shape[1:]}")
    out = np.einsum("fc,tfc->tf", w.conj(), Y)
    return spec.with_values(out[:, :, None])
