"""Short-time objective intelligibility (STOI)."""
from __future__ import annotations

import numpy as np

from .metrics import MetricError, Signal, as_mono
from .resample import resample_rate

FS = 10000
FRAME_LEN = 256
HOP = 128
N_FFT = 512
NUM_BANDS = 15
MIN_FREQ = 150.0
SEGMENT = 30  # frames, 384 ms
BETA = -15.0
DYN_RANGE = 40.0


def third_octave_bands(fs: int = FS, n_fft: int = N_FFT, num_bands: int = NUM_BANDS, min_freq: float = MIN_FREQ):
    """Return the (bands, bins) 0/1 matrix and the band centre frequencies."""
    freqs = np.linspace(0, fs, n_fft + 1)[: n_fft // 2 + 1]
    k = np.arange(num_bands)
    centres = min_freq * 2.0 ** (k / 3.0)
    low = min_freq * 2.0 ** ((2 * k - 1) / 6.0)
    high = min_freq * 2.0 ** ((2 * k + 1) / 6.0)
    obm = np.zeros((num_bands, len(freqs)))
    for i in range(num_bands):
        lo = np.argmin((freqs - low[i]) ** 2)
        hi = np.argmin((freqs - high[i]) ** 2)
        obm[i, lo:hi] = 1
    return obm, centres


def _window() -> np.ndarray:
    return np.hanning(FRAME_LEN + 2)[1:-1]


def _frames(x: np.ndarray) -> np.ndarray:
    starts = np.arange(0, len(x) - FRAME_LEN, HOP)
    return np.stack([x[s : s + FRAME_LEN] for s in starts]) if len(starts) else np.zeros((0, FRAME_LEN))


def remove_silent_frames(x: np.ndarray, y: np.ndarray):
    """Drop frames whose reference energy is more than DYN_RANGE dB below the loudest."""
    w = _window()
    xf = _frames(x) * w
    yf = _frames(y) * w
    if len(xf) == 0:
        return x[:0], y[:0]
    energy = 20 * np.log10(np.linalg.norm(xf, axis=1) + np.finfo(float).eps)
    keep = (energy.max() - DYN_RANGE - energy) < 0
    xf, yf = xf[keep], yf[keep]
    n = len(xf)
    length = (n - 1) * HOP + FRAME_LEN if n else 0
    x_out, y_out = np.zeros(length), np.zeros(length)
    for i in range(n):
        x_out[i * HOP : i * HOP + FRAME_LEN] += xf[i]
        y_out[i * HOP : i * HOP + FRAME_LEN] += yf[i]
    return x_out, y_out


def _band_envelopes(x: np.ndarray, obm: np.ndarray) -> np.ndarray:
    spec = np.fft.rfft(_frames(x) * _window(), n=N_FFT, axis=1)
    return np.sqrt(obm @ (np.abs(spec) ** 2).T)  # (bands, frames)


def stoi(est: Signal, ref: Signal, fs: int) -> float:
    y, x = as_mono(est), as_mono(ref)
    if x.shape != y.shape:
        raise MetricError(f"length mismatch: estimate {y.shape[0]} vs reference {x.shape[0]}")
    if fs < 10000:
        raise MetricError(f"STOI needs fs >= 10000, got {fs}")
    if fs != FS:
        x = resample_rate(x, fs, FS)
        y = resample_rate(y, fs, FS)

    x, y = remove_silent_frames(x, y)
    obm, _ = third_octave_bands()
    x_tob = _band_envelopes(x, obm)
    y_tob = _band_envelopes(y, obm)
    n_frames = x_tob.shape[1]
    if n_frames < SEGMENT:
        raise MetricError(
            f"only {n_frames} non-silent frames; STOI needs at least {SEGMENT} (384 ms)"
        )

    # (segments, bands, SEGMENT)
    idx = np.arange(SEGMENT)[None, :] + np.arange(n_frames - SEGMENT + 1)[:, None]
    x_seg = np.transpose(x_tob[:, idx], (1, 0, 2))
    y_seg = np.transpose(y_tob[:, idx], (1, 0, 2))

    eps = np.finfo(float).eps
    norm = np.linalg.norm(x_seg, axis=2, keepdims=True) / (np.linalg.norm(y_seg, axis=2, keepdims=True) + eps)
    y_norm = y_seg * norm
    clip = 10 ** (-BETA / 20)
    y_prime = np.minimum(y_norm, x_seg * (1 + clip))

    y_prime = y_prime - y_prime.mean(axis=2, keepdims=True)
    x_seg = x_seg - x_seg.mean(axis=2, keepdims=True)
    y_prime /= np.linalg.norm(y_prime, axis=2, keepdims=True) + eps
    x_seg /= np.linalg.norm(x_seg, axis=2, keepdims=True) + eps
    return float(np.mean(np.sum(y_prime * x_seg, axis=2)))
