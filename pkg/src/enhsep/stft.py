"""STFT analysis and overlap-add synthesis.

Spectrograms are stored as complex arrays shaped (frames, bins, channels).
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .audio_io import Waveform

WINDOWS = ("hann", "sqrt_hann")


class StftError(ValueError):
    pass


@dataclass(frozen=True)
class StftConfig:
    n_fft: int = 512
    hop: int = 128
    window: str = "hann"
    center: bool = True

    def __post_init__(self):
        if self.n_fft < 16 or self.n_fft & (self.n_fft - 1):
            raise StftError(f"n_fft must be a power of two >= 16, got {self.n_fft}")
        if not 0 < self.hop <= self.n_fft:
            raise StftError(f"hop must be in (0, n_fft], got {self.hop}")
        if self.window not in WINDOWS:
            raise StftError(f"unknown window {self.window!r}")

    @property
    def n_bins(self) -> int:
        return self.n_fft // 2 + 1


@dataclass
class ComplexSpectrogram:
    values: np.ndarray
    config: StftConfig
    sample_rate: int
    original_length: int

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim == 2:
            values = values[:, :, np.newaxis]
        if values.ndim != 3 or values.shape[1] != self.config.n_bins:
            raise StftError(
                f"spectrogram must be (T, {self.config.n_bins}, C), got {values.shape}"
            )
        self.values = values.astype(np.complex128, copy=False)

    @property
    def shape(self):
        return self.values.shape

    @property
    def num_frames(self) -> int:
        return self.values.shape[0]

    @property
    def num_channels(self) -> int:
        return self.values.shape[2]

    def with_values(self, values: np.ndarray) -> "ComplexSpectrogram":
        return replace(self, values=values)

    def channel(self, index: int) -> "ComplexSpectrogram":
        return self.with_values(self.values[:, :, index : index + 1].copy())


def get_window(cfg: StftConfig) -> np.ndarray:
    # periodic Hann: exact COLA for hop = n_fft / k
    n = np.arange(cfg.n_fft)
    hann = 0.5 - 0.5 * np.cos(2 * np.pi * n / cfg.n_fft)
    if cfg.window == "sqrt_hann":
        return np.sqrt(hann)
    return hann


def _ola_weight(cfg: StftConfig) -> np.ndarray:
    """Per-frame weight whose overlap-add sum must be constant."""
    w = get_window(cfg)
    return w**2 if cfg.window == "sqrt_hann" else w


def validate_config(cfg: StftConfig) -> bool:
    """True iff the window/hop pair satisfies constant overlap-add."""
    weight = _ola_weight(cfg)
    n_fft, hop = cfg.n_fft, cfg.hop
    reps = 2 * (n_fft // hop + 1) + 1
    total = np.zeros(reps * hop + n_fft)
    for k in range(reps):
        total[k * hop : k * hop + n_fft] += weight
    # steady-state region spans one full window length
    mid = total[n_fft : n_fft + n_fft]
    peak = np.max(np.abs(mid))
    if peak == 0:
        return False
    return bool((np.max(mid) - np.min(mid)) / peak < 1e-10)


def num_frames(length: int, cfg: StftConfig) -> int:
    padded = length + cfg.n_fft if cfg.center else length
    if padded < cfg.n_fft:
        return 0
    return 1 + (padded - cfg.n_fft) // cfg.hop


def analyze(w: Waveform, cfg: StftConfig = StftConfig()) -> ComplexSpectrogram:
    x = w.data
    length = x.shape[1]
    if length == 0:
        raise StftError("cannot analyze an empty waveform")
    if cfg.center:
        pad = cfg.n_fft // 2
        mode = "reflect" if length > pad else "constant"
        x = np.pad(x, ((0, 0), (pad, pad)), mode=mode)
    elif length < cfg.n_fft:
        raise StftError(f"waveform of {length} samples is shorter than n_fft={cfg.n_fft}")

    n_frames = num_frames(length, cfg)
    idx = np.arange(n_frames)[:, None] * cfg.hop + np.arange(cfg.n_fft)[None, :]
    # (C, T, n_fft)
    frames = x[:, idx] * get_window(cfg)
    spec = np.fft.rfft(frames, axis=-1)
    return ComplexSpectrogram(
        values=np.transpose(spec, (1, 2, 0)),
        config=cfg,
        sample_rate=w.sample_rate,
        original_length=length,
    )


def synthesize(s: ComplexSpectrogram) -> Waveform:
    cfg = s.config
    n_frames, _, channels = s.values.shape
    window = get_window(cfg)
    frames = np.fft.irfft(np.transpose(s.values, (2, 0, 1)), n=cfg.n_fft, axis=-1)
    if cfg.window == "sqrt_hann":
        frames = frames * window

    out_len = max((n_frames - 1) * cfg.hop + cfg.n_fft, 0)
    offset = cfg.n_fft // 2 if cfg.center else 0
    out_len = max(out_len, offset + s.original_length)
    signal = np.zeros((channels, out_len))
    norm = np.zeros(out_len)
    weight = _ola_weight(cfg)
    for t in range(n_frames):
        start = t * cfg.hop
        signal[:, start : start + cfg.n_fft] += frames[:, t]
        norm[start : start + cfg.n_fft] += weight

    signal = signal[:, offset : offset + s.original_length]
    norm = norm[offset : offset + s.original_length]

    tiny = np.finfo(float).tiny * 1e10
    uncovered = norm <= tiny
    if np.any(uncovered):
        # Without centering the outermost samples can sit on window zeros;
        # only gaps between the first and last frame centres are fatal.
        lo = cfg.n_fft // 2 - offset
        hi = (n_frames - 1) * cfg.hop + cfg.n_fft // 2 - offset
        pos = np.flatnonzero(uncovered)
        interior = pos[(pos >= lo) & (pos <= hi)]
        if interior.size or cfg.center:
            raise StftError(
                f"zero window sum at sample {int(pos[0])}: window/hop pair is not COLA"
            )
    safe = np.where(uncovered, 1.0, norm)
    signal = np.where(uncovered, 0.0, signal / safe)
    return Waveform(signal, s.sample_rate)
