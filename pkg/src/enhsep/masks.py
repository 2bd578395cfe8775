"""Oracle time-frequency masks and mask application."""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from .stft import ComplexSpectrogram

EPS = 1e-8
MASK_KINDS = ("IBM", "IRM", "IAM", "PSM")


class MaskError(ValueError):
    pass


@dataclass
class TimeFreqMask:
    """Real mask shaped (frames, bins)."""

    values: np.ndarray
    kind: str = "IRM"
    clip: float = 10.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise MaskError(f"mask must be (T, F), got shape {self.values.shape}")
        if self.kind not in MASK_KINDS:
            raise MaskError(f"unknown mask kind {self.kind!r}")

    @property
    def shape(self):
        return self.values.shape


def _single_channel(spec: ComplexSpectrogram, name: str) -> np.ndarray:
    if spec.num_channels != 1:
        raise MaskError(f"{name} must be single-channel, got {spec.num_channels} channels")
    return spec.values[:, :, 0]


def compute_oracle_masks(
    sources: Sequence[ComplexSpectrogram],
    mixture: ComplexSpectrogram,
    kind: str = "IRM",
    clip: float = 10.0,
) -> List[TimeFreqMask]:
    if kind not in MASK_KINDS:
        raise MaskError(f"unknown mask kind {kind!r}")
    if not sources:
        raise MaskError("at least one source is required")
    Y = _single_channel(mixture, "mixture")
    S = np.stack([_single_channel(s, "source") for s in sources])
    if S.shape[1:] != Y.shape:
        raise MaskError(f"source shape {S.shape[1:]} does not match mixture {Y.shape}")

    mag = np.abs(S)
    if kind == "IBM":
        # argmax returns the first maximum, so ties go to the lowest index
        winner = np.argmax(mag, axis=0)
        values = (winner[None] == np.arange(len(sources))[:, None, None]).astype(float)
    elif kind == "IRM":
        values = mag / (mag.sum(axis=0, keepdims=True) + EPS)
    elif kind == "IAM":
        values = np.minimum(mag / (np.abs(Y) + EPS), clip)
    else:
        cos = np.cos(np.angle(Y)[None] - np.angle(S))
        values = np.clip(mag / (np.abs(Y) + EPS) * cos, -clip, clip)
    return [TimeFreqMask(v, kind, clip) for v in values]


def apply_mask(mixture: ComplexSpectrogram, mask: TimeFreqMask) -> ComplexSpectrogram:
    if mask.shape != mixture.values.shape[:2]:
        raise MaskError(f"mask shape {mask.shape} does not match spectrogram {mixture.shape[:2]}")
    return mixture.with_values(mixture.values * mask.values[:, :, None])
