"""Rational-ratio windowed-sinc resampling.

The anti-aliasing filter is a Kaiser (beta 14.77) windowed sinc with 64 taps
per polyphase branch plus one centre tap, so the group delay is an integer
number of samples at the upsampled rate.
"""
from __future__ import annotations

from fractions import Fraction
from functools import lru_cache
from typing import Tuple

import numpy as np
from scipy.signal import firwin, resample_poly

KAISER_BETA = 14.77
TAPS_PER_PHASE = 64


def rational_ratio(ratio: float, max_denominator: int = 1000) -> Tuple[int, int]:
    frac = Fraction(ratio).limit_denominator(max_denominator)
    return frac.numerator, frac.denominator


@lru_cache(maxsize=32)
def design_filter(up: int, down: int) -> np.ndarray:
    taps = TAPS_PER_PHASE * up + 1
    h = firwin(taps, 1.0 / max(up, down), window=("kaiser", KAISER_BETA))
    h.setflags(write=False)
    return h


def resample(x: np.ndarray, up: int, down: int) -> np.ndarray:
    """Resample along the last axis by up/down; output length ceil(N*up/down)."""
    x = np.asarray(x, dtype=np.float64)
    if up == down:
        return x.copy()
    return resample_poly(x, up, down, axis=-1, window=np.array(design_filter(up, down)))


def resample_rate(x: np.ndarray, fs_in: int, fs_out: int) -> np.ndarray:
    up, down = rational_ratio(fs_out / fs_in)
    return resample(x, up, down)
