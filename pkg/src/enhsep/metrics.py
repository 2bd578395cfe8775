"""Signal-level separation metrics and permutation-minimised WER.

All log ratios are clamped to [-120, 120] dB so that perfect or silent
estimates stay finite through aggregation.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Tuple, Union

import numpy as np
import scipy.linalg
from scipy.signal import fftconvolve

from .audio_io import Waveform
from .permutation import best_permutation

DB_CAP = 120.0
MAX_BSS_SOURCES = 6

Signal = Union[Waveform, np.ndarray, Sequence[float]]


class MetricError(ValueError):
    pass


def as_mono(x: Signal) -> np.ndarray:
    if isinstance(x, Waveform):
        if x.num_channels != 1:
            raise MetricError(f"expected a single-channel waveform, got {x.num_channels} channels")
        return x.data[0]
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 2 and arr.shape[0] == 1:
        arr = arr[0]
    if arr.ndim != 1:
        raise MetricError(f"expected a 1-D signal, got shape {arr.shape}")
    return arr


def db_ratio(num: float, den: float) -> float:
    """10*log10(num/den) clamped to +-DB_CAP; 0/0 is 0 dB."""
    if num <= 0 and den <= 0:
        return 0.0
    if den <= 0:
        return DB_CAP
    if num <= 0:
        return -DB_CAP
    return float(np.clip(10.0 * np.log10(num / den), -DB_CAP, DB_CAP))


def _check_lengths(est: np.ndarray, ref: np.ndarray):
    if est.shape != ref.shape:
        raise MetricError(f"length mismatch: estimate {est.shape[0]} vs reference {ref.shape[0]}")


def si_snr(est: Signal, ref: Signal) -> float:
    est, ref = as_mono(est), as_mono(ref)
    _check_lengths(est, ref)
    est = est - est.mean()
    ref = ref - ref.mean()
    ref_energy = float(np.dot(ref, ref))
    if ref_energy == 0:
        raise MetricError("reference is zero after mean removal")
    if not np.any(est):
        return -DB_CAP
    target = np.dot(est, ref) / ref_energy * ref
    return db_ratio(float(np.dot(target, target)), float(np.sum((est - target) ** 2)))


def snr(est: Signal, ref: Signal) -> float:
    est, ref = as_mono(est), as_mono(ref)
    _check_lengths(est, ref)
    return db_ratio(float(np.dot(ref, ref)), float(np.sum((est - ref) ** 2)))


@dataclass
class BssEvalResult:
    """Per-estimate SDR/SIR/SAR; ``permutation[i]`` is the reference matched to estimate i."""

    sdr: np.ndarray
    sir: np.ndarray
    sar: np.ndarray
    permutation: Tuple[int, ...]


def _xcorr(a_fft: np.ndarray, b_fft: np.ndarray, n_fft: int, max_lag: int) -> np.ndarray:
    """c(k) = sum_n a[n] b[n+k] for k in [-max_lag, max_lag]."""
    full = np.fft.irfft(np.conj(a_fft) * b_fft, n=n_fft)
    return np.concatenate([full[n_fft - max_lag :], full[: max_lag + 1]])


def bss_decompose(est: np.ndarray, refs: np.ndarray, target: int, filter_len: int):
    """Split ``est`` into (s_target, e_interf, e_artif), each of length N + L - 1."""
    return _Decomposer(refs, filter_len).decompose(est, target)


class _Decomposer:
    """Projections of estimates onto delayed copies of a fixed reference set."""

    def __init__(self, refs: np.ndarray, filter_len: int):
        self.refs = refs
        S, N = refs.shape
        L = filter_len
        self.L = L
        self.n_fft = int(2 ** np.ceil(np.log2(N + L)))
        self.ref_fft = np.fft.rfft(refs, n=self.n_fft)
        lags = np.arange(-(L - 1), L)
        gram = np.zeros((S * L, S * L))
        for i in range(S):
            for j in range(S):
                c = _xcorr(self.ref_fft[i], self.ref_fft[j], self.n_fft, L - 1)
                # block[l, m] = sum_n ref_i[n-l] ref_j[n-m] = c_ij(l - m)
                col = c[lags.size // 2 + np.arange(L)]  # c_ij(l), l >= 0
                row = c[lags.size // 2 - np.arange(L)]  # c_ij(-m)
                gram[i * L : (i + 1) * L, j * L : (j + 1) * L] = scipy.linalg.toeplitz(col, row)
        self.gram = gram + 1e-10 * np.eye(S * L)

    def _project(self, coeffs: np.ndarray, which: Sequence[int]) -> np.ndarray:
        N = self.refs.shape[1]
        out = np.zeros(N + self.L - 1)
        for k, i in enumerate(which):
            out += fftconvolve(self.refs[i], coeffs[k * self.L : (k + 1) * self.L])
        return out

    def rhs(self, est: np.ndarray) -> np.ndarray:
        est_fft = np.fft.rfft(est, n=self.n_fft)
        parts = []
        for i in range(self.refs.shape[0]):
            c = _xcorr(self.ref_fft[i], est_fft, self.n_fft, self.L - 1)
            parts.append(c[self.L - 1 :])  # lags 0..L-1
        return np.concatenate(parts)

    def project_all(self, b: np.ndarray) -> np.ndarray:
        coeffs = scipy.linalg.solve(self.gram, b, assume_a="pos")
        return self._project(coeffs, range(self.refs.shape[0]))

    def project_one(self, b: np.ndarray, target: int) -> np.ndarray:
        L = self.L
        block = self.gram[target * L : (target + 1) * L, target * L : (target + 1) * L]
        coeffs = scipy.linalg.solve(block, b[target * L : (target + 1) * L], assume_a="pos")
        return self._project(coeffs, [target])

    def decompose(self, est: np.ndarray, target: int):
        b = self.rhs(est)
        padded = np.concatenate([est, np.zeros(self.L - 1)])
        p_all = self.project_all(b)
        s_target = self.project_one(b, target)
        return s_target, p_all - s_target, padded - p_all


def _ratios(s_target, e_interf, e_artif) -> Tuple[float, float, float]:
    energy = lambda v: float(np.dot(v, v))  # noqa: E731
    sdr = db_ratio(energy(s_target), energy(e_interf + e_artif))
    sir = db_ratio(energy(s_target), energy(e_interf))
    sar = db_ratio(energy(s_target + e_interf), energy(e_artif))
    return sdr, sir, sar


def bss_eval(ests: Sequence[Signal], refs: Sequence[Signal], filter_len: int = 512) -> BssEvalResult:
    est_arr = np.stack([as_mono(e) for e in ests]) if len(ests) else np.zeros((0, 0))
    ref_arr = np.stack([as_mono(r) for r in refs]) if len(refs) else np.zeros((0, 0))
    S = ref_arr.shape[0]
    if S < 1 or est_arr.shape[0] != S:
        raise MetricError(f"need equal, non-zero numbers of estimates and references ({est_arr.shape[0]} vs {S})")
    if S > MAX_BSS_SOURCES:
        raise MetricError(f"bss_eval supports at most {MAX_BSS_SOURCES} sources")
    if est_arr.shape[1] != ref_arr.shape[1]:
        raise MetricError(f"length mismatch: {est_arr.shape[1]} vs {ref_arr.shape[1]}")
    if filter_len < 1:
        raise MetricError("filter_len must be >= 1")

    dec = _Decomposer(ref_arr, filter_len)
    table = np.zeros((S, S, 3))
    for j in range(S):
        b = dec.rhs(est_arr[j])
        padded = np.concatenate([est_arr[j], np.zeros(filter_len - 1)])
        p_all = dec.project_all(b)
        e_artif = padded - p_all
        for i in range(S):
            s_target = dec.project_one(b, i)
            table[j, i] = _ratios(s_target, p_all - s_target, e_artif)

    perm, _ = best_permutation(table[:, :, 0], maximize=True, limit=MAX_BSS_SOURCES)
    chosen = table[np.arange(S), list(perm)]
    return BssEvalResult(chosen[:, 0], chosen[:, 1], chosen[:, 2], tuple(perm))


def levenshtein(hyp: Sequence[str], ref: Sequence[str]) -> int:
    prev = list(range(len(ref) + 1))
    for i, h in enumerate(hyp, start=1):
        cur = [i] + [0] * len(ref)
        for j, r in enumerate(ref, start=1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (h != r))
        prev = cur
    return prev[-1]


@dataclass
class WerResult:
    wer: float
    permutation: Tuple[int, ...]
    errors: int
    ref_words: int


def _tokens(x: Union[str, Sequence[str]]) -> List[str]:
    return x.split() if isinstance(x, str) else list(x)


def perm_wer(hyps: Sequence, refs: Sequence) -> WerResult:
    """Word error rate under the hypothesis-to-reference pairing with fewest edits."""
    if not refs:
        raise MetricError("empty reference set")
    if len(hyps) != len(refs):
        raise MetricError(f"{len(hyps)} hypotheses for {len(refs)} references")
    hyp_toks = [_tokens(h) for h in hyps]
    ref_toks = [_tokens(r) for r in refs]
    cost = np.array([[levenshtein(h, r) for r in ref_toks] for h in hyp_toks], dtype=float)
    perm, total = best_permutation(cost)
    words = sum(len(r) for r in ref_toks)
    errors = int(round(total))
    if words == 0:
        wer = 0.0 if errors == 0 else float("inf")
    else:
        wer = errors / words
    return WerResult(wer, tuple(perm), errors, words)
