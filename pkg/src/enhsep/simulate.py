"""Synthetic corpus building blocks.

Random numbers come from numpy's PCG64 bit generator
(``np.random.Generator(np.random.PCG64(seed))``), so a seed fully determines
every signal produced here.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import List, Sequence, Tuple

import numpy as np
from scipy.signal import fftconvolve, lfilter

from .audio_io import Waveform
from .resample import rational_ratio, resample

SPEED_OF_SOUND = 343.0
SINC_TAPS = 81
SABINE = 0.1611
MAX_IMAGE_GRID = 5_000_000  # candidate images per microphone


class SimulationError(ValueError):
    pass


def rng_for(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


@dataclass
class RirSpec:
    room: Tuple[float, float, float]
    source: Tuple[float, float, float]
    mics: List[Tuple[float, float, float]]
    t60: float = 0.0
    max_order: int = -1  # -1: every image arriving within the RIR length
    fs: int = 16000
    c: float = SPEED_OF_SOUND

    def to_dict(self) -> dict:
        d = asdict(self)
        d["room"] = list(self.room)
        d["source"] = list(self.source)
        d["mics"] = [list(m) for m in self.mics]
        return d


@dataclass
class MixSpec:
    snr: float
    seed: int
    sources: int = 1

    def __post_init__(self):
        if not np.isfinite(self.snr):
            raise SimulationError("snr must be finite")


def _power(x: np.ndarray) -> float:
    return float(np.mean(np.asarray(x, dtype=float) ** 2))


def mix_at_snr(speech: Waveform, noise: Waveform, snr: float):
    """Return (mixture, scaled_noise) with the requested speech-to-noise ratio."""
    if speech.data.shape != noise.data.shape:
        raise SimulationError(f"speech {speech.data.shape} and noise {noise.data.shape} differ in shape")
    p_s, p_n = _power(speech.data), _power(noise.data)
    if p_s == 0 or p_n == 0:
        raise SimulationError("cannot mix zero-power signals")
    gain = np.sqrt(p_s / (p_n * 10 ** (snr / 10)))
    scaled = Waveform(noise.data * gain, noise.sample_rate)
    return Waveform(speech.data + scaled.data, speech.sample_rate), scaled


def measured_snr(speech: Waveform, noise: Waveform) -> float:
    return 10 * np.log10(_power(speech.data) / _power(noise.data))


def sabine_absorption(room: Sequence[float], t60: float) -> float:
    lx, ly, lz = room
    volume = lx * ly * lz
    surface = 2 * (lx * ly + lx * lz + ly * lz)
    return SABINE * volume / (surface * t60)


def _validate(spec: RirSpec):
    room = np.asarray(spec.room, dtype=float)
    if room.shape != (3,) or np.any(room <= 0):
        raise SimulationError(f"invalid room dimensions {spec.room}")
    for label, p in [("source", spec.source)] + [(f"mic {i}", m) for i, m in enumerate(spec.mics)]:
        p = np.asarray(p, dtype=float)
        if p.shape != (3,) or np.any(p <= 0) or np.any(p >= room):
            raise SimulationError(f"{label} at {tuple(p)} is not strictly inside room {tuple(room)}")
    if not spec.mics:
        raise SimulationError("at least one microphone is required")
    if spec.t60 < 0:
        raise SimulationError("t60 must be >= 0")


def _axis_images(src: float, mic: float, length: float, n_max: int):
    """Image offsets along one axis and their wall-hit counts."""
    n = np.arange(-n_max, n_max + 1)
    pos, hits = [], []
    for q in (0, 1):
        pos.append((1 - 2 * q) * src + 2 * n * length - mic)
        hits.append(np.abs(n - q) + np.abs(n))
    return np.concatenate(pos), np.concatenate(hits)


def generate_rir(spec: RirSpec) -> List[Waveform]:
    """Image-method room impulse responses, one single-channel waveform per mic."""
    _validate(spec)
    fs, c = spec.fs, spec.c
    if spec.t60 == 0:
        reflection, max_order = 0.0, 0
    else:
        alpha = sabine_absorption(spec.room, spec.t60)
        if alpha > 1:
            raise SimulationError(
                f"room {tuple(spec.room)} is too small for t60={spec.t60}s (absorption {alpha:.3f} > 1)"
            )
        reflection, max_order = np.sqrt(1 - alpha), spec.max_order

    base_len = int(np.ceil(spec.t60 * fs)) + SINC_TAPS
    half = SINC_TAPS // 2
    rirs = []
    for mic in spec.mics:
        if max_order >= 0:
            radius = np.inf
            n_max = max_order // 2 + 1
        else:
            radius = base_len / fs * c
            n_max = int(np.ceil(radius / (2 * min(spec.room)))) + 1
        if (4 * n_max + 2) ** 3 > MAX_IMAGE_GRID:
            raise SimulationError(
                f"t60={spec.t60}s in room {tuple(spec.room)} needs too many image sources; "
                "lower t60 or set max_order"
            )
        axes = [_axis_images(spec.source[k], mic[k], spec.room[k], n_max) for k in range(3)]
        (dx, hx), (dy, hy), (dz, hz) = axes
        dist = np.sqrt(dx[:, None, None] ** 2 + dy[None, :, None] ** 2 + dz[None, None, :] ** 2)
        order = hx[:, None, None] + hy[None, :, None] + hz[None, None, :]
        keep = dist <= radius
        if max_order >= 0:
            keep &= order <= max_order
        dist, order = dist[keep], order[keep]
        if reflection == 0:
            amp = np.where(order == 0, 1.0, 0.0) / (4 * np.pi * dist)
        else:
            amp = reflection**order / (4 * np.pi * dist)
        nz = amp > 0
        dist, amp = dist[nz], amp[nz]

        delay = dist / c * fs
        length = max(base_len, int(np.ceil(delay.max())) + half + 1)
        centre = np.rint(delay).astype(np.int64)
        offsets = np.arange(-half, half + 1)
        idx = centre[:, None] + offsets[None, :]
        x = idx - delay[:, None]
        window = 0.5 * (1 + np.cos(np.pi * x / (half + 1)))
        taps = amp[:, None] * window * np.sinc(x)
        valid = (idx >= 0) & (idx < length)
        h = np.bincount(idx[valid], weights=taps[valid], minlength=length)[:length]
        rirs.append(Waveform(h, fs))
    return rirs


def schroeder_decay_time(h: np.ndarray, fs: int, start_db: float = -5.0, stop_db: float = -25.0) -> float:
    """Reverberation time from a linear fit of the backward-integrated energy decay."""
    h = np.asarray(h, dtype=float).ravel()
    onset = int(np.argmax(np.abs(h)))
    energy = np.cumsum(h[onset:][::-1] ** 2)[::-1]
    edc = 10 * np.log10(energy / energy[0] + 1e-300)
    sel = np.flatnonzero((edc <= start_db) & (edc >= stop_db))
    if sel.size < 2:
        raise SimulationError("decay curve does not span the fit range")
    t = sel / fs
    slope, _ = np.polyfit(t, edc[sel], 1)
    return float(-60.0 / slope)


def convolve(w: Waveform, rir: Waveform) -> Waveform:
    """Linear convolution truncated to the dry signal's length."""
    if w.num_samples == 0 or rir.num_samples == 0:
        raise SimulationError("convolution inputs must be non-empty")
    out = fftconvolve(w.data, rir.data[:1], axes=-1)[:, : w.num_samples]
    return Waveform(out, w.sample_rate)


def speed_perturb(w: Waveform, factor: float) -> Waveform:
    """Play ``w`` ``factor`` times faster at the same nominal sample rate."""
    if not 0.5 <= factor <= 2.0:
        raise SimulationError(f"speed factor {factor} outside [0.5, 2.0]")
    if factor == 1.0:
        return Waveform(w.data.copy(), w.sample_rate)
    up, down = rational_ratio(1.0 / factor)
    return Waveform(resample(w.data, up, down), w.sample_rate)


def gen_noise(length: int, channels: int = 1, seed: int = 0, kind: str = "white") -> Waveform:
    if length <= 0:
        raise SimulationError("noise length must be positive")
    if kind != "white":
        raise SimulationError(f"unknown noise kind {kind!r}")
    data = 0.1 * rng_for(seed).standard_normal((channels, length))
    return Waveform(data, 16000)


def _resonator(freq: float, bandwidth: float, fs: int):
    r = np.exp(-np.pi * bandwidth / fs)
    theta = 2 * np.pi * freq / fs
    a = [1.0, -2 * r * np.cos(theta), r * r]
    return [1 - r], a


def synth_speech(length: int, fs: int = 16000, seed: int = 0) -> np.ndarray:
    """Speech-like test signal: voiced/unvoiced syllables with pauses.

    Voiced parts are harmonic (per-talker pitch with slow drift) and all
    excitation passes through a cascade of formant resonators plus a
    -6 dB/oct tilt, giving a long-term spectrum close to speech. Output is
    zero mean with RMS 0.1.
    """
    rng = rng_for(seed)
    f0_base = rng.uniform(90, 240)
    t = np.arange(length) / fs

    # syllable envelope: alternating bursts and pauses
    env = np.zeros(length)
    voiced = np.zeros(length, dtype=bool)
    pos = int(rng.uniform(0.0, 0.1) * fs)
    while pos < length:
        dur = int(rng.uniform(0.12, 0.35) * fs)
        seg = slice(pos, min(pos + dur, length))
        n = seg.stop - seg.start
        env[seg] = np.hanning(dur + 2)[1:-1][:n] ** 0.5 * rng.uniform(0.4, 1.0)
        voiced[seg] = rng.uniform() < 0.8
        pos += dur + int(rng.uniform(0.03, 0.25) * fs)

    drift = np.cumsum(rng.standard_normal(length)) / np.sqrt(fs) * 0.3
    f0 = f0_base * np.exp(0.15 * np.tanh(drift) + 0.05 * np.sin(2 * np.pi * rng.uniform(0.5, 2) * t))
    phase = 2 * np.pi * np.cumsum(f0) / fs
    harmonics = np.zeros(length)
    for k in range(1, int(4000 / f0_base) + 1):
        harmonics += np.sin(k * phase + rng.uniform(0, 2 * np.pi)) * (k * f0 < 0.45 * fs)
    harmonics /= np.sqrt(np.mean(harmonics**2)) + 1e-12
    noise = rng.standard_normal(length)
    excitation = np.where(voiced, harmonics, 0.5 * noise) * env

    # formants drift per talker
    signal = excitation
    for centre, bw in ((rng.uniform(350, 800), 90), (rng.uniform(900, 2200), 120), (rng.uniform(2400, 3300), 180)):
        b, a = _resonator(centre, bw, fs)
        signal = signal + 0.6 * lfilter(b, a, excitation) * centre / 500
    signal = lfilter([1.0], [1.0, -0.7], signal)  # spectral tilt
    signal = signal - signal.mean()
    return 0.1 * signal / (np.sqrt(np.mean(signal**2)) + 1e-12)
