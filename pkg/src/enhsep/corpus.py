"""Simulated multichannel corpora: scene sampling and per-utterance rendering.

Each utterance is derived from ``seed ^ index`` alone, so utterances can be
rendered in any order or in parallel and still come out bit-identical.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .audio_io import Waveform
from .simulate import (
    MixSpec,
    RirSpec,
    SimulationError,
    convolve,
    gen_noise,
    generate_rir,
    mix_at_snr,
    rng_for,
    speed_perturb,
    synth_speech,
)

TARGET_RMS = 0.1
PEAK_LIMIT = 0.99
WALL_MARGIN = 0.3


@dataclass
class SimulatedUtterance:
    utt_id: str
    mixture: Waveform  # (C, N)
    sources: List[Waveform]  # reference-channel source images
    noise: Optional[Waveform]  # reference-channel noise, None when noiseless
    meta: dict


def utterance_id(index: int) -> str:
    return f"utt{index:04d}"


def utterance_seed(seed: int, index: int) -> int:
    return int(seed) ^ int(index)


def mic_array(centre: Sequence[float], num_mics: int, spacing: float) -> List[Tuple[float, float, float]]:
    """Uniform linear array along x, centred on ``centre``."""
    offsets = (np.arange(num_mics) - (num_mics - 1) / 2) * spacing
    return [(centre[0] + o, centre[1], centre[2]) for o in offsets]


def sample_geometry(rng: np.random.Generator, room, num_mics: int, spacing: float, num_points: int, distance):
    """Draw an array centre and ``num_points`` source positions around it."""
    room = np.asarray(room, dtype=float)
    margin = np.minimum(2.0, room[:2] / 3)
    centre = np.array([rng.uniform(margin[0], room[0] - margin[0]), rng.uniform(margin[1], room[1] - margin[1]), 0.0])
    centre[2] = min(1.2, room[2] / 2)
    lo, hi = distance
    points = []
    for _ in range(num_points):
        r = rng.uniform(lo, hi)
        az = rng.uniform(0, 2 * np.pi)
        p = centre + np.array([r * np.cos(az), r * np.sin(az), 0.3])
        p = np.clip(p, WALL_MARGIN, room - WALL_MARGIN)
        points.append(tuple(float(v) for v in p))
    mics = mic_array(centre, num_mics, spacing)
    for m in mics:
        if np.any(np.asarray(m) <= 0) or np.any(np.asarray(m) >= room):
            raise SimulationError(f"microphone array does not fit in room {tuple(room)}")
    return mics, points


def _images(dry: np.ndarray, spec: RirSpec) -> np.ndarray:
    w = Waveform(dry, spec.fs)
    return np.concatenate([convolve(w, h).data for h in generate_rir(spec)])


def simulate_utterance(index: int, seed: int, sim: dict) -> SimulatedUtterance:
    """Render one utterance from the ``simulate`` config section."""
    utt_id = utterance_id(index)
    useed = utterance_seed(seed, index)
    rng = rng_for(useed)
    fs = int(sim["fs"])
    length = int(round(sim["duration"] * fs))
    S, C, ref = int(sim["num_speakers"]), int(sim["num_mics"]), int(sim["ref_channel"])
    noise_kind = sim["noise"]

    n_points = S + (noise_kind == "point")
    mics, points = sample_geometry(rng, sim["room"], C, sim["mic_spacing"], n_points, sim["source_distance"])
    source_seeds = rng.integers(0, 2**63, size=S + 1)

    rirs, images = [], []
    for s in range(S):
        dry = synth_speech(length, fs, int(source_seeds[s]))
        if s > 0:  # interferers sit ``sir`` dB below the first speaker
            dry = dry * 10 ** (-sim["sir"] / 20)
        spec = RirSpec(tuple(sim["room"]), points[s], mics, sim["t60"], sim["max_order"], fs)
        rirs.append(spec)
        images.append(_images(dry, spec))
    speech = np.sum(images, axis=0)

    noise_rir = None
    noise = None
    if noise_kind != "none":
        raw = gen_noise(length, 1 if noise_kind == "point" else C, int(source_seeds[S])).data
        if noise_kind == "point":
            noise_rir = RirSpec(tuple(sim["room"]), points[S], mics, sim["t60"], sim["max_order"], fs)
            raw = _images(raw[0], noise_rir)
        _, scaled = mix_at_snr(Waveform(speech, fs), Waveform(raw, fs), sim["snr"])
        noise = scaled.data

    mixture = speech + (noise if noise is not None else 0.0)
    gain = TARGET_RMS / (np.sqrt(np.mean(speech[ref] ** 2)) + 1e-12)
    peak = np.max(np.abs(mixture)) * gain
    if peak > PEAK_LIMIT:
        gain *= PEAK_LIMIT / peak

    mix_spec = MixSpec(float(sim["snr"]), useed, S)
    meta = {
        "utt_id": utt_id,
        "index": index,
        "seed": useed,
        "fs": fs,
        "num_samples": length,
        "ref_channel": ref,
        "noise": noise_kind,
        "sir": float(sim["sir"]),
        "gain": float(gain),
        "speed": 1.0,
        "mix": asdict(mix_spec),
        "rirs": [r.to_dict() for r in rirs],
        "noise_rir": noise_rir.to_dict() if noise_rir else None,
    }
    return SimulatedUtterance(
        utt_id,
        Waveform(mixture * gain, fs),
        [Waveform(img[ref] * gain, fs) for img in images],
        Waveform(noise[ref] * gain, fs) if noise is not None else None,
        meta,
    )


def perturbed_copy(utt: SimulatedUtterance, factor: float) -> SimulatedUtterance:
    """Speed-perturbed copy; every signal goes through the same resampler."""

    def sp(w):
        return speed_perturb(w, factor) if w is not None else None

    meta = dict(utt.meta, utt_id=f"sp{factor:g}-{utt.utt_id}", speed=float(factor))
    return SimulatedUtterance(meta["utt_id"], sp(utt.mixture), [sp(s) for s in utt.sources], sp(utt.noise), meta)


def simulate_with_perturbation(index: int, seed: int, sim: dict) -> List[SimulatedUtterance]:
    base = simulate_utterance(index, seed, sim)
    out = [base]
    for factor in sim.get("speed_perturb") or []:
        if float(factor) != 1.0:
            out.append(perturbed_copy(base, float(factor)))
    return out


def signals_dict(utt: SimulatedUtterance) -> Dict[str, Waveform]:
    out = {"mix": utt.mixture}
    out.update({f"s{k + 1}": s for k, s in enumerate(utt.sources)})
    if utt.noise is not None:
        out["noise"] = utt.noise
    return out
