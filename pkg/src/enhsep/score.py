"""Per-utterance scoring with one consistent permutation, and report files."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .audio_io import Waveform
from .metrics import DB_CAP, MetricError, as_mono, bss_eval, si_snr, snr
from .objectives import pit_si_snr_loss, signal_approx_loss
from .stft import StftConfig, analyze
from .stoi import stoi

METRICS = ("si_snr", "snr", "sdr", "sir", "sar", "stoi", "mag_mse")
BSS_METRICS = ("sdr", "sir", "sar")
DB_METRICS = ("si_snr", "snr", "sdr", "sir", "sar")


@dataclass
class UtteranceScore:
    utt_id: str
    values: Dict[str, float]
    permutation: Tuple[int, ...]


def _prepare(ests, refs, trim: bool):
    ests = [as_mono(e) for e in ests]
    refs = [as_mono(r) for r in refs]
    if len(ests) != len(refs) or not refs:
        raise MetricError(f"{len(ests)} estimates for {len(refs)} references")
    lengths = {len(x) for x in ests + refs}
    if len(lengths) > 1:
        if not trim:
            raise MetricError(f"estimate/reference lengths differ: {sorted(lengths)}")
        n = min(lengths)
        ests = [e[:n] for e in ests]
        refs = [r[:n] for r in refs]
    return ests, refs


def score_utterance(
    ests: Sequence,
    refs: Sequence,
    metrics: Sequence[str] = ("si_snr", "sdr", "sir", "sar", "stoi"),
    fs: int = 16000,
    stft: StftConfig = StftConfig(),
    filter_len: int = 512,
    trim: bool = False,
    utt_id: str = "",
) -> UtteranceScore:
    """Score S estimates against S references under one shared pairing.

    The pairing comes from BSS-eval (max mean SDR) when any of SDR/SIR/SAR is
    requested, otherwise from SI-SNR PIT. Each reported value is the mean
    over sources.
    """
    unknown = set(metrics) - set(METRICS)
    if unknown:
        raise MetricError(f"unknown metrics: {sorted(unknown)}")
    ests, refs = _prepare(ests, refs, trim)
    S = len(refs)

    values: Dict[str, float] = {}
    if any(m in BSS_METRICS for m in metrics):
        bss = bss_eval(ests, refs, filter_len)
        perm = bss.permutation
        for name in BSS_METRICS:
            if name in metrics:
                values[name] = float(np.mean(getattr(bss, name)))
    else:
        perm = pit_si_snr_loss(ests, refs).permutation

    pairs = [(ests[i], refs[perm[i]]) for i in range(S)]
    for name in metrics:
        if name in values:
            continue
        if name == "si_snr":
            per = [si_snr(e, r) for e, r in pairs]
        elif name == "snr":
            per = [snr(e, r) for e, r in pairs]
        elif name == "stoi":
            per = [stoi(e, r, fs) for e, r in pairs]
        elif name == "mag_mse":
            per = [
                signal_approx_loss(analyze(Waveform(e, fs), stft), analyze(Waveform(r, fs), stft))
                for e, r in pairs
            ]
        values[name] = float(np.mean(per))
    ordered = {m: values[m] for m in metrics}
    return UtteranceScore(utt_id, ordered, tuple(int(p) for p in perm))


def _encode(name: str, value: float):
    if name in DB_METRICS:
        if value >= DB_CAP:
            return "inf"
        if value <= -DB_CAP:
            return "-inf"
    return value


@dataclass
class ScoreReport:
    per_utt: Dict[str, UtteranceScore] = field(default_factory=dict)

    def add(self, score: UtteranceScore):
        if score.utt_id in self.per_utt:
            raise ValueError(f"utterance {score.utt_id!r} scored twice")
        self.per_utt[score.utt_id] = score

    def metric_names(self) -> List[str]:
        names: List[str] = []
        for s in self.per_utt.values():
            names.extend(m for m in s.values if m not in names)
        return names

    @property
    def aggregates(self) -> Dict[str, float]:
        out = {}
        for name in self.metric_names():
            vals = [s.values[name] for s in self.per_utt.values() if name in s.values]
            out[name] = float(np.mean(vals))
        return out

    def to_dict(self) -> dict:
        per_utt = {}
        for utt, s in self.per_utt.items():
            entry = {k: _encode(k, v) for k, v in s.values.items()}
            entry["permutation"] = list(s.permutation)
            per_utt[utt] = entry
        return {
            "per_utt": per_utt,
            "aggregates": {k: _encode(k, v) for k, v in self.aggregates.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def to_csv(self) -> str:
        names = self.metric_names()
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["utt_id"] + names)
        for utt, s in self.per_utt.items():
            writer.writerow([utt] + [_encode(n, s.values[n]) if n in s.values else "" for n in names])
        return buf.getvalue()


def load_report(text: str) -> dict:
    """Parse report JSON, turning "inf"/"-inf" strings back into floats."""

    def decode(v):
        if v == "inf":
            return float("inf")
        if v == "-inf":
            return float("-inf")
        return v

    data = json.loads(text)
    for entry in data["per_utt"].values():
        for k, v in entry.items():
            if k != "permutation":
                entry[k] = decode(v)
    data["aggregates"] = {k: decode(v) for k, v in data["aggregates"].items()}
    return data

