"""Stage drivers: simulate, enhance and score over a manifest.

Work is split per utterance. With ``jobs > 1`` utterances go to a process
pool; results are always collected in manifest order, so outputs do not
depend on the worker count.
"""
from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Callable, List, Optional, Sequence

import numpy as np

from .audio_io import AudioError, Manifest, ManifestEntry, Waveform, read_manifest, read_wav, write_manifest, write_wav
from .beamforming import (
    BeamformingError,
    apply_beamformer,
    estimate_scm,
    mpdr,
    mvdr_souden,
    principal_eigenvectors,
    wpd,
)
from .config import BEAMFORMERS, ConfigError, validate_chain
from .corpus import signals_dict, simulate_with_perturbation, utterance_id
from .dereverb import DereverbError, WpeConfig, wpe
from .masks import MaskError, TimeFreqMask, apply_mask, compute_oracle_masks
from .metrics import MetricError
from .score import ScoreReport, score_utterance
from .simulate import SimulationError
from .stft import StftConfig, StftError, analyze, synthesize

log = logging.getLogger(__name__)

DATA_ERRORS = (AudioError, MetricError, MaskError, BeamformingError, DereverbError, StftError)


class PipelineError(Exception):
    """Stage failure carrying the process exit code (1 config, 2 data)."""

    def __init__(self, message: str, exit_code: int = 2):
        super().__init__(message, exit_code)
        self.message = message
        self.exit_code = exit_code

    def __str__(self):
        return self.message


def _run_parallel(fn: Callable, tasks: Sequence, jobs: int) -> list:
    if jobs <= 1 or len(tasks) <= 1:
        results = [fn(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as pool:
            results = list(pool.map(fn, tasks))
    for r in results:  # first failure in manifest order wins
        if isinstance(r, PipelineError):
            raise r
    return results


def _guard(utt_id: str, fn: Callable, *args):
    """Run ``fn`` and turn known failures into a PipelineError naming the utterance."""
    try:
        return fn(*args)
    except PipelineError as exc:
        return PipelineError(f"{utt_id}: {exc.message}", exc.exit_code)
    except SimulationError as exc:
        # geometry/t60 problems come straight from the config
        return PipelineError(f"{utt_id}: {exc}", 1)
    except DATA_ERRORS as exc:
        return PipelineError(f"{utt_id}: {exc}", 2)


def _stft_config(cfg: dict) -> StftConfig:
    try:
        return StftConfig(**cfg["stft"])
    except (TypeError, StftError) as exc:
        raise ConfigError(f"invalid stft section: {exc}") from exc


def _resolve(base: Path, path: str) -> Path:
    p = Path(path)
    return p if p.is_absolute() else base / p


def _rel(path: Path, start: Path) -> str:
    return Path(os.path.relpath(path, start)).as_posix()


# ---------------------------------------------------------------- simulate


def data_dir(cfg: dict) -> Path:
    return Path(cfg["io"]["output_dir"]) / "data"


def _simulate_task(task):
    index, seed, sim, out_dir, force = task

    def work():
        utts = simulate_with_perturbation(index, seed, sim)
        entries = []
        for utt in utts:
            names = {k: Path("wav") / f"{utt.utt_id}_{k}.wav" for k in signals_dict(utt)}
            meta_path = out_dir / "meta" / f"{utt.utt_id}.json"
            done = meta_path.exists() and all((out_dir / n).exists() for n in names.values())
            if force or not done:
                for key, wav in signals_dict(utt).items():
                    write_wav(out_dir / names[key], wav, sim["encoding"])
                meta_path.write_text(json.dumps(utt.meta, indent=2) + "\n", encoding="utf-8")
            refs = [names[f"s{k + 1}"].as_posix() for k in range(len(utt.sources))]
            noise = names["noise"].as_posix() if "noise" in names else None
            entries.append(ManifestEntry(utt.utt_id, names["mix"].as_posix(), refs, noise))
        return entries

    return _guard(utterance_id(index), work)


def run_simulate(cfg: dict, jobs: int = 1, force: bool = False) -> Path:
    out_dir = data_dir(cfg)
    manifest_path = out_dir / "manifest.tsv"
    sim = cfg["simulate"]
    try:
        (out_dir / "wav").mkdir(parents=True, exist_ok=True)
        (out_dir / "meta").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise PipelineError(f"cannot create {out_dir}: {exc}", 2) from exc
    tasks = [(i, int(cfg["seed"]), sim, out_dir, force) for i in range(int(sim["num_utts"]))]
    results = _run_parallel(_simulate_task, tasks, jobs)
    entries = [e for group in results for e in group]
    write_manifest(manifest_path, Manifest(entries))
    log.info("simulated %d utterances into %s", len(entries), out_dir)
    return manifest_path


# ----------------------------------------------------------------- enhance


def input_manifest_path(cfg: dict) -> Path:
    path = cfg["io"]["input_manifest"]
    return Path(path) if path else data_dir(cfg) / "manifest.tsv"


def enhanced_dir(cfg: dict) -> Path:
    return Path(cfg["io"]["output_dir"]) / "enhanced"


def _clipped(mask: TimeFreqMask) -> TimeFreqMask:
    return TimeFreqMask(np.clip(mask.values, 0.0, 1.0), "IRM")


def enhance_signals(
    mixture: Waveform,
    references: Sequence[Waveform],
    noise: Optional[Waveform],
    chain: Sequence,
    stft: StftConfig = StftConfig(),
    ref_channel: int = 0,
) -> List[Waveform]:
    """Run an enhancement chain on one utterance and return one waveform per source.

    Oracle masks come from the references (and the noise, if given) at the
    reference channel. A chain with a beamformer but no mask step uses IRM.
    """
    steps = validate_chain(list(chain))
    C = mixture.num_channels
    if not 0 <= ref_channel < C:
        raise PipelineError(f"reference channel {ref_channel} out of range for {C} channels")
    beam = next((s for s in steps if s["name"] in BEAMFORMERS), None)
    mask_step = next((s for s in steps if s["name"] == "mask"), None)
    if beam is not None and C < 2:
        raise PipelineError(f"{beam['name']} needs at least 2 channels, data has {C}")

    spec = analyze(mixture, stft)
    for step in steps:
        if step["name"] == "wpe":
            spec = wpe(spec, WpeConfig(step["taps"], step["delay"], step["iterations"]))

    if beam is None and mask_step is None:
        if len(references) > 1:
            raise PipelineError("a dereverberation-only chain cannot separate more than one source")
        return [synthesize(spec.channel(ref_channel)).channel(0)]

    if not references:
        raise PipelineError("oracle masks need reference signals, but the manifest lists none")
    for r in references:
        if r.num_samples != mixture.num_samples:
            raise PipelineError("reference and mixture lengths differ")
    kind, clip = ("IRM", 10.0) if mask_step is None else (mask_step["kind"], mask_step["clip"])
    targets = [analyze(r.channel(0), stft) for r in references]
    parts = targets + ([analyze(noise.channel(0), stft)] if noise is not None else [])
    masks = compute_oracle_masks(parts, spec.channel(ref_channel), kind, clip)[: len(targets)]

    outputs = []
    for m in masks:
        if beam is None:
            out = apply_mask(spec.channel(ref_channel), m)
        elif beam["name"] == "mvdr":
            phi_s = estimate_scm(spec, _clipped(m))
            phi_n = estimate_scm(spec, TimeFreqMask(np.clip(1.0 - m.values, 0.0, 1.0), "IRM"))
            out = apply_beamformer(mvdr_souden(phi_s, phi_n, ref_channel), spec)
        elif beam["name"] == "mpdr":
            phi_y = estimate_scm(spec, TimeFreqMask(np.ones(m.shape), "IRM"))
            steering = principal_eigenvectors(estimate_scm(spec, _clipped(m)).matrices, fallback=ref_channel)
            out = apply_beamformer(mpdr(phi_y, steering, ref_channel), spec)
        else:
            out = wpd(spec, _clipped(m), beam["delay"], beam["taps"], ref_channel)
        outputs.append(synthesize(out).channel(0))
    return outputs


def _enhance_task(task):
    entry, base, out_dir, chain, stft, ref_channel, encoding, force = task

    def work():
        names = [Path("wav") / f"{entry.utt_id}_s{k + 1}.wav" for k in range(max(1, len(entry.references)))]
        if force or not all((out_dir / n).exists() for n in names):
            mixture = read_wav(_resolve(base, entry.mixture))
            refs = [read_wav(_resolve(base, r)) for r in entry.references]
            noise = read_wav(_resolve(base, entry.noise)) if entry.noise else None
            outs = enhance_signals(mixture, refs, noise, chain, stft, ref_channel)
            names = names[: len(outs)]
            for name, wav in zip(names, outs):
                write_wav(out_dir / name, wav, encoding)
        mix_rel = _rel(_resolve(base, entry.mixture), out_dir)
        return ManifestEntry(entry.utt_id, mix_rel, [n.as_posix() for n in names])

    return _guard(entry.utt_id, work)


def run_enhance(cfg: dict, jobs: int = 1, force: bool = False) -> Path:
    """Write ``enhanced/manifest.tsv``; its reference column lists the estimates."""
    validate_chain(cfg["enhance"]["chain"])
    stft = _stft_config(cfg)
    in_path = input_manifest_path(cfg)
    manifest = _read_manifest(in_path)
    out_dir = enhanced_dir(cfg)
    (out_dir / "wav").mkdir(parents=True, exist_ok=True)
    enh = cfg["enhance"]
    tasks = [
        (e, in_path.parent, out_dir, enh["chain"], stft, int(enh["ref_channel"]), enh["encoding"], force)
        for e in manifest
    ]
    entries = _run_parallel(_enhance_task, tasks, jobs)
    out_path = out_dir / "manifest.tsv"
    write_manifest(out_path, Manifest(entries))
    log.info("enhanced %d utterances into %s", len(entries), out_dir)
    return out_path


# ------------------------------------------------------------------- score


def score_dir(cfg: dict) -> Path:
    return Path(cfg["io"]["output_dir"]) / "score"


def _read_manifest(path: Path) -> Manifest:
    try:
        return read_manifest(path)
    except AudioError as exc:
        raise PipelineError(str(exc), 2) from exc


def _score_task(task):
    utt_id, ref_paths, est_paths, mixture_path, sc, stft, ref_channel = task

    def work():
        refs = [read_wav(p) for p in ref_paths]
        if not refs:
            raise PipelineError("no references to score against")
        fs = refs[0].sample_rate
        if mixture_path is not None:
            mix = read_wav(mixture_path)
            ests = [mix.channel(min(ref_channel, mix.num_channels - 1))] * len(refs)
        else:
            ests = [read_wav(p) for p in est_paths]
        if any(e.sample_rate != fs for e in ests):
            raise PipelineError("estimate and reference sample rates differ")
        return score_utterance(
            ests, refs, sc["metrics"], fs, stft, int(sc["filter_len"]), bool(sc["trim"]), utt_id
        )

    return _guard(utt_id, work)


def run_score(cfg: dict, jobs: int = 1, force: bool = False) -> ScoreReport:
    sc = cfg["score"]
    stft = _stft_config(cfg)
    ref_path = input_manifest_path(cfg)
    refs = _read_manifest(ref_path)
    mixture_mode = sc["estimates"] == "mixture"
    if not mixture_mode:
        est_path = enhanced_dir(cfg) / "manifest.tsv"
        ests = _read_manifest(est_path)
        est_ids = set(ests.ids())
        missing = [u for u in refs.ids() if u not in est_ids]
        if missing:
            raise PipelineError(f"utterance {missing[0]} has no estimates in {est_path}", 2)
    tasks = []
    for entry in refs:
        ref_files = [_resolve(ref_path.parent, r) for r in entry.references]
        if mixture_mode:
            tasks.append((entry.utt_id, ref_files, None, _resolve(ref_path.parent, entry.mixture), sc, stft,
                          int(cfg["enhance"]["ref_channel"])))
        else:
            est = ests.get(entry.utt_id)
            est_files = [_resolve(est_path.parent, r) for r in est.references]
            tasks.append((entry.utt_id, ref_files, est_files, None, sc, stft, 0))
    report = ScoreReport()
    for s in _run_parallel(_score_task, tasks, jobs):
        report.add(s)
    out_dir = score_dir(cfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(report.to_json(), encoding="utf-8")
    (out_dir / "report.csv").write_text(report.to_csv(), encoding="utf-8")
    log.info("scored %d utterances into %s", len(report.per_utt), out_dir)
    return report


STAGE_RUNNERS = {"simulate": run_simulate, "enhance": run_enhance, "score": run_score}
