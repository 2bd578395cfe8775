"""WAV reading/writing and Kaldi-style utterance manifests.

Only two sample encodings are supported: 16-bit integer PCM and 32-bit IEEE
float. Manifests are tab-separated text with literal file paths::

    utt_id <TAB> mixture.wav <TAB> s1.wav,s2.wav [<TAB> noise.wav]
"""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Union

import numpy as np

PathLike = Union[str, os.PathLike]

_FORMAT_PCM = 0x0001
_FORMAT_FLOAT = 0x0003
_FORMAT_EXTENSIBLE = 0xFFFE


class AudioError(Exception):
    """Base class for audio and manifest I/O failures."""


class WavNotFoundError(AudioError, FileNotFoundError):
    pass


class UnsupportedFormatError(AudioError):
    pass


class TruncatedWavError(AudioError):
    pass


class ManifestError(AudioError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DuplicateUttError(ManifestError):
    pass


@dataclass
class Waveform:
    """Real-valued multichannel signal, ``data`` shaped (channels, samples)."""

    data: np.ndarray
    sample_rate: int

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 1:
            data = data[np.newaxis, :]
        if data.ndim != 2 or data.shape[0] < 1:
            raise ValueError(f"waveform data must be (channels, samples), got {data.shape}")
        if int(self.sample_rate) <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        self.data = data
        self.sample_rate = int(self.sample_rate)

    @property
    def num_channels(self) -> int:
        return self.data.shape[0]

    @property
    def num_samples(self) -> int:
        return self.data.shape[1]

    def channel(self, index: int) -> "Waveform":
        return Waveform(self.data[index : index + 1].copy(), self.sample_rate)


def read_wav(path: PathLike) -> Waveform:
    path = Path(path)
    if not path.is_file():
        raise WavNotFoundError(f"no such audio file: {path}")
    raw = path.read_bytes()
    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise UnsupportedFormatError(f"{path}: not a RIFF/WAVE file")

    fmt = None
    payload = None
    pos = 12
    while pos < len(raw):
        if pos + 8 > len(raw):
            raise TruncatedWavError(f"{path}: truncated chunk header at byte {pos}")
        chunk_id = raw[pos : pos + 4]
        (size,) = struct.unpack("<I", raw[pos + 4 : pos + 8])
        body = raw[pos + 8 : pos + 8 + size]
        if len(body) < size:
            raise TruncatedWavError(
                f"{path}: chunk {chunk_id!r} declares {size} bytes, {len(body)} present"
            )
        if chunk_id == b"fmt ":
            if size < 16:
                raise TruncatedWavError(f"{path}: fmt chunk too short")
            fmt = struct.unpack("<HHIIHH", body[:16])
            format_tag = fmt[0]
            if format_tag == _FORMAT_EXTENSIBLE:
                if size < 40:
                    raise TruncatedWavError(f"{path}: extensible fmt chunk too short")
                (format_tag,) = struct.unpack("<H", body[24:26])
                fmt = (format_tag,) + fmt[1:]
        elif chunk_id == b"data":
            payload = body
        pos += 8 + size + (size & 1)

    if fmt is None:
        raise TruncatedWavError(f"{path}: missing fmt chunk")
    if payload is None:
        raise TruncatedWavError(f"{path}: missing data chunk")

    format_tag, channels, rate, _, block_align, bits = fmt
    if format_tag == _FORMAT_PCM and bits == 16:
        dtype = np.dtype("<i2")
    elif format_tag == _FORMAT_FLOAT and bits == 32:
        dtype = np.dtype("<f4")
    else:
        raise UnsupportedFormatError(
            f"{path}: unsupported codec 0x{format_tag:04x} with {bits} bits per sample"
        )
    if channels < 1 or block_align != channels * dtype.itemsize:
        raise UnsupportedFormatError(f"{path}: inconsistent block alignment")
    if len(payload) % block_align:
        raise TruncatedWavError(f"{path}: data chunk ends mid-frame")

    samples = np.frombuffer(payload, dtype=dtype).reshape(-1, channels).T
    if dtype.kind == "i":
        data = samples.astype(np.float64) / 32768.0
    else:
        data = samples.astype(np.float64)
    return Waveform(data, rate)


def write_wav(path: PathLike, w: Waveform, encoding: str = "float32") -> None:
    """Write ``w`` to ``path``; pcm16 clamps to [-1, 1) then rounds."""
    if encoding == "pcm16":
        scaled = np.clip(w.data, -1.0, 1.0) * 32768.0
        payload = np.clip(np.rint(scaled), -32768, 32767).astype("<i2")
        format_tag, bits = _FORMAT_PCM, 16
    elif encoding == "float32":
        payload = w.data.astype("<f4")
        format_tag, bits = _FORMAT_FLOAT, 32
    else:
        raise ValueError(f"unknown encoding {encoding!r}")

    channels = w.num_channels
    block_align = channels * bits // 8
    data = payload.T.tobytes()
    fmt = struct.pack(
        "<HHIIHH",
        format_tag,
        channels,
        w.sample_rate,
        w.sample_rate * block_align,
        block_align,
        bits,
    )
    header = b"RIFF" + struct.pack("<I", 4 + 8 + len(fmt) + 8 + len(data)) + b"WAVE"
    blob = header + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    blob += b"data" + struct.pack("<I", len(data)) + data
    try:
        with open(path, "wb") as fh:
            fh.write(blob)
    except OSError as exc:
        raise AudioError(f"cannot write {path}: {exc}") from exc


@dataclass
class ManifestEntry:
    utt_id: str
    mixture: str
    references: List[str] = field(default_factory=list)
    noise: Optional[str] = None


@dataclass
class Manifest:
    entries: List[ManifestEntry] = field(default_factory=list)

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)

    def ids(self) -> List[str]:
        return [e.utt_id for e in self.entries]

    def get(self, utt_id: str) -> ManifestEntry:
        for entry in self.entries:
            if entry.utt_id == utt_id:
                return entry
        raise KeyError(utt_id)


def _parse_line(line: str, lineno: int) -> ManifestEntry:
    fields = line.split("\t")
    if len(fields) not in (3, 4):
        raise ManifestError(f"expected 3 or 4 tab-separated fields, got {len(fields)}", lineno)
    if any("|" in f for f in fields):
        raise ManifestError("pipe commands are not supported; dump audio to files first", lineno)
    utt_id, mixture, refs = fields[:3]
    if not utt_id or any(c.isspace() for c in utt_id):
        raise ManifestError(f"invalid utterance id {utt_id!r}", lineno)
    if not mixture.strip():
        raise ManifestError("empty mixture path", lineno)
    references = [r for r in refs.split(",") if r]
    if not references and refs:
        raise ManifestError("empty reference list", lineno)
    noise = fields[3] if len(fields) == 4 and fields[3] else None
    return ManifestEntry(utt_id, mixture, references, noise)


def parse_manifest(lines: Iterable[str]) -> Manifest:
    entries = []
    seen = set()
    for lineno, line in enumerate(lines, start=1):
        line = line.rstrip("\r\n")
        if not line.strip():
            continue
        entry = _parse_line(line, lineno)
        if entry.utt_id in seen:
            raise DuplicateUttError(f"duplicate utterance id {entry.utt_id!r}", lineno)
        seen.add(entry.utt_id)
        entries.append(entry)
    return Manifest(entries)


def read_manifest(path: PathLike) -> Manifest:
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_manifest(fh)
    except FileNotFoundError as exc:
        raise ManifestError(f"no such manifest: {path}") from exc


def format_manifest(manifest: Manifest) -> str:
    lines = []
    for e in manifest.entries:
        fields = [e.utt_id, e.mixture, ",".join(e.references)]
        if e.noise:
            fields.append(e.noise)
        lines.append("\t".join(fields))
    return "".join(line + "\n" for line in lines)


def write_manifest(path: PathLike, manifest: Manifest) -> None:
    Path(path).write_text(format_manifest(manifest), encoding="utf-8")


def stack_waveforms(waves: Sequence[Waveform]) -> np.ndarray:
    """Stack single-channel waveforms into an (S, N) array."""
    return np.stack([w.data[0] for w in waves])
