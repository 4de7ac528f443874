"""Audio-visual track data model, corpus storage and WAV->MFCC ingestion.

Rates are fixed: 25 video frames per second and 100 audio feature rows per
second, so every video frame owns exactly four audio rows (row ``r`` belongs
to frame ``r // 4``).
"""

from __future__ import annotations

import json
import struct
import wave
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.fft import dct, rfft

FPS = 25
FEATURE_RATE = 100
ROWS_PER_FRAME = FEATURE_RATE // FPS
SPLITS = ("train", "val", "test")
MANIFEST_VERSION = 1
TENSOR_MAGIC = b"AVT1"

# MFCC front end at 16 kHz: 25 ms Hamming window, 10 ms hop.
SAMPLE_RATE = 16000
WIN_LENGTH = 400
HOP_LENGTH = 160
N_FFT = 512
N_MELS = 26
PREEMPHASIS = 0.97
LOG_FLOOR = 1e-10


class CorpusError(Exception):
    """Base class for corpus storage failures."""


class CorruptedCorpusError(CorpusError):
    """A stored tensor does not match its manifest checksum."""


class CorpusFormatError(CorpusError):
    """A stored file is malformed or disagrees with the manifest."""


class SampleValidationError(ValueError):
    """A sample violates the cross-field shape or range invariants."""


@dataclass
class FaceTrack:
    video_id: str
    track_id: str
    frames: np.ndarray  # [T, Hv, Wv] grayscale in [0, 1]
    fps: int = FPS

    @property
    def T(self) -> int:
        return self.frames.shape[0]


@dataclass
class AudioFeatures:
    mfcc: np.ndarray  # [4T, Ha]
    feature_rate: int = FEATURE_RATE

    @property
    def n_coeffs(self) -> int:
        return self.mfcc.shape[1]


class SpeakingSegment(NamedTuple):
    start: int  # inclusive frame index
    end: int  # exclusive

    @property
    def length(self) -> int:
        return self.end - self.start


@dataclass
class Sample:
    id: str
    face: FaceTrack
    audio: AudioFeatures
    labels: np.ndarray  # [T] in {0, 1}
    class_tag: str | None = None
    split: str = "train"

    @property
    def video_id(self) -> str:
        return self.face.video_id

    @property
    def track_id(self) -> str:
        return self.face.track_id

    @property
    def frames(self) -> np.ndarray:
        return self.face.frames

    @property
    def mfcc(self) -> np.ndarray:
        return self.audio.mfcc

    @property
    def T(self) -> int:
        return self.face.T

    def with_arrays(self, frames=None, mfcc=None, labels=None, class_tag=None) -> "Sample":
        """Copy with some arrays replaced; untouched arrays are shared, not copied."""
        face = self.face if frames is None else replace(self.face, frames=frames)
        audio = self.audio if mfcc is None else replace(self.audio, mfcc=mfcc)
        return Sample(
            id=self.id,
            face=face,
            audio=audio,
            labels=self.labels if labels is None else labels,
            class_tag=self.class_tag if class_tag is None else class_tag,
            split=self.split,
        )


def make_sample(
    id: str,
    video_id: str,
    track_id: str,
    frames,
    mfcc,
    labels,
    class_tag: str | None = None,
    split: str = "train",
) -> Sample:
    """Build a validated sample; arrays are stored as float32 (frames, mfcc) and int8 (labels)."""
    sample = Sample(
        id=id,
        face=FaceTrack(video_id, track_id, np.ascontiguousarray(frames, dtype=np.float32)),
        audio=AudioFeatures(np.ascontiguousarray(mfcc, dtype=np.float32)),
        labels=np.ascontiguousarray(labels, dtype=np.int8),
        class_tag=class_tag,
        split=split,
    )
    validate_sample(sample)
    return sample


def validate_sample(sample: Sample) -> Sample:
    frames, mfcc, labels = sample.frames, sample.mfcc, sample.labels
    if frames.ndim != 3:
        raise SampleValidationError(f"{sample.id}: frames must be [T, Hv, Wv], got {frames.shape}")
    T, hv, wv = frames.shape
    if T < 1 or hv < 4 or wv < 4:
        raise SampleValidationError(f"{sample.id}: need T >= 1 and Hv, Wv >= 4, got {frames.shape}")
    if frames.size and (frames.min() < 0.0 or frames.max() > 1.0):
        raise SampleValidationError(f"{sample.id}: frame intensities must lie in [0, 1]")
    if mfcc.ndim != 2 or mfcc.shape[0] != ROWS_PER_FRAME * T or mfcc.shape[1] < 1:
        raise SampleValidationError(f"{sample.id}: audio must be [{ROWS_PER_FRAME * T}, Ha>=1], got {mfcc.shape}")
    if not np.all(np.isfinite(mfcc)):
        raise SampleValidationError(f"{sample.id}: audio features must be finite")
    if labels.shape != (T,):
        raise SampleValidationError(f"{sample.id}: labels must have length {T}, got {labels.shape}")
    if not np.all((labels == 0) | (labels == 1)):
        raise SampleValidationError(f"{sample.id}: labels must be binary")
    if sample.split not in SPLITS:
        raise SampleValidationError(f"{sample.id}: unknown split {sample.split!r}")
    return sample


# ---------------------------------------------------------------- segments

def extract_speaking_segments(labels) -> list[SpeakingSegment]:
    """Maximal runs of 1s, in order."""
    y = np.asarray(labels).astype(np.int8)
    if y.size == 0:
        return []
    padded = np.concatenate(([0], y, [0]))
    edges = np.flatnonzero(np.diff(padded))
    return [SpeakingSegment(int(s), int(e)) for s, e in zip(edges[0::2], edges[1::2])]


def paint_segments(segments, T: int) -> np.ndarray:
    y = np.zeros(T, dtype=np.int8)
    for s, e in segments:
        y[s:e] = 1
    return y


# ---------------------------------------------------------------- tensor files

def encode_tensor(arr) -> bytes:
    """AVT1 container: magic, u8 rank, u32 LE dims, f32 LE row-major values."""
    a = np.asarray(arr)
    if a.ndim > 255:
        raise CorpusFormatError(f"rank {a.ndim} does not fit in one byte")
    header = TENSOR_MAGIC + struct.pack("<B", a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape)
    return header + np.ascontiguousarray(a, dtype="<f4").tobytes()


def decode_tensor(buf: bytes, source: str = "<bytes>") -> np.ndarray:
    if len(buf) < 5 or buf[:4] != TENSOR_MAGIC:
        raise CorpusFormatError(f"{source}: missing AVT1 magic")
    rank = buf[4]
    head = 5 + 4 * rank
    if len(buf) < head:
        raise CorpusFormatError(f"{source}: truncated header")
    shape = struct.unpack(f"<{rank}I", buf[5:head])
    count = int(np.prod(shape, dtype=np.int64))
    if len(buf) != head + 4 * count:
        raise CorpusFormatError(f"{source}: payload is {len(buf) - head} bytes, header implies {4 * count}")
    return np.frombuffer(buf, dtype="<f4", offset=head).reshape(shape).astype(np.float32)


def write_tensor(path, arr) -> int:
    """Write one tensor file and return its CRC-32."""
    data = encode_tensor(arr)
    Path(path).write_bytes(data)
    return zlib.crc32(data)


def read_tensor(path, crc32: int | None = None) -> np.ndarray:
    path = Path(path)
    data = path.read_bytes()
    if crc32 is not None and zlib.crc32(data) != crc32:
        raise CorruptedCorpusError(f"checksum mismatch for {path.name}")
    return decode_tensor(data, source=path.name)


# ---------------------------------------------------------------- corpus

@dataclass
class Corpus:
    samples: list[Sample] = field(default_factory=list)
    seed: int = 0

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, i) -> Sample:
        return self.samples[i]

    def split(self, name: str) -> "Corpus":
        return Corpus([s for s in self.samples if s.split == name], self.seed)

    def by_id(self) -> dict[str, Sample]:
        return {s.id: s for s in self.samples}

    def ids(self) -> list[str]:
        return [s.id for s in self.samples]


_FILE_KINDS = ("frames", "mfcc", "labels")


def manifest_entry(sample: Sample, crcs: dict[str, int]) -> dict:
    T, hv, wv = sample.frames.shape
    return {
        "id": sample.id,
        "video_id": sample.video_id,
        "track_id": sample.track_id,
        "class_tag": sample.class_tag,
        "split": sample.split,
        "T": T,
        "Hv": hv,
        "Wv": wv,
        "Ha": sample.audio.n_coeffs,
        "files": {k: f"{sample.id}.{k}.avt" for k in _FILE_KINDS},
        "crc32s": crcs,
    }


def save_corpus(corpus: Corpus, directory) -> dict:
    """Write tensors plus ``manifest.json``; returns the manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    seen: set[str] = set()
    for s in corpus.samples:
        if s.id in seen:
            raise CorpusFormatError(f"duplicate sample id {s.id!r}")
        seen.add(s.id)
        validate_sample(s)
        crcs = {
            "frames": write_tensor(directory / f"{s.id}.frames.avt", s.frames),
            "mfcc": write_tensor(directory / f"{s.id}.mfcc.avt", s.mfcc),
            "labels": write_tensor(directory / f"{s.id}.labels.avt", s.labels),
        }
        entries.append(manifest_entry(s, crcs))
    manifest = {"version": MANIFEST_VERSION, "seed": int(corpus.seed), "samples": entries}
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def load_corpus(directory) -> Corpus:
    directory = Path(directory)
    try:
        manifest = json.loads((directory / "manifest.json").read_text())
    except FileNotFoundError:
        raise CorpusFormatError(f"{directory}: no manifest.json") from None
    except json.JSONDecodeError as exc:
        raise CorpusFormatError(f"{directory}: manifest is not valid JSON ({exc})") from None
    if manifest.get("version") != MANIFEST_VERSION:
        raise CorpusFormatError(f"unsupported manifest version {manifest.get('version')!r}")
    samples = []
    for entry in manifest["samples"]:
        arrays = {}
        for kind in _FILE_KINDS:
            path = directory / entry["files"][kind]
            if not path.exists():
                raise CorpusFormatError(f"missing tensor file {path.name}")
            arrays[kind] = read_tensor(path, entry["crc32s"][kind])
        T, hv, wv, ha = entry["T"], entry["Hv"], entry["Wv"], entry["Ha"]
        expected = {"frames": (T, hv, wv), "mfcc": (ROWS_PER_FRAME * T, ha), "labels": (T,)}
        for kind, shape in expected.items():
            if arrays[kind].shape != shape:
                raise CorpusFormatError(f"{entry['id']}: {kind} has shape {arrays[kind].shape}, manifest says {shape}")
        samples.append(
            make_sample(
                entry["id"],
                entry["video_id"],
                entry.get("track_id", "t0"),
                arrays["frames"],
                arrays["mfcc"],
                arrays["labels"].astype(np.int8),
                entry.get("class_tag"),
                entry["split"],
            )
        )
    return Corpus(samples, int(manifest["seed"]))


def corpus_checksums(directory) -> dict[str, int]:
    """CRC-32 of every file in a stored corpus, manifest included."""
    directory = Path(directory)
    return {p.name: zlib.crc32(p.read_bytes()) for p in sorted(directory.iterdir()) if p.is_file()}


# ---------------------------------------------------------------- MFCC

def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int = N_MELS, n_fft: int = N_FFT, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Triangular filters, equally spaced in mel from 0 Hz to Nyquist, evaluated at bin centres."""
    edges = _mel_to_hz(np.linspace(0.0, _hz_to_mel(sample_rate / 2), n_mels + 2))
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (mid - lo)
    falling = (hi - freqs) / (hi - mid)
    return np.maximum(0.0, np.minimum(rising, falling))


def mfcc_from_wav(samples, n_coeffs: int = 13, n_frames: int | None = None) -> AudioFeatures:
    """MFCC rows at 100 per second from a 16 kHz mono waveform.

    Frame ``r`` covers samples ``[160 r, 160 r + 400)`` (zero-padded past
    the end), so a waveform of ``n`` samples yields ``n // 160`` rows.  With
    ``n_frames`` the rows are truncated or zero-padded to ``4 * n_frames``.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"expected a mono waveform, got shape {x.shape}")
    if x.size == 0:
        raise ValueError("empty waveform")
    if x.size < WIN_LENGTH:
        raise ValueError(f"waveform shorter than one analysis window ({x.size} < {WIN_LENGTH} samples)")
    if not np.all(np.isfinite(x)):
        raise ValueError("waveform contains non-finite samples")
    if not 1 <= n_coeffs <= N_MELS:
        raise ValueError(f"n_coeffs must be in [1, {N_MELS}], got {n_coeffs}")

    emphasized = np.append(x[0], x[1:] - PREEMPHASIS * x[:-1])
    n_rows = x.size // HOP_LENGTH
    padded = np.concatenate([emphasized, np.zeros(WIN_LENGTH)])
    idx = np.arange(n_rows)[:, None] * HOP_LENGTH + np.arange(WIN_LENGTH)[None, :]
    frames = padded[idx] * np.hamming(WIN_LENGTH)
    power = np.abs(rfft(frames, n=N_FFT, axis=1)) ** 2 / N_FFT
    energies = power @ mel_filterbank().T
    logmel = np.log(np.maximum(energies, LOG_FLOOR))
    coeffs = dct(logmel, type=2, norm="ortho", axis=1)[:, :n_coeffs]
    if n_frames is not None:
        want = ROWS_PER_FRAME * n_frames
        out = np.zeros((want, n_coeffs))
        keep = min(want, coeffs.shape[0])
        out[:keep] = coeffs[:keep]
        coeffs = out
    return AudioFeatures(coeffs)


def silent_mfcc_row(n_coeffs: int) -> np.ndarray:
    """The MFCC row produced by an all-zero waveform."""
    return mfcc_from_wav(np.zeros(WIN_LENGTH), n_coeffs).mfcc[0]


def read_wav(path) -> np.ndarray:
    """PCM 16-bit mono 16 kHz WAV -> float waveform in [-1, 1)."""
    with wave.open(str(path), "rb") as w:
        if w.getnchannels() != 1 or w.getsampwidth() != 2 or w.getframerate() != SAMPLE_RATE:
            raise CorpusFormatError(
                f"{path}: need PCM16 mono {SAMPLE_RATE} Hz, got {w.getnchannels()} ch, "
                f"{8 * w.getsampwidth()} bit, {w.getframerate()} Hz"
            )
        raw = w.readframes(w.getnframes())
    return np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
