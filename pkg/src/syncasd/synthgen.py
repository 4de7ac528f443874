"""Deterministic synthetic corpus where synchronization is the controlled cue.

A latent "speaking activity" envelope drives the mouth region (the bottom
30% of every frame) and/or a fixed audio feature template.  Classes differ
only in which modality the envelope reaches and whether both modalities
share one envelope.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .trackdata import ROWS_PER_FRAME, SPLITS, Corpus, Sample, extract_speaking_segments, make_sample

SPEAK_THRESHOLD = 0.2
MIN_RUN = 4
MOUTH_FRACTION = 0.3
MOUTH_BASE = 0.1
MOUTH_GAIN = 0.8
FACE_LOW, FACE_HIGH = 0.3, 0.7
_MAX_REDRAWS = 1000


class SampleClass(str, enum.Enum):
    SYNC_SPEAKING = "SyncSpeaking"
    SILENT = "Silent"
    VISUAL_ONLY = "VisualOnly"
    AUDIO_ONLY = "AudioOnly"
    DUBBED = "Dubbed"


def _default_counts() -> dict[str, dict[str, int]]:
    return {
        "train": {"SyncSpeaking": 160, "Silent": 80, "VisualOnly": 80, "AudioOnly": 80, "Dubbed": 0},
        "val": {"SyncSpeaking": 20, "Silent": 10, "VisualOnly": 10, "AudioOnly": 10, "Dubbed": 0},
        "test": {"SyncSpeaking": 40, "Silent": 20, "VisualOnly": 20, "AudioOnly": 20, "Dubbed": 20},
    }


@dataclass
class SynthConfig:
    counts: dict[str, dict[str, int]] = field(default_factory=_default_counts)
    T_min: int = 24
    T_max: int = 64
    Hv: int = 16
    Wv: int = 16
    Ha: int = 13
    sigma_v: float = 0.05
    sigma_a: float = 0.05
    smoothness: int = 3
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        # A >125 ms shift is 13 audio rows; 12 frames leave room for it plus margin.
        if self.T_min < 12:
            raise ValueError(f"T_min must be >= 12, got {self.T_min}")
        if self.T_max < self.T_min:
            raise ValueError(f"T_max ({self.T_max}) < T_min ({self.T_min})")
        if self.Hv < 4 or self.Wv < 4 or self.Ha < 1:
            raise ValueError("need Hv, Wv >= 4 and Ha >= 1")
        if self.sigma_v < 0 or self.sigma_a < 0:
            raise ValueError("noise levels must be non-negative")
        if self.smoothness < 1:
            raise ValueError("smoothness must be >= 1")
        known = {c.value for c in SampleClass}
        for split, per_class in self.counts.items():
            if split not in SPLITS:
                raise ValueError(f"unknown split {split!r} in counts")
            for name, n in per_class.items():
                if name not in known:
                    raise ValueError(f"unknown sample class {name!r}")
                if n < 0:
                    raise ValueError(f"negative count for {split}/{name}")
                if name == SampleClass.DUBBED.value and split == "train" and n > 0:
                    raise ValueError("Dubbed samples belong to evaluation splits only")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown SynthConfig keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path) -> "SynthConfig":
        from .config import read_config_file

        return cls.from_dict(read_config_file(path))

    def to_dict(self) -> dict:
        return asdict(self)

    def total(self) -> int:
        return sum(sum(c.values()) for c in self.counts.values())


def audio_template(n_coeffs: int) -> np.ndarray:
    """Fixed per-row coefficient pattern that 'speech' scales; unit L2 norm."""
    k = np.arange(n_coeffs, dtype=np.float64)
    t = np.cos(np.pi * 0.37 * (k + 0.5)) / (1.0 + 0.2 * k)
    return t / np.linalg.norm(t)


def mouth_rows(hv: int, fraction: float = MOUTH_FRACTION) -> int:
    return math.ceil(fraction * hv - 1e-12)


def gen_envelope(length: int, smoothness: int, rng: np.random.Generator) -> np.ndarray:
    """Moving average of uniform noise, min-max normalised to [0, 1].

    A constant sequence (including ``length == 1``) normalises to zeros.
    """
    if length < 1 or smoothness < 1:
        raise ValueError("length and smoothness must be >= 1")
    u = rng.uniform(size=length + smoothness - 1)
    e = np.convolve(u, np.ones(smoothness) / smoothness, mode="valid")
    lo, hi = e.min(), e.max()
    if hi - lo <= 0:
        return np.zeros(length)
    return (e - lo) / (hi - lo)


def speaking_mask(envelope: np.ndarray) -> np.ndarray:
    """Frames above threshold, keeping only runs of at least ``MIN_RUN`` frames."""
    above = (envelope > SPEAK_THRESHOLD).astype(np.int8)
    keep = np.zeros_like(above)
    for s, e in extract_speaking_segments(above):
        if e - s >= MIN_RUN:
            keep[s:e] = 1
    return keep


def _active_envelope(T: int, cfg: SynthConfig, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Envelope with >= 1 valid speaking run; short blips above threshold are zeroed."""
    for _ in range(_MAX_REDRAWS):
        e = gen_envelope(T, cfg.smoothness, rng)
        labels = speaking_mask(e)
        if labels.any():
            e = e.copy()
            e[(e > SPEAK_THRESHOLD) & (labels == 0)] = 0.0
            return e, labels
    raise RuntimeError(f"no speaking run found in {_MAX_REDRAWS} draws (T={T}, smoothness={cfg.smoothness})")


def _noise(rng: np.random.Generator, sigma: float, shape) -> np.ndarray:
    # Clipped at 3 sigma so "near zero" has a hard bound.
    if sigma == 0:
        return np.zeros(shape)
    return np.clip(rng.normal(0.0, sigma, size=shape), -3 * sigma, 3 * sigma)


def render_frames(mouth: np.ndarray, face: np.ndarray, cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    T = mouth.shape[0]
    frames = np.broadcast_to(face, (T, cfg.Hv, cfg.Wv)).copy()
    m = mouth_rows(cfg.Hv)
    frames[:, cfg.Hv - m:, :] = (MOUTH_BASE + MOUTH_GAIN * mouth)[:, None, None]
    frames += _noise(rng, cfg.sigma_v, frames.shape)
    return np.clip(frames, 0.0, 1.0)


def render_audio(activity: np.ndarray, cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    rows = np.repeat(activity, ROWS_PER_FRAME)
    feats = rows[:, None] * audio_template(cfg.Ha)[None, :]
    return feats + _noise(rng, cfg.sigma_a, feats.shape)


def mouth_intensity(frames) -> np.ndarray:
    """Per-frame mean intensity of the mouth region."""
    frames = np.asarray(frames, dtype=np.float64)
    m = mouth_rows(frames.shape[1])
    return frames[:, -m:, :].mean(axis=(1, 2))


def audio_energy(mfcc) -> np.ndarray:
    """Per-frame mean L2 norm of the frame's four feature rows."""
    mfcc = np.asarray(mfcc, dtype=np.float64)
    return np.linalg.norm(mfcc, axis=1).reshape(-1, ROWS_PER_FRAME).mean(axis=1)


def gen_sample(
    cls: SampleClass | str,
    cfg: SynthConfig,
    rng: np.random.Generator,
    index: int = 0,
    split: str = "train",
) -> Sample:
    cls = SampleClass(cls)
    T = int(rng.integers(cfg.T_min, cfg.T_max + 1))
    if T < cfg.T_min:
        raise RuntimeError(f"sampled T={T} below T_min={cfg.T_min}")
    face = rng.uniform(FACE_LOW, FACE_HIGH, size=(cfg.Hv, cfg.Wv))
    still = np.zeros(T)
    labels = np.zeros(T, dtype=np.int8)

    if cls is SampleClass.SYNC_SPEAKING:
        e, labels = _active_envelope(T, cfg, rng)
        mouth, voice = e, e
    elif cls is SampleClass.SILENT:
        mouth, voice = still, still
    elif cls is SampleClass.VISUAL_ONLY:
        mouth, _ = _active_envelope(T, cfg, rng)
        voice = still
    elif cls is SampleClass.AUDIO_ONLY:
        voice, _ = _active_envelope(T, cfg, rng)
        mouth = still
    else:  # Dubbed: mouth and audio speak independently, labelled from the mouth.
        mouth, labels = _active_envelope(T, cfg, rng)
        voice, _ = _active_envelope(T, cfg, rng)

    frames = render_frames(mouth, face, cfg, rng)
    mfcc = render_audio(voice, cfg, rng)
    return make_sample(
        id=f"s{index:05d}",
        video_id=f"v{index:05d}",
        track_id="t0",
        frames=frames,
        mfcc=mfcc,
        labels=labels,
        class_tag=cls.value,
        split=split,
    )


def corpus_plan(cfg: SynthConfig) -> list[tuple[str, SampleClass]]:
    """(split, class) for every sample index, in generation order."""
    plan = []
    for split in SPLITS:
        per_class = cfg.counts.get(split, {})
        for cls in SampleClass:
            plan.extend([(split, cls)] * int(per_class.get(cls.value, 0)))
    return plan


def _gen_one(args) -> Sample:
    index, split, cls, cfg, seed_seq = args
    return gen_sample(cls, cfg, np.random.default_rng(seed_seq), index=index, split=split)


def gen_corpus(cfg: SynthConfig, jobs: int = 1) -> Corpus:
    """Pure function of ``cfg``: one child RNG stream per sample index.

    ``jobs > 1`` generates in worker processes; output is identical to the
    serial run because each sample only sees its own stream.
    """
    cfg.validate()
    plan = corpus_plan(cfg)
    children = np.random.SeedSequence(cfg.seed).spawn(len(plan))
    tasks = [(i, split, cls, cfg, children[i]) for i, (split, cls) in enumerate(plan)]
    if jobs > 1 and len(tasks) > 1:
        from joblib import Parallel, delayed

        samples = Parallel(n_jobs=jobs)(delayed(_gen_one)(t) for t in tasks)
    else:
        samples = [_gen_one(t) for t in tasks]
    return Corpus(list(samples), cfg.seed)


def write_config(cfg: SynthConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
