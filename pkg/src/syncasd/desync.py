"""Unsynchronisation augmentations, modality probes and proportion-controlled test sets.

Only audio inside speaking segments is ever rewritten; video frames and
everything outside the segments are passed through untouched (the arrays are
shared with the input, not copied).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .synthgen import MOUTH_FRACTION
from .trackdata import ROWS_PER_FRAME, Corpus, Sample, extract_speaking_segments

HUMAN_AUDIO_DELAY_MS = 125.0
ROW_MS = 10.0


class AugmentKind(str, enum.Enum):
    MISMATCH = "mismatch"
    MISALIGN = "misalign"


class AugmentationInfeasibleError(ValueError):
    """The requested augmentation cannot be applied to some segment."""


@dataclass(frozen=True)
class ShiftSpec:
    min_shift_ms: float = 130.0

    def __post_init__(self):
        if not self.min_shift_ms > HUMAN_AUDIO_DELAY_MS:
            raise ValueError(f"min_shift_ms must exceed {HUMAN_AUDIO_DELAY_MS} ms, got {self.min_shift_ms}")

    @property
    def min_rows(self) -> int:
        return math.ceil(self.min_shift_ms / ROW_MS - 1e-9)

    def row_range(self, n_rows: int) -> tuple[int, int] | None:
        """Inclusive magnitude range for a segment of ``n_rows`` rows, or None if empty.

        A circular shift by ``s`` equals one by ``s - n_rows``, so both ``|s|``
        and ``n_rows - |s|`` must reach the minimum.
        """
        lo, hi = self.min_rows, n_rows - self.min_rows
        return (lo, hi) if hi >= lo else None


def _rows(seg) -> slice:
    return slice(ROWS_PER_FRAME * seg.start, ROWS_PER_FRAME * seg.end)


def misalign_segment(audio_rows, shift: int) -> np.ndarray:
    """Circular shift: output row ``r`` is input row ``(r - shift) mod L``."""
    audio_rows = np.asarray(audio_rows)
    if audio_rows.shape[0] < 1:
        raise ValueError("cannot shift an empty segment")
    return np.roll(audio_rows, int(shift), axis=0)


def mismatch_set(corpus: Corpus, rng: np.random.Generator) -> Corpus:
    """Replace each speaking segment's audio with a window of another video's speech.

    Donors are drawn from the input corpus (never from already rewritten
    audio).  A donor shorter than the target is cycled.
    """
    segments = [extract_speaking_segments(s.labels) for s in corpus.samples]
    donors = [(i, seg) for i, segs in enumerate(segments) for seg in segs]
    out = []
    for i, sample in enumerate(corpus.samples):
        if not segments[i]:
            out.append(sample)
            continue
        pool = [(j, seg) for j, seg in donors if corpus.samples[j].video_id != sample.video_id]
        mfcc = sample.mfcc.copy()
        labels = sample.labels.copy()
        used = []
        for seg in segments[i]:
            if not pool:
                raise AugmentationInfeasibleError(
                    f"{sample.id} segment [{seg.start}, {seg.end}): no speaking segment from a different video to borrow"
                )
            j, dseg = pool[int(rng.integers(len(pool)))]
            donor = corpus.samples[j].mfcc[_rows(dseg)]
            n = ROWS_PER_FRAME * seg.length
            offset = int(rng.integers(max(donor.shape[0] - n, 0) + 1))
            mfcc[_rows(seg)] = donor[(offset + np.arange(n)) % donor.shape[0]]
            labels[seg.start:seg.end] = 0
            used.append(corpus.samples[j].id)
        tag = f"{sample.class_tag}|mismatch:{','.join(used)}"
        out.append(sample.with_arrays(mfcc=mfcc, labels=labels, class_tag=tag))
    return Corpus(out, corpus.seed)


def misalign_set(
    corpus: Corpus,
    spec: ShiftSpec = ShiftSpec(),
    rng: np.random.Generator | None = None,
    skip_short: bool = False,
) -> Corpus:
    """Circularly shift each speaking segment's audio within the segment by > 125 ms.

    The magnitude is uniform on ``[m, rows - m]`` with ``m`` the minimum shift
    in rows, the sign uniform.  A segment too short for that range raises
    :class:`AugmentationInfeasibleError`, or with ``skip_short`` is left as it
    was (labels included).
    """
    if rng is None:
        raise ValueError("misalign_set needs an explicit rng")
    out = []
    for sample in corpus.samples:
        segs = extract_speaking_segments(sample.labels)
        if not segs:
            out.append(sample)
            continue
        mfcc = sample.mfcc.copy()
        labels = sample.labels.copy()
        shifts = []
        for seg in segs:
            n = ROWS_PER_FRAME * seg.length
            bounds = spec.row_range(n)
            if bounds is None:
                if skip_short:
                    continue
                raise AugmentationInfeasibleError(
                    f"{sample.id} segment [{seg.start}, {seg.end}) has {n} audio rows; "
                    f"a circular shift of more than {HUMAN_AUDIO_DELAY_MS:g} ms needs at least {2 * spec.min_rows}"
                )
            magnitude = int(rng.integers(bounds[0], bounds[1] + 1))
            shift = magnitude if rng.integers(2) else -magnitude
            mfcc[_rows(seg)] = misalign_segment(mfcc[_rows(seg)], shift)
            labels[seg.start:seg.end] = 0
            shifts.append(f"{shift:+d}")
        if not shifts:
            out.append(sample)
            continue
        tag = f"{sample.class_tag}|misalign:{','.join(shifts)}"
        out.append(sample.with_arrays(mfcc=mfcc, labels=labels, class_tag=tag))
    return Corpus(out, corpus.seed)


def augment(corpus: Corpus, kind: AugmentKind | str, rng: np.random.Generator, spec: ShiftSpec = ShiftSpec(), skip_short: bool = False) -> Corpus:
    kind = AugmentKind(kind)
    if kind is AugmentKind.MISMATCH:
        return mismatch_set(corpus, rng)
    return misalign_set(corpus, spec, rng, skip_short=skip_short)


def n_from_unsync(n: int, proportion: float) -> int:
    return math.floor(proportion * n + 1e-9)


def curate(original: Corpus, unsync: Corpus, proportion: float, rng: np.random.Generator) -> Corpus:
    """Same-size test set with ``floor(p * n)`` tracks taken from ``unsync``.

    The chosen ids are a prefix of one rng permutation, so calls with fresh
    generators of the same seed nest as the proportion grows.
    """
    if not 0.0 <= proportion <= 1.0:
        raise ValueError(f"proportion must be in [0, 1], got {proportion}")
    if original.ids() != unsync.ids():
        raise ValueError("unsync corpus must hold the same ids, in the same order, as the original")
    n = len(original)
    k = n_from_unsync(n, proportion)
    chosen = set(int(i) for i in rng.permutation(n)[:k])
    samples = [unsync.samples[i] if i in chosen else original.samples[i] for i in range(n)]
    return Corpus(samples, original.seed)


def curated_ids(original: Corpus, unsync: Corpus, curated: Corpus) -> set[str]:
    """Ids in ``curated`` that came from the unsync side (by identity of the sample object)."""
    return {c.id for c, u, o in zip(curated.samples, unsync.samples, original.samples) if c is u and u is not o}


def silence_audio(sample: Sample, fill_row=None) -> Sample:
    """Replace every audio row with ``fill_row`` (zeros by default).

    For MFCC-ingested tracks pass :func:`syncasd.trackdata.silent_mfcc_row`.
    """
    mfcc = np.zeros_like(sample.mfcc)
    if fill_row is not None:
        mfcc[:] = np.asarray(fill_row, dtype=mfcc.dtype)
    return sample.with_arrays(mfcc=mfcc)


def masked_rows(hv: int, fraction: float) -> int:
    return math.ceil(fraction * hv - 1e-9)


def mask_bottom(sample: Sample, fraction: float = MOUTH_FRACTION) -> Sample:
    """Zero the lowest ``ceil(fraction * Hv)`` pixel rows of every frame."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    frames = sample.frames.copy()
    m = masked_rows(frames.shape[1], fraction)
    frames[:, frames.shape[1] - m:, :] = 0.0
    return sample.with_arrays(frames=frames)


def silence_corpus(corpus: Corpus, fill_row=None) -> Corpus:
    return Corpus([silence_audio(s, fill_row) for s in corpus.samples], corpus.seed)


def mask_corpus(corpus: Corpus, fraction: float = MOUTH_FRACTION) -> Corpus:
    return Corpus([mask_bottom(s, fraction) for s in corpus.samples], corpus.seed)
