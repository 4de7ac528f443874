"""Frame-retrieval AP, per-video TPR, unsync sweeps, dubbed ranking and the ablation grid.

"mAP" here is single-class AP pooled over every frame of every track, not a
per-video average.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .trackdata import Corpus, Sample

log = logging.getLogger(__name__)


class UndefinedMetricError(ValueError):
    """AP was requested for a frame pool without a single positive label."""


def average_precision(scores, labels) -> float:
    """AP of retrieving label-1 items by descending score.

    Ties are broken by position in the input (earlier first), so callers that
    need a specific tie order pass items already sorted by that key.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise ValueError(f"scores {scores.shape} and labels {labels.shape} differ")
    if scores.size == 0:
        raise UndefinedMetricError("AP of an empty pool")
    P = int(np.sum(labels == 1))
    if P == 0:
        raise UndefinedMetricError("AP is undefined without positive labels")
    order = np.argsort(-scores, kind="stable")
    hits = labels[order] == 1
    precision_at_k = np.cumsum(hits) / np.arange(1, hits.size + 1)
    # fsum is correctly rounded, so the result does not depend on summation order.
    return math.fsum(precision_at_k[hits]) / P


def scorer(model) -> Callable[[Sample], np.ndarray]:
    """Per-frame speaking probabilities for a sample.

    Accepts a head or estimator (``predict_proba(frames, mfcc)``), an object
    with ``score_sample(sample)``, or a plain callable taking a sample.
    """
    if hasattr(model, "score_sample"):
        return model.score_sample
    if hasattr(model, "predict_proba"):
        return lambda s: np.asarray(model.predict_proba(s.frames, s.mfcc), dtype=np.float64)
    if callable(model):
        return lambda s: np.asarray(model(s), dtype=np.float64)
    raise TypeError(f"cannot score frames with {type(model).__name__}")


def _ranking_order(samples: Sequence[Sample]) -> list[int]:
    return sorted(range(len(samples)), key=lambda i: (samples[i].video_id, samples[i].track_id))


def pooled_frames(model, samples: Sequence[Sample]) -> tuple[np.ndarray, np.ndarray]:
    """Scores and labels of all frames in (video_id, track_id, frame) order."""
    score = scorer(model)
    scores, labels = [], []
    for i in _ranking_order(samples):
        s = samples[i]
        p = score(s)
        if p.shape != (s.T,):
            raise ValueError(f"{s.id}: model returned {p.shape} scores for {s.T} frames")
        scores.append(p)
        labels.append(s.labels)
    if not scores:
        raise UndefinedMetricError("no samples to evaluate")
    return np.concatenate(scores), np.concatenate(labels)


def map_eval(model, samples: Sequence[Sample] | Corpus) -> float:
    scores, labels = pooled_frames(model, list(samples))
    return average_precision(scores, labels)


def clean_test(corpus: Corpus | Sequence[Sample]) -> Corpus:
    """Test split without Dubbed tracks (whose labels are deliberately wrong)."""
    samples = corpus.samples if isinstance(corpus, Corpus) else list(corpus)
    seed = corpus.seed if isinstance(corpus, Corpus) else 0
    return Corpus([s for s in samples if s.split == "test" and s.class_tag.split("|")[0] != "Dubbed"], seed)


def tpr_per_video(model, samples: Sequence[Sample] | Corpus, threshold: float = 0.5) -> dict[str, float]:
    """Fraction of label-1 frames predicted above ``threshold``, per video.

    Videos without a positive frame are left out (and logged).
    """
    score = scorer(model)
    hits: dict[str, int] = {}
    pos: dict[str, int] = {}
    for s in samples:
        y = s.labels == 1
        p = score(s)
        hits[s.video_id] = hits.get(s.video_id, 0) + int(np.sum(y & (p > threshold)))
        pos[s.video_id] = pos.get(s.video_id, 0) + int(np.sum(y))
    skipped = sorted(v for v, n in pos.items() if n == 0)
    if skipped:
        log.warning("tpr_per_video: %d video(s) without positive frames omitted", len(skipped))
    return {v: hits[v] / pos[v] for v in sorted(pos) if pos[v] > 0}


DEFAULT_PROPORTIONS = (0.0, 0.25, 0.5, 0.75, 1.0)


def _check_proportions(proportions) -> list[float]:
    props = [float(p) for p in proportions]
    if not props:
        raise ValueError("need at least one proportion")
    if any(b <= a for a, b in zip(props, props[1:])):
        raise ValueError(f"proportions must be strictly increasing, got {props}")
    if props[0] < 0 or props[-1] > 1:
        raise ValueError("proportions must lie in [0, 1]")
    return props


def eval_streams(seed: int) -> tuple[np.random.Generator, np.random.SeedSequence]:
    """Augmentation generator and the seed sequence every curate call restarts from."""
    aug, cur = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(aug), cur


def unsync_sweep(
    model,
    original: Corpus,
    kind,
    proportions=DEFAULT_PROPORTIONS,
    seed: int = 0,
    anchor: Sequence[Sample] = (),
    spec=None,
    skip_short: bool = False,
    unsync: Corpus | None = None,
) -> list[tuple[float, float]]:
    """mAP against the share of unsynchronised tracks in a fixed-size test set.

    Every proportion restarts curate from the same seed, so the augmented ids
    nest.  ``anchor`` samples are appended unchanged to every point; without
    them the all-unsynchronised point has no positives when every speaking
    segment gets relabelled.
    """
    from .desync import ShiftSpec, augment, curate

    props = _check_proportions(proportions)
    aug_rng, cur_ss = eval_streams(seed)
    if unsync is None:
        unsync = augment(original, kind, aug_rng, spec or ShiftSpec(), skip_short=skip_short)
    curve = []
    for p in props:
        test = curate(original, unsync, p, np.random.default_rng(cur_ss))
        curve.append((p, map_eval(model, list(test) + list(anchor))))
    return curve


def curated_test(original: Corpus, kind, proportion: float, seed: int = 0, spec=None, skip_short: bool = False) -> Corpus:
    """One point of :func:`unsync_sweep` as a corpus."""
    from .desync import ShiftSpec, augment, curate

    aug_rng, cur_ss = eval_streams(seed)
    unsync = augment(original, kind, aug_rng, spec or ShiftSpec(), skip_short=skip_short)
    return curate(original, unsync, proportion, np.random.default_rng(cur_ss))


ABLATION_ROWS: tuple[tuple[str, dict], ...] = (
    ("full", {}),
    ("w/o contrastive", {"contrastive_on": False}),
    ("w/o both PE", {"pe_cross": False, "pe_self": False}),
    ("w/o cross PE", {"pe_cross": False}),
    ("w/o self PE", {"pe_self": False}),
)


@dataclass
class AblationRow:
    name: str
    flags: dict
    mismatch_map: float
    misalign_map: float
    clean_map: float

    def flag_string(self) -> str:
        return ";".join(f"{k}={int(v)}" for k, v in sorted(self.flags.items()))


def ablation_configs(base_cfg) -> list[tuple[str, object]]:
    from dataclasses import replace

    base = replace(base_cfg, contrastive_on=True, pe_cross=True, pe_self=True)
    return [(name, replace(base, **over)) for name, over in ABLATION_ROWS]


def evaluate_row(name: str, cfg, head, test: Corpus, seed: int = 0, skip_short: bool = True) -> AblationRow:
    flags = {"contrastive_on": cfg.contrastive_on, "pe_cross": cfg.pe_cross, "pe_self": cfg.pe_self}
    return AblationRow(
        name=name,
        flags=flags,
        mismatch_map=map_eval(head, curated_test(test, "mismatch", 0.5, seed)),
        misalign_map=map_eval(head, curated_test(test, "misalign", 0.5, seed, skip_short=skip_short)),
        clean_map=map_eval(head, test),
    )


def ablation_grid(corpus: Corpus, base_cfg, seed: int = 0, skip_short: bool = True, heads: dict | None = None) -> list[AblationRow]:
    """Train the five flag combinations with one seed and score each on p=0.5 test sets.

    ``heads`` maps row names to already trained heads, which are reused
    instead of retraining.
    """
    from .training import train

    test = clean_test(corpus)
    rows = []
    for name, cfg in ablation_configs(base_cfg):
        head = (heads or {}).get(name)
        if head is None:
            head, _ = train(corpus.split("train"), cfg, val=corpus.split("val"))
        rows.append(evaluate_row(name, cfg, head, test, seed, skip_short))
    return rows


@dataclass
class DubbedRanking:
    tpr: dict[str, float]
    dubbed: set[str]
    median_other: float
    violations: list[str]

    def ranked(self) -> list[tuple[str, float, bool]]:
        """Videos by ascending TPR (ties by video id)."""
        return sorted(((v, t, v in self.dubbed) for v, t in self.tpr.items()), key=lambda r: (r[1], r[0]))


def rank_dubbed(model, samples: Sequence[Sample] | Corpus, threshold: float = 0.5) -> DubbedRanking:
    """Per-video TPR, flagging Dubbed videos that do not fall strictly below the non-Dubbed median."""
    samples = list(samples)
    tpr = tpr_per_video(model, samples, threshold)
    dubbed = {s.video_id for s in samples if s.class_tag.split("|")[0] == "Dubbed"} & set(tpr)
    others = [t for v, t in tpr.items() if v not in dubbed]
    if not others or not dubbed:
        raise UndefinedMetricError("need both Dubbed and non-Dubbed videos with positive frames")
    median = float(np.median(others))
    violations = sorted(v for v in dubbed if not tpr[v] < median)
    return DubbedRanking(tpr=tpr, dubbed=dubbed, median_other=median, violations=violations)


@dataclass
class EvalReport:
    map: float | None = None
    per_video_tpr: dict[str, float] = field(default_factory=dict)
    sweep: list[tuple[float, float]] = field(default_factory=list)
    ablation_rows: list[AblationRow] = field(default_factory=list)

    def validate(self) -> None:
        values = [v for v in [self.map] if v is not None]
        values += list(self.per_video_tpr.values()) + [m for _, m in self.sweep]
        for r in self.ablation_rows:
            values += [r.mismatch_map, r.misalign_map, r.clean_map]
        if any(not 0.0 <= v <= 1.0 for v in values):
            raise ValueError("metric outside [0, 1]")
        if self.sweep:
            _check_proportions([p for p, _ in self.sweep])

    def to_dict(self) -> dict:
        return {
            "map": self.map,
            "per_video_tpr": dict(sorted(self.per_video_tpr.items())),
            "sweep": [{"proportion": p, "map": m} for p, m in self.sweep],
            "ablation_rows": [
                {
                    "name": r.name,
                    "flags": r.flags,
                    "mismatch_map": r.mismatch_map,
                    "misalign_map": r.misalign_map,
                    "clean_map": r.clean_map,
                }
                for r in self.ablation_rows
            ],
        }

    def write_json(self, path) -> None:
        self.validate()
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_sweep_csv(curve, path) -> None:
    _write_csv(path, ("proportion", "map"), [(repr(float(p)), repr(float(m))) for p, m in curve])


def write_ablation_csv(rows: Sequence[AblationRow], path) -> None:
    _write_csv(path, ("flags", "mismatch_map", "misalign_map"), [(r.flag_string(), repr(r.mismatch_map), repr(r.misalign_map)) for r in rows])


def write_tpr_csv(tpr: dict[str, float], path) -> None:
    _write_csv(path, ("video_id", "tpr"), [(v, repr(float(t))) for v, t in sorted(tpr.items())])
