"""scikit-learn style wrappers: a per-frame speaking classifier and the unsync augmenter.

``X`` is a sequence of tracks.  Each track is either a
:class:`~syncasd.trackdata.Sample` or a ``(frames, mfcc)`` pair; ``y`` is the
matching sequence of per-frame label vectors.  Frame-level outputs
(``predict_proba``, ``predict``, ``decision_function``) concatenate all
tracks in input order.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .nn import autograd as ag
from .trackdata import Corpus, Sample, make_sample


def check_tracks(X, y=None, require_labels: bool = False) -> list[Sample]:
    """Normalise ``X`` (and optional ``y``) into validated samples.

    Raises ``ValueError`` on ragged inputs, length mismatches or invalid
    arrays, in the manner of :func:`sklearn.utils.check_X_y`.
    """
    if isinstance(X, (Sample, np.ndarray)):
        raise ValueError("X must be a sequence of tracks, not a single track or array")
    X = list(X)
    if not X:
        raise ValueError("X holds no tracks")
    if y is not None:
        y = list(y)
        if len(y) != len(X):
            raise ValueError(f"X has {len(X)} tracks but y has {len(y)} label vectors")
    samples = []
    for i, track in enumerate(X):
        if isinstance(track, Sample):
            labels = track.labels if y is None else y[i]
            if y is not None:
                track = make_sample(track.id, track.video_id, track.track_id, track.frames, track.mfcc, labels, track.class_tag, track.split)
            samples.append(track)
            continue
        try:
            frames, mfcc = track
        except (TypeError, ValueError) as exc:
            raise ValueError(f"track {i} must be a Sample or a (frames, mfcc) pair") from exc
        frames = np.asarray(frames)
        if y is None:
            if require_labels:
                raise ValueError("y is required when tracks are given as (frames, mfcc) pairs")
            labels = np.zeros(frames.shape[0] if frames.ndim else 0, dtype=np.int8)
        else:
            labels = y[i]
        samples.append(make_sample(f"x{i:05d}", f"x{i:05d}", "t0", frames, mfcc, labels))
    shapes = {(s.frames.shape[1:], s.mfcc.shape[1]) for s in samples}
    if len(shapes) > 1:
        raise ValueError(f"tracks disagree on frame size or coefficient count: {sorted(shapes)}")
    return samples


class SyncSpeakerClassifier(ClassifierMixin, BaseEstimator):
    """Frame-level active speaker classifier trained with optional contrastive negatives."""

    def __init__(
        self,
        head: str = "sync",
        d: int = 32,
        beta: float = 1.0,
        frames_per_batch: int = 2500,
        epochs: int = 30,
        lr: float = 1e-3,
        contrastive: bool = True,
        pe_cross: bool = True,
        pe_self: bool = True,
        random_state: int = 0,
    ):
        self.head = head
        self.d = d
        self.beta = beta
        self.frames_per_batch = frames_per_batch
        self.epochs = epochs
        self.lr = lr
        self.contrastive = contrastive
        self.pe_cross = pe_cross
        self.pe_self = pe_self
        self.random_state = random_state

    def train_config(self):
        from .training import TrainConfig

        return TrainConfig(
            beta=self.beta,
            frames_per_batch=self.frames_per_batch,
            epochs=self.epochs,
            lr=self.lr,
            seed=int(self.random_state),
            contrastive_on=self.contrastive,
            pe_cross=self.pe_cross,
            pe_self=self.pe_self,
            head=self.head,
            d=self.d,
        )

    def fit(self, X, y=None, X_val=None):
        from .training import train

        samples = check_tracks(X, y, require_labels=True)
        val = check_tracks(X_val) if X_val is not None else None
        self.model_, self.history_ = train(samples, self.train_config(), val=val)
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = samples[0].frames.shape[1] * samples[0].frames.shape[2]
        return self

    def _tracks(self, X) -> list[Sample]:
        check_is_fitted(self, "model_")
        samples = check_tracks(X)
        spec = self.model_.spec
        hv, wv = samples[0].frames.shape[1:]
        if (hv, wv, samples[0].mfcc.shape[1]) != (spec.hv, spec.wv, spec.ha):
            raise ValueError(f"fitted on {spec.hv}x{spec.wv} frames and {spec.ha} coefficients, got {hv}x{wv} and {samples[0].mfcc.shape[1]}")
        return samples

    def track_logits(self, X) -> list[np.ndarray]:
        out = []
        with ag.no_grad():
            for s in self._tracks(X):
                out.append(np.asarray(self.model_.logits(s.frames.astype(np.float64), s.mfcc.astype(np.float64)).data, dtype=np.float64))
        return out

    def decision_function(self, X) -> np.ndarray:
        return np.concatenate(self.track_logits(X))

    def predict_proba(self, X) -> np.ndarray:
        p = ag._sigmoid(self.decision_function(X))
        return np.column_stack([1.0 - p, p])

    def predict(self, X) -> np.ndarray:
        return (self.decision_function(X) > 0).astype(np.int64)

    def score_sample(self, sample: Sample) -> np.ndarray:
        """Per-frame speaking probability; lets the estimator plug into the metrics."""
        check_is_fitted(self, "model_")
        return self.model_.predict_proba(sample.frames.astype(np.float64), sample.mfcc.astype(np.float64))

    def score(self, X, y=None, sample_weight=None) -> float:
        """Pooled frame-retrieval AP (not accuracy)."""
        from .evalmetrics import map_eval

        if sample_weight is not None:
            raise ValueError("sample_weight is not supported")
        samples = check_tracks(X, y)
        return map_eval(self, samples)

    @classmethod
    def from_checkpoint(cls, directory) -> "SyncSpeakerClassifier":
        from .checkpoint import load_checkpoint

        model, index = load_checkpoint(directory)
        spec = model.spec
        train_cfg = index.get("extra", {}).get("train", {})
        est = cls(
            head=spec.head,
            d=spec.d,
            pe_cross=spec.pe_cross,
            pe_self=spec.pe_self,
            **{k: train_cfg[k] for k in ("beta", "frames_per_batch", "epochs", "lr") if k in train_cfg},
        )
        if "contrastive_on" in train_cfg:
            est.contrastive = train_cfg["contrastive_on"]
        if "seed" in train_cfg:
            est.random_state = train_cfg["seed"]
        est.model_ = model
        est.history_ = []
        est.classes_ = np.array([0, 1])
        est.n_features_in_ = spec.hv * spec.wv
        return est


class UnsyncAugmenter(TransformerMixin, BaseEstimator):
    """Stateless transformer wrapping the mismatch and misalign augmentations."""

    def __init__(self, kind: str = "mismatch", min_shift_ms: float = 130.0, skip_short: bool = False, random_state: int = 0):
        self.kind = kind
        self.min_shift_ms = min_shift_ms
        self.skip_short = skip_short
        self.random_state = random_state

    def fit(self, X, y=None):
        from .desync import AugmentKind, ShiftSpec

        AugmentKind(self.kind)
        ShiftSpec(self.min_shift_ms)
        return self

    def transform(self, X: Corpus | Sequence[Sample]) -> Corpus:
        from .desync import ShiftSpec, augment

        corpus = X if isinstance(X, Corpus) else Corpus(check_tracks(X))
        rng = np.random.default_rng(self.random_state)
        return augment(corpus, self.kind, rng, ShiftSpec(self.min_shift_ms), skip_short=self.skip_short)
