"""Frame-budget batching, embedding-space contrastive negatives, and the training loop."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .model import HEADS, Head, ModelSpec, build_head
from .nn import autograd as ag
from .nn.layers import bce_with_logits
from .nn.optim import Adam
from .trackdata import Corpus, Sample

log = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "sup_loss", "contr_loss", "val_map", "wall_seconds")


class TrainingError(RuntimeError):
    """Training hit a non-finite loss or an infeasible batch."""


@dataclass
class TrainConfig:
    beta: float = 1.0
    frames_per_batch: int = 2500
    epochs: int = 30
    lr: float = 1e-3
    seed: int = 0
    contrastive_on: bool = True
    pe_cross: bool = True
    pe_self: bool = True
    head: str = "sync"
    d: int = 32
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        if self.frames_per_batch < 1:
            raise ValueError("frames_per_batch must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.head not in HEADS:
            raise ValueError(f"unknown head {self.head!r}; expected one of {HEADS}")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    def model_spec(self, sample: Sample) -> ModelSpec:
        _, hv, wv = sample.frames.shape
        return ModelSpec(
            head=self.head,
            hv=hv,
            wv=wv,
            ha=sample.audio.n_coeffs,
            d=self.d,
            pe_cross=self.pe_cross,
            pe_self=self.pe_self,
        )


def assemble_batches(lengths: Sequence[int], frames_per_batch: int, rng: np.random.Generator | None) -> list[list[int]]:
    """Shuffle, then pack greedily; a batch closes when the next track would overflow it.

    ``rng=None`` keeps the given order.
    """
    lengths = [int(n) for n in lengths]
    too_long = [i for i, n in enumerate(lengths) if n > frames_per_batch]
    if too_long:
        i = too_long[0]
        raise TrainingError(f"track {i} has {lengths[i]} frames, more than frames_per_batch={frames_per_batch}")
    order = list(range(len(lengths))) if rng is None else [int(i) for i in rng.permutation(len(lengths))]
    batches: list[list[int]] = []
    current: list[int] = []
    used = 0
    for i in order:
        if current and used + lengths[i] > frames_per_batch:
            batches.append(current)
            current, used = [], 0
        current.append(i)
        used += lengths[i]
    if current:
        batches.append(current)
    return batches


def positive_set(labels: Sequence[np.ndarray]) -> list[int]:
    return [i for i, y in enumerate(labels) if np.any(np.asarray(y) == 1)]


def sample_derangement(gamma: Sequence[int], rng: np.random.Generator) -> dict[int, int] | None:
    """Uniform fixed-point-free permutation of ``gamma`` as a mapping.

    Returns ``None`` when fewer than two positives exist: the contrastive
    term is skipped for that batch.
    """
    gamma = list(gamma)
    n = len(gamma)
    if n < 2:
        return None
    idx = np.arange(n)
    while True:
        perm = rng.permutation(n)
        if not np.any(perm == idx):
            return {gamma[j]: gamma[int(perm[j])] for j in range(n)}


def _leading_rows(x, n: int):
    x = ag.as_tensor(x)
    return x if x.shape[0] == n else ag.take(x, np.arange(n), axis=0)


def contrastive_loss(
    embeddings: Sequence[tuple],
    labels: Sequence[np.ndarray],
    backend: Callable,
    phi: dict[int, int] | None,
    beta: float,
) -> tuple[ag.Tensor, ag.Tensor, ag.Tensor | None]:
    """Supervised BCE over the batch plus ``beta`` x BCE of exchanged pairs against zeros.

    ``embeddings[i]`` is the cached ``(V_i, A_i)``.  A pair ``(V_g, A_phi(g))``
    is truncated to the shorter track.  Returns ``(total, supervised,
    contrastive)``; ``contrastive`` is ``None`` when skipped.
    """
    sup_terms = [bce_with_logits(backend(V, A), np.asarray(y, dtype=np.float64)) for (V, A), y in zip(embeddings, labels)]
    sup = ag.mul(ag.stack_sum(sup_terms), 1.0 / len(sup_terms))
    if phi is None or beta == 0:
        return sup, sup, None
    contr_terms = []
    for g in sorted(phi):
        partner = phi[g]
        V, _ = embeddings[g]
        _, A = embeddings[partner]
        n = min(V.shape[0], A.shape[0])
        z = backend(_leading_rows(V, n), _leading_rows(A, n))
        contr_terms.append(bce_with_logits(z, np.zeros(n)))
    contr = ag.mul(ag.stack_sum(contr_terms), 1.0 / len(contr_terms))
    return ag.add(sup, ag.mul(contr, beta)), sup, contr


@dataclass
class EpochLog:
    epoch: int
    sup_loss: float
    contr_loss: float
    val_map: float
    wall_seconds: float


def write_log_csv(rows: Sequence[EpochLog], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_COLUMNS)
        for r in rows:
            w.writerow([r.epoch, repr(r.sup_loss), repr(r.contr_loss), repr(r.val_map), f"{r.wall_seconds:.3f}"])


def _split_streams(seed: int) -> tuple[int, np.random.Generator]:
    init_ss, loop_ss = np.random.SeedSequence(seed).spawn(2)
    return int(init_ss.generate_state(1)[0]), np.random.default_rng(loop_ss)


def train(
    corpus: Corpus | Sequence[Sample],
    cfg: TrainConfig,
    val: Corpus | Sequence[Sample] | None = None,
    checkpoint_dir=None,
    head: Head | None = None,
) -> tuple[Head, list[EpochLog]]:
    """Adam over ``cfg.epochs`` epochs; bit-for-bit deterministic for a fixed seed.

    ``corpus`` is used as-is (pass only training samples).  When ``val`` has
    positive frames its pooled AP is logged per epoch, otherwise NaN.
    """
    from .evalmetrics import map_eval

    samples = list(corpus)
    if not samples:
        raise TrainingError("empty training set")
    init_seed, rng = _split_streams(cfg.seed)
    if head is None:
        head = build_head(cfg.model_spec(samples[0]), init_seed)
    lengths = [s.T for s in samples]
    assemble_batches(lengths, cfg.frames_per_batch, None)  # fail fast on oversized tracks

    val_samples = list(val) if val is not None else []
    val_ok = any(s.labels.any() for s in val_samples)
    opt = Adam(head.params(), lr=cfg.lr)
    history: list[EpochLog] = []
    frames = [s.frames.astype(np.float64) for s in samples]
    mfccs = [s.mfcc.astype(np.float64) for s in samples]

    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        sup_total = contr_total = 0.0
        n_contr = 0
        batches = assemble_batches(lengths, cfg.frames_per_batch, rng)
        for b, batch in enumerate(batches):
            embeddings = [head.encode(frames[i], mfccs[i]) for i in batch]
            labels = [samples[i].labels for i in batch]
            phi = sample_derangement(positive_set(labels), rng) if cfg.contrastive_on else None
            opt.zero_grad()
            where = f"epoch {epoch}, batch {b} (samples {[samples[i].id for i in batch]})"
            try:
                loss, sup, contr = contrastive_loss(embeddings, labels, head.backend, phi, cfg.beta)
            except FloatingPointError as exc:
                raise TrainingError(f"{exc} at {where}") from exc
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss {value} at {where}")
            loss.backward()
            opt.step()
            sup_total += float(sup.data)
            if contr is not None:
                contr_total += float(contr.data)
                n_contr += 1
        val_map = map_eval(head, val_samples) if val_ok else float("nan")
        entry = EpochLog(
            epoch=epoch,
            sup_loss=sup_total / len(batches),
            contr_loss=contr_total / n_contr if n_contr else 0.0,
            val_map=val_map,
            wall_seconds=time.perf_counter() - t0,
        )
        history.append(entry)
        log.info("epoch %d sup=%.4f contr=%.4f val_map=%.4f", epoch, entry.sup_loss, entry.contr_loss, entry.val_map)
        if checkpoint_dir is not None and cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
            from .checkpoint import save_checkpoint

            save_checkpoint(head, Path(checkpoint_dir) / f"epoch{epoch:04d}", extra={"train": cfg.to_dict()})
    return head, history


GRADCHECK_LENGTHS = (5, 13, 7)


def training_loss_gradcheck(spec: ModelSpec, seed: int = 0, lengths: Sequence[int] = GRADCHECK_LENGTHS, beta: float = 1.0, h: float = 1e-5) -> float:
    """Finite-difference check of the full batch loss (supervised plus contrastive) for one head.

    Builds a tiny random batch in which every track has positives, fixes a
    derangement and compares analytic and numeric gradients for every
    parameter of the head.
    """
    from .nn.gradcheck import grad_check

    rng = np.random.default_rng(seed)
    head = build_head(spec, int(rng.integers(2**31)))
    frames = [rng.uniform(0, 1, size=(T, spec.hv, spec.wv)) for T in lengths]
    mfccs = [rng.normal(size=(4 * T, spec.ha)) for T in lengths]
    labels = []
    for T in lengths:
        y = (rng.uniform(size=T) < 0.5).astype(np.int8)
        y[0] = 1
        labels.append(y)
    phi = sample_derangement(positive_set(labels), rng)

    def loss():
        embeddings = [head.encode(f, m) for f, m in zip(frames, mfccs)]
        return contrastive_loss(embeddings, labels, head.backend, phi, beta)[0]

    return grad_check(loss, head.params(), h=h)
