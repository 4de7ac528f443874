"""Desk-scale frontends and the three prediction heads.

Every head splits into ``encode`` (per-modality frontends producing
``V, A`` of shape ``[T, d]``) and ``backend`` (fusion to per-frame logits).
The split is what lets training swap audio embeddings between tracks
without re-running any frontend.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import autograd as ag
from .nn.autograd import DimensionError, Param, Tensor
from .nn.layers import AttentionParams, attention, init_uniform

HEADS = ("sync", "rothnet", "product")
ROTH_WINDOW = 11
FRONT_KERNEL = 5


class VisualFrontend:
    """flatten -> linear to d -> temporal conv (k=5, same) -> relu -> linear d->d."""

    def __init__(self, hv: int, wv: int, d: int, rng: np.random.Generator):
        n = hv * wv
        self.hv, self.wv, self.d = hv, wv, d
        self.W_in = init_uniform(rng, (n, d), n, "visual.W_in")
        self.b_in = init_uniform(rng, (d,), n, "visual.b_in")
        self.K_t = init_uniform(rng, (FRONT_KERNEL, d, d), FRONT_KERNEL * d, "visual.K_t")
        self.b_t = init_uniform(rng, (d,), FRONT_KERNEL * d, "visual.b_t")
        self.W_out = init_uniform(rng, (d, d), d, "visual.W_out")
        self.b_out = init_uniform(rng, (d,), d, "visual.b_out")

    def params(self) -> list[Param]:
        return [self.W_in, self.b_in, self.K_t, self.b_t, self.W_out, self.b_out]

    def __call__(self, frames) -> Tensor:
        frames = np.asarray(frames, dtype=np.float64)
        if frames.shape[-2:] != (self.hv, self.wv):
            raise DimensionError(f"visual frontend expects frames [..., {self.hv}, {self.wv}], got {frames.shape}")
        x = frames.reshape(frames.shape[:-2] + (self.hv * self.wv,))
        h = ag.linear(x, self.W_in, self.b_in)
        h = ag.relu(ag.conv1d(h, self.K_t, self.b_t, stride=1))
        return ag.linear(h, self.W_out, self.b_out)


class AudioFrontend:
    """conv1d Ha->d (k=5, s=2) -> relu -> conv1d d->d (k=5, s=2); total stride 4."""

    def __init__(self, ha: int, d: int, rng: np.random.Generator):
        self.ha, self.d = ha, d
        self.K1 = init_uniform(rng, (FRONT_KERNEL, ha, d), FRONT_KERNEL * ha, "audio.K1")
        self.b1 = init_uniform(rng, (d,), FRONT_KERNEL * ha, "audio.b1")
        self.K2 = init_uniform(rng, (FRONT_KERNEL, d, d), FRONT_KERNEL * d, "audio.K2")
        self.b2 = init_uniform(rng, (d,), FRONT_KERNEL * d, "audio.b2")

    def params(self) -> list[Param]:
        return [self.K1, self.b1, self.K2, self.b2]

    def __call__(self, mfcc) -> Tensor:
        mfcc = np.asarray(mfcc, dtype=np.float64)
        rows = mfcc.shape[-2]
        if rows % 4:
            raise DimensionError(f"audio rows must be a multiple of 4, got {rows}")
        if mfcc.shape[-1] != self.ha:
            raise DimensionError(f"audio frontend expects {self.ha} coefficients, got {mfcc.shape[-1]}")
        h = ag.relu(ag.conv1d(mfcc, self.K1, self.b1, stride=2))
        return ag.conv1d(h, self.K2, self.b2, stride=2)


@dataclass(frozen=True)
class ModelSpec:
    """Hyperparameters that fix a head's parameter shapes and dataflow."""

    head: str = "sync"
    hv: int = 16
    wv: int = 16
    ha: int = 13
    d: int = 32
    pe_cross: bool = True
    pe_self: bool = True

    def __post_init__(self):
        if self.head not in HEADS:
            raise ValueError(f"unknown head {self.head!r}; expected one of {HEADS}")
        if self.d < 2 or self.d % 2:
            raise ValueError(f"model width d must be even and >= 2, got {self.d}")


class Head:
    """Shared frontends plus a head-specific backend."""

    def __init__(self, spec: ModelSpec, rng: np.random.Generator):
        self.spec = spec
        self.visual = VisualFrontend(spec.hv, spec.wv, spec.d, rng)
        self.audio = AudioFrontend(spec.ha, spec.d, rng)

    def backend_params(self) -> list[Param]:
        raise NotImplementedError

    def params(self) -> list[Param]:
        return self.visual.params() + self.audio.params() + self.backend_params()

    def named_params(self) -> dict[str, Param]:
        return {p.name: p for p in self.params()}

    def encode(self, frames, mfcc) -> tuple[Tensor, Tensor]:
        return self.visual(frames), self.audio(mfcc)

    def backend(self, V: Tensor, A: Tensor) -> Tensor:
        raise NotImplementedError

    def logits(self, frames, mfcc) -> Tensor:
        V, A = self.encode(frames, mfcc)
        return self.backend(V, A)

    def predict_proba(self, frames, mfcc) -> np.ndarray:
        with ag.no_grad():
            z = self.logits(frames, mfcc).data
        return ag._sigmoid(z)


class SyncHead(Head):
    """Cross-attention both ways, self-attention over the concatenation, linear classifier."""

    def __init__(self, spec: ModelSpec, rng: np.random.Generator):
        super().__init__(spec, rng)
        d = spec.d
        self.cross_av = AttentionParams.init(d, rng, "cross_av")
        self.cross_va = AttentionParams.init(d, rng, "cross_va")
        self.self_attn = AttentionParams.init(2 * d, rng, "self")
        self.W_cls = init_uniform(rng, (2 * d, 1), 2 * d, "cls.W")
        self.b_cls = init_uniform(rng, (1,), 2 * d, "cls.b")

    def backend_params(self) -> list[Param]:
        return self.cross_av.params() + self.cross_va.params() + self.self_attn.params() + [self.W_cls, self.b_cls]

    def backend(self, V, A) -> Tensor:
        V, A = ag.as_tensor(V), ag.as_tensor(A)
        if V.shape != A.shape or V.shape[-1] != self.spec.d:
            raise DimensionError(f"backend expects V and A of shape [T, {self.spec.d}], got {V.shape} and {A.shape}")
        f_av = attention(A, V, self.cross_av, self.spec.pe_cross)
        f_va = attention(V, A, self.cross_va, self.spec.pe_cross)
        c = ag.concat([f_av, f_va], axis=-1)
        f = attention(c, c, self.self_attn, self.spec.pe_self)
        z = ag.linear(f, self.W_cls, self.b_cls)
        return ag.reshape(z, z.shape[:-1])


def window_index(T: int, w: int = ROTH_WINDOW) -> np.ndarray:
    """``[T, w]`` frame indices centred on each frame, edges replicated."""
    half = w // 2
    return np.clip(np.arange(T)[:, None] + np.arange(-half, half + 1)[None, :], 0, T - 1)


class RothNetHead(Head):
    """Windowed two-stream classifier: 11 frames around each target frame.

    Each modality is embedded over the window and mean-pooled, so ``encode``
    still yields one ``[T, d]`` row per frame and the contrastive exchange
    works exactly as for the attention head.
    """

    def __init__(self, spec: ModelSpec, rng: np.random.Generator):
        super().__init__(spec, rng)
        d = spec.d
        self.W_h = init_uniform(rng, (2 * d, d), 2 * d, "mlp.W_h")
        self.b_h = init_uniform(rng, (d,), 2 * d, "mlp.b_h")
        self.W_o = init_uniform(rng, (d, 1), d, "mlp.W_o")
        self.b_o = init_uniform(rng, (1,), d, "mlp.b_o")

    def backend_params(self) -> list[Param]:
        return [self.W_h, self.b_h, self.W_o, self.b_o]

    def encode(self, frames, mfcc):
        frames = np.asarray(frames, dtype=np.float64)
        mfcc = np.asarray(mfcc, dtype=np.float64)
        T = frames.shape[0]
        if mfcc.shape[0] != 4 * T:
            raise DimensionError(f"audio rows {mfcc.shape[0]} != 4 x {T} frames")
        idx = window_index(T)
        rows = (4 * idx[:, :, None] + np.arange(4)[None, None, :]).reshape(T, -1)
        V = ag.mean(self.visual(frames[idx]), axis=1)
        A = ag.mean(self.audio(mfcc[rows]), axis=1)
        return V, A

    def backend(self, V, A) -> Tensor:
        h = ag.relu(ag.linear(ag.concat([V, A], axis=-1), self.W_h, self.b_h))
        z = ag.linear(h, self.W_o, self.b_o)
        return ag.reshape(z, z.shape[:-1])


class ProductHead(Head):
    """Independent audio and visual speaking heads; p = p_audio * p_visual.

    ``backend`` returns the logit of the product so every head trains with
    the same logit-space BCE.
    """

    def __init__(self, spec: ModelSpec, rng: np.random.Generator):
        super().__init__(spec, rng)
        d = spec.d
        self.W_a = init_uniform(rng, (d, 1), d, "vad.W")
        self.b_a = init_uniform(rng, (1,), d, "vad.b")
        self.W_v = init_uniform(rng, (d, 1), d, "lip.W")
        self.b_v = init_uniform(rng, (1,), d, "lip.b")

    def backend_params(self) -> list[Param]:
        return [self.W_a, self.b_a, self.W_v, self.b_v]

    def factor_logits(self, V, A) -> tuple[Tensor, Tensor]:
        za = ag.linear(A, self.W_a, self.b_a)
        zv = ag.linear(V, self.W_v, self.b_v)
        return ag.reshape(za, za.shape[:-1]), ag.reshape(zv, zv.shape[:-1])

    def backend(self, V, A) -> Tensor:
        za, zv = self.factor_logits(V, A)
        log_p = ag.add(ag.log_sigmoid(za), ag.log_sigmoid(zv))
        return ag.sub(log_p, ag.log1mexp(log_p))


def product_probability(p_audio, p_visual):
    return np.asarray(p_audio) * np.asarray(p_visual)


_HEAD_CLASSES = {"sync": SyncHead, "rothnet": RothNetHead, "product": ProductHead}


def build_head(spec: ModelSpec, seed: int) -> Head:
    """Fresh head with uniform(+-1/sqrt(fan_in)) weights drawn from ``seed``."""
    return _HEAD_CLASSES[spec.head](spec, np.random.default_rng(seed))
