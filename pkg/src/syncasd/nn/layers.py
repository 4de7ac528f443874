"""Layers built on the autograd core: positional encoding, scaled dot-product attention, BCE."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autograd import (
    DimensionError,
    Param,
    Tensor,
    _make,
    _sigmoid,
    add,
    as_tensor,
    linear,
    matmul,
    mul,
    softmax,
    transpose,
)


def init_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, name: str) -> Param:
    """Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)]."""
    bound = 1.0 / math.sqrt(fan_in)
    return Param(rng.uniform(-bound, bound, size=shape), name=name)


def sinusoidal_pe(T: int, d: int) -> np.ndarray:
    """``PE[t, 2i] = sin(t / 10000**(2i/d))``, ``PE[t, 2i+1] = cos(...)``."""
    if d % 2:
        raise ValueError(f"positional encoding width must be even, got d={d}")
    if T < 1:
        raise ValueError(f"positional encoding needs T >= 1, got T={T}")
    t = np.arange(T, dtype=np.float64)[:, None]
    rate = 10000.0 ** (np.arange(0, d, 2, dtype=np.float64) / d)
    pe = np.empty((T, d))
    pe[:, 0::2] = np.sin(t / rate)
    pe[:, 1::2] = np.cos(t / rate)
    return pe


@dataclass
class AttentionParams:
    """Query/Key/Value projections of width ``d``.

    There is no key bias: it adds the same constant to every score in a row,
    which the softmax cancels, so it could never receive a gradient.
    """

    W_q: Param
    b_q: Param
    W_k: Param
    W_v: Param
    b_v: Param

    @classmethod
    def init(cls, d: int, rng: np.random.Generator, prefix: str = "attn") -> "AttentionParams":
        return cls(
            W_q=init_uniform(rng, (d, d), d, f"{prefix}.W_q"),
            b_q=init_uniform(rng, (d,), d, f"{prefix}.b_q"),
            W_k=init_uniform(rng, (d, d), d, f"{prefix}.W_k"),
            W_v=init_uniform(rng, (d, d), d, f"{prefix}.W_v"),
            b_v=init_uniform(rng, (d,), d, f"{prefix}.b_v"),
        )

    @property
    def d(self) -> int:
        return self.W_q.shape[0]

    def params(self) -> list[Param]:
        return [self.W_q, self.b_q, self.W_k, self.W_v, self.b_v]


def attention(X, Y, p: AttentionParams, pe_on: bool) -> Tensor:
    """softmax(Query(Y^) Key(X^)^T / sqrt(d)) Value(X^).

    ``Y`` supplies the queries, ``X`` the keys and values.  With ``pe_on`` the
    sinusoidal encoding is added to both inputs first.
    """
    X, Y = as_tensor(X), as_tensor(Y)
    if X.shape != Y.shape:
        raise DimensionError(f"attention: X {X.shape} and Y {Y.shape} must share [T, d]")
    T, d = X.shape[-2:]
    if d != p.d:
        raise DimensionError(f"attention: input width {d} does not match params width {p.d}")
    if pe_on:
        pe = sinusoidal_pe(T, d)
        X = add(X, pe)
        Y = add(Y, pe)
    q = linear(Y, p.W_q, p.b_q)
    k = linear(X, p.W_k)
    v = linear(X, p.W_v, p.b_v)
    scores = mul(matmul(q, transpose(k)), 1.0 / math.sqrt(d))
    return matmul(softmax(scores), v)


def bce_with_logits(logits, targets) -> Tensor:
    """Mean over frames of -[y log s(z) + (1-y) log(1-s(z))], log-sum-exp stable."""
    z = as_tensor(logits)
    y = np.asarray(targets, dtype=np.float64)
    if y.shape != z.shape:
        raise DimensionError(f"bce_with_logits: logits {z.shape} and targets {y.shape} differ")
    if not np.all(np.isfinite(z.data)):
        raise FloatingPointError("bce_with_logits: non-finite logits")
    n = z.data.size
    x = z.data
    loss = np.maximum(x, 0.0) - x * y + np.log1p(np.exp(-np.abs(x)))

    def backward(g):
        if z.requires_grad:
            z._accumulate(g * (_sigmoid(x) - y) / n)

    return _make(np.asarray(loss.mean()), (z,), backward)
