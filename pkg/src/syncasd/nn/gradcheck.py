from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .autograd import Param, Tensor, precision


def grad_check(f: Callable[[], Tensor], params: Sequence[Param], h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` rebuilds the scalar loss from the current parameter values on each
    call.  The analytic gradient comes from one float64 backward pass.  The
    numeric side ``(f(x+h) - f(x-h)) / 2h`` is evaluated in extended
    precision so that double roundoff (about 1e-11 for an O(1) loss) does not
    swamp coordinates whose true gradient is small.  Per coordinate the
    error is ``|a - n| / max(1e-8, |a| + |n|)``.
    """
    for p in params:
        p.grad = None
    loss = f()
    loss.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    for p in params:
        p.grad = None

    originals = [p.data for p in params]
    wide = np.longdouble
    step = wide(h)
    worst = 0.0
    try:
        for p in params:
            p.data = p.data.astype(wide)
        with precision(wide):
            for p, a in zip(params, analytic):
                flat = p.data.reshape(-1)
                a = a.reshape(-1)
                for i in range(flat.size):
                    orig = flat[i]
                    flat[i] = orig + step
                    up = f().data
                    flat[i] = orig - step
                    down = f().data
                    flat[i] = orig
                    num = float((up - down) / (2 * step))
                    err = abs(a[i] - num) / max(1e-8, abs(a[i]) + abs(num))
                    worst = max(worst, err)
    finally:
        for p, orig in zip(params, originals):
            p.data = orig
            p.grad = None
    return float(worst)
