"""Central finite-difference gradient checks in double precision."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, no_grad


def rel_error(a, n, floor: float = 1e-6):
    a, n = np.asarray(a, dtype=np.float64), np.asarray(n, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def grad_check(fn, inputs, h: float = 1e-4, n_samples: int | None = None, rng=None, skip_kinks: bool = False, stats=None) -> float:
    """Max relative error between analytic and numeric gradients.

    ``fn()`` must build a scalar from ``inputs`` (float64 tensors).  With
    ``n_samples`` only that many randomly chosen coordinates are probed.

    ReLU networks are piecewise linear, so a probe of width ``h`` can straddle
    a kink and produce a meaningless central difference.  With
    ``skip_kinks`` such coordinates (where the forward and backward one-sided
    differences disagree) are skipped and replaced by fresh samples; the
    number skipped is written to ``stats["kinks"]``.
    """
    inputs = list(inputs)
    for x in inputs:
        if x.data.dtype != np.float64:
            raise TypeError("grad_check needs float64 tensors")
        x.grad = None
    out = fn()
    f0 = float(out.data)
    out.backward()
    analytic = [np.zeros_like(x.data) if x.grad is None else x.grad for x in inputs]

    coords = [(i, j) for i, x in enumerate(inputs) for j in range(x.data.size)]
    want = len(coords) if n_samples is None else min(n_samples, len(coords))
    if want < len(coords):
        rng = rng or np.random.default_rng(0)
        coords = [coords[k] for k in rng.permutation(len(coords))]
    worst, done, kinks = 0.0, 0, 0
    with no_grad():
        for i, j in coords:
            if done >= want:
                break
            flat = inputs[i].data.reshape(-1)
            old = flat[j]
            flat[j] = old + h
            fp = float(fn().data)
            flat[j] = old - h
            fm = float(fn().data)
            flat[j] = old
            if skip_kinks:
                fwd, bwd = (fp - f0) / h, (f0 - fm) / h
                if abs(fwd - bwd) > 0.01 * max(abs(fwd), abs(bwd), 1e-4):
                    kinks += 1
                    continue
            num = (fp - fm) / (2 * h)
            worst = max(worst, float(rel_error(analytic[i].reshape(-1)[j], num)))
            done += 1
    if stats is not None:
        stats["kinks"], stats["checked"] = kinks, done
    return worst


def f64(shape_or_array, rng=None, scale=1.0) -> Tensor:
    """Convenience: a float64 leaf tensor (random normal if given a shape)."""
    if isinstance(shape_or_array, tuple):
        rng = rng or np.random.default_rng(0)
        data = rng.normal(0.0, scale, shape_or_array)
    else:
        data = np.asarray(shape_or_array, dtype=np.float64)
    return Tensor(data.astype(np.float64), requires_grad=True)
