"""Finite-difference oracle for reverse-mode gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import ProbeFailureError
from .tensor import Tape, Tensor


def grad_check(
    f: Callable[[Tensor], Tensor],
    x: np.ndarray,
    h: float = 1e-5,
) -> float:
    """Max relative error between the taped gradient of ``f`` and central differences.

    ``f`` maps a tensor to a scalar tensor using only recorded operations, so
    the same callable serves both the analytic pass (taped input) and the
    probe passes (constant inputs). The relative error denominator is
    max(|analytic|, |numeric|, 1e-8) per coordinate.
    """
    if not 1e-7 <= h <= 1e-3:
        raise ValueError(f"step h must lie in [1e-7, 1e-3], got {h}")
    x = np.asarray(x, dtype=np.float64)
    tape = Tape()
    xt = tape.tensor(x.copy())
    analytic = tape.gradients(f(xt), [xt])[0]

    numeric = np.zeros_like(x)
    flat = numeric.reshape(-1)
    for i in range(x.size):
        probe = x.copy().reshape(-1)
        probe[i] += h
        fp = float(f(Tensor(probe.reshape(x.shape))).data)
        probe[i] -= 2.0 * h
        fm = float(f(Tensor(probe.reshape(x.shape))).data)
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ProbeFailureError(f"non-finite probe at coordinate {i}: f+={fp}, f-={fm}")
        flat[i] = (fp - fm) / (2.0 * h)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))


def grad_check_params(
    loss_fn: Callable[[dict[str, Tensor]], Tensor],
    params: dict[str, np.ndarray],
    h: float = 1e-5,
) -> dict[str, float]:
    """Per-parameter grad_check for a loss over a named parameter set.

    ``loss_fn`` receives a dict of tensors (taped for the analytic pass,
    constants for probes) and returns a scalar tensor.
    """
    tape = Tape()
    taped = {name: tape.tensor(arr.copy()) for name, arr in params.items()}
    analytic = dict(
        zip(params, tape.gradients(loss_fn(taped), list(taped.values())))
    )

    errors: dict[str, float] = {}
    for name, arr in params.items():
        numeric = np.zeros_like(arr)
        flat = numeric.reshape(-1)
        for i in range(arr.size):
            fs = []
            for delta in (h, -h):
                probe = {
                    n: Tensor(a.copy() if n == name else a) for n, a in params.items()
                }
                probe[name].data.reshape(-1)[i] += delta
                fs.append(float(loss_fn(probe).data))
            if not all(np.isfinite(v) for v in fs):
                raise ProbeFailureError(f"non-finite probe for {name}[{i}]: {fs}")
            flat[i] = (fs[0] - fs[1]) / (2.0 * h)
        a = analytic[name]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), 1e-8)
        errors[name] = float(np.max(np.abs(a - numeric) / denom)) if arr.size else 0.0
    return errors
