"""Central finite differences, used as the independent oracle for backward()."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

FD_STEP = 1e-4


def numerical_gradient(f: Callable[[], float], arrays: Sequence[np.ndarray], step: float = FD_STEP) -> list[np.ndarray]:
    """Perturb every entry of every array in place; ``f`` re-evaluates the loss."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = f()
            flat[i] = orig - step
            down = f()
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * step)
        grads.append(g)
    return grads


def relative_error(analytic, numeric) -> float:
    """Norm-wise ``|a - n| / max(|a|, |n|)`` over the concatenated gradients."""
    a = np.concatenate([np.ravel(x) for x in analytic]) if isinstance(analytic, (list, tuple)) else np.ravel(analytic)
    n = np.concatenate([np.ravel(x) for x in numeric]) if isinstance(numeric, (list, tuple)) else np.ravel(numeric)
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    if scale < 1e-12:
        return 0.0
    return float(np.linalg.norm(a - n) / scale)
