"""Central finite differences with relative steps."""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

DEFAULT_REL_STEP = 1e-5


def fd_steps(x: np.ndarray, rel_step: float = DEFAULT_REL_STEP) -> np.ndarray:
    """Per-coordinate step h_i = rel_step * max(1, |x_i|)."""
    return rel_step * np.maximum(1.0, np.abs(x))


def gradient(objective: Callable[[np.ndarray], float], x: Sequence[float], rel_step: float = DEFAULT_REL_STEP) -> np.ndarray:
    """Central-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=float)
    h = fd_steps(x, rel_step)
    g = np.empty_like(x)
    for i in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp[i] += h[i]
        xm[i] -= h[i]
        g[i] = (objective(xp) - objective(xm)) / (2.0 * h[i])
    return g


def jacobian(
    function: Callable[[np.ndarray], np.ndarray],
    x: Sequence[float],
    rel_step: float = DEFAULT_REL_STEP,
    m: Optional[int] = None,
) -> np.ndarray:
    """Central-difference Jacobian of a vector function."""
    x = np.asarray(x, dtype=float)
    h = fd_steps(x, rel_step)
    if m is None:
        m = np.asarray(function(x), dtype=float).size
    J = np.empty((m, x.size))
    for i in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp[i] += h[i]
        xm[i] -= h[i]
        fp = np.asarray(function(xp), dtype=float)
        fm = np.asarray(function(xm), dtype=float)
        J[:, i] = (fp - fm) / (2.0 * h[i])
    return J
