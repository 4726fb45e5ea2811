"""Central finite differences for gradient and Hessian checks."""

from __future__ import annotations

from typing import Callable

import numpy as np


def finite_diff_gradient(
    fn: Callable[[np.ndarray], float], theta: np.ndarray, step_scale: float = 1e-6
) -> np.ndarray:
    """Central-difference gradient with per-coordinate step h_j = s*(1+|t_j|)."""
    theta = np.asarray(theta, dtype=float)
    grad = np.zeros_like(theta)
    for j in range(theta.size):
        h = step_scale * (1.0 + abs(theta[j]))
        up, dn = theta.copy(), theta.copy()
        up[j] += h
        dn[j] -= h
        grad[j] = (fn(up) - fn(dn)) / (2.0 * h)
    return grad


def finite_diff_hessian(
    grad_fn: Callable[[np.ndarray], np.ndarray],
    theta: np.ndarray,
    step_scale: float = 1e-5,
) -> np.ndarray:
    """Central-difference Hessian from a gradient, symmetrized."""
    theta = np.asarray(theta, dtype=float)
    p = theta.size
    hess = np.zeros((p, p))
    for j in range(p):
        h = step_scale * (1.0 + abs(theta[j]))
        up, dn = theta.copy(), theta.copy()
        up[j] += h
        dn[j] -= h
        hess[:, j] = (
            np.asarray(grad_fn(up), dtype=float)
            - np.asarray(grad_fn(dn), dtype=float)
        ) / (2.0 * h)
    return (hess + hess.T) / 2.0
