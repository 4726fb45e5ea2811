"""Minibatch SGD on the orbit-averaged empirical risk.

Each step applies one freshly sampled group transform per batch element,
so the stochastic gradient is unbiased for the gradient of the averaged
risk. Sampling is deterministic given the seed: every epoch draws one
permutation of the data indices, and every step draws one transform index
per batch element, in that order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .estimators import EstimatorResult, LossModel, expand_dataset
from .exceptions import CapabilityError
from .groups import FiniteGroup, apply, haar_sample

DIVERGENCE_NORM = 1e12


@dataclass(frozen=True)
class SgdConfig:
    """Step sizes, batching and stopping for the augmented SGD loop.

    ``schedule`` is ``constant`` (eta_t = learning_rate) or ``inv_t``
    (eta_t = learning_rate / (1 + t)). ``grad_tol`` stops early when a
    minibatch gradient norm falls below it; 0 disables the check.
    """

    learning_rate: float
    batch_size: int
    max_steps: int
    grad_tol: float = 0.0
    seed: int = 0
    schedule: str = "constant"

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch size must be at least 1")
        if self.schedule not in ("constant", "inv_t"):
            raise ValueError(f"unknown schedule {self.schedule!r}")

    def step_size(self, t: int) -> float:
        if self.schedule == "constant":
            return self.learning_rate
        return self.learning_rate / (1.0 + t)


def augmented_sgd(
    loss: LossModel,
    group: FiniteGroup,
    data: np.ndarray,
    theta0: np.ndarray,
    cfg: SgdConfig,
    return_trajectory: bool = False,
) -> EstimatorResult:
    """Run minibatch SGD with per-example random transforms.

    theta_{t+1} = theta_t - eta_t/|S_t| * sum_{i in S_t} grad L(theta_t, g_{i,t} x_i)

    Minibatches are drawn without replacement within an epoch and the data
    order is reshuffled every epoch. Divergence (iterate norm above 1e12)
    stops the run with ``converged=False``. The reported objective is the
    exact augmented empirical risk when the group is enumerated.
    """
    data = np.asarray(data, dtype=float)
    n = data.shape[0]
    if cfg.batch_size > n:
        raise ValueError(f"batch size {cfg.batch_size} exceeds n = {n}")
    rng = np.random.default_rng(cfg.seed)
    theta = np.asarray(theta0, dtype=float).copy()
    trajectory = [theta.copy()] if return_trajectory else None

    order = np.empty(0, dtype=int)
    pos = 0
    converged = False
    diverged = False
    steps_done = 0
    for t in range(cfg.max_steps):
        if pos >= len(order):
            order = rng.permutation(n)
            pos = 0
        batch_idx = order[pos : pos + cfg.batch_size]
        pos += len(batch_idx)
        grad = np.zeros(loss.param_dim)
        transforms = [haar_sample(group, rng) for _ in batch_idx]
        for g, i in zip(transforms, batch_idx):
            grad += loss.grad(theta, apply(g, data[i]))
        grad /= len(batch_idx)
        theta = theta - cfg.step_size(t) * grad
        steps_done = t + 1
        if trajectory is not None:
            trajectory.append(theta.copy())
        batch_norm = float(np.linalg.norm(grad))
        if np.linalg.norm(theta) > DIVERGENCE_NORM:
            diverged = True
            break
        if cfg.grad_tol > 0 and batch_norm <= cfg.grad_tol:
            converged = True
            break

    if group.enumerated:
        objective = loss.risk(theta, expand_dataset(group, data))
    else:
        objective = loss.risk(theta, data)
    return EstimatorResult(
        theta=theta,
        n_iter=steps_done,
        converged=converged and not diverged,
        objective=objective,
        history=np.asarray(trajectory) if trajectory is not None else None,
    )


def exact_augmented_gradient(
    loss: LossModel, group: FiniteGroup, data: np.ndarray, theta: np.ndarray
) -> np.ndarray:
    """Gradient of the exact augmented empirical risk at theta."""
    if not group.enumerated:
        raise CapabilityError("exact gradient requires an enumerated group")
    return loss.risk_grad(theta, expand_dataset(group, data))
