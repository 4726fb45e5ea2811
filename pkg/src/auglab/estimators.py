"""Estimators with and without orbit averaging.

Covers the plain empirical risk minimizer, its augmented counterpart
(fitting on orbit-averaged losses), the Gaussian-mean estimator family
(MLE / augmented / constrained), the marginal MLE for the one-dimensional
sign group, estimator averaging over transformed datasets, U-statistics,
and the closed-form linear-regression trio.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations
from typing import Callable, Optional

import numpy as np
from scipy.linalg import null_space
from scipy.optimize import minimize_scalar

from .exceptions import CapabilityError, DimensionError, NumericalError
from .groups import FiniteGroup, apply, haar_sample, is_orthogonal_action, mean_matrix
from .orbit import _point_rng


@dataclass(frozen=True)
class LossModel:
    """Per-datum loss with gradient and optional Hessian in the parameter.

    ``value(theta, x)`` returns a scalar, ``grad`` a length-p vector and
    ``hessian`` (when given) a p x p symmetric matrix. ``strong_convexity``
    is a lower bound on the Hessian eigenvalues (0 when unknown);
    ``quadratic`` marks losses whose minimizer a single Newton step solves
    exactly.
    """

    value: Callable[[np.ndarray, np.ndarray], float]
    grad: Callable[[np.ndarray, np.ndarray], np.ndarray]
    param_dim: int
    hessian: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    strong_convexity: float = 0.0
    quadratic: bool = False

    def risk(self, theta: np.ndarray, data: np.ndarray) -> float:
        return float(np.mean([self.value(theta, x) for x in data]))

    def risk_grad(self, theta: np.ndarray, data: np.ndarray) -> np.ndarray:
        return np.mean([self.grad(theta, x) for x in data], axis=0)

    def risk_hessian(self, theta: np.ndarray, data: np.ndarray) -> np.ndarray:
        if self.hessian is None:
            raise CapabilityError("loss model carries no Hessian")
        return np.mean([self.hessian(theta, x) for x in data], axis=0)


@dataclass(frozen=True)
class EstimatorResult:
    """Outcome of a fit: estimate, iteration count, convergence flag,
    attained objective, and (optionally) the iterate trajectory."""

    theta: np.ndarray
    n_iter: int
    converged: bool
    objective: float
    history: Optional[np.ndarray] = None


# ---------------------------------------------------------------------------
# Loss factories


def squared_distance_loss(d: int = 1) -> LossModel:
    """L(theta, x) = ||theta - x||^2, strongly convex with constant 2."""
    return LossModel(
        value=lambda t, x: float(np.sum((t - x) ** 2)),
        grad=lambda t, x: 2.0 * (t - x),
        hessian=lambda t, x: 2.0 * np.eye(d),
        param_dim=d,
        strong_convexity=2.0,
        quadratic=True,
    )


def gaussian_location_loss(d: int) -> LossModel:
    """Negative Gaussian log-likelihood for a unit-covariance location model."""
    return LossModel(
        value=lambda t, x: 0.5 * float(np.sum((x - t) ** 2)),
        grad=lambda t, x: t - x,
        hessian=lambda t, x: np.eye(d),
        param_dim=d,
        strong_convexity=1.0,
        quadratic=True,
    )


def logistic_loss(d: int) -> LossModel:
    """Logistic loss on data rows (features..., label) with label in {-1,+1}."""

    def margin(t, x):
        return float(x[-1]) * float(np.dot(t, x[:-1]))

    def value(t, x):
        return float(np.logaddexp(0.0, -margin(t, x)))

    def grad(t, x):
        z, y = x[:-1], float(x[-1])
        s = 1.0 / (1.0 + np.exp(margin(t, x)))
        return -y * s * z

    def hessian(t, x):
        z = x[:-1]
        m = margin(t, x)
        s = 1.0 / (1.0 + np.exp(m))
        return s * (1.0 - s) * np.outer(z, z)

    return LossModel(value=value, grad=grad, hessian=hessian, param_dim=d)


# ---------------------------------------------------------------------------
# Fitting


def _gd_minimize(risk, risk_grad, theta0, tol, max_iter):
    theta = np.asarray(theta0, dtype=float).copy()
    obj = risk(theta)
    for it in range(max_iter):
        g = risk_grad(theta)
        gnorm = float(np.linalg.norm(g))
        if gnorm <= tol:
            return theta, it, True, obj
        step = 1.0
        sq = gnorm * gnorm
        while step > 1e-16:
            cand = theta - step * g
            cand_obj = risk(cand)
            if cand_obj <= obj - 1e-4 * step * sq:
                theta, obj = cand, cand_obj
                break
            step /= 2.0
        else:
            return theta, it, False, obj
    return theta, max_iter, False, obj


def erm_fit(
    loss: LossModel,
    data: np.ndarray,
    init: Optional[np.ndarray] = None,
    tol: float = 1e-8,
    max_iter: int = 100_000,
) -> EstimatorResult:
    """Minimize the empirical risk of ``loss`` over ``data``.

    Quadratic losses with a Hessian are solved in closed form by one Newton
    step; everything else runs gradient descent with backtracking line
    search. Non-convergence is flagged on the result, not raised.
    """
    data = np.asarray(data, dtype=float)
    theta0 = (
        np.zeros(loss.param_dim) if init is None else np.asarray(init, dtype=float)
    )
    if loss.quadratic and loss.hessian is not None:
        hess = loss.risk_hessian(theta0, data)
        theta = theta0 - np.linalg.solve(hess, loss.risk_grad(theta0, data))
        grad_norm = float(np.linalg.norm(loss.risk_grad(theta, data)))
        return EstimatorResult(
            theta=theta,
            n_iter=1,
            converged=grad_norm <= max(tol, 1e-8),
            objective=loss.risk(theta, data),
        )
    theta, n_iter, converged, obj = _gd_minimize(
        lambda t: loss.risk(t, data),
        lambda t: loss.risk_grad(t, data),
        theta0,
        tol,
        max_iter,
    )
    return EstimatorResult(theta=theta, n_iter=n_iter, converged=converged, objective=obj)


def expand_dataset(
    group: FiniteGroup,
    data: np.ndarray,
    mode: str = "exact",
    k: Optional[int] = None,
    seed: int = 0,
) -> np.ndarray:
    """All transformed copies g x_i (exact) or k sampled copies per point."""
    data = np.asarray(data, dtype=float)
    if mode == "exact":
        if not group.enumerated:
            raise CapabilityError("exact expansion requires an enumerated group")
        return np.concatenate([[apply(g, x) for g in group.elements] for x in data])
    if mode == "monte_carlo":
        if k is None or k < 1:
            raise ValueError("monte_carlo expansion needs k >= 1")
        rows = []
        for i, x in enumerate(data):
            rng = _point_rng(seed, i)
            rows.extend(apply(haar_sample(group, rng), x) for _ in range(k))
        return np.asarray(rows)
    raise ValueError(f"unknown mode {mode!r}")


def augmented_erm_fit(
    loss: LossModel,
    group: FiniteGroup,
    data: np.ndarray,
    init: Optional[np.ndarray] = None,
    tol: float = 1e-8,
    mode: str = "exact",
    k: Optional[int] = None,
    seed: int = 0,
    max_iter: int = 100_000,
) -> EstimatorResult:
    """Minimize the orbit-averaged empirical risk.

    For enumerated groups this is exactly the plain fit on the group
    expanded dataset; Monte Carlo mode fixes k sampled transforms per point
    (seeded per point) and fits that surrogate.
    """
    expanded = expand_dataset(group, data, mode=mode, k=k, seed=seed)
    return erm_fit(loss, expanded, init=init, tol=tol, max_iter=max_iter)


def gaussian_mean_estimators(
    data: np.ndarray, group: FiniteGroup
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """MLE, augmented MLE and constrained MLE for a Gaussian location model.

    Requires an orthogonal linear action. The augmented and constrained
    estimators coincide: both project the sample mean with the mean matrix,
    which is the orthogonal projection onto the invariant subspace.
    """
    if not is_orthogonal_action(group):
        raise CapabilityError("estimators need an orthogonal linear action")
    data = np.atleast_2d(np.asarray(data, dtype=float))
    mle = data.mean(axis=0)
    proj = mean_matrix(group)
    amle = proj @ mle
    cmle = proj @ mle
    return mle, amle, cmle


def marginal_mle_1d(data: np.ndarray, tol: float = 1e-8) -> EstimatorResult:
    """Marginal MLE for the two-component location mixture of the sign group.

    Maximizes sum_i log(0.5 * [phi(x_i - t) + phi(x_i + t)]) over t >= 0 by
    a coarse grid scan followed by bounded refinement. The likelihood is
    even in t, so the nonnegative representative is returned.
    """
    data = np.asarray(data, dtype=float).ravel()
    if data.size == 0:
        raise DimensionError("marginal MLE needs at least one observation")

    def neg_ll(t):
        return -float(
            np.sum(np.logaddexp(-0.5 * (data - t) ** 2, -0.5 * (data + t) ** 2))
        )

    hi = float(np.max(np.abs(data))) + 5.0
    grid = np.linspace(0.0, hi, 256)
    best = grid[int(np.argmin([neg_ll(t) for t in grid]))]
    lo = max(0.0, best - hi / 255.0)
    up = min(hi, best + hi / 255.0)
    res = minimize_scalar(
        neg_ll, bounds=(lo, up), method="bounded", options={"xatol": tol}
    )
    theta = float(res.x)
    if neg_ll(0.0) <= neg_ll(theta):
        theta = 0.0
    return EstimatorResult(
        theta=np.array([theta]),
        n_iter=int(res.nfev),
        converged=bool(res.success),
        objective=neg_ll(theta),
    )


def augment_estimator(
    base: Callable[[np.ndarray], np.ndarray],
    group: FiniteGroup,
    data: np.ndarray,
    k: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """Average an arbitrary estimator over group-transformed datasets.

    With ``k=None`` the group is enumerated exactly; otherwise the mean of
    base over k sampled transforms is returned.
    """
    data = np.asarray(data, dtype=float)
    if k is None:
        if not group.enumerated:
            raise CapabilityError("exact averaging requires an enumerated group")
        vals = [np.asarray(base(apply(g, data)), dtype=float) for g in group.elements]
    else:
        if rng is None:
            raise ValueError("sampled averaging needs an rng")
        vals = [
            np.asarray(base(apply(haar_sample(group, rng), data)), dtype=float)
            for _ in range(k)
        ]
    return np.mean(vals, axis=0)


def u_statistic(
    kernel: Callable[[np.ndarray], float],
    data: np.ndarray,
    r: int,
    mode: str = "exact",
    n_samples: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """Order-r U-statistic: average of the kernel over r-subsets of the data.

    The kernel receives the selected rows stacked in index order. Exact
    mode enumerates all C(n, r) subsets; monte_carlo draws ``n_samples``
    subsets uniformly.
    """
    data = np.asarray(data, dtype=float)
    n = data.shape[0]
    if not 1 <= r <= n:
        raise DimensionError(f"need 1 <= r <= n, got r={r}, n={n}")
    if mode == "exact":
        total = math.comb(n, r)
        if total > 10_000_000:
            raise CapabilityError(f"C({n},{r}) = {total} too large to enumerate")
        return float(
            np.mean([kernel(data[list(idx)]) for idx in combinations(range(n), r)])
        )
    if mode == "monte_carlo":
        if n_samples is None or rng is None:
            raise ValueError("monte_carlo mode needs n_samples and rng")
        vals = [
            kernel(data[np.sort(rng.choice(n, size=r, replace=False))])
            for _ in range(n_samples)
        ]
        return float(np.mean(vals))
    raise ValueError(f"unknown mode {mode!r}")


def invariant_subspace_basis(group: FiniteGroup, tol: float = 1e-10) -> np.ndarray:
    """Orthonormal basis of {v : g^T v = v for all g}.

    Computed as the null space of the stacked (g^T - I) matrices; the
    all-ones direction is used in closed form for sampler-backed
    permutation groups.
    """
    p = group.dim
    if not group.enumerated:
        if group.kind == "permutation":
            return np.ones((p, 1)) / math.sqrt(p)
        raise CapabilityError(f"no invariant-subspace rule for {group.kind}")
    mats = [g.matrix for g in group.elements]
    if any(m is None for m in mats):
        raise CapabilityError("invariant subspace needs a linear action")
    stacked = np.concatenate([m.T - np.eye(p) for m in mats])
    basis = null_space(stacked, rcond=tol)
    if basis.shape[1] == 0:
        raise CapabilityError("invariant subspace is trivial ({0})")
    return basis


def linreg_trio(
    X: np.ndarray, y: np.ndarray, group: FiniteGroup, gamma: float = 1.0
) -> tuple[np.ndarray, np.ndarray, np.ndarray, dict[str, float]]:
    """OLS, its transform-averaged version, and invariance-constrained OLS.

    The averaged estimator has the closed form (mean matrix)^T @ beta_ols,
    valid for any invertible linear action under the uniform measure, so it
    works even for permutation groups too large to enumerate. The
    constrained fit restricts the coefficients to the invariant subspace.
    Risks under noise s.d. ``gamma`` come from the spectral closed forms.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    xtx = X.T @ X
    if np.linalg.cond(xtx) > 1e12:
        raise NumericalError("design matrix is numerically singular")
    beta_erm = np.linalg.solve(xtx, X.T @ y)
    gmean = mean_matrix(group)
    beta_adist = gmean.T @ beta_erm
    basis = invariant_subspace_basis(group)
    core = basis.T @ xtx @ basis
    beta_cerm = basis @ np.linalg.solve(core, basis.T @ (X.T @ y))

    eigvals, eigvecs = np.linalg.eigh(xtx)
    var = gamma * gamma
    risks = {
        "erm": var * float(np.sum(1.0 / eigvals)),
        "adist": var
        * float(
            np.sum(
                np.linalg.norm(gmean.T @ eigvecs, axis=0) ** 2 / eigvals
            )
        ),
        "cerm": var * float(np.trace(np.linalg.inv(core))),
    }
    return beta_erm, beta_adist, beta_cerm, risks


# ---------------------------------------------------------------------------
# Exponential families (Gaussian mean, i.i.d. Poisson vector)


@dataclass(frozen=True)
class ExponentialFamily:
    """Minimal natural-parameter exponential family interface."""

    name: str
    suff_stat: Callable[[np.ndarray], np.ndarray]
    natural_to_mean: Callable[[np.ndarray], np.ndarray]
    mean_to_natural: Callable[[np.ndarray], np.ndarray]


def gaussian_family(d: int) -> ExponentialFamily:
    return ExponentialFamily(
        name="gaussian",
        suff_stat=lambda x: np.asarray(x, dtype=float),
        natural_to_mean=lambda t: np.asarray(t, dtype=float),
        mean_to_natural=lambda m: np.asarray(m, dtype=float),
    )


def poisson_family(d: int) -> ExponentialFamily:
    return ExponentialFamily(
        name="poisson",
        suff_stat=lambda x: np.asarray(x, dtype=float),
        natural_to_mean=lambda t: np.exp(np.asarray(t, dtype=float)),
        mean_to_natural=lambda m: np.log(np.asarray(m, dtype=float)),
    )


def exp_family_amle(
    family: ExponentialFamily, data: np.ndarray, group: FiniteGroup
) -> np.ndarray:
    """Augmented MLE in the natural parametrization.

    The fitted mean parameter is the orbit-averaged mean sufficient
    statistic; the natural parameter is its inverse-link image.
    """
    data = np.atleast_2d(np.asarray(data, dtype=float))
    stat_mean = np.mean([family.suff_stat(x) for x in data], axis=0)
    averaged = mean_matrix(group) @ stat_mean
    return family.mean_to_natural(averaged)


def poisson_mean_estimators(
    data: np.ndarray, group: FiniteGroup
) -> tuple[np.ndarray, np.ndarray]:
    """Mean-scale MLE and augmented MLE for an i.i.d. Poisson vector."""
    data = np.atleast_2d(np.asarray(data, dtype=float))
    mle = data.mean(axis=0)
    return mle, mean_matrix(group) @ mle
