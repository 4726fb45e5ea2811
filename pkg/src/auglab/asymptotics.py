"""Asymptotic covariances of plain and augmented M-estimators.

The augmented estimator's sandwich covariance subtracts the mean
within-orbit gradient covariance from the classical one, so the relative
efficiency tr(plain)/tr(augmented) is at least 1 under exact invariance.
This module estimates both sandwiches by Monte Carlo, provides plug-in
inference, finite-sample bound checks, the tangential projection
diagnostics, and the fourth-moment tensors driving the two-layer-network
example, including the exact DFT closed form for Gaussian inputs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.stats import norm

from .estimators import LossModel, augmented_erm_fit, erm_fit
from .exceptions import CapabilityError, DimensionError, NumericalError
from .groups import FiniteGroup, apply
from .numdiff import finite_diff_hessian

#: Dense d^4 tensors are kept at or below this dimension (65,536 entries).
TENSOR_DIM_CUTOFF = 16

Sampler = Callable[[np.random.Generator, int], np.ndarray]


@dataclass(frozen=True)
class CovarianceReport:
    """Sandwich covariances of the plain and augmented estimators.

    ``sigma0 - sigmaG`` equals ``V^-1 within V^-1`` exactly as computed;
    ``relative_efficiency = tr(sigma0) / tr(sigmaG)``.
    """

    v_hat: np.ndarray
    grad_cov: np.ndarray
    within_orbit_grad_cov: np.ndarray
    sigma0: np.ndarray
    sigmaG: np.ndarray
    relative_efficiency: float

    def as_dict(self) -> dict:
        return {
            "v_hat": self.v_hat.tolist(),
            "grad_cov": self.grad_cov.tolist(),
            "within_orbit_grad_cov": self.within_orbit_grad_cov.tolist(),
            "sigma0": self.sigma0.tolist(),
            "sigmaG": self.sigmaG.tolist(),
            "relative_efficiency": self.relative_efficiency,
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict())


@dataclass(frozen=True)
class Tensor4:
    """A (row_dim^2 x col_dim^2) matrix of Kronecker-pair expectations.

    Row index packs (i, j) as i * row_dim + j and likewise for columns, the
    same layout numpy's ``kron`` produces.
    """

    entries: np.ndarray
    row_dim: int
    col_dim: int

    def as_dict(self) -> dict:
        return {
            "row_dim": self.row_dim,
            "col_dim": self.col_dim,
            "shape": list(self.entries.shape),
            "entries": np.real(self.entries).ravel().tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict())


def _symmetrize(mat: np.ndarray) -> np.ndarray:
    return (mat + mat.T) / 2.0


def _hessian_fn(loss: LossModel):
    if loss.hessian is not None:
        return loss.hessian
    return lambda theta, x: finite_diff_hessian(
        lambda t: loss.grad(t, x), theta
    )


def _checked_inverse(mat: np.ndarray, what: str) -> np.ndarray:
    if np.linalg.cond(mat) > 1e12:
        raise NumericalError(f"{what} is numerically singular")
    return np.linalg.inv(mat)


def _population_cov(values: np.ndarray) -> np.ndarray:
    centered = values - values.mean(axis=0)
    return centered.T @ centered / values.shape[0]


def estimate_sandwich(
    loss: LossModel,
    group: FiniteGroup,
    theta0: np.ndarray,
    sampler: Sampler,
    n_mc: int,
    rng: np.random.Generator,
) -> CovarianceReport:
    """Monte Carlo sandwich covariances at the population minimizer.

    Draws ``n_mc`` points from ``sampler(rng, n)``; the within-orbit
    gradient covariance is computed exactly over the enumerated group for
    each sampled point.
    """
    if not group.enumerated:
        raise CapabilityError("sandwich estimation requires an enumerated group")
    theta0 = np.asarray(theta0, dtype=float)
    points = np.asarray(sampler(rng, n_mc), dtype=float)
    hess = _hessian_fn(loss)

    p = loss.param_dim
    v_hat = np.zeros((p, p))
    grad_outer = np.zeros((p, p))
    within = np.zeros((p, p))
    for x in points:
        g0 = np.asarray(loss.grad(theta0, x), dtype=float)
        v_hat += np.asarray(hess(theta0, x), dtype=float)
        grad_outer += np.outer(g0, g0)
        orbit_grads = np.stack(
            [loss.grad(theta0, apply(g, x)) for g in group.elements]
        )
        within += _population_cov(orbit_grads)
    v_hat /= n_mc
    grad_outer /= n_mc
    within /= n_mc

    v_inv = _checked_inverse(v_hat, "estimated Hessian")
    sigma0 = _symmetrize(v_inv @ grad_outer @ v_inv)
    sigmaG = _symmetrize(sigma0 - v_inv @ within @ v_inv)
    return CovarianceReport(
        v_hat=v_hat,
        grad_cov=grad_outer,
        within_orbit_grad_cov=within,
        sigma0=sigma0,
        sigmaG=sigmaG,
        relative_efficiency=float(np.trace(sigma0) / np.trace(sigmaG)),
    )


def plugin_inference(
    loss: LossModel,
    group: FiniteGroup,
    data: np.ndarray,
    theta_hat: np.ndarray,
    alpha: float = 0.05,
    gradient_outer: str = "averaged",
) -> tuple[np.ndarray, np.ndarray]:
    """Plug-in covariance and per-coordinate confidence intervals.

    V is the mean orbit-averaged Hessian at ``theta_hat`` and the middle
    term is, by default, the mean outer product of the orbit-AVERAGED
    gradients, which is what the augmented estimator's asymptotic
    covariance requires. ``gradient_outer="plain"`` instead averages outer
    products of per-transform gradients (a consistent estimator of the
    unaugmented gradient second moment, kept for comparison).

    Returns (sigma_hat, intervals) with ``intervals[j] = (lo_j, hi_j)`` at
    level 1 - alpha.
    """
    if not group.enumerated:
        raise CapabilityError("plug-in inference requires an enumerated group")
    if gradient_outer not in ("averaged", "plain"):
        raise ValueError(f"unknown gradient_outer {gradient_outer!r}")
    data = np.asarray(data, dtype=float)
    theta_hat = np.asarray(theta_hat, dtype=float)
    n = data.shape[0]
    hess = _hessian_fn(loss)

    p = loss.param_dim
    v_hat = np.zeros((p, p))
    middle = np.zeros((p, p))
    for x in data:
        orbit_grads = np.stack(
            [loss.grad(theta_hat, apply(g, x)) for g in group.elements]
        )
        v_hat += np.mean(
            [hess(theta_hat, apply(g, x)) for g in group.elements], axis=0
        )
        if gradient_outer == "averaged":
            avg = orbit_grads.mean(axis=0)
            middle += np.outer(avg, avg)
        else:
            middle += orbit_grads.T @ orbit_grads / orbit_grads.shape[0]
    v_hat /= n
    middle /= n

    v_inv = _checked_inverse(v_hat, "plug-in Hessian")
    sigma_hat = _symmetrize(v_inv @ middle @ v_inv)
    z = norm.ppf(1.0 - alpha / 2.0)
    half = z * np.sqrt(np.clip(np.diag(sigma_hat), 0.0, None) / n)
    intervals = np.column_stack([theta_hat - half, theta_hat + half])
    return sigma_hat, intervals


@dataclass(frozen=True)
class BoundCheck:
    """Monte Carlo estimation errors against strong-convexity bounds."""

    mse_plain: float
    mse_augmented: float
    bound_plain: float
    bound_augmented: float
    stderr_plain: float
    stderr_augmented: float


def strong_convexity_bound_check(
    loss: LossModel,
    group: FiniteGroup,
    sampler: Sampler,
    theta0: np.ndarray,
    n: int,
    reps: int,
    rng: np.random.Generator,
    n_pool: int = 20_000,
) -> BoundCheck:
    """Compare E||theta_hat - theta0||^2 against 4 tr(C)/(lambda^2 n).

    The plain bound uses the gradient covariance at theta0; the augmented
    bound subtracts the mean within-orbit gradient covariance. Both traces
    are estimated from one large sample pool.
    """
    lam = loss.strong_convexity
    if lam <= 0:
        raise ValueError("loss must declare a positive strong convexity")
    theta0 = np.asarray(theta0, dtype=float)

    pool = np.asarray(sampler(rng, n_pool), dtype=float)
    grads = np.stack([loss.grad(theta0, x) for x in pool])
    trace_cov = float(np.trace(_population_cov(grads)))
    within = 0.0
    for x in pool:
        orbit = np.stack([loss.grad(theta0, apply(g, x)) for g in group.elements])
        within += float(np.trace(_population_cov(orbit)))
    within /= n_pool

    sq_plain, sq_aug = [], []
    for _ in range(reps):
        data = np.asarray(sampler(rng, n), dtype=float)
        fit = erm_fit(loss, data, init=theta0)
        fit_aug = augmented_erm_fit(loss, group, data, init=theta0)
        sq_plain.append(float(np.sum((fit.theta - theta0) ** 2)))
        sq_aug.append(float(np.sum((fit_aug.theta - theta0) ** 2)))

    scale = 4.0 / (lam * lam * n)
    return BoundCheck(
        mse_plain=float(np.mean(sq_plain)),
        mse_augmented=float(np.mean(sq_aug)),
        bound_plain=scale * trace_cov,
        bound_augmented=scale * max(trace_cov - within, 0.0),
        stderr_plain=float(np.std(sq_plain, ddof=1) / math.sqrt(reps)),
        stderr_augmented=float(np.std(sq_aug, ddof=1) / math.sqrt(reps)),
    )


def tangent_projection(invariant_basis: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Orthogonal projection onto span(basis) and onto its complement."""
    basis = np.atleast_2d(np.asarray(invariant_basis, dtype=float))
    if basis.ndim != 2:
        raise DimensionError("basis must be a p x q matrix")
    if np.linalg.matrix_rank(basis) < basis.shape[1]:
        raise NumericalError("invariant basis is rank deficient")
    proj = basis @ np.linalg.solve(basis.T @ basis, basis.T)
    return proj, np.eye(basis.shape[0]) - proj


def tangential_decomposition_check(
    loss: LossModel,
    group: FiniteGroup,
    theta0: np.ndarray,
    invariant_basis: np.ndarray,
    sampler: Sampler,
    n_mc: int,
    rng: np.random.Generator,
) -> tuple[float, float]:
    """Residuals of the two tangential-projection identities.

    Returns (a, b): a is the worst-case norm of P_G grad(gx) - P_G grad(x)
    over sampled points and elements; b is the max-abs difference between
    the mean within-orbit covariance of the gradient and of its projection
    out of the tangent space.
    """
    if not group.enumerated:
        raise CapabilityError("decomposition check requires an enumerated group")
    proj, proj_perp = tangent_projection(invariant_basis)
    theta0 = np.asarray(theta0, dtype=float)
    points = np.asarray(sampler(rng, n_mc), dtype=float)

    residual_inv = 0.0
    p = loss.param_dim
    within_full = np.zeros((p, p))
    within_perp = np.zeros((p, p))
    for x in points:
        orbit = np.stack([loss.grad(theta0, apply(g, x)) for g in group.elements])
        base = proj @ orbit[0]
        for row in orbit:
            residual_inv = max(
                residual_inv, float(np.linalg.norm(proj @ row - base))
            )
        within_full += _population_cov(orbit)
        within_perp += _population_cov(orbit @ proj_perp.T)
    within_full /= len(points)
    within_perp /= len(points)
    residual_cov = float(np.max(np.abs(within_full - within_perp)))
    return residual_inv, residual_cov


def amle_cmle_criterion(
    info: np.ndarray, info_bar: np.ndarray, p1: int
) -> tuple[np.ndarray, bool]:
    """Efficiency comparison matrix for block-decomposed parameters.

    For theta = (theta_1, theta_2) with the invariant set pinned at
    theta_2 = 0, assembles

        M = [[ inv(I_11),  K     ],
             [ K^T,        inv(Ibar) ]],   K = rows of inv(I) for theta_1,

    whose positive semidefiniteness decides whether averaging beats the
    constrained fit for estimating theta_1.
    """
    info = np.asarray(info, dtype=float)
    info_bar = np.asarray(info_bar, dtype=float)
    p = info.shape[0]
    if not 1 <= p1 <= p:
        raise DimensionError(f"block size must be in [1, {p}], got {p1}")
    info_inv = _checked_inverse(info, "information matrix")
    top_left = _checked_inverse(info[:p1, :p1], "leading information block")
    bar_inv = _checked_inverse(info_bar, "averaged information")
    upper = np.hstack([top_left, info_inv[:p1, :]])
    lower = np.hstack([info_inv[:p1, :].T, bar_inv])
    m = np.vstack([upper, lower])
    eigmin = float(np.min(np.linalg.eigvalsh(_symmetrize(m))))
    return m, eigmin >= -1e-10


# ---------------------------------------------------------------------------
# Fourth-moment tensors for the circular-shift two-layer network example


def circulant_matrix(v: np.ndarray) -> np.ndarray:
    """Circulant whose columns are the successive circular shifts of v."""
    v = np.asarray(v, dtype=float)
    d = v.shape[0]
    idx = (np.arange(d)[:, None] - np.arange(d)[None, :]) % d
    return v[idx]


def _check_tensor_dims(p: int, d: int):
    if d > TENSOR_DIM_CUTOFF or p > TENSOR_DIM_CUTOFF:
        raise CapabilityError(
            f"dense fourth-moment tensors are capped at dimension "
            f"{TENSOR_DIM_CUTOFF}; got p={p}, d={d}"
        )


def _chunked(n_total: int, chunk: int):
    start = 0
    while start < n_total:
        yield min(chunk, n_total - start)
        start += chunk


def _mean_xx_kron(
    sampler: Sampler,
    n_mc: int,
    rng: np.random.Generator,
    weight_fn=None,
    chunk: int = 8192,
) -> np.ndarray:
    """Mean of w(x) * (x x^T kron x x^T) as a d^2 x d^2 matrix."""
    total = None
    d = None
    for size in _chunked(n_mc, chunk):
        xs = np.asarray(sampler(rng, size), dtype=float)
        d = xs.shape[1]
        z = np.einsum("ni,nj->nij", xs, xs).reshape(size, d * d)
        if weight_fn is not None:
            z = z * np.sqrt(np.asarray([weight_fn(x) for x in xs]))[:, None]
        block = z.T @ z
        total = block if total is None else total + block
    return total / n_mc


def _mean_circ_kron(
    sampler: Sampler,
    n_mc: int,
    rng: np.random.Generator,
    weight_fn=None,
    chunk: int = 2048,
) -> np.ndarray:
    """Mean of w(x) * (C_x C_x^T kron C_x C_x^T) as a d^2 x d^2 matrix."""
    total = None
    d = None
    for size in _chunked(n_mc, chunk):
        xs = np.asarray(sampler(rng, size), dtype=float)
        d = xs.shape[1]
        idx = (np.arange(d)[:, None] - np.arange(d)[None, :]) % d
        circs = xs[:, idx]
        grams = circs @ circs.transpose(0, 2, 1)
        if weight_fn is None:
            weights = np.ones(size)
        else:
            weights = np.asarray([weight_fn(x) for x in xs], dtype=float)
        block = np.einsum("n,nij,nkl->ikjl", weights, grams, grams)
        block = block.reshape(d * d, d * d)
        total = block if total is None else total + block
    return total / n_mc


def fisher_tensor_2lnn(
    W: np.ndarray, sampler: Sampler, n_mc: int, rng: np.random.Generator
) -> Tensor4:
    """Information tensor (W kron W) E[XX^T kron XX^T] of the quadratic
    two-layer network, estimated by Monte Carlo."""
    W = np.asarray(W, dtype=float)
    p, d = W.shape
    _check_tensor_dims(p, d)
    fourth = _mean_xx_kron(sampler, n_mc, rng)
    return Tensor4(entries=np.kron(W, W) @ fourth, row_dim=p, col_dim=d)


def augmented_fisher_tensor_2lnn(
    W: np.ndarray, sampler: Sampler, n_mc: int, rng: np.random.Generator
) -> Tensor4:
    """Shift-averaged information tensor
    (W kron W) d^-2 E[C_X C_X^T kron C_X C_X^T], estimated by Monte Carlo."""
    W = np.asarray(W, dtype=float)
    p, d = W.shape
    _check_tensor_dims(p, d)
    fourth = _mean_circ_kron(sampler, n_mc, rng) / (d * d)
    return Tensor4(entries=np.kron(W, W) @ fourth, row_dim=p, col_dim=d)


def dft_matrix(d: int) -> np.ndarray:
    """Unitary DFT matrix, F[j, k] = exp(-2 pi i j k / d) / sqrt(d)."""
    j = np.arange(d)
    return np.exp(-2j * np.pi * np.outer(j, j) / d) / math.sqrt(d)


def circulant_fourth_moment_mc(
    d: int, n_mc: int, rng: np.random.Generator
) -> Tensor4:
    """Monte Carlo oracle for d^-2 E[C_X C_X^T kron C_X C_X^T], X ~ N(0, I)."""
    _check_tensor_dims(1, d)
    sampler = lambda r, n: r.standard_normal((n, d))
    fourth = _mean_circ_kron(sampler, n_mc, rng) / (d * d)
    return Tensor4(entries=fourth, row_dim=d, col_dim=d)


def dft_fourth_moment_closed_form(d: int) -> Tensor4:
    """Exact d^-2 E[C_X C_X^T kron C_X C_X^T] for standard Gaussian X.

    Diagonalizing the scaled circulant by the DFT reduces the expectation
    to the fourth moments of the transformed Gaussian, which pair up into
    three products of the (0/1-valued) bilinear row products of the DFT.
    The result is real up to a residue below 1e-8, which is checked.
    """
    _check_tensor_dims(1, d)
    f = dft_matrix(d)
    f2 = np.kron(f, f)
    # bilinear row products F_a^T F_b: 1 exactly when a + b = 0 mod d
    g = f @ f
    gvec = g.reshape(d * d)
    term1 = np.outer(gvec, gvec)
    term2 = np.einsum("ik,jl->ijkl", g, g).reshape(d * d, d * d)
    term3 = np.einsum("il,jk->ijkl", g, g).reshape(d * d, d * d)
    wick = term1 + term2 + term3
    tensor = f2.conj() @ ((f2 @ f2) * wick) @ f2.conj()
    residue = float(np.max(np.abs(tensor.imag)))
    if residue > 1e-8:
        raise NumericalError(f"imaginary residue {residue:.2e} exceeds 1e-8")
    return Tensor4(entries=tensor.real, row_dim=d, col_dim=d)


@dataclass(frozen=True)
class ClassificationGain:
    """Tensors of the circular-shift classification comparison.

    ``gain = erm_core - aerm_core`` measures how much the averaged fit
    shrinks the middle of the sandwich; it vanishes for the trivial group.
    """

    info_core: Tensor4
    erm_core: Tensor4
    aerm_core: Tensor4
    gain: Tensor4


def classification_gain(
    W: np.ndarray,
    eta: Callable[[float], float],
    eta_deriv: Callable[[float], float],
    sampler: Sampler,
    n_mc: int,
    rng: np.random.Generator,
    averaging: str = "circular_shift",
) -> ClassificationGain:
    """Monte Carlo cores of the classification sandwich for quadratic
    activations under circular-shift averaging.

    With f(W, x) = sum_s (w_s^T x)^2 / 2 and conditional class probability
    eta(f), the noise level is v(x) = eta(f)(1 - eta(f)) and the cores are

        info_core = (W kron W) E[eta'(f)^2        XX^T kron XX^T]
        erm_core  = (W kron W) E[v eta'(f)^2      XX^T kron XX^T]
        aerm_core = (W kron W) E[v eta'(f)^2 d^-2 C_X C_X^T kron C_X C_X^T]

    All three share one sample stream, so with ``averaging="trivial"``
    (which replaces the circulant term by the plain fourth moment) the gain
    is exactly zero.
    """
    if averaging not in ("circular_shift", "trivial"):
        raise ValueError(f"unknown averaging {averaging!r}")
    W = np.asarray(W, dtype=float)
    p, d = W.shape
    _check_tensor_dims(p, d)

    info_m = np.zeros((d * d, d * d))
    erm_m = np.zeros((d * d, d * d))
    aerm_m = np.zeros((d * d, d * d))
    shift_idx = (np.arange(d)[:, None] - np.arange(d)[None, :]) % d
    done = 0
    for size in _chunked(n_mc, 2048):
        xs = np.asarray(sampler(rng, size), dtype=float)
        fvals = 0.5 * np.sum((xs @ W.T) ** 2, axis=1)
        dpart = np.asarray([eta_deriv(f) ** 2 for f in fvals])
        vpart = np.asarray([eta(f) * (1.0 - eta(f)) for f in fvals])
        z = np.einsum("ni,nj->nij", xs, xs).reshape(size, d * d)
        info_m += (z * dpart[:, None]).T @ z
        erm_m += (z * (vpart * dpart)[:, None]).T @ z
        if averaging == "circular_shift":
            circs = xs[:, shift_idx]
            grams = circs @ circs.transpose(0, 2, 1)
            aerm_m += np.einsum(
                "n,nij,nkl->ikjl", vpart * dpart, grams, grams
            ).reshape(d * d, d * d) / (d * d)
        else:
            aerm_m += (z * (vpart * dpart)[:, None]).T @ z
        done += size
    info_m /= done
    erm_m /= done
    aerm_m /= done

    wkron = np.kron(W, W)
    return ClassificationGain(
        info_core=Tensor4(wkron @ info_m, p, d),
        erm_core=Tensor4(wkron @ erm_m, p, d),
        aerm_core=Tensor4(wkron @ aerm_m, p, d),
        gain=Tensor4(wkron @ (erm_m - aerm_m), p, d),
    )
