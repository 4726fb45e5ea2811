"""Orbit averaging and the covariance decompositions it induces.

The central operator replaces f(x) by its average over the group orbit of
x, either exactly (enumerating the group) or by Monte Carlo over k
uniformly sampled elements. On an empirical measure crossed with an
exactly enumerated group, the law of total covariance holds as an exact
matrix identity, which the decomposition helpers expose for testing.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Callable, Optional

import numpy as np

from .exceptions import CapabilityError, DimensionError
from .groups import FiniteGroup, GroupElement, apply, haar_sample

ArrayFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class OrbitAverager:
    """Configuration for exact or k-sample Monte Carlo orbit averaging.

    Monte Carlo mode draws k elements i.i.d. uniform per data point, with
    the per-point generator seeded as ``seed XOR point_index`` so that runs
    are reproducible and order-independent.
    """

    group: FiniteGroup
    mode: str = "exact"
    k: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("exact", "monte_carlo"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "exact" and not self.group.enumerated:
            raise CapabilityError("exact averaging requires an enumerated group")
        if self.mode == "monte_carlo" and (self.k is None or self.k < 1):
            raise ValueError("monte_carlo mode needs k >= 1")


@dataclass(frozen=True)
class VarianceDecomposition:
    """Exact split of a covariance into across-orbit and within-orbit parts.

    ``residual`` is the max-abs entry of
    ``cov_f - cov_fbar - mean_within_orbit_cov``; it is zero (to float
    roundoff) whenever all three matrices are computed on the same joint
    empirical measure.
    """

    cov_f: np.ndarray
    cov_fbar: np.ndarray
    mean_within_orbit_cov: np.ndarray
    residual: float


def _point_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(int(seed) ^ int(index))


def _orbit_elements(group: FiniteGroup, x: np.ndarray) -> tuple[GroupElement, ...]:
    """Elements applicable to x. Subsample selections are size-generic:
    for an input with m rows they range over all r-subsets of those rows,
    so averaging acts as the order-r subsampling operator at any size."""
    if group.kind == "subsample_semigroup":
        m = np.asarray(x).shape[0]
        r = group.subset_size
        if m < r:
            raise DimensionError(f"input has {m} rows, need at least {r}")
        if m == group.dim:
            return group.elements
        return tuple(
            GroupElement(index=i, subset=s)
            for i, s in enumerate(combinations(range(m), r))
        )
    return group.elements


def orbit_average(
    avg: OrbitAverager, f: ArrayFn, x: np.ndarray, point_index: int = 0
) -> np.ndarray:
    """Average f over the orbit of x: mean of f(gx) over group elements.

    Exact mode enumerates the group; Monte Carlo mode uses k i.i.d. draws
    seeded from (avg.seed, point_index).
    """
    x = np.asarray(x, dtype=float)
    if avg.mode == "exact":
        elements = _orbit_elements(avg.group, x)
        vals = [np.asarray(f(apply(g, x)), dtype=float) for g in elements]
    else:
        rng = _point_rng(avg.seed, point_index)
        vals = [
            np.asarray(f(apply(haar_sample(avg.group, rng), x)), dtype=float)
            for _ in range(avg.k)
        ]
    return np.mean(vals, axis=0)


def invariance_defect(
    avg: OrbitAverager, f: ArrayFn, sample_points: np.ndarray
) -> float:
    """Largest deviation of the orbit average along orbits.

    Returns max over points x and elements g of ||fbar(gx) - fbar(x)||_2.
    Zero (to 1e-10) for true groups; may be positive for semigroups, where
    it is reported rather than asserted.
    """
    if avg.mode != "exact":
        raise CapabilityError("invariance defect requires exact averaging")
    worst = 0.0
    for x in np.asarray(sample_points, dtype=float):
        base = orbit_average(avg, f, x)
        for g in _orbit_elements(avg.group, x):
            moved = orbit_average(avg, f, apply(g, x))
            worst = max(worst, float(np.linalg.norm(moved - base)))
    return worst


def _population_cov(values: np.ndarray) -> np.ndarray:
    centered = values - values.mean(axis=0)
    return centered.T @ centered / values.shape[0]


def _decomposition_from_values(values: np.ndarray) -> VarianceDecomposition:
    # values has shape (n_points, n_transforms, p)
    n, m, p = values.shape
    cov_f = _population_cov(values.reshape(n * m, p))
    fbar = values.mean(axis=1)
    cov_fbar = _population_cov(fbar)
    within = np.zeros((p, p))
    for i in range(n):
        within += _population_cov(values[i])
    within /= n
    residual = float(np.max(np.abs(cov_f - cov_fbar - within)))
    return VarianceDecomposition(cov_f, cov_fbar, within, residual)


def _stack_values(f: ArrayFn, rows) -> np.ndarray:
    vals = [np.atleast_1d(np.asarray(v, dtype=float)) for v in rows]
    return np.stack(vals)


def total_variance_decomposition(
    avg: OrbitAverager, f: ArrayFn, data: np.ndarray
) -> VarianceDecomposition:
    """Law-of-total-covariance split on the empirical measure data x group.

    cov_f is the covariance of f over all (point, element) pairs, cov_fbar
    the covariance of the per-point orbit averages, and the within term the
    mean over points of the covariance of f along each orbit. The identity
    cov_f = cov_fbar + within holds exactly on this joint measure.
    """
    if avg.mode != "exact":
        raise CapabilityError("decomposition requires exact averaging")
    data = np.asarray(data, dtype=float)
    if data.shape[0] < 2:
        raise DimensionError("need at least two data points")
    values = np.stack(
        [
            _stack_values(
                f, (apply(g, x) for g in _orbit_elements(avg.group, x))
            )
            for x in data
        ]
    )
    return _decomposition_from_values(values)


def jensen_contraction_check(
    avg: OrbitAverager,
    f: ArrayFn,
    phi: Callable[[np.ndarray], float],
    data: np.ndarray,
) -> tuple[float, float]:
    """Evaluate both sides of the orbit-average Jensen inequality.

    Returns (mean_i phi(fbar(x_i)), mean_{i,g} phi(f(g x_i))); the first is
    at most the second (up to 1e-12) for convex phi.
    """
    if avg.mode != "exact":
        raise CapabilityError("contraction check requires exact averaging")
    data = np.asarray(data, dtype=float)
    lhs = float(np.mean([phi(orbit_average(avg, f, x)) for x in data]))
    rhs = float(
        np.mean(
            [
                phi(np.asarray(f(apply(g, x)), dtype=float))
                for x in data
                for g in _orbit_elements(avg.group, x)
            ]
        )
    )
    return lhs, rhs


def finite_aug_decomposition(
    f: ArrayFn,
    group: FiniteGroup,
    k: int,
    data: np.ndarray,
    rng: np.random.Generator,
    replace: bool = True,
) -> VarianceDecomposition:
    """Covariance split for k-sample averaging with freshly drawn elements.

    Per data point, k elements are drawn i.i.d. uniform (or without
    replacement when ``replace=False`` and the group is enumerated). The
    within term becomes the mean over points of the covariance of the k
    sampled values, and the identity is exact on the realized joint
    empirical measure. With k = |G| sampled without replacement this
    recovers the exact decomposition.
    """
    if k < 1:
        raise ValueError("k must be a positive integer")
    data = np.asarray(data, dtype=float)
    values = []
    for x in data:
        if replace:
            chosen = [haar_sample(group, rng) for _ in range(k)]
        else:
            if not group.enumerated:
                raise CapabilityError("without-replacement needs enumeration")
            if k > len(group.elements):
                raise ValueError("k exceeds group order")
            idx = rng.permutation(len(group.elements))[:k]
            chosen = [group.elements[int(i)] for i in idx]
        values.append(_stack_values(f, (apply(g, x) for g in chosen)))
    return _decomposition_from_values(np.stack(values))
