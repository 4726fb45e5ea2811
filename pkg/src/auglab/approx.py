"""Bias-variance bands under approximate invariance.

When transformed data only approximately matches the original in
distribution, orbit averaging still removes within-orbit variance but
pays a bias controlled by Wasserstein-1 distances between the transformed
and original pushforwards. The checks here evaluate both sides of those
bands on empirical measures, where the inequalities hold exactly (up to
float roundoff) because the W1 duality arguments are valid per sample.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .exceptions import CapabilityError
from .groups import FiniteGroup, apply
from .wasserstein import empirical_w1

logger = logging.getLogger(__name__)

#: Points used to probe an unknown sup-norm, with a 2x safety factor.
SUP_PROBE_POINTS = 1_000_000


def _probe_sup_norm(f, sampler, rng, n_probe: int) -> float:
    worst = 0.0
    chunk = 10_000
    remaining = n_probe
    while remaining > 0:
        size = min(chunk, remaining)
        for x in np.asarray(sampler(rng, size), dtype=float):
            worst = max(worst, float(np.linalg.norm(np.atleast_1d(f(x)))))
        remaining -= size
    bound = 2.0 * worst
    logger.info("estimated sup-norm %.6g from %d probe points", bound, n_probe)
    return bound


def _population_cov(values: np.ndarray) -> np.ndarray:
    centered = values - values.mean(axis=0)
    return centered.T @ centered / values.shape[0]


def _value_stack(f, items) -> np.ndarray:
    return np.stack([np.atleast_1d(np.asarray(f(x), dtype=float)) for x in items])


def mean_shift_band(
    f: Callable[[np.ndarray], np.ndarray],
    group: FiniteGroup,
    data_sampler: Callable[[np.random.Generator, int], np.ndarray],
    n_mc: int,
    rng: np.random.Generator,
) -> tuple[float, float]:
    """Both sides of the mean-shift inequality.

    Returns (lhs, rhs) where lhs = ||E fbar - E f||_2 on the sample and rhs
    is the mean over elements of the empirical W1 between {f(g x_i)} and
    {f(x_i)}. lhs <= rhs holds exactly per draw.
    """
    if not group.enumerated:
        raise CapabilityError("band evaluation requires an enumerated group")
    points = np.asarray(data_sampler(rng, n_mc), dtype=float)
    base_vals = _value_stack(f, points)
    shift = np.zeros(base_vals.shape[1])
    rhs = 0.0
    for g in group.elements:
        gvals = _value_stack(f, (apply(g, x) for x in points))
        shift += gvals.mean(axis=0) - base_vals.mean(axis=0)
        rhs += empirical_w1(gvals, base_vals)
    m = len(group.elements)
    return float(np.linalg.norm(shift / m)), rhs / m


@dataclass(frozen=True)
class CovarianceBand:
    """Loewner-band membership report for the covariance deviation.

    ``deviation = cov(fbar) - cov(f)`` must sit within
    ``[-variance_term - halfwidth * I, -variance_term + halfwidth * I]``;
    ``slack`` is the margin (nonnegative up to roundoff), computed as
    halfwidth minus the largest absolute eigenvalue of
    ``deviation + variance_term``.
    """

    deviation: np.ndarray
    variance_term: np.ndarray
    halfwidth: float
    slack: float

    @property
    def in_band(self) -> bool:
        return self.slack >= -1e-9


def covariance_band_check(
    f: Callable[[np.ndarray], np.ndarray],
    group: FiniteGroup,
    data_sampler: Callable[[np.random.Generator, int], np.ndarray],
    n_mc: int,
    rng: np.random.Generator,
    f_sup: Optional[float] = None,
    probe_points: int = SUP_PROBE_POINTS,
) -> CovarianceBand:
    """Check the covariance band for a bounded map f.

    ``f_sup`` is the sup of ||f||_2; when omitted it is estimated from a
    probe sample with a 2x safety factor (logged). The band halfwidth is
    4 * f_sup * mean_g W1(f(gX), f(X)).
    """
    if not group.enumerated:
        raise CapabilityError("band evaluation requires an enumerated group")
    points = np.asarray(data_sampler(rng, n_mc), dtype=float)
    if f_sup is None:
        f_sup = _probe_sup_norm(f, data_sampler, rng, probe_points)
    if not np.isfinite(f_sup):
        raise CapabilityError("covariance band needs a finite sup-norm")

    base_vals = _value_stack(f, points)
    per_g = np.stack(
        [_value_stack(f, (apply(g, x) for x in points)) for g in group.elements]
    )  # (m, n, p)
    mean_w1 = float(
        np.mean([empirical_w1(gvals, base_vals) for gvals in per_g])
    )
    fbar = per_g.mean(axis=0)
    deviation = _population_cov(fbar) - _population_cov(base_vals)
    variance_term = np.mean(
        [_population_cov(per_g[:, i, :]) for i in range(points.shape[0])], axis=0
    )
    halfwidth = 4.0 * f_sup * mean_w1
    inner = (deviation + variance_term + deviation.T + variance_term.T) / 2.0
    max_abs_eig = float(np.max(np.abs(np.linalg.eigvalsh(inner))))
    return CovarianceBand(
        deviation=deviation,
        variance_term=variance_term,
        halfwidth=halfwidth,
        slack=halfwidth - max_abs_eig,
    )


@dataclass(frozen=True)
class MseTradeoff:
    """MSE difference of averaged vs plain estimator with its band.

    The proposition's band is
    ``mse_diff in [-variance_term - delta, -variance_term + delta]``.
    """

    mse_diff: float
    variance_term: float
    delta: float

    @property
    def lower(self) -> float:
        return -self.variance_term - self.delta

    @property
    def upper(self) -> float:
        return -self.variance_term + self.delta

    @property
    def in_band(self) -> bool:
        return self.lower - 1e-9 <= self.mse_diff <= self.upper + 1e-9


def mse_tradeoff(
    estimator: Callable[[np.ndarray], np.ndarray],
    group: FiniteGroup,
    dataset_sampler: Callable[[np.random.Generator], np.ndarray],
    n_mc: int,
    rng: np.random.Generator,
    theta_true: np.ndarray,
    est_sup: Optional[float] = None,
    probe_datasets: int = 1000,
) -> MseTradeoff:
    """Monte Carlo bias-variance tradeoff of estimator averaging.

    ``dataset_sampler(rng)`` draws one dataset per replicate; the group
    acts on datasets (use the dataset-action lifts for per-point groups).
    ``est_sup`` bounds ||estimator||_2 and is probed (2x safety factor)
    when omitted.
    """
    if not group.enumerated:
        raise CapabilityError("tradeoff evaluation requires an enumerated group")
    theta_true = np.atleast_1d(np.asarray(theta_true, dtype=float))
    values = np.stack(
        [
            _value_stack(
                estimator,
                (apply(g, dataset_sampler(rng)) for g in group.elements),
            )
            for _ in range(n_mc)
        ]
    )  # (n_mc, m, p)
    if est_sup is None:
        worst = 0.0
        for _ in range(probe_datasets):
            worst = max(
                worst,
                float(
                    np.linalg.norm(np.atleast_1d(estimator(dataset_sampler(rng))))
                ),
            )
        est_sup = 2.0 * worst
        logger.info(
            "estimated estimator sup-norm %.6g from %d probe datasets",
            est_sup,
            probe_datasets,
        )

    plain = values[:, 0, :]
    averaged = values.mean(axis=1)
    mse_plain = float(np.mean(np.sum((plain - theta_true) ** 2, axis=1)))
    mse_aug = float(np.mean(np.sum((averaged - theta_true) ** 2, axis=1)))
    variance_term = float(
        np.mean(
            [np.trace(_population_cov(values[j])) for j in range(n_mc)]
        )
    )
    mean_w1 = float(
        np.mean(
            [empirical_w1(values[:, g, :], plain) for g in range(values.shape[1])]
        )
    )
    bias_norm = float(np.linalg.norm(plain.mean(axis=0) - theta_true))
    delta = mean_w1 * (mean_w1 + 2.0 * bias_norm + 4.0 * est_sup)
    return MseTradeoff(
        mse_diff=mse_aug - mse_plain,
        variance_term=variance_term,
        delta=delta,
    )
