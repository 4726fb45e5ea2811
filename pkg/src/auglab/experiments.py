"""Desk-scale numerical experiments with CSV/JSON reporting.

Every experiment is a pure function of (config, seed): replicate loops use
a generator derived from the seed and aggregate in a fixed order, so
re-running produces byte-identical reports.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .asymptotics import circulant_matrix
from .estimators import gaussian_mean_estimators, linreg_trio, poisson_mean_estimators
from .exceptions import DimensionError, NumericalError
from .groups import (
    FiniteGroup,
    make_cyclic_shift_group,
    make_flip_group,
    make_permutation_group,
    make_trivial_group,
)

Row = tuple[int, str, str, float]


@dataclass(frozen=True)
class ExperimentReport:
    """Per-replicate metric rows plus (mean, stderr) summaries."""

    name: str
    config: dict
    rows: list[Row]
    summary: dict[str, dict[str, float]]

    def csv_text(self) -> str:
        lines = ["experiment,rep,grid_key,metric,value"]
        for rep, key, metric, value in self.rows:
            lines.append(f"{self.name},{rep},{key},{metric},{value:.17g}")
        return "\n".join(lines) + "\n"

    def json_text(self) -> str:
        payload = {
            "experiment": self.name,
            "config": self.config,
            "rows": [
                {"rep": r, "grid_key": k, "metric": m, "value": v}
                for r, k, m, v in self.rows
            ],
            "summary": self.summary,
        }
        return json.dumps(payload, sort_keys=True)

    def to_csv(self, path: str):
        with open(path, "w") as fh:
            fh.write(self.csv_text())

    def to_json(self, path: str):
        with open(path, "w") as fh:
            fh.write(self.json_text())

    def check_finite(self):
        bad = [row for row in self.rows if not math.isfinite(row[3])]
        if bad:
            raise NumericalError(f"{len(bad)} non-finite metric values")


def _mean_stderr(values: Sequence[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=float)
    mean = float(arr.mean())
    stderr = float(arr.std(ddof=1) / math.sqrt(len(arr))) if len(arr) > 1 else 0.0
    return mean, stderr


def _summarize(rows: list[Row]) -> dict[str, dict[str, float]]:
    grouped: dict[tuple[str, str], list[float]] = {}
    for _, key, metric, value in rows:
        grouped.setdefault((key, metric), []).append(value)
    out: dict[str, dict[str, float]] = {}
    for (key, metric), values in grouped.items():
        mean, stderr = _mean_stderr(values)
        label = f"{metric}[{key}]" if key else metric
        out[label] = {"mean": mean, "stderr": stderr}
    return out


def _ratio_with_stderr(num: dict, den: dict) -> dict[str, float]:
    ratio = num["mean"] / den["mean"]
    rel = math.sqrt(
        (num["stderr"] / num["mean"]) ** 2 + (den["stderr"] / den["mean"]) ** 2
    )
    return {"mean": ratio, "stderr": abs(ratio) * rel}


# ---------------------------------------------------------------------------
# Flip-symmetric Gaussian mean


def run_flip_experiment(d: int = 100, n_reps: int = 100, seed: int = 0) -> ExperimentReport:
    """Per-coordinate MSE of the MLE vs the reversal-averaged MLE.

    One observation of a N(mu, I_d) vector per replicate, with mu drawn
    once as a symmetrized Gaussian so reversal invariance holds exactly.
    Averaging halves the per-coordinate MSE for even d.
    """
    if d < 2 or d % 2 != 0:
        raise DimensionError(f"flip experiment needs even d >= 2, got {d}")
    rng = np.random.default_rng(seed)
    group = make_flip_group(d)
    raw = rng.standard_normal(d)
    mu = (raw + raw[::-1]) / 2.0

    rows: list[Row] = []
    key = f"d={d}"
    for rep in range(n_reps):
        x = mu + rng.standard_normal(d)
        mle, amle, _ = gaussian_mean_estimators(x[None, :], group)
        rows.append((rep, key, "mse_mle", float(np.mean((mle - mu) ** 2))))
        rows.append((rep, key, "mse_amle", float(np.mean((amle - mu) ** 2))))
    summary = _summarize(rows)
    summary[f"re[{key}]"] = _ratio_with_stderr(
        summary[f"mse_mle[{key}]"], summary[f"mse_amle[{key}]"]
    )
    return ExperimentReport(
        name="flip",
        config={"d": d, "n_reps": n_reps, "seed": seed},
        rows=rows,
        summary=summary,
    )


# ---------------------------------------------------------------------------
# Poisson vector under reversal


def run_poisson_experiment(
    lambda_grid: Sequence[float] = (1.0, 5.0, 10.0),
    d: int = 100,
    n_reps: int = 200,
    seed: int = 0,
) -> ExperimentReport:
    """Relative efficiency of reversal averaging for i.i.d. Poisson coordinates.

    The constant rate vector is reversal symmetric, so invariance is exact
    and the efficiency gain is two-fold regardless of the rate.
    """
    if d < 2 or d % 2 != 0:
        raise DimensionError(f"poisson experiment needs even d >= 2, got {d}")
    rng = np.random.default_rng(seed)
    group = make_flip_group(d)
    rows: list[Row] = []
    for lam in lambda_grid:
        if lam <= 0:
            raise DimensionError(f"rate must be positive, got {lam}")
        key = f"lambda={lam:g}"
        target = np.full(d, float(lam))
        for rep in range(n_reps):
            x = rng.poisson(lam, size=d).astype(float)
            mle, amle = poisson_mean_estimators(x[None, :], group)
            rows.append((rep, key, "mse_mle", float(np.mean((mle - target) ** 2))))
            rows.append((rep, key, "mse_amle", float(np.mean((amle - target) ** 2))))
    summary = _summarize(rows)
    for lam in lambda_grid:
        key = f"lambda={lam:g}"
        summary[f"re[{key}]"] = _ratio_with_stderr(
            summary[f"mse_mle[{key}]"], summary[f"mse_amle[{key}]"]
        )
    return ExperimentReport(
        name="poisson",
        config={
            "lambda_grid": [float(v) for v in lambda_grid],
            "d": d,
            "n_reps": n_reps,
            "seed": seed,
        },
        rows=rows,
        summary=summary,
    )


# ---------------------------------------------------------------------------
# Circular-shift information trace ratio


def run_circular_experiment(
    d_grid: Sequence[int] = (4, 8, 16),
    p: int = 4,
    n_reps: int = 100,
    seed: int = 0,
) -> ExperimentReport:
    """Trace ratio of plain to shift-averaged information, expected ~ d/2.

    Per replicate the ratio p tr(XX^T)^2 / (p tr(C_X C_X^T)^2 / d^2) is
    recorded; the output width p cancels and is reported only for the
    config echo.
    """
    rng = np.random.default_rng(seed)
    rows: list[Row] = []
    for d in d_grid:
        if d < 1:
            raise DimensionError(f"dimension must be positive, got {d}")
        key = f"d={d}"
        for rep in range(n_reps):
            x = rng.standard_normal(d)
            plain = p * float(x @ x) ** 2
            circ = circulant_matrix(x)
            gram = circ @ circ.T
            averaged = p * float(np.sum(gram * gram)) / (d * d)
            rows.append((rep, key, "trace_ratio", plain / averaged))
    summary = _summarize(rows)
    for d in d_grid:
        summary[f"target[d={d}]"] = {"mean": d / 2.0, "stderr": 0.0}
    return ExperimentReport(
        name="circ",
        config={
            "d_grid": [int(v) for v in d_grid],
            "p": p,
            "n_reps": n_reps,
            "seed": seed,
        },
        rows=rows,
        summary=summary,
    )


# ---------------------------------------------------------------------------
# Linear regression trio under the permutation group


def run_linreg_experiment(
    p: int = 10,
    design: str = "identity",
    gamma: float = 1.0,
    n_reps: int = 1000,
    seed: int = 0,
) -> ExperimentReport:
    """Closed-form and Monte Carlo risks of OLS, averaged OLS and
    invariance-constrained OLS under coordinate permutations.

    The design is fixed across replicates (identity, or one Gaussian draw
    with 4p rows); the true coefficient vector is permutation invariant.
    """
    if p < 2:
        raise DimensionError(f"need p >= 2, got {p}")
    if design not in ("identity", "random"):
        raise DimensionError(f"unknown design {design!r}")
    rng = np.random.default_rng(seed)
    group = make_permutation_group(p)
    if design == "identity":
        X = np.eye(p)
    else:
        X = rng.standard_normal((4 * p, p))
    beta_true = np.ones(p) * float(rng.standard_normal())

    key = f"p={p}"
    rows: list[Row] = []
    closed: Optional[dict[str, float]] = None
    for rep in range(n_reps):
        noise = gamma * rng.standard_normal(X.shape[0])
        y = X @ beta_true + noise
        b_erm, b_adist, b_cerm, risks = linreg_trio(X, y, group, gamma=gamma)
        if closed is None:
            closed = risks
        rows.append((rep, key, "err_erm", float(np.sum((b_erm - beta_true) ** 2))))
        rows.append(
            (rep, key, "err_adist", float(np.sum((b_adist - beta_true) ** 2)))
        )
        rows.append((rep, key, "err_cerm", float(np.sum((b_cerm - beta_true) ** 2))))
    summary = _summarize(rows)
    for label, value in (closed or {}).items():
        summary[f"risk_{label}[{key}]"] = {"mean": value, "stderr": 0.0}
    return ExperimentReport(
        name="linreg",
        config={
            "p": p,
            "design": design,
            "gamma": gamma,
            "n_reps": n_reps,
            "seed": seed,
        },
        rows=rows,
        summary=summary,
    )


# ---------------------------------------------------------------------------
# Over-parameterized two-layer ReLU net trained by full-batch GD


@dataclass(frozen=True)
class ReluGdConfig:
    """Configuration of the margin-data ReLU training run.

    ``steps=None`` uses the schedule ceil(2 lambda^2 / (n eps)) with
    lambda = (sqrt(2 log(4 n |G| / delta)) + log(4 / eps)) / (gamma / 4);
    the radius rho = 4 lambda / (gamma sqrt(m)) is reported as a
    diagnostic against the observed row displacements.
    """

    n: int = 512
    width: int = 1024
    dim: int = 16
    margin: float = 0.25
    step_size: float = 1.0
    eps: float = 0.1
    delta: float = 0.05
    group_spec: str = "shift"
    steps: Optional[int] = None
    n_test: int = 2000
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.margin <= 0.5:
            raise DimensionError("margin must lie in (0, 0.5]")
        if not 0 < self.step_size <= 1.0:
            raise DimensionError("step size must lie in (0, 1]")
        if self.group_spec not in ("shift", "trivial"):
            raise DimensionError(f"unknown group {self.group_spec!r}")


def sample_margin_sphere_data(
    n: int, d: int, margin: float, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Two antipodal-cap classes on the unit sphere, shift invariant.

    Along the (shift-invariant) normalized all-ones direction u the signed
    projection is +-2*margin, so a unit-norm linear classifier separates
    every shifted copy with margin 2*margin, i.e. kernel margin ``margin``.
    """
    u = np.ones(d) / math.sqrt(d)
    labels = rng.choice([-1.0, 1.0], size=n)
    alpha = 2.0 * margin
    feats = np.empty((n, d))
    for i in range(n):
        v = rng.standard_normal(d)
        v -= (v @ u) * u
        v /= np.linalg.norm(v)
        feats[i] = alpha * labels[i] * u + math.sqrt(1.0 - alpha * alpha) * v
    return feats, labels


def train_two_layer_relu(
    X: np.ndarray,
    y: np.ndarray,
    group: FiniteGroup,
    width: int,
    steps: int,
    step_size: float,
    out_signs: np.ndarray,
    w_init: np.ndarray,
) -> dict:
    """Full-batch GD on the averaged logistic risk of m^-1/2 a^T relu(Wx).

    Only the first layer trains. Returns the best iterate (lowest averaged
    empirical risk seen), its risk, and the largest row displacement from
    the initialization.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if group.enumerated and len(group.elements) > 1:
        X_aug = np.concatenate([X @ g.matrix.T for g in group.elements])
        y_aug = np.tile(y, len(group.elements))
    else:
        X_aug, y_aug = X, y
    n_aug = X_aug.shape[0]
    scale = 1.0 / math.sqrt(width)
    W = w_init.copy()
    best_risk = math.inf
    best_W = W.copy()
    for _ in range(steps):
        pre = X_aug @ W.T
        f = np.maximum(pre, 0.0) @ out_signs * scale
        z = y_aug * f
        risk = float(np.mean(np.logaddexp(0.0, -z)))
        if risk < best_risk:
            best_risk = risk
            best_W = W.copy()
        slope = -1.0 / (1.0 + np.exp(z))  # logistic loss derivative in z
        coeff = (slope * y_aug)[:, None] * (pre > 0.0) * out_signs[None, :]
        grad = scale * coeff.T @ X_aug / n_aug
        W = W - step_size * grad
        if not np.all(np.isfinite(W)):
            raise NumericalError("weights diverged during training")
    displacement = float(np.max(np.linalg.norm(best_W - w_init, axis=1)))
    return {
        "best_W": best_W,
        "best_risk": best_risk,
        "max_row_displacement": displacement,
    }


def run_relu_gd_experiment(cfg: ReluGdConfig) -> ExperimentReport:
    """Train on margin data, report best risk and held-out error."""
    rng = np.random.default_rng(cfg.seed)
    d, m = cfg.dim, cfg.width
    group = (
        make_cyclic_shift_group(d)
        if cfg.group_spec == "shift"
        else make_trivial_group(d)
    )
    group_order = len(group.elements)
    lam = (
        math.sqrt(2.0 * math.log(4.0 * cfg.n * group_order / cfg.delta))
        + math.log(4.0 / cfg.eps)
    ) / (cfg.margin / 4.0)
    steps = cfg.steps
    if steps is None:
        steps = math.ceil(2.0 * lam * lam / (cfg.n * cfg.eps))
    rho = 4.0 * lam / (cfg.margin * math.sqrt(m))

    X, y = sample_margin_sphere_data(cfg.n, d, cfg.margin, rng)
    out_signs = rng.choice([-1.0, 1.0], size=m)
    w_init = rng.standard_normal((m, d))
    outcome = train_two_layer_relu(
        X, y, group, m, steps, cfg.step_size, out_signs, w_init
    )

    X_test, y_test = sample_margin_sphere_data(cfg.n_test, d, cfg.margin, rng)
    pre = X_test @ outcome["best_W"].T
    f = np.maximum(pre, 0.0) @ out_signs / math.sqrt(m)
    test_error = float(np.mean(np.sign(f) != y_test))

    key = f"d={d}"
    rows: list[Row] = [
        (0, key, "best_risk", outcome["best_risk"]),
        (0, key, "test_error", test_error),
        (0, key, "max_row_displacement", outcome["max_row_displacement"]),
        (0, key, "rho", rho),
        (0, key, "steps", float(steps)),
    ]
    return ExperimentReport(
        name="relu",
        config={
            "n": cfg.n,
            "width": m,
            "dim": d,
            "margin": cfg.margin,
            "step_size": cfg.step_size,
            "eps": cfg.eps,
            "delta": cfg.delta,
            "group": cfg.group_spec,
            "steps": steps,
            "seed": cfg.seed,
        },
        rows=rows,
        summary=_summarize(rows),
    )


# ---------------------------------------------------------------------------
# Spherically invariant marginal density


def run_spherical_density(
    n: int = 500,
    p: int = 10,
    bandwidth: float = 0.35,
    n_mc_rotations: int = 200,
    eval_grid: Optional[np.ndarray] = None,
    seed: int = 0,
    n_reps: int = 1,
) -> ExperimentReport:
    """Baseline vs rotation-averaged KDE of the first-coordinate density.

    Data are standard Gaussian in R^p, so the true marginal is N(0, 1).
    The rotation average replaces each kernel center x_i(1) by the law of
    ||x_i|| Z(1)/||Z||, sampled by Monte Carlo, and is compared by
    integrated squared error on the evaluation grid.
    """
    if bandwidth <= 0:
        raise DimensionError(f"bandwidth must be positive, got {bandwidth}")
    if p < 1 or n < 2:
        raise DimensionError("need p >= 1 and n >= 2")
    grid = (
        np.linspace(-4.0, 4.0, 161) if eval_grid is None else np.asarray(eval_grid)
    )
    rng = np.random.default_rng(seed)
    truth = np.exp(-0.5 * grid * grid) / math.sqrt(2.0 * math.pi)

    def gauss_kde(centers, weights):
        diffs = (grid[:, None] - centers[None, :]) / bandwidth
        dens = np.exp(-0.5 * diffs * diffs) / (bandwidth * math.sqrt(2 * math.pi))
        return dens @ weights

    def ise(est):
        return float(np.trapezoid((est - truth) ** 2, grid))

    key = f"p={p}"
    rows: list[Row] = []
    for rep in range(n_reps):
        data = rng.standard_normal((n, p))
        base = gauss_kde(data[:, 0], np.full(n, 1.0 / n))
        z = rng.standard_normal((n_mc_rotations, p))
        u = z[:, 0] / np.linalg.norm(z, axis=1)
        radii = np.linalg.norm(data, axis=1)
        centers = (radii[:, None] * u[None, :]).ravel()
        aug = gauss_kde(centers, np.full(centers.size, 1.0 / centers.size))
        rows.append((rep, key, "ise_baseline", ise(base)))
        rows.append((rep, key, "ise_augmented", ise(aug)))
    summary = _summarize(rows)
    wins = sum(
        1
        for rep in range(n_reps)
        if rows[2 * rep + 1][3] <= rows[2 * rep][3]
    )
    summary[f"augmented_win_rate[{key}]"] = {
        "mean": wins / n_reps,
        "stderr": 0.0,
    }
    return ExperimentReport(
        name="sphere",
        config={
            "n": n,
            "p": p,
            "bandwidth": bandwidth,
            "n_mc_rotations": n_mc_rotations,
            "seed": seed,
            "n_reps": n_reps,
            "grid_points": int(grid.size),
        },
        rows=rows,
        summary=summary,
    )
