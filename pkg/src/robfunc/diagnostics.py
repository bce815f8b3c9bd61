"""Residual-based outlier detection and evaluation metrics.

Outliers are detected with the h-modal depth of the residual curves and a
cutoff calibrated by a smoothed bootstrap of the deeper curves. Estimation
and prediction quality are measured by the relative integrated squared
error of coefficient surfaces, the mean squared prediction error and the
area under the ROC curve.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats

from .errors import GridMismatch, InsufficientData, UndefinedAUC, ZeroTruth
from .fd import FunctionalSample, Grid, trapezoid_weights

__all__ = [
    "DepthReport",
    "pairwise_l2",
    "hmodal_depth",
    "default_bandwidth",
    "fgg_detect",
    "risee",
    "risee_bar",
    "mspe",
    "auc",
]


def pairwise_l2(curves: FunctionalSample) -> np.ndarray:
    """Matrix of L2 distances between all pairs of curves (trapezoid rule)."""
    V = curves.values
    w = curves.grid.weights
    Vw = V * np.sqrt(w)
    sq = np.sum(Vw * Vw, axis=1)
    D2 = sq[:, None] + sq[None, :] - 2.0 * Vw @ Vw.T
    np.fill_diagonal(D2, 0.0)
    return np.sqrt(np.maximum(D2, 0.0))


def default_bandwidth(D: np.ndarray, quantile: float = 0.15) -> float:
    """The ``quantile`` of the off-diagonal pairwise distances."""
    iu = np.triu_indices_from(D, k=1)
    return float(np.quantile(D[iu], quantile))


def _kernel(u):
    return np.exp(-0.5 * u * u) / np.sqrt(2.0 * np.pi)


def hmodal_depth(curves: FunctionalSample, h: float | None = None) -> np.ndarray:
    """``depth_i = sum_j K(||x_i - x_j|| / h)`` with a Gaussian kernel ``K``.

    The sum runs over all ``j`` including ``i``. By default ``h`` is the
    15th percentile of the pairwise distances.
    """
    if curves.n < 2:
        raise InsufficientData("depth needs at least two curves")
    D = pairwise_l2(curves)
    if h is None:
        h = default_bandwidth(D)
        if h <= 0:
            h = float(np.max(D)) or 1.0
    if not h > 0:
        raise ValueError("bandwidth h must be positive")
    return np.sum(_kernel(D / h), axis=1)


def _depth_against(points, reference, w, h):
    """Depths of ``points`` relative to the sample ``reference``."""
    A = points * np.sqrt(w)
    B = reference * np.sqrt(w)
    D2 = np.sum(A * A, 1)[:, None] + np.sum(B * B, 1)[None, :] - 2.0 * A @ B.T
    return np.sum(_kernel(np.sqrt(np.maximum(D2, 0.0)) / h), axis=1)


@dataclass(frozen=True, eq=False)
class DepthReport:
    depths: np.ndarray
    cutoff: float
    flagged: np.ndarray
    bandwidth: float = float("nan")

    @property
    def outliers(self):
        return np.flatnonzero(self.flagged)

    def to_csv(self, path):
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "depth", "flagged"])
            for i, (d, f) in enumerate(zip(self.depths, self.flagged)):
                w.writerow([i, f"{d:.10g}", int(f)])
        return path


def fgg_detect(
    residuals: FunctionalSample,
    n_boot: int = 200,
    trim: float = 0.1,
    seed: int = 0,
    *,
    quantile: float = 0.01,
    smoothing: float = 0.05,
    h: float | None = None,
) -> DepthReport:
    """Flag curves whose h-modal depth falls below a bootstrap cutoff.

    The shallowest ``trim`` fraction is removed; each bootstrap sample is
    drawn with replacement from the remaining curves and perturbed with
    Gaussian noise whose covariance is ``smoothing`` times the sample
    covariance of the retained curves. The cutoff is the median over
    resamples of the ``quantile`` of the resampled depths, each taken
    with respect to its own resample. With ``n_boot = 0`` the cutoff is
    the ``quantile`` of the observed depths.
    """
    n = residuals.n
    if n < 10:
        raise InsufficientData("outlier detection needs at least 10 curves")
    V = residuals.values
    w = residuals.grid.weights
    D = pairwise_l2(residuals)
    if h is None:
        h = default_bandwidth(D)
        if h <= 0:
            h = float(np.max(D)) or 1.0
    depths = np.sum(_kernel(D / h), axis=1)
    if n_boot <= 0:
        cutoff = float(np.quantile(depths, quantile))
        return DepthReport(depths, cutoff, depths < cutoff, h)

    rng = np.random.default_rng(seed)
    keep = np.argsort(depths)[int(np.floor(trim * n)):]
    Xk = V[keep]
    Xc = Xk - Xk.mean(axis=0)
    m = len(keep)
    cuts = np.empty(n_boot)
    for b in range(n_boot):
        idx = rng.integers(0, m, size=n)
        # Gaussian noise with covariance smoothing * cov(Xk), via a random mix of centred rows
        Z = rng.standard_normal((n, m))
        noise = np.sqrt(smoothing) * (Z @ Xc) / np.sqrt(max(m - 1, 1))
        Yb = Xk[idx] + noise
        db = _depth_against(Yb, Yb, w, h)
        cuts[b] = np.quantile(db, quantile)
    cutoff = float(np.median(cuts))
    return DepthReport(depths, cutoff, depths < cutoff, h)


def _surface_weights(shape_grids):
    W = None
    for g in shape_grids:
        w = g.weights if isinstance(g, Grid) else trapezoid_weights(g)
        W = w if W is None else np.multiply.outer(W, w)
    return W


def _sq_norm(F, grids):
    return float(np.sum(F * F * _surface_weights(grids)))


def risee(beta_true, beta_hat, grid_s: Grid | None = None, grid_t: Grid | None = None) -> float:
    """``||beta - beta_hat||^2 / ||beta||^2`` with the 2-D trapezoid rule."""
    beta_true = np.asarray(beta_true, dtype=float)
    beta_hat = np.asarray(beta_hat, dtype=float)
    if beta_true.shape != beta_hat.shape or beta_true.ndim != 2:
        raise GridMismatch("surfaces must be matrices of the same shape")
    gs = grid_s or Grid.uniform(beta_true.shape[0])
    gt = grid_t or Grid.uniform(beta_true.shape[1])
    if (len(gs), len(gt)) != beta_true.shape:
        raise GridMismatch("surface shape does not match the grids")
    den = _sq_norm(beta_true, (gs, gt))
    if den <= 0:
        raise ZeroTruth("true surface has zero norm")
    return _sq_norm(beta_true - beta_hat, (gs, gt)) / den


def risee_bar(values) -> float:
    """Median over replications (rows) for each surface (column), then the mean.

    ``values`` is ``reps x P``; replications with missing values (NaN) are
    ignored surface by surface.
    """
    V = np.atleast_2d(np.asarray(values, dtype=float))
    return float(np.mean(np.nanmedian(V, axis=0)))


def mspe(truth, pred) -> float:
    """Mean over subjects of the squared L2 norm of the prediction error."""
    if isinstance(truth, FunctionalSample) and isinstance(pred, FunctionalSample):
        if truth.grid != pred.grid:
            raise GridMismatch("truth and prediction are on different grids")
        grid = truth.grid
        A, B = truth.values, pred.values
    else:
        grid = truth.grid if isinstance(truth, FunctionalSample) else (
            pred.grid if isinstance(pred, FunctionalSample) else None)
        A = truth.values if isinstance(truth, FunctionalSample) else np.asarray(truth, dtype=float)
        B = pred.values if isinstance(pred, FunctionalSample) else np.asarray(pred, dtype=float)
        if grid is None:
            grid = Grid.uniform(np.atleast_2d(A).shape[-1])
    A, B = np.atleast_2d(A), np.atleast_2d(B)
    if A.shape != B.shape:
        raise GridMismatch(f"shape mismatch {A.shape} vs {B.shape}")
    if A.shape[1] != len(grid):
        raise GridMismatch("curves do not match the grid")
    E = A - B
    return float(np.mean((E * E) @ grid.weights))


def auc(scores, labels) -> float:
    """Mann-Whitney AUC: ``P(score_pos > score_neg) + 0.5 P(tie)``."""
    s = np.asarray(scores, dtype=float).ravel()
    y = np.asarray(labels, dtype=bool).ravel()
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    n1 = int(y.sum())
    n0 = y.size - n1
    if n1 == 0 or n0 == 0:
        raise UndefinedAUC("both classes must be present")
    r = stats.rankdata(s)
    return float((r[y].sum() - n1 * (n1 + 1) / 2.0) / (n1 * n0))
