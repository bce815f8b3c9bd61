"""Robust FPCA by projection pursuit, and classical FPCA.

The robust fit searches, one component at a time, for the unit-norm
direction whose projections have the largest M-scale. The search runs in
the B-spline coefficient space after an orthonormalising change of
coordinates: with ``G = B^T W B = L L^T`` and spline coefficients ``c_i``,
the coordinates ``x_i = L^T c_i`` satisfy ``<alpha, Y_i> = u^T x_i`` and
``||alpha|| = ||u||`` for ``alpha = B L^{-T} u``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .errors import GridMismatch, TruncationTooLarge, ZeroVariation
from .fd import BSplineBasis, FunctionalSample, Grid, smooth
from .scale import RHO0, LossSpec, m_scale_columns

__all__ = [
    "ComponentBasis",
    "rfpca_fit",
    "classical_fpca_fit",
    "project_scores",
    "projection_scale",
]


@dataclass(frozen=True, eq=False)
class ComponentBasis:
    """Eigenfunctions (rows, on ``grid``), eigenvalues and training scores."""

    eigenfunctions: np.ndarray
    eigenvalues: np.ndarray
    scores: np.ndarray
    grid: Grid
    method: Literal["robust", "classical"]
    total_variation: float = float("nan")

    def __post_init__(self):
        for name in ("eigenfunctions", "eigenvalues", "scores"):
            a = np.array(getattr(self, name), dtype=float)
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if self.eigenfunctions.ndim != 2 or self.eigenfunctions.shape[1] != len(self.grid):
            raise GridMismatch("eigenfunction matrix must be K x J")

    @property
    def K(self):
        return self.eigenfunctions.shape[0]

    def truncate(self, K):
        if K > self.K:
            raise TruncationTooLarge(f"basis holds {self.K} components, {K} requested")
        scores = self.scores[:, :K] if self.scores.size else self.scores.reshape(0, K)
        return ComponentBasis(
            self.eigenfunctions[:K], self.eigenvalues[:K], scores,
            self.grid, self.method, self.total_variation,
        )

    def explained(self):
        """Cumulative fraction of total variation captured by 1..K components."""
        tot = self.total_variation
        if not np.isfinite(tot) or tot <= 0:
            tot = float(np.sum(self.eigenvalues)) or 1.0
        return np.cumsum(self.eigenvalues) / tot

    def n_components_for(self, fraction=0.9, cap=None):
        frac = self.explained()
        hit = np.flatnonzero(frac >= fraction)
        K = int(hit[0]) + 1 if hit.size else self.K
        return min(K, cap) if cap is not None else K


def projection_scale(Z, spec: LossSpec = RHO0, init=None):
    """M-scale (about the column median) of each column of ``Z``."""
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    R = np.abs(Z - np.median(Z, axis=0))
    s, _, _ = m_scale_columns(R, spec, init=init, tol=1e-10)
    return s


def _check_K(K, n, J, extra=None):
    if K < 1:
        raise TruncationTooLarge("at least one component is required")
    limit = min(n - 1, J) if extra is None else min(n - 1, J, extra)
    if K > limit:
        raise TruncationTooLarge(f"K={K} exceeds the admissible maximum {limit}")


def _sign_fix(phi):
    j = np.argmax(np.abs(phi))
    return -1.0 if phi[j] < 0 else 1.0


def _complement(U, a):
    """Orthonormal basis of the complement of span([U, a])."""
    d = a.size
    M = np.eye(d) - np.outer(a, a)
    if U.shape[1]:
        M -= U @ U.T
    vals, vecs = np.linalg.eigh(M)
    return vecs[:, vals > 0.5]


class _Search:
    """Scale evaluation for candidate directions in the coordinate space."""

    def __init__(self, X, spec, scale):
        self.X = X
        self.spec = spec
        self.scale = scale

    def __call__(self, A, init=None):
        Z = self.X @ A
        if self.scale == "sd":
            return np.std(Z, axis=0, ddof=1)
        return projection_scale(Z, self.spec, init)


def _refine(search, U, a, s_a, steps, min_angle):
    """Coordinate ascent on the unit sphere with step halving."""
    delta = np.pi / 8
    for _ in range(steps):
        E = _complement(U, a)
        if E.shape[1] == 0:
            break
        c, s = np.cos(delta), np.sin(delta)
        cand = np.hstack([c * a[:, None] + s * E, c * a[:, None] - s * E])
        sc = search(cand, init=s_a)
        m = E.shape[1]
        # central differences give a tangent-space ascent direction
        g = E @ (sc[:m] - sc[m:])
        best_j = int(np.argmax(sc))
        best_dir, best_s = cand[:, best_j], sc[best_j]
        gn = np.linalg.norm(g)
        if gn > 0:
            g /= gn
            th = delta * np.array([0.25, 0.5, 1.0, 2.0])
            line = np.cos(th)[None, :] * a[:, None] + np.sin(th)[None, :] * g[:, None]
            sl = search(line, init=s_a)
            k = int(np.argmax(sl))
            if sl[k] > best_s:
                best_dir, best_s = line[:, k], sl[k]
        if best_s > s_a * (1 + 1e-13):
            a = best_dir / np.linalg.norm(best_dir)
            s_a = best_s
        else:
            delta /= 2
            if delta < min_angle:
                break
    return a, s_a


def _polish(search, Xk, a, s_a):
    """Project a direction onto the row space of the deflated coefficients.

    Projections only see the in-span part of ``a``, so dropping the rest and
    renormalising scales every projection up by ``1 / |P a|`` and cannot
    lower the objective; it removes the small out-of-span tilt that the
    flat (second-order) optimum leaves after coordinate ascent.
    """
    _, sv, Vt = np.linalg.svd(Xk, full_matrices=False)
    if sv.size == 0 or sv[0] <= 0:
        return a, s_a
    V = Vt[sv > 1e-10 * sv[0]].T
    if V.shape[1] >= Xk.shape[1]:
        return a, s_a
    b = V @ (V.T @ a)
    nb = np.linalg.norm(b)
    if nb <= 1e-12:
        return a, s_a
    b /= nb
    s_b = float(search(b[:, None])[0])
    return (b, s_b) if s_b >= s_a * (1 - 1e-10) else (a, s_a)


def rfpca_fit(
    sample: FunctionalSample,
    K: int,
    spec: LossSpec = RHO0,
    n_candidates: int = 100,
    seed: int = 0,
    n_basis: int = 20,
    scale: Literal["mscale", "sd"] = "mscale",
    refine_steps: int = 50,
    min_angle: float = 1e-5,
    fraction: float | None = None,
) -> ComponentBasis:
    """Projection-pursuit robust FPCA of a (centred) sample.

    Each component maximises the M-scale of ``<alpha, Y_i>`` over unit
    directions orthogonal to the previous ones. Candidates are the
    normalised deflated curves plus ``n_candidates`` random directions; the
    best one is refined by coordinate ascent. ``scale="sd"`` swaps in the
    standard deviation, which turns the search into classical PCA.

    With ``fraction`` set, the search stops early once the extracted
    components explain that share of the total variation, so ``K`` acts
    as an upper bound.
    """
    n, J = sample.values.shape
    basis = BSplineBasis(n_basis)
    _check_K(K, n, J, basis.n_basis)
    if np.allclose(sample.values, sample.values[0], rtol=0, atol=1e-12 * (1 + np.abs(sample.values).max())):
        raise ZeroVariation("all curves are identical")
    grid = sample.grid
    B = basis.evaluate(grid)
    G = basis.gram(grid)
    L = np.linalg.cholesky(G)
    X = smooth(sample, basis) @ L
    d = X.shape[1]
    search = _Search(X, spec, scale)
    rng = np.random.default_rng(seed)

    if scale == "sd":
        total = float(np.sum(np.var(X, axis=0, ddof=1)))
    else:
        total = float(np.sum(projection_scale(X, spec) ** 2))

    U = np.zeros((d, 0))
    lead = None
    explained = 0.0
    for k in range(K):
        P = np.eye(d) - U @ U.T
        Xk = X @ P
        norms = np.linalg.norm(Xk, axis=1)
        keep = norms > 1e-10 * max(norms.max(), 1e-300)
        cand = (Xk[keep] / norms[keep, None]).T
        if n_candidates > 0:
            Rnd = P @ rng.standard_normal((d, n_candidates))
            rn = np.linalg.norm(Rnd, axis=0)
            Rnd = Rnd[:, rn > 1e-10] / rn[rn > 1e-10]
            cand = np.hstack([cand, Rnd]) if cand.size else Rnd
        if cand.size:
            sc = search(cand)
            j = int(np.argmax(sc))
            a, s_a = cand[:, j], sc[j]
        else:
            a, s_a = None, 0.0
        if lead is None:
            lead = s_a
        if a is None or s_a <= 1e-8 * max(lead, 1e-300):
            # no variation left in the complement: any orthonormal completion will do
            E = np.linalg.eigh(P)[1][:, -1]
            a, s_a = E, 0.0
        else:
            a, s_a = _refine(search, U, a, s_a, refine_steps, min_angle)
            a, s_a = _polish(search, Xk, a, s_a)
        for _ in range(2):
            # twice is enough to restore orthogonality to round-off
            a = a - U @ (U.T @ a)
            a /= np.linalg.norm(a)
        U = np.column_stack([U, a])
        explained += s_a * s_a
        if fraction is not None and total > 0 and explained >= fraction * total:
            break

    coef = np.linalg.solve(L.T, U)
    phi = (B @ coef).T
    scores = X @ U
    signs = np.array([_sign_fix(p) for p in phi])
    phi *= signs[:, None]
    scores = scores * signs[None, :]
    if scale == "sd":
        evals = np.var(scores, axis=0, ddof=1)
    else:
        evals = projection_scale(scores, spec) ** 2
    order = np.argsort(-evals, kind="stable")
    return ComponentBasis(phi[order], evals[order], scores[:, order], grid, "robust", total)


def classical_fpca_fit(sample: FunctionalSample, K: int) -> ComponentBasis:
    """Eigendecomposition of the sample covariance operator (trapezoid weights)."""
    n, J = sample.values.shape
    _check_K(K, n, J)
    Y = sample.values
    if np.allclose(Y, Y[0], rtol=0, atol=1e-12 * (1 + np.abs(Y).max())):
        raise ZeroVariation("all curves are identical")
    w = sample.grid.weights
    sw = np.sqrt(w)
    Yc = Y - Y.mean(axis=0)
    C = Yc.T @ Yc / (n - 1)
    M = sw[:, None] * C * sw[None, :]
    vals, vecs = np.linalg.eigh((M + M.T) / 2)
    order = np.argsort(-vals)[:K]
    vals = np.maximum(vals[order], 0.0)
    phi = (vecs[:, order] / sw[:, None]).T
    signs = np.array([_sign_fix(p) for p in phi])
    phi *= signs[:, None]
    scores = Y @ (w[:, None] * phi.T)
    total = float(np.trace(M))
    return ComponentBasis(phi, vals, scores, sample.grid, "classical", total)


def project_scores(sample: FunctionalSample, basis: ComponentBasis) -> np.ndarray:
    """Quadrature inner products of each curve with each eigenfunction."""
    if sample.grid != basis.grid:
        raise GridMismatch("sample and basis live on different grids")
    return sample.values @ (sample.grid.weights[:, None] * basis.eigenfunctions.T)
