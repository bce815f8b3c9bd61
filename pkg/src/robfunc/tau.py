"""Multivariate tau-regression and ordinary least squares.

The tau-estimator minimises ``det(Sigma)`` subject to a tau-scale
constraint on the Mahalanobis distances of the residual rows. It is
computed by iterative reweighting from several starting points
(elemental subsets, least squares and a trimmed least-squares start),
the best candidate being the one with the smallest normalised
``det(Sigma)``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateErrors, InsufficientData, SingularDesign, SingularScatter
from .scale import RHO0, RHO1, LossSpec, m_scale_vector, psi, rho, tau_scale_columns

__all__ = [
    "RegressionData",
    "TauFit",
    "mahalanobis",
    "weight_fn",
    "tau_fit",
    "ls_fit",
]


@dataclass(frozen=True, eq=False)
class RegressionData:
    X: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        X = np.array(self.X, dtype=float)
        Y = np.array(self.Y, dtype=float)
        if X.ndim != 2:
            raise ValueError("X must be a 2-D design matrix")
        if Y.ndim == 1:
            Y = Y[:, None]
        if X.shape[0] != Y.shape[0]:
            raise ValueError("X and Y have different numbers of rows")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise ValueError("regression data contain non-finite entries")
        if X.shape[0] <= X.shape[1]:
            raise InsufficientData(f"n={X.shape[0]} rows for q={X.shape[1]} columns")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def q(self):
        return self.X.shape[1]

    @property
    def m(self):
        return self.Y.shape[1]


@dataclass(frozen=True, eq=False)
class TauFit:
    Theta: np.ndarray
    Sigma: np.ndarray
    weights: np.ndarray
    iterations: int
    converged: bool
    objective: float
    method: str = "tau"
    scale: float = float("nan")
    degenerate: bool = False
    objective_trace: tuple = field(default=(), repr=False)

    def residuals(self, data: RegressionData):
        return data.Y - data.X @ self.Theta


def mahalanobis(u, V):
    """``sqrt(u^T V^{-1} u)`` for a vector ``u`` or for every row of a matrix."""
    V = np.atleast_2d(np.asarray(V, dtype=float))
    u = np.asarray(u, dtype=float)
    if not np.allclose(V, V.T, rtol=1e-10, atol=1e-14 * max(1.0, np.abs(V).max())):
        raise SingularScatter("scatter matrix is not symmetric")
    try:
        Lc = np.linalg.cholesky(V)
    except np.linalg.LinAlgError:
        raise SingularScatter("scatter matrix is not positive definite") from None
    z = np.linalg.solve(Lc, np.atleast_2d(u).T)
    d = np.sqrt(np.sum(z * z, axis=0))
    return float(d[0]) if u.ndim == 1 else d


def weight_fn(d_star, spec0: LossSpec = RHO0, spec1: LossSpec = RHO1):
    """Tau-estimating weights ``w_i = [C psi_0(d_i) + D psi_1(d_i)] / d_i``.

    ``C = mean(2 rho_1(d) - psi_1(d) d)`` and ``D = mean(psi_0(d) d)``; at
    ``d = 0`` the weight takes its limit ``C + D`` (both psi have slope 1).
    """
    d = np.asarray(d_star, dtype=float)
    Cn = float(np.mean(2.0 * rho(d, spec1) - psi(d, spec1) * d))
    Dn = float(np.mean(psi(d, spec0) * d))
    w = np.empty_like(d)
    small = d < 1e-12
    ds = d[~small]
    w[~small] = (Cn * psi(ds, spec0) + Dn * psi(ds, spec1)) / ds
    w[small] = Cn + Dn
    return Cn, Dn, w


def _rank(X, rtol=1e-10):
    if X.size == 0:
        return 0
    s = np.linalg.svd(X, compute_uv=False)
    return int(np.sum(s > rtol * s[0])) if s[0] > 0 else 0


def _lstsq(X, Y, rank_needed, min_norm):
    s_tol = 1e-10
    Theta, _, rank, sv = np.linalg.lstsq(X, Y, rcond=s_tol)
    if rank < rank_needed:
        raise SingularDesign(f"design rank {rank} below required {rank_needed}")
    if not min_norm and rank < X.shape[1]:
        raise SingularDesign(f"design is rank deficient ({rank} < {X.shape[1]})")
    return Theta


def _wls(X, Y, w, rank_needed, min_norm):
    sw = np.sqrt(np.maximum(w, 0.0))
    return _lstsq(sw[:, None] * X, sw[:, None] * Y, rank_needed, min_norm)


def _safe_cholesky(S):
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        return None


def _distances(E, S):
    Lc = _safe_cholesky(S)
    if Lc is None:
        raise SingularScatter("scatter estimate lost positive definiteness")
    z = np.linalg.solve(Lc, E.T)
    return np.sqrt(np.sum(z * z, axis=0))


class _State:
    """Current iterate with the distances and M-scale it implies."""

    __slots__ = ("Theta", "Sigma", "logdet", "d", "s")

    def __init__(self, Theta, Sigma, logdet, d, s):
        self.Theta, self.Sigma, self.logdet, self.d, self.s = Theta, Sigma, logdet, d, s


class _Engine:
    def __init__(self, data, spec0, spec1, rank, min_norm, tau_target):
        self.X, self.Y = data.X, data.Y
        self.n, self.m = data.n, data.m
        self.spec0, self.spec1 = spec0, spec1
        self.rank, self.min_norm = rank, min_norm
        self.target = float(data.m if tau_target is None else tau_target)

    def mscale(self, d, init=None):
        return m_scale_vector(d, self.spec0, init)

    def normalise(self, Theta, S_star, E=None, s_init=None):
        """Rescale a scatter shape so the tau-constraint holds; return a ``_State``.

        Distances and scale under the rescaled matrix follow from those
        under ``S_star`` by equivariance, so they are stored for the next step.
        """
        if E is None:
            E = self.Y - self.X @ Theta
        d = _distances(E, S_star)
        s = self.mscale(d, s_init)
        if s <= 0:
            return None
        tau = float(tau_scale_columns(d[:, None], self.spec0, self.spec1, s=np.array([s]))[0])
        if tau <= 0:
            return None
        k = tau * tau / self.target
        Sigma = S_star * k
        sign, logdet = np.linalg.slogdet(Sigma)
        if sign <= 0:
            return None
        r = 1.0 / np.sqrt(k)
        return _State(Theta, Sigma, logdet, d * r, s * r)

    def scatter_update(self, Theta, Sigma_prev, s_init=None):
        """Weighted residual scatter at ``Theta`` using distances under ``Sigma_prev``."""
        E = self.Y - self.X @ Theta
        d = _distances(E, Sigma_prev)
        s = self.mscale(d, s_init)
        if s <= 0:
            return None, E
        ds = d / s
        _, _, w = weight_fn(ds, self.spec0, self.spec1)
        denom = s * s * np.sum(w * ds * ds)
        if denom <= 0:
            return None, E
        S_star = self.m * (E.T * w) @ E / denom
        S_star = (S_star + S_star.T) / 2
        if _safe_cholesky(S_star) is None:
            return None, E
        return S_star, E

    def step(self, st):
        """One reweighting iteration: weights -> WLS for Theta."""
        _, _, w = weight_fn(st.d / st.s, self.spec0, self.spec1)
        return _wls(self.X, self.Y, w, self.rank, self.min_norm)

    def evaluate(self, Theta, st):
        S_star, E = self.scatter_update(Theta, st.Sigma, st.s)
        if S_star is None:
            return None
        return self.normalise(Theta, S_star, E, st.s)

    def start(self, Theta):
        E = self.Y - self.X @ Theta
        r = np.linalg.norm(E, axis=1)
        half = r <= np.median(r)
        Ec = E[half] if half.sum() > self.m else E
        S0 = Ec.T @ Ec / max(len(Ec) - 1, 1)
        S0 = (S0 + S0.T) / 2
        if _safe_cholesky(S0) is None:
            S0 = S0 + np.eye(self.m) * (1e-8 * max(np.trace(S0) / self.m, 1e-300))
            if _safe_cholesky(S0) is None:
                return None
        return self.normalise(Theta, S0, E)

    def iterate(self, st, max_iter, eps, trace=None):
        it, converged = 0, False
        for it in range(1, max_iter + 1):
            try:
                T_new = self.step(st)
            except (SingularDesign, SingularScatter):
                break
            accepted = False
            step = T_new - st.Theta
            for _ in range(12):
                try:
                    new = self.evaluate(st.Theta + step, st)
                except SingularScatter:
                    new = None
                if new is not None and new.logdet <= st.logdet + 1e-10 * max(1.0, abs(st.logdet)):
                    accepted = True
                    break
                step = step / 2
            if not accepted:
                converged = True
                break
            T_old = st.Theta
            st = new
            if trace is not None:
                trace.append(st.logdet)
            scale = np.abs(T_old)
            floor = 1e-8 * max(scale.max(), 1e-300)
            if np.max(np.abs(step) / (scale + floor)) < eps:
                converged = True
                break
        return st, it, converged


def _cstep_start(data, rank, min_norm, n_steps=10):
    """Least-squares concentration steps on the half with smallest residuals."""
    X, Y = data.X, data.Y
    n, m = data.n, data.m
    h = min(n, max((n + rank + m + 1) // 2, rank + m))
    Theta = _lstsq(X, Y, rank, min_norm=True)
    prev = None
    for _ in range(n_steps):
        E = Y - X @ Theta
        if m > 1:
            S = np.cov(E.T) + 1e-12 * np.eye(m)
            try:
                d = _distances(E - E.mean(axis=0), S)
            except SingularScatter:
                d = np.linalg.norm(E, axis=1)
        else:
            d = np.abs(E[:, 0])
        keep = np.sort(np.argsort(d)[:h])
        if prev is not None and np.array_equal(keep, prev):
            break
        prev = keep
        try:
            Theta = _lstsq(X[keep], Y[keep], rank, min_norm=True)
        except SingularDesign:
            break
    return Theta


def _degenerate_fit(data, Theta, rank, min_norm):
    E = data.Y - data.X @ Theta
    r = np.linalg.norm(E, axis=1)
    tiny = 1e-9 * max(np.abs(data.Y).max(), 1.0)
    good = r <= tiny
    try:
        Theta = _lstsq(data.X[good], data.Y[good], rank, min_norm)
    except SingularDesign:
        pass
    warnings.warn("residuals vanish on most cases; scatter estimate is zero", DegenerateErrors, stacklevel=3)
    m = data.m
    return TauFit(Theta, np.zeros((m, m)), good.astype(float), 0, True, 0.0, "tau", 0.0, True)


def _is_degenerate(data, Theta):
    E = data.Y - data.X @ Theta
    r = np.linalg.norm(E, axis=1)
    tiny = 1e-9 * max(np.abs(data.Y).max(), 1.0)
    return np.mean(r <= tiny) >= 0.5


def tau_fit(
    data: RegressionData,
    spec0: LossSpec = RHO0,
    spec1: LossSpec = RHO1,
    n_subsamples: int = 50,
    eps: float = 1e-6,
    max_iter: int = 100,
    seed: int = 0,
    *,
    min_norm: bool = False,
    n_refine: int = 3,
    n_best: int = 3,
    tau_target: float | None = None,
) -> TauFit:
    """Tau-estimate of ``Theta`` in ``Y = X Theta + e``.

    Starting points: ``n_subsamples`` elemental subsets of size
    ``rank(X) + m`` plus the least-squares and concentration-step fits.
    Every start gets ``n_refine`` reweighting iterations; the ``n_best``
    lowest-objective candidates are iterated until the largest relative
    change of a ``Theta`` entry is below ``eps``.

    ``min_norm=True`` accepts a design with linearly dependent columns
    (as produced by symmetric Kronecker blocks) and returns the minimum
    norm solution; otherwise such a design raises ``SingularDesign``.
    ``tau_target`` fixes the normalisation ``tau^2(d) = tau_target`` of
    the scatter (default: the response dimension).
    """
    X, Y = data.X, data.Y
    n, q, m = data.n, data.q, data.m
    rank = _rank(X)
    if rank == 0:
        raise SingularDesign("design matrix is zero")
    if rank < q and not min_norm:
        raise SingularDesign(f"design is rank deficient ({rank} < {q})")
    if n < 2 * (rank + m):
        raise InsufficientData(f"n={n} is below 2(rank + m) = {2 * (rank + m)}")
    eng = _Engine(data, spec0, spec1, rank, min_norm, tau_target)
    rng = np.random.default_rng(seed)

    starts = [_lstsq(X, Y, rank, min_norm), _cstep_start(data, rank, min_norm)]
    for T in starts:
        if _is_degenerate(data, T):
            return _degenerate_fit(data, T, rank, min_norm)
    size = min(n, rank + m)
    tries = 0
    while len(starts) < n_subsamples + 2 and tries < 5 * n_subsamples + 10:
        tries += 1
        idx = rng.choice(n, size=size, replace=False)
        try:
            starts.append(_lstsq(X[idx], Y[idx], rank, min_norm=True))
        except SingularDesign:
            continue

    cands = []
    for T in starts:
        try:
            st = eng.start(T)
        except SingularScatter:
            continue
        if st is None:
            continue
        st, _, _ = eng.iterate(st, n_refine, eps)
        cands.append(st)
    if not cands:
        raise SingularDesign("no admissible starting point")
    cands.sort(key=lambda c: c.logdet)

    best = None
    for st in cands[:n_best]:
        trace = [st.logdet]
        st, it, conv = eng.iterate(st, max_iter, eps, trace)
        if best is None or st.logdet < best[0].logdet:
            best = (st, it, conv, trace)
    st, it, conv, trace = best
    if _is_degenerate(data, st.Theta):
        return _degenerate_fit(data, st.Theta, rank, min_norm)
    _, _, w = weight_fn(st.d / st.s, spec0, spec1)
    return TauFit(st.Theta, st.Sigma, w, it, conv, float(np.exp(st.logdet)), "tau", st.s, False,
                  tuple(trace))


def ls_fit(data: RegressionData, *, min_norm: bool = False) -> TauFit:
    """Ordinary least squares with the residual covariance as scatter."""
    X, Y = data.X, data.Y
    rank = _rank(X)
    if rank == 0:
        raise SingularDesign("design matrix is zero")
    Theta = _lstsq(X, Y, rank if min_norm else X.shape[1], min_norm)
    E = Y - X @ Theta
    dof = max(data.n - rank, 1)
    Sigma = E.T @ E / dof
    sign, logdet = np.linalg.slogdet(Sigma)
    obj = float(np.exp(logdet)) if sign > 0 else 0.0
    return TauFit(Theta, Sigma, np.ones(data.n), 0, True, obj, "ls")
