"""Bounded loss functions, M-scale and tau-scale estimators.

The loss is the Beaton-Tukey biweight

    rho_c(u) = u^2/2 (1 - u^2/c^2 + u^4/(3 c^4))   for |u| <= c
             = c^2/6                               otherwise

whose derivative ``psi`` satisfies ``psi'(0) = 1``. ``LossSpec.delta`` is
the M-scale target expressed as a fraction of ``sup rho = c^2/6``, so the
scale equation reads ``mean(rho(r / s)) = delta * c^2 / 6``; with
``c = 1.56`` and ``delta = 0.5`` this gives the usual 50%-breakdown,
normal-consistent M-scale.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Literal, NamedTuple

import numpy as np
from scipy import integrate, stats

__all__ = [
    "LossSpec",
    "MScaleResult",
    "rho",
    "psi",
    "normal_expectation",
    "m_scale",
    "m_scale_columns",
    "m_scale_vector",
    "tau_scale",
    "c6_margin",
    "RHO0",
    "RHO1",
]


def _rho(u, c):
    u = np.asarray(u, dtype=float)
    a = np.minimum(np.abs(u) / c, 1.0)
    a2 = a * a
    # c^2/6 * (3a^2 - 3a^4 + a^6) equals the biweight polynomial and hits c^2/6 at a = 1
    return (c * c / 6.0) * a2 * (3.0 - 3.0 * a2 + a2 * a2)


@lru_cache(maxsize=64)
def normal_expectation(c: float) -> float:
    """E[rho_c(Z)] for Z standard normal (unnormalised loss)."""
    f = lambda u: _rho(u, c) * stats.norm.pdf(u)  # noqa: E731
    inside, _ = integrate.quad(f, -c, c, epsabs=1e-13, epsrel=1e-13)
    return inside + (c * c / 6.0) * 2.0 * stats.norm.sf(c)


@dataclass(frozen=True)
class LossSpec:
    """Biweight loss with tuning constant ``c`` and normalised target ``delta``."""

    c: float
    delta: float
    kind: Literal["rho0", "rho1"] = "rho0"

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError("tuning constant c must be positive")
        if not 0 < self.delta < 1:
            raise ValueError("delta is a fraction of sup(rho) and must lie in (0, 1)")

    @property
    def sup(self) -> float:
        return self.c * self.c / 6.0

    @property
    def target(self) -> float:
        """Right-hand side of the M-scale equation on the unnormalised scale."""
        return self.delta * self.sup

    @classmethod
    def rho0(cls, c=1.56, delta=0.5):
        return cls(c, delta, "rho0")

    @classmethod
    def rho1(cls, c=6.08, delta=None):
        if delta is None:
            # calibrated so that delta * sup equals E[rho_1(Z)] under normality
            delta = float(normal_expectation(float(c)) / (c * c / 6.0))
        return cls(c, delta, "rho1")


RHO0 = LossSpec.rho0()
RHO1 = LossSpec.rho1()


class MScaleResult(NamedTuple):
    sigma: float
    iterations: int
    converged: bool


def rho(u, spec: LossSpec = RHO0):
    return _rho(u, spec.c)


def psi(u, spec: LossSpec = RHO0):
    u = np.asarray(u, dtype=float)
    t = 1.0 - (u / spec.c) ** 2
    return np.where(np.abs(u) <= spec.c, u * t * t, 0.0)


def _psi_u(u, c):
    # psi(u) * u, vectorised, for |u| already taken
    t = 1.0 - (u / c) ** 2
    return np.where(u <= c, u * u * t * t, 0.0)


def m_scale_columns(R, spec: LossSpec = RHO0, init=None, tol=1e-9, max_iter=200):
    """Vectorised M-scale of the columns of a matrix of absolute residuals.

    ``R`` is ``n x m`` with non-negative entries; returns an ``m``-vector.
    The solver works on ``v = log(sigma)`` with safeguarded Newton steps
    inside a bracket, falling back to the fixed-point update
    ``sigma^2 <- sigma^2 mean(rho(r/sigma)) / target``.
    """
    R = np.abs(np.asarray(R, dtype=float))
    if R.ndim == 1:
        R = R[:, None]
    n, m = R.shape
    c, b = spec.c, spec.target
    sigma = np.zeros(m)
    nonzero_frac = np.mean(R > 0, axis=0)
    # with at most a delta-fraction of non-zero residuals the equation has root -> 0
    live = nonzero_frac * spec.sup > b * (1 + 1e-12)
    if not np.any(live):
        return sigma, 0, np.ones(m, dtype=bool)
    Rl = R[:, live]
    if init is None:
        s0 = np.median(Rl, axis=0) * 1.4826
        bad = s0 <= 0
        if np.any(bad):
            s0[bad] = np.mean(Rl[:, bad], axis=0) * 2.0
    else:
        s0 = np.broadcast_to(np.asarray(init, dtype=float), (m,))[live].copy()
        bad = ~(s0 > 0)
        if np.any(bad):
            s0[bad] = np.median(Rl[:, bad], axis=0) * 1.4826 + np.mean(Rl[:, bad], axis=0)
    v = np.log(s0)
    lo = np.full(v.shape, -np.inf)
    hi = np.full(v.shape, np.inf)
    done = np.zeros(v.shape, dtype=bool)
    it = 0
    for it in range(1, max_iter + 1):
        idx = np.flatnonzero(~done)
        if idx.size == 0:
            it -= 1
            break
        s = np.exp(v[idx])
        U = Rl[:, idx] / s
        mr = np.mean(_rho(U, c), axis=0)
        F = mr / b - 1.0
        conv = np.abs(F) <= tol
        done[idx[conv]] = True
        act = ~conv
        if not np.any(act):
            continue
        idx, F, U, mr = idx[act], F[act], U[:, act], mr[act]
        lo[idx] = np.where(F > 0, v[idx], lo[idx])
        hi[idx] = np.where(F < 0, v[idx], hi[idx])
        dF = np.mean(_psi_u(U, c), axis=0) / b
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = v[idx] + F / dF
        fixed = v[idx] + 0.5 * np.log(np.maximum(mr, 1e-300) / b)
        cand = np.where((dF > 1e-12) & np.isfinite(newton), newton, fixed)
        cand = np.clip(cand, v[idx] - 2.0, v[idx] + 2.0)
        l, h = lo[idx], hi[idx]
        outside = (cand <= l) | (cand >= h)
        both = np.isfinite(l) & np.isfinite(h)
        cand = np.where(outside & both, 0.5 * (l + h), cand)
        cand = np.where(outside & ~both, fixed, cand)
        v[idx] = cand
    sigma[live] = np.exp(v)
    converged = np.ones(m, dtype=bool)
    converged[live] = done
    return sigma, it, converged


def m_scale_vector(r, spec: LossSpec = RHO0, init: float | None = None, tol=1e-10, max_iter=200) -> float:
    """M-scale of one vector of absolute residuals (scalar fast path).

    Same safeguarded Newton iteration on ``log(sigma)`` as
    :func:`m_scale_columns`, without the per-column bookkeeping; a good
    ``init`` (for instance the scale from a previous iteration) usually
    converges in two or three steps.
    """
    r = np.abs(np.asarray(r, dtype=float).ravel())
    c, b = spec.c, spec.target
    if np.count_nonzero(r) * spec.sup <= b * (1 + 1e-12) * r.size:
        return 0.0
    s0 = init if init is not None and init > 0 else 1.4826 * float(np.median(r))
    if not s0 > 0:
        s0 = 2.0 * float(np.mean(r))
    v, lo, hi = np.log(s0), -np.inf, np.inf
    cc = c * c / 6.0
    for _ in range(max_iter):
        a = np.minimum(r * (np.exp(-v) / c), 1.0)
        a2 = a * a
        t = 1.0 - a2
        mr = cc * float(np.dot(a2, 3.0 - 3.0 * a2 + a2 * a2)) / r.size
        F = mr / b - 1.0
        if abs(F) <= tol:
            break
        if F > 0:
            lo = v
        else:
            hi = v
        # mean(psi(u) u) with u = r / sigma, from a = u / c
        dF = c * c * float(np.dot(a2, t * t)) / (r.size * b)
        fixed = v + 0.5 * np.log(max(mr, 1e-300) / b)
        cand = v + F / dF if dF > 1e-12 else fixed
        cand = min(max(cand, v - 2.0), v + 2.0)
        if cand <= lo or cand >= hi:
            cand = 0.5 * (lo + hi) if np.isfinite(lo) and np.isfinite(hi) else fixed
        v = cand
    return float(np.exp(v))


def m_scale(z, mu=0.0, spec: LossSpec = RHO0, tol=1e-9, max_iter=200) -> MScaleResult:
    """M-estimate of scale of ``z - mu``.

    Returns ``sigma = 0`` (converged) when the residuals are all zero or so
    concentrated at ``mu`` that the scale equation has no positive root.
    """
    z = np.asarray(z, dtype=float).ravel()
    if z.size == 0:
        raise ValueError("m_scale needs at least one observation")
    r = np.abs(z - mu)
    sigma, it, conv = m_scale_columns(r[:, None], spec, tol=tol, max_iter=max_iter)
    return MScaleResult(float(sigma[0]), int(it), bool(conv[0]))


def tau_scale(z, spec0: LossSpec = RHO0, spec1: LossSpec = RHO1) -> float:
    """Normal-calibrated tau-scale of ``z`` (about zero).

    ``tau^2 = s^2 mean(rho_1(z / s)) / E[rho_1(Z)]`` where ``s`` is the
    M-scale built on ``spec0``; the divisor makes ``tau -> 1`` for standard
    normal samples.
    """
    z = np.asarray(z, dtype=float).ravel()
    s = m_scale(z, 0.0, spec0).sigma
    if s == 0:
        return 0.0
    return float(s * np.sqrt(np.mean(rho(z / s, spec1)) / spec1.target))


def tau_scale_columns(R, spec0: LossSpec = RHO0, spec1: LossSpec = RHO1, s=None):
    R = np.abs(np.asarray(R, dtype=float))
    if s is None:
        s, _, _ = m_scale_columns(R, spec0)
    s = np.asarray(s, dtype=float)
    out = np.zeros(R.shape[1])
    pos = s > 0
    if np.any(pos):
        out[pos] = s[pos] * np.sqrt(
            np.mean(rho(R[:, pos] / s[pos], spec1), axis=0) / spec1.target
        )
    return out


def c6_margin(u, spec: LossSpec = RHO1):
    """``2 rho(u) - psi(u) u``; non-negative for u > 0 when the tau condition holds."""
    u = np.asarray(u, dtype=float)
    return 2.0 * rho(u, spec) - psi(u, spec) * u
