"""Function-on-function regression with quadratic and interaction terms.

Every functional variable is reduced to principal component scores. The
response scores ``Xi`` are regressed on a design ``Pi`` made of main-effect
score blocks and row-wise Kronecker products of score blocks (one for each
quadratic or interaction pair)::

    Xi = 1 a^T + Pi Theta + e

Coefficient surfaces are recovered as ``beta_p(s, t) = psi_p(s)^T B_p phi(t)``
and ``gamma_pq(r, s, t) = sum_lmk G[l K + m, k] psi_pl(r) psi_qm(s) phi_k(t)``.

Predictor indices are 1-based throughout, matching the usual ``X_1 .. X_P``
labelling.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

from .errors import GridMismatch, InsufficientData, TruncationTooLarge, UnknownTerm
from .fd import FunctionalSample, Grid, center
from .fpca import ComponentBasis, classical_fpca_fit, project_scores, rfpca_fit
from .tau import RegressionData, TauFit, ls_fit, tau_fit

__all__ = [
    "TermSet",
    "QIFit",
    "Prepared",
    "build_design",
    "prepare",
    "fit_prepared",
    "fit",
    "predict",
    "predict_scores",
    "reconstruct_beta",
    "reconstruct_gamma",
    "save_model",
    "load_model",
    "FORMAT_VERSION",
]

FORMAT_VERSION = 1
_HEADER = f"robfunc-qifit {FORMAT_VERSION}"

Method = Literal["robust", "classical"]


@dataclass(frozen=True)
class TermSet:
    """Main effects and (quadratic or interaction) pairs, 1-based indices."""

    mains: tuple = ()
    pairs: tuple = ()

    def __post_init__(self):
        mains = tuple(sorted({int(p) for p in self.mains}))
        pairs = tuple(sorted({(int(a), int(b)) for a, b in self.pairs}))
        if any(p < 1 for p in mains) or any(min(pq) < 1 for pq in pairs):
            raise UnknownTerm("predictor indices start at 1")
        object.__setattr__(self, "mains", mains)
        object.__setattr__(self, "pairs", pairs)

    @classmethod
    def main_only(cls, P):
        return cls(tuple(range(1, P + 1)), ())

    @classmethod
    def full(cls, P):
        """All mains and all pairs ``(p, q)`` with ``p <= q``."""
        return cls(
            tuple(range(1, P + 1)),
            tuple((a, b) for a in range(1, P + 1) for b in range(a, P + 1)),
        )

    @classmethod
    def parse(cls, text: str):
        """Parse ``"1,2,3;1:1,1:4"`` (mains, then pairs after a semicolon)."""
        text = text.strip()
        mains_txt, _, pairs_txt = text.partition(";")
        try:
            mains = [int(x) for x in mains_txt.split(",") if x.strip()]
            pairs = []
            for tok in pairs_txt.split(","):
                if tok.strip():
                    a, b = tok.split(":")
                    pairs.append((int(a), int(b)))
        except ValueError as exc:
            raise ValueError(f"cannot parse term set {text!r}: {exc}") from None
        return cls(tuple(mains), tuple(pairs))

    def __str__(self):
        return ",".join(map(str, self.mains)) + ";" + ",".join(f"{a}:{b}" for a, b in self.pairs)

    @property
    def max_index(self):
        idx = list(self.mains) + [i for pq in self.pairs for i in pq]
        return max(idx) if idx else 0

    def validate(self, P):
        if self.max_index > P:
            raise UnknownTerm(f"term refers to predictor {self.max_index} but only {P} are available")
        return self

    def n_columns(self, K):
        return len(self.mains) * K + len(self.pairs) * K * K

    def with_main(self, p):
        return TermSet(self.mains + (p,), self.pairs)

    def with_pair(self, pq):
        return TermSet(self.mains, self.pairs + (tuple(pq),))

    def is_empty(self):
        return not self.mains and not self.pairs

    def offsets(self, K):
        """Map each term to its row slice in ``Theta``."""
        out, pos = {}, 0
        for p in self.mains:
            out[p] = slice(pos, pos + K)
            pos += K
        for pq in self.pairs:
            out[pq] = slice(pos, pos + K * K)
            pos += K * K
        return out


def build_design(score_blocks: Sequence[np.ndarray], terms: TermSet) -> np.ndarray:
    """Design matrix: main blocks in index order, then Kronecker pair blocks.

    For a pair ``(p, q)`` column ``l * K + m`` holds ``zeta_p[l] * zeta_q[m]``.
    """
    blocks = [np.asarray(b, dtype=float) for b in score_blocks]
    terms.validate(len(blocks))
    if len({b.shape[0] for b in blocks}) > 1:
        raise InsufficientData("score blocks have different numbers of rows")
    n = blocks[0].shape[0] if blocks else 0
    cols = [blocks[p - 1] for p in terms.mains]
    for a, b in terms.pairs:
        A, B = blocks[a - 1], blocks[b - 1]
        cols.append((A[:, :, None] * B[:, None, :]).reshape(n, -1))
    if not cols:
        return np.zeros((n, 0))
    return np.hstack(cols)


@dataclass(frozen=True, eq=False)
class Prepared:
    """Centred variables and full-size component bases, reusable across truncations."""

    response: FunctionalSample
    predictors: tuple
    method: Method
    response_location: np.ndarray
    predictor_locations: tuple
    response_basis: ComponentBasis
    predictor_bases: tuple

    @property
    def n(self):
        return self.response.n

    @property
    def P(self):
        return len(self.predictors)

    @property
    def K_Y_max(self):
        return self.response_basis.K

    @property
    def K_X_max(self):
        return min(b.K for b in self.predictor_bases)


@dataclass(frozen=True, eq=False)
class QIFit:
    K_Y: int
    K_X: int
    terms: TermSet
    response_basis: ComponentBasis
    predictor_bases: tuple
    Theta: np.ndarray
    intercept: np.ndarray
    Sigma: np.ndarray
    method: Method
    response_location: np.ndarray
    predictor_locations: tuple
    fitted: np.ndarray = field(default=None, repr=False)
    regression: TauFit | None = field(default=None, repr=False)

    @property
    def grid_t(self) -> Grid:
        return self.response_basis.grid

    @property
    def P(self):
        return len(self.predictor_bases)

    def block(self, term):
        offs = self.terms.offsets(self.K_X)
        if term not in offs:
            raise UnknownTerm(f"term {term!r} is not in the fitted model")
        return self.Theta[offs[term]]

    @property
    def n_parameters(self):
        return self.Theta.size + self.intercept.size


def _basis(sample, K, method, seed, rfpca_options):
    if method == "robust":
        return rfpca_fit(sample, K, seed=seed, **(rfpca_options or {}))
    if method == "classical":
        return classical_fpca_fit(sample, K)
    raise ValueError(f"unknown method {method!r}")


def _max_components(sample, fraction, cap, method, seed, rfpca_options):
    """Smallest K reaching ``fraction`` of the total variation, capped at ``cap``."""
    K = min(cap, sample.n - 1, sample.J)
    if method == "robust":
        opts = dict(rfpca_options or {})
        opts.setdefault("fraction", fraction)
        b = rfpca_fit(sample, K, seed=seed, **opts)
    else:
        b = _basis(sample, K, method, seed, rfpca_options)
    return b, b.n_components_for(fraction, cap)


def prepare(
    response: FunctionalSample,
    predictors: Sequence[FunctionalSample],
    method: Method = "robust",
    K_Y_max: int | None = None,
    K_X_max: int | None = None,
    *,
    seed: int = 0,
    fraction: float = 0.9,
    cap: int = 6,
    rfpca_options: dict | None = None,
) -> Prepared:
    """Centre every variable and compute its component basis once.

    Missing ``K_*_max`` values are set by the ``fraction`` rule (capped at
    ``cap``); the returned bases hold exactly ``K_*_max`` components.
    """
    predictors = tuple(predictors)
    if not predictors:
        raise InsufficientData("at least one functional predictor is required")
    n = response.n
    if any(x.n != n for x in predictors):
        raise InsufficientData("response and predictors have different numbers of curves")
    mode = "pointwise_median" if method == "robust" else "mean"
    yc, yloc = center(response, mode)
    xcs = [center(x, mode) for x in predictors]

    def fitted_basis(sample, K, s):
        if K is None:
            b, K = _max_components(sample, fraction, cap, method, s, rfpca_options)
            return b.truncate(K)
        return _basis(sample, K, method, s, rfpca_options)

    ybasis = fitted_basis(yc, K_Y_max, seed)
    if K_X_max is None:
        xb_full = [_max_components(xc, fraction, cap, method, seed + 1 + p, rfpca_options)
                   for p, (xc, _) in enumerate(xcs)]
        KX = max(k for _, k in xb_full)
        xbases = [b.truncate(min(KX, b.K)) for b, _ in xb_full]
    else:
        xbases = [_basis(xc, K_X_max, method, seed + 1 + p, rfpca_options)
                  for p, (xc, _) in enumerate(xcs)]
    return Prepared(
        yc, tuple(xc for xc, _ in xcs), method, yloc,
        tuple(loc for _, loc in xcs), ybasis, tuple(xbases),
    )


def _regress(Xi, Pi, method, seed, tau_options):
    X = np.hstack([np.ones((Pi.shape[0], 1)), Pi])
    data = RegressionData(X, Xi)
    if method == "robust":
        opts = dict(tau_options or {})
        return tau_fit(data, seed=seed, min_norm=True, **opts)
    return ls_fit(data, min_norm=True)


def fit_prepared(
    prep: Prepared,
    K_Y: int,
    K_X: int,
    terms: TermSet,
    *,
    seed: int = 0,
    tau_options: dict | None = None,
) -> QIFit:
    """Fit the reduced regression using the first ``K_Y``/``K_X`` components."""
    terms.validate(prep.P)
    if K_Y > prep.K_Y_max or K_X > prep.K_X_max:
        raise TruncationTooLarge(
            f"(K_Y, K_X) = ({K_Y}, {K_X}) exceeds prepared maximum "
            f"({prep.K_Y_max}, {prep.K_X_max})"
        )
    if K_Y < 1 or K_X < 1:
        raise TruncationTooLarge("truncation constants must be positive")
    ybasis = prep.response_basis.truncate(K_Y)
    xbases = tuple(b.truncate(K_X) for b in prep.predictor_bases)
    Xi = ybasis.scores
    location = _response_location(prep, ybasis)
    Pi = build_design([b.scores for b in xbases], terms)
    reg = _regress(Xi, Pi, prep.method, seed, tau_options)
    intercept, Theta = reg.Theta[0], reg.Theta[1:]
    fitted_scores = intercept + Pi @ Theta
    fitted = location + fitted_scores @ ybasis.eigenfunctions
    return QIFit(
        K_Y, K_X, terms, ybasis, xbases, Theta, intercept, reg.Sigma, prep.method,
        location, prep.predictor_locations, fitted, reg,
    )


def _response_location(prep, ybasis):
    """Location curve with the typical out-of-span residual folded in.

    Curves centred at the pointwise median need not lie in the span of the
    eigenfunctions even when the data are exactly finite-dimensional; the
    median residual curve, with its in-span part removed (the intercept
    captures that), restores the missing common component.
    """
    if prep.method != "robust":
        return prep.response_location
    phi = ybasis.eigenfunctions
    w = ybasis.grid.weights
    R = prep.response.values - ybasis.scores @ phi
    adj = np.median(R, axis=0)
    adj = adj - ((adj * w) @ phi.T) @ phi
    return prep.response_location + adj


def fit(
    response: FunctionalSample,
    predictors: Sequence[FunctionalSample],
    K_Y: int,
    K_X: int,
    terms: TermSet,
    method: Method = "robust",
    seed: int = 0,
    *,
    rfpca_options: dict | None = None,
    tau_options: dict | None = None,
) -> QIFit:
    """One-shot fit: centre, compute bases, build the design and regress."""
    prep = prepare(response, predictors, method, K_Y, K_X, seed=seed, rfpca_options=rfpca_options)
    return fit_prepared(prep, K_Y, K_X, terms, seed=seed, tau_options=tau_options)


def _new_scores(fit: QIFit, new_predictors):
    new_predictors = list(new_predictors)
    if len(new_predictors) != fit.P:
        raise UnknownTerm(f"model has {fit.P} predictors, {len(new_predictors)} supplied")
    blocks = []
    for x, loc, b in zip(new_predictors, fit.predictor_locations, fit.predictor_bases):
        if x.grid != b.grid:
            raise GridMismatch("new predictor grid differs from the training grid")
        blocks.append(project_scores(x.with_values(x.values - loc), b))
    return blocks


def predict_scores(fit: QIFit, new_predictors) -> np.ndarray:
    """Predicted response scores ``a + Pi_new Theta`` (n x K_Y)."""
    Pi = build_design(_new_scores(fit, new_predictors), fit.terms)
    return fit.intercept + Pi @ fit.Theta


def predict(fit: QIFit, new_predictors) -> FunctionalSample:
    S = predict_scores(fit, new_predictors)
    values = fit.response_location + S @ fit.response_basis.eigenfunctions
    return FunctionalSample(values, fit.grid_t, "prediction")


def reconstruct_beta(fit: QIFit, p: int) -> np.ndarray:
    """``beta_p`` on ``grid_s x grid_t`` (rows index s)."""
    if p not in fit.terms.mains:
        raise UnknownTerm(f"main effect {p} is not in the fitted model")
    psi = fit.predictor_bases[p - 1].eigenfunctions
    phi = fit.response_basis.eigenfunctions
    return psi.T @ fit.block(p) @ phi


def reconstruct_gamma(fit: QIFit, p: int, q: int) -> np.ndarray:
    """``gamma_pq`` on ``grid_r x grid_s x grid_t``; ``r`` pairs with predictor ``p``."""
    if (p, q) not in fit.terms.pairs:
        raise UnknownTerm(f"pair ({p}, {q}) is not in the fitted model")
    K = fit.K_X
    G = fit.block((p, q)).reshape(K, K, fit.K_Y)
    psi_p = fit.predictor_bases[p - 1].eigenfunctions
    psi_q = fit.predictor_bases[q - 1].eigenfunctions
    phi = fit.response_basis.eigenfunctions
    return np.einsum("lmk,lr,ms,kt->rst", G, psi_p, psi_q, phi, optimize=True)


# -- serialisation ---------------------------------------------------------

def _basis_to_dict(b: ComponentBasis):
    return {
        "grid": b.grid.points.tolist(),
        "eigenfunctions": b.eigenfunctions.tolist(),
        "eigenvalues": b.eigenvalues.tolist(),
        "method": b.method,
        "total_variation": b.total_variation,
    }


def _basis_from_dict(d):
    grid = Grid(np.array(d["grid"]))
    phi = np.array(d["eigenfunctions"], dtype=float).reshape(-1, len(grid))
    return ComponentBasis(phi, np.array(d["eigenvalues"]), np.zeros((0, phi.shape[0])),
                          grid, d["method"], d["total_variation"])


def save_model(fit: QIFit, path) -> Path:
    """Write a versioned plain-text (JSON) archive of everything prediction needs."""
    doc = {
        "K_Y": fit.K_Y,
        "K_X": fit.K_X,
        "terms": {"mains": list(fit.terms.mains), "pairs": [list(pq) for pq in fit.terms.pairs]},
        "method": fit.method,
        "Theta": fit.Theta.tolist(),
        "intercept": fit.intercept.tolist(),
        "Sigma": np.asarray(fit.Sigma).tolist(),
        "response_location": np.asarray(fit.response_location).tolist(),
        "predictor_locations": [np.asarray(l).tolist() for l in fit.predictor_locations],
        "response_basis": _basis_to_dict(fit.response_basis),
        "predictor_bases": [_basis_to_dict(b) for b in fit.predictor_bases],
    }
    path = Path(path)
    with open(path, "w") as fh:
        fh.write(_HEADER + "\n")
        json.dump(doc, fh, indent=1, allow_nan=True)
        fh.write("\n")
    return path


def load_model(path) -> QIFit:
    with open(path) as fh:
        header = fh.readline().strip()
        if not header.startswith("robfunc-qifit "):
            raise ValueError(f"{path}: not a model archive")
        version = int(header.split()[1])
        if version > FORMAT_VERSION:
            raise ValueError(f"{path}: archive version {version} is newer than supported {FORMAT_VERSION}")
        doc = json.load(fh)
    terms = TermSet(tuple(doc["terms"]["mains"]), tuple(tuple(pq) for pq in doc["terms"]["pairs"]))
    K_Y = int(doc["K_Y"])
    q = terms.n_columns(int(doc["K_X"]))
    return QIFit(
        K_Y,
        int(doc["K_X"]),
        terms,
        _basis_from_dict(doc["response_basis"]),
        tuple(_basis_from_dict(d) for d in doc["predictor_bases"]),
        np.array(doc["Theta"], dtype=float).reshape(q, K_Y),
        np.array(doc["intercept"], dtype=float),
        np.array(doc["Sigma"], dtype=float).reshape(K_Y, K_Y),
        doc["method"],
        np.array(doc["response_location"], dtype=float),
        tuple(np.array(l, dtype=float) for l in doc["predictor_locations"]),
    )
