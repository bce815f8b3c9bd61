"""Monte-Carlo laboratory: data-generating process, contamination and harness.

Predictors are truncated Fourier series
``X(s) = sum_r r^-2 {xi_1r sqrt(2) sin(r pi s) + xi_2r sqrt(2) cos(r pi s)}``,
``xi ~ N(0, 0.5)``, and the response is built from four main effects and four
quadratic or interaction terms plus ``beta_0(t) = 4 cos(4 pi t)``.
Contaminated subjects get predictors 1 and 2 redrawn with ``sqrt(6)``
amplitude and response errors with mean 10.

Each (replication, variable) pair draws from its own Philox stream keyed by
``SeedSequence([seed, rep, stream])`` so results do not depend on the order
in which replications run.
"""

from __future__ import annotations

import csv
import logging
import time
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .diagnostics import auc, fgg_detect, mspe, risee, risee_bar
from .errors import RobFuncError
from .fd import FunctionalSample, Grid
from .model import (TermSet, fit_prepared, predict, prepare, reconstruct_beta)
from .selection import forward_select, rbic_search

__all__ = [
    "DGPConfig",
    "TruthBundle",
    "make_truth",
    "gen_predictors",
    "gen_response",
    "contaminate",
    "generate",
    "FitOptions",
    "SimReport",
    "SimData",
    "signal",
    "run_replication",
    "run_experiment",
]

log = logging.getLogger(__name__)

TRUE_PAIRS = ((1, 1), (1, 4), (3, 3), (4, 4))
TRUE_MAINS = (1, 2, 3, 4)

# stream identifiers for SeedSequence spawning
_S_PRED, _S_NOISE, _S_CONTAM, _S_TEST_PRED, _S_TEST_NOISE, _S_FIT = 0, 100, 200, 300, 400, 500


@dataclass(frozen=True)
class DGPConfig:
    n: int = 250
    n_test: int = 100
    P: int = 6
    noise_sigma: float = 0.5
    contamination: float = 0.0
    seed: int = 0
    J: int = 101
    n_terms: int = 10
    pairs: tuple = TRUE_PAIRS
    disjoint_contamination: bool = False

    def __post_init__(self):
        if not 0 <= self.contamination < 0.5:
            raise ValueError("contamination must lie in [0, 0.5)")
        if self.P < 4:
            raise ValueError("the data-generating process needs at least 4 predictors")
        if self.n < 2 or self.n_test < 1:
            raise ValueError("sample sizes must be positive")

    @property
    def grid(self):
        return Grid.uniform(self.J)


def _rng(cfg, rep, stream):
    ss = np.random.SeedSequence([int(cfg.seed), int(rep), int(stream)])
    return np.random.Generator(np.random.Philox(ss))


def beta0(t):
    return 4 * np.cos(4 * np.pi * t)


def _beta_surfaces(s, t):
    S, T = np.meshgrid(s, t, indexing="ij")
    return {
        1: 2 * np.sin(2 * np.pi * S) + np.sin(np.pi * T),
        2: 2 * np.cos(np.pi * S) + np.cos(2 * np.pi * T),
        3: np.cos(np.pi * S) + np.sin(2 * np.pi * T),
        4: 2 * np.sin(2 * np.pi * S) + np.sin(2 * np.pi * T),
    }


def _gamma_surface(pair, r, s, t):
    R, S, T = np.meshgrid(r, s, t, indexing="ij")
    if pair == (1, 1):
        return np.exp(R ** 2 + S ** 2) * np.sqrt(T)
    if pair == (1, 4):
        return 2 * np.cos(np.pi * (R + S)) * np.sqrt(T)
    if pair == (3, 3):
        return R + S + T ** 2
    if pair == (4, 4):
        return (R ** 2 + S ** 2) * T
    if pair == (3, 4):
        # the listed pair set names (3, 4) without a surface; reuse the (4, 4) form
        return (R ** 2 + S ** 2) * T
    raise KeyError(f"no truth surface for pair {pair}")


@dataclass(frozen=True, eq=False)
class TruthBundle:
    grid: Grid
    betas: dict
    gammas: dict
    terms: TermSet
    labels: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    def with_labels(self, labels):
        return replace(self, labels=np.asarray(labels, dtype=bool))


def make_truth(cfg: DGPConfig) -> TruthBundle:
    pts = cfg.grid.points
    betas = _beta_surfaces(pts, pts)
    gammas = {pq: _gamma_surface(pq, pts, pts, pts) for pq in cfg.pairs}
    return TruthBundle(cfg.grid, betas, gammas, TermSet(TRUE_MAINS, cfg.pairs))


def _fourier_curves(rng, n, grid, n_terms, amplitude):
    s = grid.points
    r = np.arange(1, n_terms + 1)
    sin_b = np.sin(np.pi * r[:, None] * s[None, :]) * (amplitude / r[:, None] ** 2)
    cos_b = np.cos(np.pi * r[:, None] * s[None, :]) * (amplitude / r[:, None] ** 2)
    xi1 = rng.normal(0.0, np.sqrt(0.5), size=(n, n_terms))
    xi2 = rng.normal(0.0, np.sqrt(0.5), size=(n, n_terms))
    return xi1 @ sin_b + xi2 @ cos_b


def gen_predictors(cfg: DGPConfig, rep: int = 0, *, test: bool = False) -> list:
    n = cfg.n_test if test else cfg.n
    base = _S_TEST_PRED if test else _S_PRED
    grid = cfg.grid
    out = []
    for p in range(cfg.P):
        vals = _fourier_curves(_rng(cfg, rep, base + p), n, grid, cfg.n_terms, np.sqrt(2.0))
        out.append(FunctionalSample(vals, grid, f"X{p + 1}"))
    return out


def signal(predictors, truth: TruthBundle) -> np.ndarray:
    """Noise-free response curves for the given predictors (n x J)."""
    grid = truth.grid
    w = grid.weights
    n = predictors[0].n
    Y = np.tile(beta0(grid.points), (n, 1))
    for p in truth.terms.mains:
        Y += (predictors[p - 1].values * w) @ truth.betas[p]
    for (a, b), G in truth.gammas.items():
        Xa = predictors[a - 1].values * w
        Xb = predictors[b - 1].values * w
        # sum_r sum_s Xa(r) w_r Xb(s) w_s G(r, s, t)
        Y += np.einsum("ir,is,rst->it", Xa, Xb, G, optimize=True)
    return Y


def gen_response(predictors, cfg: DGPConfig, truth: TruthBundle, rep: int = 0, *, test=False):
    Y = signal(predictors, truth)
    if cfg.noise_sigma > 0:
        rng = _rng(cfg, rep, _S_TEST_NOISE if test else _S_NOISE)
        Y = Y + rng.normal(0.0, cfg.noise_sigma, size=Y.shape)
    return FunctionalSample(Y, truth.grid, "Y")


def contaminate(predictors, response, cfg: DGPConfig, rep: int = 0):
    """Shape outliers in predictors 1-2 and magnitude outliers in the response.

    Returns ``(predictors, response, labels)``; labels mark contaminated
    response curves (the ones an outlier detector should find).
    """
    n = response.n
    k = int(round(cfg.contamination * n))
    labels = np.zeros(n, dtype=bool)
    if k == 0:
        return list(predictors), response, labels
    rng = _rng(cfg, rep, _S_CONTAM)
    idx = rng.choice(n, size=k, replace=False)
    idx_x = rng.choice(n, size=k, replace=False) if cfg.disjoint_contamination else idx
    labels[idx] = True
    out = list(predictors)
    for p in (0, 1):
        vals = np.array(out[p].values)
        vals[idx_x] = _fourier_curves(rng, k, out[p].grid, cfg.n_terms, np.sqrt(6.0))
        out[p] = out[p].with_values(vals)
    Y = np.array(response.values)
    Y[idx] += 10.0
    return out, response.with_values(Y), labels


@dataclass(frozen=True, eq=False)
class SimData:
    train_X: list
    train_Y: FunctionalSample
    test_X: list
    test_Y: FunctionalSample
    test_signal: np.ndarray
    truth: TruthBundle


def generate(cfg: DGPConfig, rep: int = 0) -> SimData:
    truth = make_truth(cfg)
    X = gen_predictors(cfg, rep)
    Y = gen_response(X, cfg, truth, rep)
    X, Y, labels = contaminate(X, Y, cfg, rep)
    Xt = gen_predictors(cfg, rep, test=True)
    sig = signal(Xt, truth)
    Yt = gen_response(Xt, cfg, truth, rep, test=True)
    return SimData(X, Y, Xt, Yt, sig, truth.with_labels(labels))


VARIANTS = ("Main", "Full", "True", "Selected")
METRICS = ("risee", "mspe", "auc")


@dataclass(frozen=True)
class FitOptions:
    """Knobs of one replication (defaults follow the package pipeline)."""

    truncation: object = "rbic"
    alpha: float | None = None
    n_boot: int = 200
    tau_options: dict | None = None
    selection_tau_options: dict | None = field(default_factory=lambda: {"n_subsamples": 10})
    rfpca_options: dict | None = None
    fraction: float = 0.9
    cap: int = 6


def _variant_terms(variant, P, truth: TruthBundle):
    if variant == "Main":
        return TermSet.main_only(P)
    if variant == "Full":
        return TermSet.full(P)
    if variant == "True":
        return truth.terms
    raise ValueError(f"unknown model variant {variant!r}")


def _choose_K(prep, Y, X, terms, opts, method, seed):
    if opts.truncation == "rbic":
        best, _ = rbic_search(Y, X, terms, alpha=opts.alpha, method=method, seed=seed,
                              prepared=prep, tau_options=opts.tau_options)
        return best.K_Y, best.K_X
    ky, kx = opts.truncation
    return min(int(ky), prep.K_Y_max), min(int(kx), prep.K_X_max)


def run_replication(cfg: DGPConfig, rep: int, methods=("robust", "classical"),
                    variants=("True",), opts: FitOptions | None = None) -> list:
    """One Monte-Carlo replication; returns one result row per (method, variant)."""
    opts = opts or FitOptions()
    data = generate(cfg, rep)
    truth = data.truth
    seed = int(np.random.SeedSequence([cfg.seed, rep, _S_FIT]).generate_state(1)[0] % (2 ** 31))
    rows = []
    for method in methods:
        prep_K = (None, None) if opts.truncation == "rbic" else tuple(opts.truncation)
        prep = prepare(data.train_Y, data.train_X, method, *prep_K, seed=seed,
                       fraction=opts.fraction, cap=opts.cap, rfpca_options=opts.rfpca_options)
        for variant in variants:
            row = dict(method=method, variant=variant, n=cfg.n, CL=cfg.contamination,
                       sigma=cfg.noise_sigma, rep=rep, K_Y=np.nan, K_X=np.nan, terms="",
                       mspe=np.nan, auc=np.nan, error="")
            row.update({f"risee_{p}": np.nan for p in TRUE_MAINS})
            t0 = time.perf_counter()
            try:
                if variant == "Selected":
                    ky, kx = _choose_K(prep, data.train_Y, data.train_X,
                                       TermSet.main_only(cfg.P), opts, method, seed)
                    terms = forward_select(data.train_Y, data.train_X, ky, kx, opts.alpha,
                                           method, seed, prepared=prep,
                                           tau_options=opts.selection_tau_options)
                    if terms.is_empty():
                        terms = TermSet.main_only(cfg.P)
                else:
                    terms = _variant_terms(variant, cfg.P, truth)
                    ky, kx = _choose_K(prep, data.train_Y, data.train_X, terms, opts, method, seed)
                f = fit_prepared(prep, ky, kx, terms, seed=seed, tau_options=opts.tau_options)
                pred = predict(f, data.test_X)
                row.update(K_Y=ky, K_X=kx, terms=str(terms), mspe=mspe(data.test_signal, pred.values))
                if variant == "True":
                    for p in TRUE_MAINS:
                        row[f"risee_{p}"] = risee(truth.betas[p], reconstruct_beta(f, p))
                if truth.labels.any():
                    res = data.train_Y.with_values(data.train_Y.values - f.fitted)
                    rep_d = fgg_detect(res, n_boot=opts.n_boot, seed=seed)
                    row["auc"] = auc(-rep_d.depths, truth.labels)
            except RobFuncError as exc:
                row["error"] = f"{type(exc).__name__}: {exc}"
            row["seconds"] = time.perf_counter() - t0
            rows.append(row)
    return rows


def _mad(x):
    x = np.asarray(x, dtype=float)
    x = x[np.isfinite(x)]
    if x.size == 0:
        return np.nan
    return float(np.median(np.abs(x - np.median(x))))


@dataclass(frozen=True, eq=False)
class SimReport:
    """Per-replication rows and per-cell summaries (median and MAD)."""

    rows: tuple
    failures: int = 0

    def cells(self):
        keys = []
        for r in self.rows:
            k = (r["method"], r["variant"], r["n"], r["CL"], r["sigma"])
            if k not in keys:
                keys.append(k)
        return keys

    def _cell_rows(self, key):
        return [r for r in self.rows
                if (r["method"], r["variant"], r["n"], r["CL"], r["sigma"]) == key and not r["error"]]

    def summary(self):
        """One dict per (cell, metric) with ``median`` and ``mad``.

        The RISEE summary is the mean over surfaces of the per-surface
        medians across replications; its MAD is that of the per-replication
        mean RISEE.
        """
        out = []
        for key in self.cells():
            rows = self._cell_rows(key)
            base = dict(zip(("method", "variant", "n", "CL", "sigma"), key))
            if not rows:
                continue
            R = np.array([[r[f"risee_{p}"] for p in TRUE_MAINS] for r in rows], dtype=float)
            if np.isfinite(R).any():
                out.append(dict(base, metric="risee", median=risee_bar(R),
                                mad=_mad(np.nanmean(R, axis=1)), reps=len(rows)))
            for m in ("mspe", "auc"):
                v = np.array([r[m] for r in rows], dtype=float)
                if np.isfinite(v).any():
                    out.append(dict(base, metric=m, median=float(np.nanmedian(v)),
                                    mad=_mad(v), reps=int(np.isfinite(v).sum())))
        return out

    def value(self, method, variant, n, CL, metric, sigma=None):
        for s in self.summary():
            if (s["method"], s["variant"], s["n"], s["metric"]) == (method, variant, n, metric) \
                    and np.isclose(s["CL"], CL) and (sigma is None or np.isclose(s["sigma"], sigma)):
                return s["median"]
        raise KeyError((method, variant, n, CL, metric, sigma))

    def write_csv(self, path):
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["method", "variant", "n", "CL", "sigma", "metric", "median", "mad", "reps"])
            for s in self.summary():
                w.writerow([s["method"], s["variant"], s["n"], f"{s['CL']:g}", f"{s['sigma']:g}",
                            s["metric"], f"{s['median']:.6g}", f"{s['mad']:.6g}", s["reps"]])
        return path

    def write_rows_csv(self, path):
        path = Path(path)
        cols = ["method", "variant", "n", "CL", "sigma", "rep", "K_Y", "K_X", "terms", "mspe",
                "auc"] + [f"risee_{p}" for p in TRUE_MAINS] + ["error"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for r in self.rows:
                w.writerow([f"{r[c]:.6g}" if isinstance(r[c], float) else r[c] for c in cols])
        return path

    def to_text(self):
        """Fixed-width table: one line per cell, metrics as ``median (mad)``."""
        summ = self.summary()
        lines = [f"{'method':<10}{'variant':<10}{'n':>5}{'CL':>6}{'sigma':>7}"
                 f"{'RISEE':>20}{'MSPE':>20}{'AUC':>20}"]
        for key in self.cells():
            vals = {}
            for s in summ:
                if (s["method"], s["variant"], s["n"], s["CL"], s["sigma"]) == key:
                    vals[s["metric"]] = f"{s['median']:.4f} ({s['mad']:.4f})"
            m, v, n, cl, sg = key
            lines.append(f"{m:<10}{v:<10}{n:>5}{cl:>6.0%}{sg:>7.2f}"
                         + "".join(f"{vals.get(k, '-'):>20}" for k in METRICS))
        if self.failures:
            lines.append(f"failed fits: {self.failures}")
        return "\n".join(lines) + "\n"


def run_experiment(cfgs: Sequence[DGPConfig], n_reps: int, methods=("robust", "classical"),
                   variants=("True",), opts: FitOptions | None = None, n_jobs: int = 1,
                   seed: int | None = None) -> SimReport:
    """Run ``n_reps`` replications of every configuration.

    ``seed`` (when given) overrides the configurations' seeds. Replications
    run in parallel with ``n_jobs`` workers; the result does not depend on
    the worker count.
    """
    cfgs = [replace(c, seed=seed) if seed is not None else c for c in cfgs]
    tasks = [(c, r) for c in cfgs for r in range(n_reps)]
    if n_jobs == 1:
        chunks = [run_replication(c, r, methods, variants, opts) for c, r in tasks]
    else:
        from joblib import Parallel, delayed
        chunks = Parallel(n_jobs=n_jobs)(
            delayed(run_replication)(c, r, methods, variants, opts) for c, r in tasks)
    rows = tuple(r for chunk in chunks for r in chunk)
    failures = sum(1 for r in rows if r["error"])
    if failures:
        warnings.warn(f"{failures} fits failed and were excluded from the summaries", RuntimeWarning)
        log.warning("%d fits failed", failures)
    return SimReport(rows, failures)
