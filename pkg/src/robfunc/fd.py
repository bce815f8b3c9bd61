"""Functional data containers, quadrature and B-spline smoothing on [0, 1].

Curves are stored as rows of an ``n x J`` matrix observed on a shared
:class:`Grid`. All integrals use the trapezoidal rule on the grid points.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Literal, Sequence

import numpy as np
from scipy.interpolate import BSpline

from .errors import CSVFormatError, GridMismatch, InsufficientData, SingularBasis

__all__ = [
    "Grid",
    "FunctionalSample",
    "BSplineBasis",
    "trapezoid_weights",
    "inner_product",
    "l2_norm",
    "center",
    "smooth",
    "reconstruct",
    "read_csv",
    "write_csv",
]


def _readonly(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def trapezoid_weights(points):
    """Quadrature weights w such that ``w @ f`` is the trapezoid integral of f."""
    points = np.asarray(points, dtype=float)
    h = np.diff(points)
    w = np.zeros_like(points)
    w[:-1] += h / 2
    w[1:] += h / 2
    return w


@dataclass(frozen=True, eq=False)
class Grid:
    """Strictly increasing abscissae in [0, 1] shared by a set of curves."""

    points: np.ndarray

    def __post_init__(self):
        pts = _readonly(self.points).ravel()
        if pts.size < 2:
            raise ValueError("a grid needs at least 2 points")
        if not np.all(np.isfinite(pts)):
            raise ValueError("grid points must be finite")
        if pts[0] < 0 or pts[-1] > 1:
            raise ValueError("grid points must lie in [0, 1]")
        if np.any(np.diff(pts) <= 0):
            raise ValueError("grid points must be strictly increasing")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @classmethod
    def uniform(cls, J=101):
        return cls(np.linspace(0.0, 1.0, J))

    def __len__(self):
        return self.points.size

    def __eq__(self, other):
        if not isinstance(other, Grid):
            return NotImplemented
        return self.points.shape == other.points.shape and np.array_equal(
            self.points, other.points
        )

    def __hash__(self):
        return hash(self.points.tobytes())

    @cached_property
    def weights(self):
        w = trapezoid_weights(self.points)
        w.setflags(write=False)
        return w


@dataclass(frozen=True, eq=False)
class FunctionalSample:
    """``n`` curves (rows of ``values``) observed on a common grid."""

    values: np.ndarray
    grid: Grid
    label: str = ""

    def __post_init__(self):
        vals = _readonly(self.values)
        if vals.ndim == 1:
            vals = _readonly(vals[None, :])
        if vals.ndim != 2:
            raise ValueError("values must be a 2-D array (n curves x J points)")
        if vals.shape[1] != len(self.grid):
            raise GridMismatch(
                f"{vals.shape[1]} columns but grid has {len(self.grid)} points"
            )
        if not np.all(np.isfinite(vals)):
            raise ValueError("functional sample contains non-finite values")
        object.__setattr__(self, "values", vals)

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def J(self):
        return self.values.shape[1]

    def __len__(self):
        return self.n

    def with_values(self, values, label=None):
        return FunctionalSample(values, self.grid, self.label if label is None else label)

    def subset(self, idx):
        return self.with_values(self.values[np.asarray(idx)])


def _as_curves(f, grid):
    if isinstance(f, FunctionalSample):
        if grid is not None and f.grid != grid:
            raise GridMismatch("curve grid differs from the reference grid")
        return f.values, f.grid
    return np.asarray(f, dtype=float), grid


def inner_product(f, g, grid=None):
    """Trapezoid approximation of the L2 inner product of ``f`` and ``g``.

    ``f`` and ``g`` are arrays whose last axis runs over the grid (they
    broadcast against each other), or :class:`FunctionalSample` objects.
    """
    fv, grid_f = _as_curves(f, grid)
    gv, grid_g = _as_curves(g, grid if grid is not None else grid_f)
    grid = grid if grid is not None else (grid_f if grid_f is not None else grid_g)
    if grid is None:
        raise ValueError("a grid is required for plain arrays")
    if grid_f is not None and grid_g is not None and grid_f != grid_g:
        raise GridMismatch("curves are observed on different grids")
    J = len(grid)
    if fv.shape[-1] != J or gv.shape[-1] != J:
        raise GridMismatch(
            f"curve lengths {fv.shape[-1]} and {gv.shape[-1]} do not match grid size {J}"
        )
    return np.sum(fv * gv * grid.weights, axis=-1)


def l2_norm(f, grid=None):
    return np.sqrt(np.maximum(inner_product(f, f, grid), 0.0))


def center(sample: FunctionalSample, mode: Literal["mean", "pointwise_median"] = "mean"):
    """Subtract a pointwise location curve. Returns ``(centered, location)``."""
    if sample.n < 2:
        raise InsufficientData("centering needs at least 2 curves")
    if mode == "mean":
        loc = sample.values.mean(axis=0)
    elif mode in ("pointwise_median", "median"):
        loc = np.median(sample.values, axis=0)
    else:
        raise ValueError(f"unknown centering mode {mode!r}")
    out = sample.values - loc
    if mode == "mean":
        # one correction pass pushes column means to round-off level
        out = out - out.mean(axis=0)
    return sample.with_values(out), _readonly(loc)


_DESIGN_CACHE: dict = {}


@dataclass(frozen=True)
class BSplineBasis:
    """Clamped B-spline basis with uniformly spaced knots on [0, 1]."""

    n_basis: int = 20
    degree: int = 3
    knots: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.degree < 0:
            raise ValueError("degree must be non-negative")
        if self.n_basis < self.degree + 1:
            raise ValueError("n_basis must be at least degree + 1")
        interior = np.linspace(0.0, 1.0, self.n_basis - self.degree + 1)
        knots = np.concatenate(
            [np.zeros(self.degree), interior, np.ones(self.degree)]
        )
        object.__setattr__(self, "knots", _readonly(knots))

    def evaluate(self, grid) -> np.ndarray:
        """Evaluation matrix (J x n_basis) on ``grid``; cached per grid."""
        pts = grid.points if isinstance(grid, Grid) else np.asarray(grid, dtype=float)
        key = (self.n_basis, self.degree, pts.tobytes())
        B = _DESIGN_CACHE.get(key)
        if B is None:
            B = BSpline.design_matrix(pts, self.knots, self.degree).toarray()
            B.setflags(write=False)
            if len(_DESIGN_CACHE) > 64:
                _DESIGN_CACHE.clear()
            _DESIGN_CACHE[key] = B
        return B

    def gram(self, grid: Grid) -> np.ndarray:
        """Quadrature Gram matrix ``B^T W B``."""
        B = self.evaluate(grid)
        return B.T @ (grid.weights[:, None] * B)


def _projection_operator(basis: BSplineBasis, grid: Grid, weighted: bool):
    B = basis.evaluate(grid)
    if len(grid) < basis.n_basis:
        raise SingularBasis(f"{len(grid)} grid points cannot support {basis.n_basis} basis functions")
    w = grid.weights if weighted else np.ones(len(grid))
    A = np.sqrt(w)[:, None] * B
    if np.linalg.matrix_rank(A) < basis.n_basis:
        raise SingularBasis("B-spline evaluation matrix is rank deficient on this grid")
    # coefficients = pinv(A) @ (sqrt(w) * y)
    return np.linalg.pinv(A) * np.sqrt(w)[None, :]


def smooth(sample: FunctionalSample, basis: BSplineBasis, weighted=True) -> np.ndarray:
    """Least-squares B-spline coefficients (n x n_basis) for every curve.

    With ``weighted=True`` the fit minimises the trapezoid L2 distance,
    i.e. it is the orthogonal projection onto the spline space in the
    quadrature inner product.
    """
    P = _projection_operator(basis, sample.grid, weighted)
    return sample.values @ P.T


def reconstruct(coefs, basis: BSplineBasis, grid: Grid, label="") -> FunctionalSample:
    coefs = np.atleast_2d(np.asarray(coefs, dtype=float))
    return FunctionalSample(coefs @ basis.evaluate(grid).T, grid, label)


def read_csv(path, label=None) -> FunctionalSample:
    """Read one functional variable: header row = grid, one curve per row."""
    path = Path(path)
    label = path.stem if label is None else label
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise CSVFormatError(path, 1, "empty file")
    try:
        pts = np.array([float(x) for x in rows[0]])
    except ValueError as exc:
        raise CSVFormatError(path, 1, f"header must hold numeric grid points ({exc})") from None
    try:
        grid = Grid(pts)
    except ValueError as exc:
        raise CSVFormatError(path, 1, str(exc)) from None
    values = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(pts):
            raise CSVFormatError(path, lineno, f"expected {len(pts)} values, found {len(row)}")
        try:
            vals = [float(x) for x in row]
        except ValueError as exc:
            raise CSVFormatError(path, lineno, str(exc)) from None
        if not np.all(np.isfinite(vals)):
            raise CSVFormatError(path, lineno, "non-finite value")
        values.append(vals)
    if not values:
        raise CSVFormatError(path, 2, "no curves found")
    return FunctionalSample(np.array(values), grid, label)


def write_csv(sample: FunctionalSample, path, fmt="%.17g"):
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([fmt % x for x in sample.grid.points])
        for row in sample.values:
            w.writerow([fmt % x for x in row])
    return path


def stack(samples: Sequence[FunctionalSample]):
    """Check a list of samples share n and return it as a tuple."""
    samples = tuple(samples)
    if samples and len({s.n for s in samples}) > 1:
        raise InsufficientData("functional variables have different numbers of curves")
    return samples
