"""Tests for design assembly, fitting, surface reconstruction and prediction."""

import numpy as np
import pytest

from robfunc.errors import GridMismatch, TruncationTooLarge, UnknownTerm
from robfunc.fd import FunctionalSample, Grid, center
from robfunc.fpca import ComponentBasis, classical_fpca_fit
from robfunc.model import (QIFit, TermSet, build_design, fit, load_model, predict, prepare,
                           fit_prepared, reconstruct_beta, reconstruct_gamma, save_model)

GRID = Grid.uniform(41)


def _fourier_predictors(rng, n, P, grid=GRID):
    s = grid.points
    basis = np.vstack([np.sqrt(2) * np.sin(np.pi * s), np.sqrt(2) * np.cos(np.pi * s),
                       np.sqrt(2) * np.sin(2 * np.pi * s)])
    return [FunctionalSample((rng.standard_normal((n, 3)) * [1.0, 0.7, 0.4]) @ basis, grid)
            for _ in range(P)]


def _random_fit(seed, K_Y=2, K_X=2, terms=TermSet((1, 2), ((1, 1), (1, 2))), P=2):
    """A QIFit with random orthonormal-ish bases and random coefficients."""
    rng = np.random.default_rng(seed)
    J = len(GRID)

    def basis(K):
        Q, _ = np.linalg.qr(rng.standard_normal((J, K)))
        phi = (Q / np.sqrt(GRID.weights)[:, None]).T
        return ComponentBasis(phi, np.sort(rng.uniform(0.5, 2, K))[::-1], np.zeros((0, K)),
                              GRID, "classical")

    q = terms.n_columns(K_X)
    return QIFit(K_Y, K_X, terms, basis(K_Y), tuple(basis(K_X) for _ in range(P)),
                 rng.standard_normal((q, K_Y)), rng.standard_normal(K_Y), np.eye(K_Y),
                 "classical", rng.standard_normal(J), tuple(rng.standard_normal(J) for _ in range(P)))


class TestTermSet:
    def test_canonical_order(self):
        ts = TermSet((3, 1), ((2, 1), (1, 1)))
        assert ts.mains == (1, 3) and ts.pairs == ((1, 1), (2, 1))

    def test_full(self):
        assert len(TermSet.full(6).pairs) == 21

    def test_parse_round_trip(self):
        ts = TermSet((1, 2, 3, 4), ((1, 1), (1, 4)))
        assert TermSet.parse(str(ts)) == ts

    def test_validate(self):
        with pytest.raises(UnknownTerm):
            TermSet((1, 7)).validate(6)
        with pytest.raises(UnknownTerm):
            TermSet((0,))

    def test_dimension_law(self):
        ts = TermSet((1, 2, 3), ((1, 1), (2, 3)))
        blocks = [np.ones((5, 4))] * 3
        assert build_design(blocks, ts).shape[1] == 3 * 4 + 2 * 16 == ts.n_columns(4)


class TestBuildDesign:
    def test_single_main(self):
        Z = np.arange(12.0).reshape(4, 3)
        assert np.array_equal(build_design([Z], TermSet((1,))), Z)

    def test_quadratic_kronecker_order(self):
        Z = np.array([[2.0, 3.0]])
        Pi = build_design([Z], TermSet((), ((1, 1),)))
        assert np.array_equal(Pi, [[4.0, 6.0, 6.0, 9.0]])

    def test_nested_loop_oracle(self):
        rng = np.random.default_rng(0)
        blocks = [rng.standard_normal((6, 2)) for _ in range(2)]
        ts = TermSet((1, 2), ((1, 2),))
        Pi = build_design(blocks, ts)
        assert Pi.shape == (6, 8)
        for i in range(6):
            assert np.array_equal(Pi[i, :2], blocks[0][i])
            assert np.array_equal(Pi[i, 2:4], blocks[1][i])
            for k in range(2):
                for m in range(2):
                    assert Pi[i, 4 + k * 2 + m] == blocks[0][i, k] * blocks[1][i, m]

    def test_unknown_term(self):
        with pytest.raises(UnknownTerm):
            build_design([np.ones((3, 2))], TermSet((2,)))


class TestReconstruction:
    def test_zero_beta(self):
        f = _random_fit(0)
        f = QIFit(**{**f.__dict__, "Theta": np.zeros_like(f.Theta)})
        assert np.all(reconstruct_beta(f, 1) == 0)
        assert np.all(reconstruct_gamma(f, 1, 2) == 0)

    def test_rank_one(self):
        f = _random_fit(1, K_Y=1, K_X=1, terms=TermSet((1,), ((1, 1),)), P=1)
        f = QIFit(**{**f.__dict__, "Theta": np.array([[1.0], [2.0]])})
        psi = f.predictor_bases[0].eigenfunctions[0]
        phi = f.response_basis.eigenfunctions[0]
        assert np.allclose(reconstruct_beta(f, 1), np.outer(psi, phi))
        assert np.allclose(reconstruct_gamma(f, 1, 1), 2 * np.einsum("r,s,t->rst", psi, psi, phi))

    def test_beta_double_sum_oracle(self):
        f = _random_fit(2, K_Y=2, K_X=3)
        B = f.block(2)
        psi = f.predictor_bases[1].eigenfunctions
        phi = f.response_basis.eigenfunctions
        surf = reconstruct_beta(f, 2)
        for si in (0, 7, 40):
            for ti in (0, 13, 33):
                val = sum(B[l, k] * psi[l, si] * phi[k, ti] for l in range(3) for k in range(2))
                assert abs(surf[si, ti] - val) < 1e-10

    def test_gamma_triple_sum_oracle(self):
        f = _random_fit(3, K_Y=2, K_X=2)
        K = 2
        G = f.block((1, 2))
        pp = f.predictor_bases[0].eigenfunctions
        pq = f.predictor_bases[1].eigenfunctions
        phi = f.response_basis.eigenfunctions
        hyper = reconstruct_gamma(f, 1, 2)
        for r, s, t in [(0, 0, 0), (5, 20, 40), (40, 3, 17)]:
            val = sum(G[l * K + m, k] * pp[l, r] * pq[m, s] * phi[k, t]
                      for l in range(K) for m in range(K) for k in range(2))
            assert abs(hyper[r, s, t] - val) < 1e-10

    def test_unknown_terms(self):
        f = _random_fit(4)
        with pytest.raises(UnknownTerm):
            reconstruct_beta(f, 3)
        with pytest.raises(UnknownTerm):
            reconstruct_gamma(f, 2, 2)


def quadrature_prediction(f, predictors):
    """Integrate reconstructed surfaces against centred curves on the grid."""
    w = GRID.weights
    Xc = [x.values - loc for x, loc in zip(predictors, f.predictor_locations)]
    Y = f.response_location + f.intercept @ f.response_basis.eigenfunctions
    Y = np.tile(Y, (predictors[0].n, 1))
    for p in f.terms.mains:
        Y = Y + (Xc[p - 1] * w) @ reconstruct_beta(f, p)
    for a, b in f.terms.pairs:
        G = reconstruct_gamma(f, a, b)
        Y = Y + np.einsum("ir,is,rst->it", Xc[a - 1] * w, Xc[b - 1] * w, G)
    return Y


class TestPrediction:
    @pytest.mark.parametrize("seed", range(20))
    def test_score_space_equals_quadrature(self, seed):
        f = _random_fit(seed, K_Y=2, K_X=2)
        xs = _fourier_predictors(np.random.default_rng(100 + seed), 7, 2)
        assert np.allclose(predict(f, xs).values, quadrature_prediction(f, xs), atol=1e-6)

    def test_zero_predictors_give_location(self):
        f = _random_fit(5)
        f = QIFit(**{**f.__dict__, "intercept": np.zeros(2)})
        xs = [FunctionalSample(np.tile(loc, (3, 1)), GRID) for loc in f.predictor_locations]
        assert np.allclose(predict(f, xs).values, f.response_location)

    def test_grid_mismatch(self):
        f = _random_fit(6)
        xs = [FunctionalSample(np.zeros((2, 11)), Grid.uniform(11))] * 2
        with pytest.raises(GridMismatch):
            predict(f, xs)


def _reduced_model_data(seed, n=120):
    """Rank-2 predictors, so any two-component basis spans their range exactly."""
    rng = np.random.default_rng(seed)
    s = GRID.points
    psi = np.vstack([np.sqrt(2) * np.sin(np.pi * s), np.sqrt(2) * np.cos(np.pi * s)])
    xs = [FunctionalSample((rng.standard_normal((n, 2)) * [1.0, 0.6]) @ psi + 0.3, GRID)
          for _ in range(2)]
    phi = np.vstack([np.sqrt(2) * np.sin(2 * np.pi * s), np.sqrt(2) * np.cos(2 * np.pi * s)])
    terms = TermSet((1, 2), ((1, 2),))
    return xs, phi, terms, rng


def _classical_scores(xs, K=2):
    out = []
    for x in xs:
        xc, _ = center(x, "mean")
        out.append(classical_fpca_fit(xc, K).scores)
    return out


class TestFit:
    def test_noiseless_in_sample(self):
        xs, phi, terms, rng = _reduced_model_data(0)
        Pi = build_design(_classical_scores(xs), terms)
        Theta = rng.standard_normal((Pi.shape[1], 2))
        Y = FunctionalSample(3.0 + (Pi @ Theta) @ phi, GRID)
        for method in ("classical", "robust"):
            f = fit(Y, xs, 2, 2, terms, method)
            assert np.mean(np.sum((f.fitted - Y.values) ** 2 * GRID.weights, axis=1)) <= 1e-6
            pred = predict(f, xs)
            assert np.allclose(pred.values, f.fitted, atol=1e-8)

    def test_classical_recovers_theta(self):
        xs, phi, terms, rng = _reduced_model_data(1)
        Pi = build_design(_classical_scores(xs), TermSet((1, 2)))
        Theta = rng.standard_normal((4, 2))
        Y = FunctionalSample((Pi @ Theta) @ phi + 7.0, GRID)
        f = fit(Y, xs, 2, 2, TermSet((1, 2)), "classical")
        # per-component sign flips cancel in the fitted surfaces
        for p in (1, 2):
            psi = classical_fpca_fit(center(xs[p - 1], "mean")[0], 2).eigenfunctions
            true_beta = psi.T @ Theta[2 * (p - 1):2 * p] @ phi
            assert np.allclose(reconstruct_beta(f, p), true_beta, atol=1e-4)

    def test_prepared_truncation_bounds(self):
        xs, _, terms, rng = _reduced_model_data(2)
        Y = FunctionalSample(rng.standard_normal((120, len(GRID))), GRID)
        prep = prepare(Y, xs, "classical", 2, 2)
        with pytest.raises(TruncationTooLarge):
            fit_prepared(prep, 3, 1, terms)

    def test_theta_shape(self):
        xs, _, terms, rng = _reduced_model_data(3)
        Y = FunctionalSample(rng.standard_normal((120, len(GRID))), GRID)
        f = fit(Y, xs, 2, 2, terms, "classical")
        assert f.Theta.shape == (terms.n_columns(2), 2)
        assert reconstruct_beta(f, 1).shape == (len(GRID), len(GRID))
        assert reconstruct_gamma(f, 1, 2).shape == (len(GRID),) * 3


class TestSerialisation:
    def test_round_trip(self, tmp_path):
        f = _random_fit(7)
        path = save_model(f, tmp_path / "m.txt")
        assert path.read_text().splitlines()[0] == "robfunc-qifit 1"
        g = load_model(path)
        xs = _fourier_predictors(np.random.default_rng(0), 5, 2)
        assert np.allclose(predict(f, xs).values, predict(g, xs).values, atol=1e-12)
        assert g.terms == f.terms

    def test_rejects_foreign_file(self, tmp_path):
        p = tmp_path / "x.txt"
        p.write_text("hello\n{}")
        with pytest.raises(ValueError):
            load_model(p)
