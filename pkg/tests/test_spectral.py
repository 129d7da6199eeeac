import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from herofilter.errors import NumericalError, ShapeError
from herofilter.graph import normalize_adjacency
from herofilter.spectral import (
    PolyFilter,
    band_filter,
    eigendecompose,
    filter_response,
    fix_signs,
    gather_relevance,
    gather_relevance_grad,
    graph_fourier,
    inverse_graph_fourier,
    low_pass_reference,
    relevance_matrix,
    relevance_response,
    relevance_response_grad,
)

from conftest import make_graph, random_graph

S = 1 / math.sqrt(2)


class TestEigendecompose:
    def test_two_by_two(self):
        dec = eigendecompose(np.array([[0.0, 1.0], [1.0, 0.0]]))
        np.testing.assert_allclose(dec.eigenvalues, [-1.0, 1.0], atol=1e-14)
        np.testing.assert_allclose(dec.eigenvectors, [[S, S], [-S, S]], atol=1e-14)

    def test_zero_matrix(self):
        dec = eigendecompose(np.zeros((3, 3)))
        np.testing.assert_array_equal(dec.eigenvalues, np.zeros(3))
        np.testing.assert_array_equal(dec.eigenvectors, np.eye(3))

    def test_triangle(self, triangle):
        dec = eigendecompose(normalize_adjacency(triangle))
        np.testing.assert_allclose(dec.eigenvalues, [-0.5, -0.5, 1.0], atol=1e-13)

    def test_asymmetric_rejected(self):
        with pytest.raises(ShapeError):
            eigendecompose(np.array([[0.0, 1.0], [0.0, 0.0]]))

    def test_sweep_cap(self):
        a = normalize_adjacency(random_graph(20, 0.4, 1)).matrix
        with pytest.raises(NumericalError):
            eigendecompose(a, max_sweeps=1)

    @pytest.mark.parametrize("seed", range(6))
    def test_matches_lapack(self, seed):
        a = normalize_adjacency(random_graph(40, 0.15, seed)).matrix
        jac = eigendecompose(a)
        ref = eigendecompose(a, method="lapack")
        np.testing.assert_allclose(jac.eigenvalues, ref.eigenvalues, atol=1e-11)
        n = a.shape[0]
        assert np.linalg.norm(jac.eigenvectors @ np.diag(jac.eigenvalues) @ jac.eigenvectors.T - a) <= 1e-8 * n
        assert np.abs(jac.eigenvectors.T @ jac.eigenvectors - np.eye(n)).max() <= 1e-8
        assert np.all(np.diff(jac.eigenvalues) >= 0)

    @given(st.integers(0, 10_000))
    @settings(max_examples=25, deadline=None)
    def test_sign_rule(self, seed):
        a = normalize_adjacency(random_graph(12, 0.3, seed)).matrix
        u = eigendecompose(a).eigenvectors
        for j in range(u.shape[1]):
            i = np.argmax(np.abs(u[:, j]) >= np.abs(u[:, j]).max() * (1 - 1e-9))
            assert u[i, j] > 0

    def test_fix_signs_tie_uses_lowest_index(self):
        u = np.array([[-S], [S]])
        np.testing.assert_allclose(fix_signs(u), [[S], [-S]])


class TestFourier:
    def test_identity_basis(self):
        x = np.arange(4.0)
        np.testing.assert_array_equal(graph_fourier(np.eye(4), x), x)

    def test_zero_signal(self):
        u = eigendecompose(normalize_adjacency(random_graph(8, 0.4, 0))).eigenvectors
        np.testing.assert_array_equal(graph_fourier(u, np.zeros(8)), np.zeros(8))

    def test_parseval_and_inverse(self):
        u = eigendecompose(normalize_adjacency(random_graph(25, 0.2, 4))).eigenvectors
        rng = np.random.default_rng(0)
        for _ in range(100):
            x = rng.standard_normal(25)
            xh = graph_fourier(u, x)
            assert abs(np.linalg.norm(xh) - np.linalg.norm(x)) <= 1e-9
            np.testing.assert_allclose(inverse_graph_fourier(u, xh), x, atol=1e-9)

    def test_shape_error(self):
        with pytest.raises(ShapeError):
            graph_fourier(np.eye(3), np.zeros(4))


class TestFilters:
    lam = np.array([-1.0, -0.5, 0.0, 0.5, 1.0])

    @pytest.mark.parametrize("act", ["identity", "tanh", "relu"])
    def test_zero_weights(self, act):
        f = PolyFilter(np.zeros((3, 5)), act)
        np.testing.assert_array_equal(filter_response(f, self.lam), np.zeros(5))

    def test_linear(self):
        f = PolyFilter(np.ones((1, 5)), "identity")
        np.testing.assert_array_equal(filter_response(f, self.lam), self.lam)

    def test_tanh_order_two(self):
        f = PolyFilter.constant(2, 1, activation="tanh")
        g = filter_response(f, np.array([0.5]))
        np.testing.assert_allclose(g, [math.tanh(0.5) + math.tanh(0.25)], rtol=1e-15)
        assert abs(g[0] - 0.7071) < 1e-4

    def test_shared_weights_broadcast(self):
        shared = PolyFilter(np.array([[0.3], [-0.7]]))
        full = PolyFilter(np.repeat([[0.3], [-0.7]], 5, axis=1))
        np.testing.assert_array_equal(filter_response(shared, self.lam), filter_response(full, self.lam))

    def test_permutation_equivariant(self):
        rng = np.random.default_rng(2)
        f = PolyFilter(rng.standard_normal((3, 5)))
        perm = rng.permutation(5)
        g = filter_response(f, self.lam)
        gp = filter_response(PolyFilter(f.weights[:, perm]), self.lam[perm])
        np.testing.assert_array_equal(gp, g[perm])

    def test_relevance_without_activation(self):
        f = PolyFilter(np.full((1, 5), 2.0), "tanh", apply_activation_in_relevance=False)
        np.testing.assert_allclose(relevance_response(f, self.lam), 2.0 * self.lam)

    def test_low_pass(self):
        np.testing.assert_allclose(low_pass_reference([1.0, -1.0]), [1.0, 1 / 3])
        np.testing.assert_allclose(low_pass_reference([-0.5, -0.5, 1.0]), [0.4, 0.4, 1.0])

    def test_low_pass_round_off_stays_in_unit_interval(self):
        g = low_pass_reference([1.0 + 4e-16, -1.0 - 4e-16])
        assert g.max() == 1.0 and g.min() == 1 / 3

    def test_band(self):
        lam = np.array([-0.5, -0.5, 1.0])
        np.testing.assert_array_equal(band_filter(lam, 0.0, 2.0), np.ones(3))
        np.testing.assert_array_equal(band_filter(lam, 0.0, 0.4), [0.0, 0.0, 1.0])
        np.testing.assert_array_equal(band_filter(lam, 0.4, 0.8), np.zeros(3))

    def test_band_top_closed(self):
        np.testing.assert_array_equal(band_filter(np.array([-1.0, -1.0 - 1e-15]), 1.6, 2.0), [1.0, 1.0])

    def test_default_bands_partition(self):
        lam = np.linspace(-1, 1, 101)
        bands = [(0, 0.4), (0.4, 0.8), (0.8, 1.2), (1.2, 1.6), (1.6, 2.0)]
        total = sum(band_filter(lam, lo, hi) for lo, hi in bands)
        np.testing.assert_array_equal(total, np.ones_like(lam))


class TestRelevance:
    def test_zero_filter(self):
        dec = eigendecompose(normalize_adjacency(random_graph(6, 0.5, 0)))
        np.testing.assert_array_equal(relevance_matrix(dec, PolyFilter(np.zeros((2, 6)))), np.zeros((6, 6)))

    def test_reproduces_adjacency(self):
        a = normalize_adjacency(random_graph(10, 0.4, 1)).matrix
        dec = eigendecompose(a)
        np.testing.assert_allclose(relevance_matrix(dec, PolyFilter(np.ones((1, 10)), "identity")), a, atol=1e-12)

    @pytest.mark.parametrize("k", [1, 2, 3])
    def test_matrix_powers(self, k):
        a = normalize_adjacency(random_graph(50, 0.1, k)).matrix
        dec = eigendecompose(a)
        w = np.zeros((k, 50))
        w[k - 1] = 1.0
        r = relevance_matrix(dec, PolyFilter(w, "identity"))
        np.testing.assert_allclose(r, np.linalg.matrix_power(a, k), atol=1e-8)

    def test_brute_force_triple_product(self):
        a = normalize_adjacency(random_graph(5, 0.6, 3)).matrix
        dec = eigendecompose(a)
        f = PolyFilter(np.random.default_rng(0).standard_normal((3, 5)))
        q = filter_response(f, dec.eigenvalues)
        u = dec.eigenvectors
        ref = np.zeros((5, 5))
        for i in range(5):
            for j in range(5):
                ref[i, j] = sum(u[i, k] * q[k] * u[j, k] for k in range(5))
        r = relevance_matrix(dec, f)
        np.testing.assert_allclose(r, ref, atol=1e-9)
        assert np.abs(r - r.T).max() <= 1e-9

    def test_gather_matches_dense(self):
        dec = eigendecompose(normalize_adjacency(random_graph(15, 0.3, 5)))
        rng = np.random.default_rng(1)
        q = rng.standard_normal(15)
        idx = rng.integers(0, 15, (15, 4))
        r = dec.eigenvectors @ np.diag(q) @ dec.eigenvectors.T
        np.testing.assert_allclose(gather_relevance(dec, q, idx), np.take_along_axis(r, idx, 1), atol=1e-12)

    def test_gather_gradient_chain(self):
        dec = eigendecompose(normalize_adjacency(random_graph(12, 0.3, 6)))
        rng = np.random.default_rng(2)
        f = PolyFilter(0.5 * rng.standard_normal((2, 12)))
        idx = rng.integers(0, 12, (12, 3))
        up = rng.standard_normal((12, 3))

        def loss():
            return float(np.sum(up * gather_relevance(dec, relevance_response(f, dec.eigenvalues), idx)))

        grad = relevance_response_grad(f, dec.eigenvalues, gather_relevance_grad(dec, idx, up))
        h = 1e-6
        for pos in np.ndindex(f.weights.shape):
            w0 = f.weights[pos]
            f.weights[pos] = w0 + h
            lp = loss()
            f.weights[pos] = w0 - h
            lm = loss()
            f.weights[pos] = w0
            assert abs((lp - lm) / (2 * h) - grad[pos]) <= 1e-6 * max(1.0, abs(grad[pos]))
