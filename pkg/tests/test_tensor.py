import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fpaccel.tensor import (
    SyntheticSpec, generate_synthetic, khatri_rao, kruskal_full, load_tensor, refold,
    save_tensor, unfold,
)


def _rand(rng, *shape):
    return rng.standard_normal(shape)


class TestKhatriRao:
    def test_small_example(self):
        out = khatri_rao(np.array([[1.0], [2.0]]), np.array([[3.0], [4.0]]))
        np.testing.assert_array_equal(out, [[3], [4], [6], [8]])

    def test_ones_row_gives_elementwise_product(self):
        b = np.array([[2.0, -3.0, 5.0]])
        np.testing.assert_array_equal(khatri_rao(np.ones((1, 3)), b), b)

    def test_matches_loop(self):
        rng = np.random.default_rng(0)
        A, B = _rand(rng, 3, 2), _rand(rng, 2, 2)
        ref = np.zeros((6, 2))
        for i, j, c in itertools.product(range(3), range(2), range(2)):
            ref[i * 2 + j, c] = A[i, c] * B[j, c]
        np.testing.assert_allclose(khatri_rao(A, B), ref, rtol=0, atol=1e-15)

    def test_column_mismatch(self):
        with pytest.raises(ValueError):
            khatri_rao(np.ones((2, 2)), np.ones((2, 3)))

    @given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 4), st.integers(0, 2**32 - 1))
    @settings(max_examples=30, deadline=None)
    def test_gram_identity(self, i, j, r, seed):
        rng = np.random.default_rng(seed)
        A, B = _rand(rng, i, r), _rand(rng, j, r)
        K = khatri_rao(A, B)
        np.testing.assert_allclose(K.T @ K, (A.T @ A) * (B.T @ B), atol=1e-12 * (1 + np.abs(K).max() ** 2))


class TestUnfold:
    def test_rank_one_identity(self):
        rng = np.random.default_rng(1)
        a, b, c = _rand(rng, 3), _rand(rng, 4), _rand(rng, 5)
        T = np.einsum("i,j,k->ijk", a, b, c)
        expected = np.outer(a, khatri_rao(c[:, None], b[:, None])[:, 0])
        np.testing.assert_allclose(unfold(T, 0), expected, atol=1e-14)

    def test_refold_is_exact_inverse(self):
        T = np.random.default_rng(2).standard_normal((3, 4, 5))
        for mode in range(3):
            assert np.array_equal(refold(unfold(T, mode), mode, T.shape), T)

    def test_index_map_2x2x2(self):
        T = np.arange(1, 9, dtype=float).reshape((2, 2, 2), order="F")
        # column index j + 2*k for mode 0, first remaining index fastest
        expected = np.array([[T[i, j, k] for k in range(2) for j in range(2)] for i in range(2)])
        np.testing.assert_array_equal(unfold(T, 0), expected)
        expected1 = np.array([[T[i, j, k] for k in range(2) for i in range(2)] for j in range(2)])
        np.testing.assert_array_equal(unfold(T, 1), expected1)

    def test_mode_out_of_range(self):
        with pytest.raises(ValueError):
            unfold(np.zeros((2, 2, 2)), 3)

    @given(st.lists(st.integers(1, 4), min_size=2, max_size=4), st.integers(0, 2**32 - 1))
    @settings(max_examples=30, deadline=None)
    def test_norm_preserved(self, shape, seed):
        T = np.random.default_rng(seed).standard_normal(shape)
        for m in range(len(shape)):
            assert np.isclose(np.linalg.norm(unfold(T, m)), np.linalg.norm(T), rtol=1e-14)


class TestKruskal:
    def test_rank_one(self):
        a, b, c = np.array([1.0, 2]), np.array([3.0, -1, 2]), np.array([0.5, 4])
        T = kruskal_full([a[:, None], b[:, None], c[:, None]])
        for i, j, k in itertools.product(range(2), range(3), range(2)):
            assert T[i, j, k] == a[i] * b[j] * c[k]

    def test_zero_factor(self):
        rng = np.random.default_rng(3)
        T = kruskal_full([_rand(rng, 2, 2), np.zeros((3, 2)), _rand(rng, 4, 2)])
        assert not np.any(T)

    def test_matches_loop(self):
        rng = np.random.default_rng(4)
        F = [_rand(rng, 2, 2) for _ in range(3)]
        ref = np.zeros((2, 2, 2))
        for i, j, k, c in itertools.product(range(2), range(2), range(2), range(2)):
            ref[i, j, k] += F[0][i, c] * F[1][j, c] * F[2][k, c]
        np.testing.assert_allclose(kruskal_full(F), ref, atol=1e-14)

    def test_sum_of_columns(self):
        rng = np.random.default_rng(5)
        F = [_rand(rng, n, 3) for n in (3, 4, 2)]
        parts = sum(kruskal_full([a[:, [j]] for a in F]) for j in range(3))
        np.testing.assert_allclose(kruskal_full(F), parts, atol=1e-12)

    def test_unfolding_convention(self):
        rng = np.random.default_rng(6)
        F = [_rand(rng, n, 2) for n in (3, 4, 5)]
        T = kruskal_full(F)
        np.testing.assert_allclose(unfold(T, 1), F[1] @ khatri_rao(F[2], F[0]).T, atol=1e-13)

    def test_rank_mismatch(self):
        with pytest.raises(ValueError):
            kruskal_full([np.ones((2, 2)), np.ones((2, 3))])


class TestSynthetic:
    def _noiseless(self, c, seed=0):
        spec = SyntheticSpec((10, 11, 12), 3, c, 0.0, 0.0, seed)
        return generate_synthetic(spec)

    def test_orthonormal_factors_without_collinearity(self):
        _, truth = self._noiseless(0.0)
        for A in truth:
            np.testing.assert_allclose(A.T @ A, np.eye(3), atol=1e-12)

    def test_collinearity(self):
        _, truth = self._noiseless(0.5)
        for A in truth:
            G = A.T @ A
            np.testing.assert_allclose(np.diag(G), 1.0, atol=1e-12)
            np.testing.assert_allclose(G[~np.eye(3, dtype=bool)], 0.5, atol=1e-12)

    def test_homoscedastic_ratio(self):
        Z, truth = generate_synthetic(SyntheticSpec((8, 8, 8), 2, 0.3, 1.0, 0.0, 1))
        T = kruskal_full(truth)
        ratio = np.linalg.norm(Z - T) / np.linalg.norm(T)
        assert abs(ratio - 99 ** -0.5) < 1e-12

    def test_heteroscedastic_ratio(self):
        spec = SyntheticSpec((8, 8, 8), 2, 0.3, 1.0, 5.0, 1)
        Z, truth = generate_synthetic(spec)
        Z_hat, _ = generate_synthetic(SyntheticSpec((8, 8, 8), 2, 0.3, 1.0, 0.0, 1))
        ratio = np.linalg.norm(Z - Z_hat) / np.linalg.norm(Z_hat)
        assert abs(ratio - (100 / 5 - 1) ** -0.5) < 1e-12

    def test_noiseless_is_exact_low_rank(self):
        Z, truth = self._noiseless(0.5)
        np.testing.assert_array_equal(Z, kruskal_full(truth))

    def test_deterministic(self):
        spec = SyntheticSpec((6, 7, 8), 2, 0.5, 1.0, 1.0, 42)
        a, _ = generate_synthetic(spec)
        b, _ = generate_synthetic(spec)
        c, _ = generate_synthetic(SyntheticSpec((6, 7, 8), 2, 0.5, 1.0, 1.0, 43))
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    @pytest.mark.parametrize("kwargs", [
        dict(rank=5, dims=(4, 6, 6)),
        dict(collinearity=1.0),
        dict(noise_homo=100.0),
        dict(noise_hetero=-1.0),
    ])
    def test_invalid_specs(self, kwargs):
        base = dict(dims=(5, 5, 5), rank=2, collinearity=0.5, noise_homo=1.0,
                    noise_hetero=1.0, seed=0)
        base.update(kwargs)
        with pytest.raises(ValueError):
            SyntheticSpec(**base)

    def test_serialization_roundtrip(self, tmp_path):
        Z, _ = generate_synthetic(SyntheticSpec((3, 4, 5), 2, 0.5, 1.0, 1.0, 7))
        path = tmp_path / "z.txt"
        save_tensor(path, Z, 2)
        assert path.read_text().splitlines()[:2] == ["dims 3 4 5", "rank 2"]
        back, rank = load_tensor(path)
        assert rank == 2
        assert np.array_equal(back, Z)
