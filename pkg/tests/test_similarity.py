import numpy as np
import pytest

from megmatch.errors import (
    DimMismatchError,
    KTooLargeError,
    LengthMismatchError,
    TooShortError,
)
from megmatch.similarity import (
    EmbeddingSequence,
    flatten_normalized,
    pearson,
    sim_embeddings,
    similarity_matrix,
    top_k,
    zscore_rows,
)


def naive_pearson(x, y):
    """Independent oracle: direct covariance / variance formula."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    cx = x - x.mean()
    cy = y - y.mean()
    vx = float(cx @ cx)
    vy = float(cy @ cy)
    if vx == 0.0 or vy == 0.0:
        return 0.0
    return float(cx @ cy) / np.sqrt(vx * vy)


def seq(data, rate=10.0):
    return EmbeddingSequence(data=np.asarray(data, dtype=np.float64), rate_hz=rate)


class TestPearson:
    def test_self_correlation(self):
        assert pearson([1, 2, 3], [1, 2, 3]) == pytest.approx(1.0, abs=1e-12)

    def test_anti_correlation(self):
        assert pearson([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0, abs=1e-12)

    def test_hand_value(self):
        # covariance/variance formula by hand: dot=4, both norms sqrt(5) -> 0.8
        assert pearson([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8, abs=1e-12)
        assert naive_pearson([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8, abs=1e-12)

    def test_zero_variance_convention(self):
        assert pearson([5, 5, 5], [1, 2, 3]) == 0.0
        assert pearson([1, 2, 3], [7, 7, 7]) == 0.0

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatchError):
            pearson([1, 2], [1, 2, 3])

    def test_too_short(self):
        with pytest.raises(TooShortError):
            pearson([1.0], [2.0])

    def test_symmetry_exact(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            x = rng.standard_normal(17)
            y = rng.standard_normal(17)
            assert pearson(x, y) == pearson(y, x)

    def test_affine_invariance(self):
        rng = np.random.default_rng(8)
        for _ in range(50):
            x = rng.standard_normal(23)
            y = rng.standard_normal(23)
            a = rng.uniform(0.1, 5.0)
            b = rng.uniform(-10, 10)
            p = pearson(x, y)
            assert pearson(a * x + b, y) == pytest.approx(p, abs=1e-9)
            assert pearson(-a * x + b, y) == pytest.approx(-p, abs=1e-9)

    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(9)
        for _ in range(200):
            x = rng.standard_normal(31)
            y = rng.standard_normal(31)
            assert pearson(x, y) == pytest.approx(naive_pearson(x, y), abs=1e-10)


class TestSimEmbeddings:
    def test_single_row_equals_pearson(self):
        x = [1.0, 4.0, 2.0, 8.0]
        y = [2.0, 1.0, 3.0, 5.0]
        assert sim_embeddings(seq([x]), seq([y])) == pearson(x, y)

    def test_identical_sequences(self):
        rng = np.random.default_rng(10)
        z = seq(rng.standard_normal((5, 40)))
        assert sim_embeddings(z, z) == pytest.approx(1.0, abs=1e-12)

    def test_mean_of_opposite_rows(self):
        z = seq([[1, 2, 3], [1, 2, 3]])
        f = seq([[1, 2, 3], [3, 2, 1]])
        assert sim_embeddings(z, f) == pytest.approx(0.0, abs=1e-12)

    def test_dim_mismatch(self):
        with pytest.raises(DimMismatchError):
            sim_embeddings(seq([[1, 2, 3]]), seq([[1, 2, 3], [1, 2, 3]]))

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatchError):
            sim_embeddings(seq([[1, 2, 3]]), seq([[1, 2]]))


class TestSimilarityMatrix:
    def test_single_pair(self):
        s = seq(np.random.default_rng(0).standard_normal((3, 20)))
        m = similarity_matrix([s], [s])
        assert m.values.shape == (1, 1)
        assert m.values[0, 0] == pytest.approx(1.0, abs=1e-12)

    def test_correlation_orthogonal_pair(self):
        # sample correlation of the two row patterns is exactly zero
        a = seq([[1.0, 2.0, 3.0, 4.0]])
        b = seq([[1.0, -1.0, -1.0, 1.0]])
        m = similarity_matrix([a, b], [a, b]).values
        assert m[0, 0] == pytest.approx(1.0, abs=1e-12)
        assert m[1, 1] == pytest.approx(1.0, abs=1e-12)
        assert abs(m[0, 1]) < 1e-12
        assert abs(m[1, 0]) < 1e-12

    def test_equals_elementwise_loop_bitwise(self):
        rng = np.random.default_rng(11)
        queries = [seq(rng.standard_normal((4, 25))) for _ in range(3)]
        keys = [seq(rng.standard_normal((4, 25))) for _ in range(4)]
        m = similarity_matrix(queries, keys).values
        for i, q in enumerate(queries):
            for j, k in enumerate(keys):
                assert m[i, j] == sim_embeddings(q, k)

    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(12)
        queries = [seq(rng.standard_normal((4, 25))) for _ in range(3)]
        keys = [seq(rng.standard_normal((4, 25))) for _ in range(4)]
        m = similarity_matrix(queries, keys).values
        for i, q in enumerate(queries):
            for j, k in enumerate(keys):
                expected = np.mean(
                    [naive_pearson(q.data[h], k.data[h]) for h in range(q.dim)]
                )
                assert m[i, j] == pytest.approx(expected, abs=1e-10)

    def test_values_in_range(self):
        rng = np.random.default_rng(13)
        queries = [seq(rng.standard_normal((6, 12))) for _ in range(8)]
        m = similarity_matrix(queries, queries).values
        assert np.all(m >= -1 - 1e-12)
        assert np.all(m <= 1 + 1e-12)

    def test_flat_fastpath_agrees(self):
        rng = np.random.default_rng(14)
        queries = [seq(rng.standard_normal((5, 30))) for _ in range(6)]
        keys = [seq(rng.standard_normal((5, 30))) for _ in range(7)]
        qf = flatten_normalized(queries)
        kf = flatten_normalized(keys)
        fast = (qf @ kf.T) / 5
        exact = similarity_matrix(queries, keys).values
        assert np.max(np.abs(fast - exact)) < 1e-10


class TestZscoreRows:
    def test_constant_row_becomes_zero(self):
        out = zscore_rows(np.array([[3.0, 3.0, 3.0], [1.0, 2.0, 3.0]]))
        assert np.all(out[0] == 0.0)
        assert np.linalg.norm(out[1]) == pytest.approx(1.0, abs=1e-12)

    def test_batching_is_bit_stable(self):
        rng = np.random.default_rng(15)
        stack = rng.standard_normal((6, 4, 33))
        full = zscore_rows(stack)
        for i in range(6):
            assert np.array_equal(zscore_rows(stack[i]), full[i])


class TestTopK:
    def test_single_best(self):
        assert top_k([0.1, 0.9, 0.5], 1) == [1]

    def test_tie_breaks_to_lower_index(self):
        assert top_k([0.5, 0.5], 2) == [0, 1]
        assert top_k([0.3, 0.5, 0.5, 0.1], 2) == [1, 2]

    def test_matches_sort_oracle(self):
        rng = np.random.default_rng(16)
        row = rng.standard_normal(100)
        got = top_k(row, 10)
        expected = sorted(range(100), key=lambda i: (-row[i], i))[:10]
        assert got == expected

    def test_k_too_large(self):
        with pytest.raises(KTooLargeError):
            top_k([1.0, 2.0], 3)
        with pytest.raises(KTooLargeError):
            top_k([1.0, 2.0], 0)
