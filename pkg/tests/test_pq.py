import numpy as np
import pytest

from oracles import exhaustive_pq, optimal_two_means
from semcert.errors import CodeError, ConfigError, DimensionError, EmptyInputError, FormatError, InsufficientDataError
from semcert.pq import (PQCodebook, PQConfig, default_config, quantize, reconstruct, reconstruction_mse,
                        train_codebook)
from semcert.vectors import EmbeddingSet

FOUR = EmbeddingSet(("a", "b", "c", "d"), [[0, 0], [0.1, 0], [5, 5], [5.1, 5]])


def _random_set(rng, n, d):
    return EmbeddingSet(tuple(f"r{i}" for i in range(n)), rng.normal(size=(n, d)))


class TestTraining:
    def test_four_points_match_exhaustive_two_means(self):
        _, ca, cb_ = optimal_two_means(FOUR.vectors)
        cb = train_codebook(FOUR, PQConfig(1, 2, 25, 0))
        got = sorted(map(tuple, cb.centroids[0]))
        want = sorted([tuple(ca), tuple(cb_)])
        np.testing.assert_allclose(got, want, atol=1e-6)
        np.testing.assert_allclose(got, [(0.05, 0.0), (5.05, 5.0)], atol=1e-6)

    def test_k_distinct_rows_become_the_centroids(self):
        rows = np.array([[0.5, 1.0], [2.0, -3.0], [4.25, 0.0]])  # float32-exact values
        s = EmbeddingSet(("a", "b", "c"), rows)
        cb = train_codebook(s, PQConfig(1, 3, 10, 4))
        assert sorted(map(tuple, cb.centroids[0])) == sorted(map(tuple, rows))
        assert reconstruction_mse(s, cb) == 0.0

    def test_deterministic(self, rng):
        s = _random_set(rng, 400, 12)
        a = train_codebook(s, PQConfig(3, 16, 10, 99))
        b = train_codebook(s, PQConfig(3, 16, 10, 99))
        assert a.to_bytes() == b.to_bytes()
        c = train_codebook(s, PQConfig(3, 16, 10, 100))
        assert a.to_bytes() != c.to_bytes()

    def test_m_must_divide_dimension(self, rng):
        with pytest.raises(ConfigError) as exc:
            train_codebook(_random_set(rng, 50, 10), PQConfig(3, 4))
        assert exc.value.field == "num_subspaces"

    def test_too_few_rows(self, rng):
        with pytest.raises(InsufficientDataError):
            train_codebook(_random_set(rng, 5, 4), PQConfig(2, 8))

    def test_too_few_distinct_rows(self):
        s = EmbeddingSet(tuple("abcd"), [[1.0, 1.0]] * 3 + [[2.0, 2.0]])
        with pytest.raises(InsufficientDataError):
            train_codebook(s, PQConfig(1, 3))

    def test_centroids_finite_and_distinct_with_empty_cluster_repair(self, rng):
        # heavy duplication forces empty clusters during Lloyd iterations
        base = rng.normal(size=(6, 4))
        rows = np.vstack([np.repeat(base[:2], 100, axis=0), base[2:], rng.normal(size=(30, 4)) * 1e-3 + 7])
        s = EmbeddingSet(tuple(f"r{i}" for i in range(len(rows))), rows)
        cb = train_codebook(s, PQConfig(1, 24, 30, 5))
        assert np.all(np.isfinite(cb.centroids))
        assert len({tuple(c) for c in cb.centroids[0]}) == 24

    def test_default_config(self):
        assert default_config(64).num_subspaces == 8
        assert default_config(128).num_subspaces == 16
        cfg = default_config(100)
        assert 100 % cfg.num_subspaces == 0 and cfg.centroids_per_subspace == 256 and cfg.kmeans_iters == 25


class TestQuantize:
    def test_toy_example(self, toy_codebook):
        e = [0.9, 1.1, 0.1, -0.1]
        code = quantize(e, toy_codebook)
        np.testing.assert_array_equal(code, exhaustive_pq(np.array(e), toy_codebook.centroids)[0])
        np.testing.assert_array_equal(code, [1, 0])

    def test_exact_concatenation(self, toy_codebook):
        np.testing.assert_array_equal(quantize([1, 1, 0, 0], toy_codebook), [1, 0])
        np.testing.assert_array_equal(reconstruct(quantize([0, 0, 1, 1], toy_codebook), toy_codebook), [0, 0, 1, 1])

    def test_tie_goes_to_lowest_index(self):
        cb = PQCodebook([[[0.0, 0.0], [2.0, 0.0]]])
        assert quantize([1.0, 0.0], cb)[0] == 0

    def test_dimension_mismatch(self, toy_codebook):
        with pytest.raises(DimensionError):
            quantize([1, 2, 3], toy_codebook)

    def test_reconstruct(self, toy_codebook):
        np.testing.assert_array_equal(reconstruct([1, 0], toy_codebook), [1, 1, 0, 0])

    def test_reconstruct_out_of_range(self, toy_codebook):
        with pytest.raises(CodeError):
            reconstruct([2, 0], toy_codebook)
        with pytest.raises(CodeError):
            reconstruct([0], toy_codebook)

    def test_matches_exhaustive_search(self, rng):
        for _ in range(30):
            m, k, s = int(rng.integers(1, 4)), int(rng.integers(2, 7)), int(rng.integers(1, 4))
            cb = PQCodebook(rng.normal(size=(m, k, s)))
            e = rng.normal(size=m * s)
            best, best_err = exhaustive_pq(e, cb.centroids)
            code = quantize(e, cb)
            np.testing.assert_array_equal(code, best)
            recon = reconstruct(code, cb)
            assert float(np.sum((e - recon) ** 2)) == pytest.approx(best_err, abs=1e-12)


class TestReconstructionMSE:
    def test_zero_on_centroids(self, toy_codebook):
        s = EmbeddingSet(("a", "b"), [[1, 1, 0, 0], [0, 0, 0, 0]])
        assert reconstruction_mse(s, toy_codebook) == 0.0

    def test_four_point_hand_value(self):
        # every point sits 0.05 from its cluster mean: residual 0.05**2
        cb = train_codebook(FOUR, PQConfig(1, 2, 25, 0))
        assert reconstruction_mse(FOUR, cb) == pytest.approx(0.0025, abs=1e-7)

    def test_empty(self, toy_codebook):
        with pytest.raises(EmptyInputError):
            reconstruction_mse(EmbeddingSet.from_rows([], dim=4), toy_codebook)

    def test_non_increasing_in_k(self, rng):
        s = _random_set(rng, 600, 8)
        mses = [reconstruction_mse(s, train_codebook(s, PQConfig(2, k, 25, 1))) for k in (2, 4, 8, 16)]
        assert all(b <= a for a, b in zip(mses, mses[1:])), mses


class TestCodebookFile:
    def test_round_trip(self, tmp_path, rng):
        cb = train_codebook(_random_set(rng, 100, 6), PQConfig(3, 4, 5, 2))
        cb.save(tmp_path / "c.scpq")
        loaded = PQCodebook.load(tmp_path / "c.scpq")
        assert loaded == cb
        assert (tmp_path / "c.scpq").read_bytes() == loaded.to_bytes()

    def test_layout(self, toy_codebook):
        data = toy_codebook.to_bytes()
        assert data[:4] == b"SCPQ"
        assert [int.from_bytes(data[i:i + 4], "little") for i in range(4, 20, 4)] == [1, 2, 2, 2]
        assert len(data) == 20 + 4 * 8

    def test_bad_magic(self):
        with pytest.raises(FormatError):
            PQCodebook.from_bytes(b"NOPE" + bytes(16))
