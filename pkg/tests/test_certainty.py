import math

import numpy as np
import pytest

from semcert.certainty import (CertaintyScore, Scorer, SigmaEstimate, assess_reliability, combine, density_score,
                               estimate_sigma, normalize_density, recall_bound, stability_from_error,
                               stability_score)
from semcert.errors import EmptyInputError, RangeError
from semcert.gravity import generate_instance
from semcert.index import Index, NeighborList
from semcert.pq import PQCodebook, PQConfig, quantize, reconstruct, train_codebook
from semcert.vectors import EmbeddingSet


def _nl(dists):
    d = np.asarray(dists, dtype=float)
    return NeighborList(tuple(f"n{i}" for i in range(len(d))), d, np.arange(len(d)))


class TestSigma:
    def test_zero_mse_floored(self, toy_codebook):
        cal = EmbeddingSet(("a", "b"), [[1, 1, 0, 0], [0, 0, 1, 1]])
        assert estimate_sigma("global", cal, toy_codebook).value == 1e-12

    def test_local_mean(self):
        assert estimate_sigma("local", neighbors=_nl([1, 2, 3])).value == 2.0

    def test_global_four_points(self):
        four = EmbeddingSet(tuple("abcd"), [[0, 0], [0.1, 0], [5, 5], [5.1, 5]])
        cb = train_codebook(four, PQConfig(1, 2, 25, 0))
        assert estimate_sigma("global", four, cb).value == pytest.approx(0.0025, abs=1e-7)

    def test_empty_inputs(self, toy_codebook):
        with pytest.raises(EmptyInputError):
            estimate_sigma("global", EmbeddingSet.from_rows([], dim=4), toy_codebook)
        with pytest.raises(EmptyInputError):
            estimate_sigma("local", neighbors=_nl([]))


class TestStability:
    def test_exact_reconstruction(self, toy_codebook):
        assert stability_score([1, 1, 0, 0], toy_codebook, SigmaEstimate("global", 0.3)) == 1.0

    @pytest.mark.parametrize("ratio, expected", [(2, 0.367879), (4, 0.135335)])
    def test_formula(self, ratio, expected):
        sigma = 0.7
        assert stability_from_error(ratio * sigma, sigma) == pytest.approx(math.exp(-ratio / 2), rel=1e-15)
        assert stability_from_error(ratio * sigma, sigma) == pytest.approx(expected, abs=1e-6)

    def test_error_of_two_sigma(self, toy_codebook):
        # residual (0.5, 0.5, 0, 0) -> squared error 0.5; sigma 0.25 -> exp(-1)
        s = stability_score([0.5, 0.5, 0.0, 0.0], toy_codebook, 0.25)
        assert s == pytest.approx(math.exp(-1))

    def test_strictly_decreasing_and_in_range(self, rng):
        errs = np.sort(rng.uniform(0, 50, 1000))
        s = stability_from_error(errs, 1.3)
        assert np.all(np.diff(s) < 0)
        assert np.all((s > 0) & (s <= 1))

    def test_underflow_stays_positive(self):
        assert stability_from_error(1e6, 1e-12) > 0


class TestDensity:
    def test_examples(self):
        assert density_score(_nl([1, 2, 3]), 1e-6) == pytest.approx(3 / 6.000001, rel=1e-15)
        assert density_score(_nl([0, 0]), 1e-6) == pytest.approx(2e6)
        assert density_score(_nl([99]), 1.0) == pytest.approx(0.01)

    def test_empty(self):
        with pytest.raises(EmptyInputError):
            density_score(_nl([]))

    def test_strictly_decreasing_in_any_distance(self, rng):
        for _ in range(500):
            d = rng.uniform(0, 10, int(rng.integers(1, 20)))
            bumped = d.copy()
            bumped[rng.integers(d.size)] += rng.uniform(1e-6, 1)
            assert density_score(bumped) < density_score(d)


class TestNormalize:
    def test_examples(self):
        cal = np.arange(1, 102, dtype=float)
        assert normalize_density(1000.0, cal) == 1.0
        assert normalize_density(51.0, cal) == pytest.approx(51 / 101)
        assert normalize_density(0.5, cal) == 1 / 102

    def test_empty(self):
        with pytest.raises(EmptyInputError):
            normalize_density(1.0, [])


class TestCombine:
    def test_examples(self):
        assert combine(0.5, 0.5) == 0.5
        assert combine(0.2, 0.8) == pytest.approx(0.32)
        assert combine(0.5, 1.0, "linear", 0.6, 0.4) == pytest.approx(0.7)
        assert combine(0.5, 0.5, "product") == 0.25

    @pytest.mark.parametrize("s, n", [(0.0, 0.5), (0.5, 1.2), (-1, 0.5), (np.nan, 0.5)])
    def test_range_error(self, s, n):
        with pytest.raises(RangeError):
            combine(s, n)

    def test_linear_weights_must_sum_to_one(self):
        with pytest.raises(RangeError):
            combine(0.5, 0.5, "linear", 0.5, 0.6)

    def test_symmetry(self, rng):
        for s, n in rng.uniform(1e-6, 1, (500, 2)):
            assert combine(s, n) == pytest.approx(combine(n, s), rel=1e-15)
            assert combine(s, n, "product") == combine(n, s, "product")
            assert combine(s, n, "linear", 0.5, 0.5) == pytest.approx(combine(n, s, "linear", 0.5, 0.5))

    def test_vanishes_with_either_component(self):
        for comb in ("harmonic", "product"):
            vals = [combine(x, 0.7, comb) for x in (1e-2, 1e-4, 1e-8, 1e-12)]
            assert all(b < a for a, b in zip(vals, vals[1:])) and vals[-1] < 1e-11


class TestRecallBound:
    def test_value(self):
        assert recall_bound(1.0, 10, 128) == pytest.approx(1 - math.exp(-10 / 256), rel=1e-14)
        assert recall_bound(1.0, 10, 128) == pytest.approx(0.038310, abs=1e-6)

    def test_limit(self):
        assert recall_bound(1e-300, 10, 128) == pytest.approx(0.0, abs=1e-299)

    def test_monotone(self):
        assert recall_bound(0.9, 10, 64) > recall_bound(0.1, 10, 64)
        assert recall_bound(0.5, 20, 64) > recall_bound(0.5, 10, 64)
        assert recall_bound(0.5, 10, 32) > recall_bound(0.5, 10, 64)


@pytest.fixture(scope="module")
def toy():
    inst = generate_instance(num_wells=3, docs_per_well=60, queries_per_well=8, dim=8, seed=11)
    cb = train_codebook(inst.corpus, PQConfig(2, 16, 25, 11))
    ix = Index(inst.corpus)
    return inst, cb, ix, Scorer.calibrate(ix, cb, k=5, seed=11)


class TestScorer:
    def test_fields_populated(self, toy):
        inst, cb, ix, scorer = toy
        s = scorer.score(inst.queries[0], inst.queries.ids[0])
        assert isinstance(s, CertaintyScore) and s.query_id == inst.queries.ids[0]
        assert 0 < s.stability <= 1 and 0 < s.norm_density <= 1 and 0 < s.combined <= 1
        assert s.combined == pytest.approx(combine(s.stability, s.norm_density))
        assert s.params.k == 5 and s.combiner == "harmonic"
        assert set(s.to_dict()) == {"query_id", "stability", "raw_density", "norm_density", "combined",
                                    "combiner", "params"}
        assert CertaintyScore.from_dict(s.to_dict()) == s

    def test_codebook_fixed_point_has_unit_stability(self, toy):
        inst, cb, ix, scorer = toy
        q = reconstruct(quantize(inst.queries[3], cb), cb)
        assert scorer.score(q).stability == 1.0

    def test_centroid_query_scores_highest(self, toy):
        """Brute force: the codebook-exact point nearest a deep well centre beats every query."""
        inst, cb, ix, scorer = toy
        deep = next(w for w in inst.wells if w.depth_class == "deep")
        probe = reconstruct(quantize(deep.centroid, cb), cb)
        best = scorer.score(probe).combined
        others = [scorer.score(q).combined for q in inst.queries.vectors]
        assert best >= max(others)

    def test_batch_matches_single(self, toy):
        inst, cb, ix, scorer = toy
        nbrs = [scorer.neighbors(q) for q in inst.queries.vectors]
        batch = scorer.score_batch(inst.queries.vectors, inst.queries.ids, nbrs)
        for qid, q, b in zip(inst.queries.ids, inst.queries.vectors, batch):
            single = scorer.score(q, qid)
            assert single.combined == pytest.approx(b.combined, rel=1e-12)
            assert single.raw_density == pytest.approx(b.raw_density, rel=1e-12)

    def test_order_independent(self, toy):
        inst, cb, ix, scorer = toy
        fwd = {qid: scorer.score(q, qid) for qid, q in zip(inst.queries.ids, inst.queries.vectors)}
        rev = {qid: scorer.score(q, qid) for qid, q in reversed(list(zip(inst.queries.ids, inst.queries.vectors)))}
        assert fwd == rev

    def test_assess_reliability_deterministic(self, toy):
        inst, cb, ix, scorer = toy
        a = assess_reliability(inst.queries[1], ix, cb, K=5, query_id="x", seed=3)
        b = assess_reliability(inst.queries[1], ix, cb, K=5, query_id="x", seed=3)
        assert a == b

    def test_local_sigma_mode(self, toy):
        inst, cb, ix, _ = toy
        scorer = Scorer.calibrate(ix, cb, k=5, sigma_mode="local")
        q = inst.queries[2]
        nl = scorer.neighbors(q)
        s = scorer.score(q)
        expected = stability_score(q, cb, estimate_sigma("local", neighbors=nl))
        assert s.stability == pytest.approx(expected)

    @pytest.mark.parametrize("comb", ["harmonic", "linear", "product"])
    def test_combiners_selectable(self, toy, comb):
        inst, cb, ix, scorer = toy
        s = scorer.with_combiner(comb).score(inst.queries[0])
        assert s.combiner == comb
        assert s.combined == pytest.approx(combine(s.stability, s.norm_density, comb))
