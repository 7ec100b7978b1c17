import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from conftest import random_data
from oracles import bonferroni_total
from hdht import calibrate as cal
from hdht.collection import LASSO, S1, CollectionBuilder, deterministic_collection
from hdht.errors import MissingThreshold
from hdht.numkit import log_binom
from hdht.stats import PValueTriple, score_subsets


def _perm_thresholds(log_c_v, log_c_1, p, statistic=cal.CLR):
    return cal.CalibrationThresholds(cal.PERMUTATION, 0.05, p, statistic, log_c_v=log_c_v, log_c_1=log_c_1)


class TestBonferroni:
    def test_example(self):
        th = cal.bonferroni_thresholds(None, 10, 100, 0.05)
        lv, l1, l2 = th.log_thresholds([1])
        assert math.exp(lv[0]) == pytest.approx(2.5e-5, rel=1e-12)
        assert math.exp(l1[0]) == pytest.approx(1.25e-5, rel=1e-12)
        assert l1[0] == l2[0]

    def test_full_subset(self):
        th = cal.bonferroni_thresholds(None, 6, 6, 0.05)
        assert math.exp(th.log_thresholds([6])[0][0]) == pytest.approx(0.05 / 12, rel=1e-12)

    def test_budget_sums_to_alpha(self):
        p, d_max, alpha = 8, 3, 0.05
        th = cal.bonferroni_thresholds(None, d_max, p, alpha)
        total = 0.0
        for s in range(1, d_max + 1):
            lv, l1, l2 = th.log_thresholds([s])
            total += math.comb(p, s) * (math.exp(lv[0]) + math.exp(l1[0]) + math.exp(l2[0]))
        assert total == pytest.approx(alpha, rel=1e-12)
        assert bonferroni_total(p, d_max, alpha) == pytest.approx(alpha, rel=1e-12)

    def test_fisher_family(self):
        th = cal.bonferroni_thresholds(None, 4, 20, 0.05, cal.FISHER)
        lv, l1, l2 = th.log_thresholds([2])
        assert math.exp(lv[0]) == pytest.approx(0.05 / 4 / math.comb(20, 2))
        assert l1[0] == -np.inf and l2[0] == -np.inf

    def test_outside_ambient_family(self):
        th = cal.bonferroni_thresholds(None, 3, 10, 0.05)
        with pytest.raises(MissingThreshold):
            th.log_thresholds([4])
        coll = deterministic_collection("SleqK", 5, 3)
        with pytest.raises(MissingThreshold):
            cal.bonferroni_thresholds(coll, 2, 5, 0.05)

    def test_alpha_checked(self):
        with pytest.raises(ValueError):
            cal.bonferroni_thresholds(None, 2, 5, 1.0)


class TestPermutationThresholds:
    @given(st.floats(-30, 5), st.floats(-30, 5), st.integers(1, 500), st.integers(1, 10))
    def test_depend_on_size_only_through_binomial(self, lcv, lc1, p, s):
        s = min(s, p)
        th = _perm_thresholds(lcv, lc1, p)
        lv, l1, l2 = th.log_thresholds([s])
        assert lv[0] + log_binom(p, s) == pytest.approx(lcv, abs=1e-9)
        assert l1[0] + log_binom(p, s) == pytest.approx(lc1, abs=1e-9)
        assert l1[0] == l2[0]

    def test_order_statistic(self):
        assert cal.order_statistic_index(0.025, 100) == 2
        assert cal.order_statistic_index(0.05, 100) == 5
        assert cal.order_statistic_index(0.025, 20) == 1
        assert cal.order_statistic_index(0.025, 399) == 9

    def test_draws_are_reproducible_permutations(self):
        a = cal.draw_permutation(3, 7, 50)
        assert_array_equal(np.sort(a), np.arange(50))
        assert_array_equal(a, cal.draw_permutation(3, 7, 50))
        assert not np.array_equal(a, cal.draw_permutation(3, 8, 50))

    def test_calibration_uses_second_order_statistic(self, rng):
        d = random_data(rng, 20, 20, 6)
        th = cal.permutation_calibrate(d, CollectionBuilder(LASSO), 100, 0.05, seed=1)
        assert len(th.draws) == 100
        assert th.log_c_v == np.sort([x.log_c_v for x in th.draws])[1]
        assert th.log_c_1 == np.sort([x.log_c_1 for x in th.draws])[1]
        c_v, c_1 = th.constants
        assert c_v == pytest.approx(math.exp(th.log_c_v))

    def test_draw_minima_recomputed(self, rng):
        d = random_data(rng, 15, 15, 5)
        builder = CollectionBuilder(S1)
        th = cal.permutation_calibrate(d, builder, 20, 0.05, seed=2)
        draw = th.draws[4]
        assert_array_equal(draw.permutation, cal.draw_permutation(2, 4, 30))
        permuted = d.permuted(draw.permutation)
        sc = score_subsets(permuted, builder(permuted).subsets)
        lc = log_binom(5, 1)
        assert draw.log_c_v == pytest.approx(np.log(sc.q_v).min() + lc, rel=1e-12)
        assert draw.log_c_1 == pytest.approx(np.log(np.minimum(sc.q_1, sc.q_2)).min() + lc, rel=1e-12)

    def test_seed_determinism(self, rng):
        d = random_data(rng, 15, 15, 6)
        a = cal.permutation_calibrate(d, CollectionBuilder(LASSO), 40, 0.05, seed=9)
        b = cal.permutation_calibrate(d, CollectionBuilder(LASSO), 40, 0.05, seed=9)
        assert (a.log_c_v, a.log_c_1) == (b.log_c_v, b.log_c_1)

    def test_threads_do_not_change_results(self, rng):
        d = random_data(rng, 15, 15, 6)
        a = cal.permutation_calibrate(d, CollectionBuilder(LASSO), 24, 0.05, seed=4, threads=1)
        b = cal.permutation_calibrate(d, CollectionBuilder(LASSO), 24, 0.05, seed=4, threads=2)
        assert [x.log_c_v for x in a.draws] == [x.log_c_v for x in b.draws]

    def test_minimum_draws(self, rng):
        with pytest.raises(ValueError):
            cal.permutation_calibrate(random_data(rng), CollectionBuilder(S1), 10, 0.05, seed=0)

    def test_two_seeds_within_bootstrap_band(self):
        rng = np.random.default_rng(21)
        d = random_data(rng, 20, 20, 8)
        b = 500
        k = cal.order_statistic_index(0.025, b)
        out = []
        for seed in (1, 2):
            th = cal.permutation_calibrate(d, CollectionBuilder(LASSO), b, 0.05, seed=seed)
            minima = np.array([x.log_c_v for x in th.draws])
            boot = [np.sort(rng.choice(minima, b))[k - 1] for _ in range(300)]
            out.append((th.log_c_v, np.std(boot)))
        (c1, s1), (c2, s2) = out
        assert abs(c1 - c2) <= 4 * math.hypot(s1, s2)

    def test_fisher_family_single_constant(self, rng):
        d = random_data(rng, 15, 15, 5)
        th = cal.permutation_calibrate(d, CollectionBuilder(S1), 40, 0.05, seed=0, statistic=cal.FISHER)
        assert th.log_c_v == np.sort([x.log_c_v for x in th.draws])[1]
        assert all(x.log_c_1 == math.inf for x in th.draws)
        _, l1, _ = th.log_thresholds([1])
        assert l1[0] == -np.inf


class TestDecide:
    def test_all_ones_accept(self):
        pv = {(0,): PValueTriple(1, 1, 1), (1, 2): PValueTriple(1, 1, 1)}
        dec = cal.decide(pv, _perm_thresholds(-1.0, -1.0, 5))
        assert not dec.reject and dec.witness_subset is None

    def test_tiny_variance_p(self):
        pv = {(0,): PValueTriple(1, 1, 1), (1, 2): PValueTriple(1e-300, 1, 1)}
        dec = cal.decide(pv, _perm_thresholds(-1.0, -1.0, 5))
        assert dec == cal.Decision(True, (1, 2), "V")

    def test_boundary_rejects(self):
        th = cal.bonferroni_thresholds(None, 2, 10, 0.05)
        lv, l1, _ = th.log_thresholds([1])
        pv = {(3,): PValueTriple(1.0, math.exp(l1[0]), 1.0)}
        assert cal.decide(pv, th) == cal.Decision(True, (3,), "1")

    def test_first_hit_in_collection_order(self):
        pv = {
            (4,): PValueTriple(1, 1, 1e-5),
            (0,): PValueTriple(1e-9, 1, 1),
        }
        th = _perm_thresholds(math.log(0.01), math.log(0.01), 5)
        assert cal.decide(pv, th) == cal.Decision(True, (4,), "2")
        assert cal.most_extreme(pv, th) == ((0,), "V")

    @given(
        st.lists(st.tuples(st.floats(1e-12, 1), st.floats(1e-12, 1), st.floats(1e-12, 1)), min_size=1, max_size=8),
        st.floats(-12, 0),
        st.floats(-12, 0),
        st.floats(0, 5),
    )
    def test_monotone_in_thresholds(self, qs, lcv, lc1, bump):
        pv = {(i,): PValueTriple(*q) for i, q in enumerate(qs)}
        low = _perm_thresholds(lcv, lc1, 10)
        high = _perm_thresholds(lcv + bump, lc1 + bump, 10)
        if cal.decide(pv, low).reject:
            assert cal.decide(pv, high).reject

    def test_bonferroni_dominated_by_larger_thresholds(self):
        th_b = cal.bonferroni_thresholds(None, 3, 10, 0.05)
        lv, l1, _ = th_b.log_thresholds([1])
        th_p = _perm_thresholds(lv[0] + log_binom(10, 1) + 0.1, l1[0] + log_binom(10, 1) + 0.1, 10)
        rng = np.random.default_rng(0)
        for _ in range(200):
            pv = {(i,): PValueTriple(*rng.uniform(0, 1e-3, 3)) for i in range(3)}
            if not cal.decide(pv, th_p).reject:
                assert not cal.decide(pv, th_b).reject

    def test_scores_and_mapping_agree(self, rng):
        d = random_data(rng, 20, 20, 6, shift=1.0)
        subsets = [(0,), (1,), (2, 3)]
        sc = score_subsets(d, subsets)
        mapping = {s: PValueTriple(sc.q_v[j], sc.q_1[j], sc.q_2[j]) for j, s in enumerate(subsets)}
        th = _perm_thresholds(-2.0, -2.0, 6)
        assert cal.decide(sc, th) == cal.decide(mapping, th)
        assert cal.most_extreme(sc, th) == cal.most_extreme(mapping, th)

    def test_empty(self):
        assert not cal.decide({}, _perm_thresholds(0.0, 0.0, 3)).reject
        assert cal.most_extreme({}, _perm_thresholds(0.0, 0.0, 3)) is None


def test_weighted_minima_no_valid_subset(rng):
    d = random_data(rng, 10, 10, 3)
    sc = score_subsets(d, [(0,)])
    sc.valid[:] = False
    assert cal.weighted_minima(sc, 3) == (math.inf, math.inf)
    assert_allclose(cal.PermutationDraw(0, np.arange(2), 0.0, math.inf).c_v, 1.0)
