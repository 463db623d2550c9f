import numpy as np
import pytest
from fractions import Fraction

from rtb_arena.auction import run_episode
from rtb_arena.errors import DataError
from rtb_arena.rlb import (RlbStrategy, greedy_bid_thresholds, load_table,
                           pctr_histogram, price_histogram, rlb_lite_build,
                           save_table)
from tests.conftest import make_episode


def dyadic_episode(n=40):
    """pctr in {0.25, 0.5}, prices in {1, 2}: every histogram probability and
    value is exactly representable, so any summation order agrees bitwise."""
    pctrs = [0.25, 0.5] * (n // 2)
    prices = [1, 2] * (n // 2)
    clicks = [0] * n
    return make_episode(prices, clicks, pctrs=pctrs, slot_count=24)


def oracle_values(steps, units, pctr_values, pctr_probs, price_units, price_probs):
    """Independent enumeration of the value recurrence."""
    v = np.zeros((steps + 1, units + 1))
    for n in range(1, steps + 1):
        for u in range(units + 1):
            total = v[n - 1, u]
            for p, pm in zip(price_units, price_probs):
                if p > u:
                    continue
                delta = v[n - 1, u] - v[n - 1, u - p]
                gain = 0.0
                for val, q in zip(pctr_values, pctr_probs):
                    win = val - delta
                    if win > 0:
                        gain += q * win
                total += pm * gain
            v[n, u] = total
    return v


class TestHistograms:
    def test_pctr_quantile_buckets(self):
        values, probs = pctr_histogram(np.array([0.1, 0.1, 0.3, 0.3]), 2)
        np.testing.assert_allclose(values, [0.1, 0.3])
        np.testing.assert_allclose(probs, [0.5, 0.5])
        assert probs.sum() == pytest.approx(1.0)

    def test_duplicate_buckets_merge(self):
        values, probs = pctr_histogram(np.full(100, 0.2), 10)
        np.testing.assert_allclose(values, [0.2])
        np.testing.assert_allclose(probs, [1.0])

    def test_price_cells(self):
        cells, probs = price_histogram(np.array([1, 1, 2, 2]), unit=1.0)
        np.testing.assert_array_equal(cells, [1, 2])
        np.testing.assert_allclose(probs, [0.5, 0.5])


class TestValueTable:
    def test_terminal_boundary_zero(self):
        table = rlb_lite_build([dyadic_episode()], slot_count=10, budget_units=3000,
                               pctr_buckets=2)
        np.testing.assert_array_equal(table.values[0], 0.0)

    def test_single_point_one_step(self):
        # one price (10), one pctr value (0.1), one step, budget 10
        ep = make_episode([10] * 20, [0] * 20, pctrs=[0.1] * 20, slot_count=24)
        table = rlb_lite_build([ep], slot_count=1, budget_units=300, pctr_buckets=1)
        assert table.unit == pytest.approx(1.0)
        u = table.budget_cell(10)
        assert table.values[1, u] == pytest.approx(0.1)
        thresholds = greedy_bid_thresholds(table, steps_left=1, remaining=10)
        bid = int(np.searchsorted(thresholds, 0.1, side="right")) - 1
        assert bid == 10
        # and that bid wins the logged auction
        from rtb_arena.auction import settle_auction
        from rtb_arena.logs import ImpressionRecord
        rec = ImpressionRecord(date="x", seconds=0, features=(), market_price=10,
                               click=0, pctr=0.1)
        assert settle_auction(bid, rec, 10).won

    def test_exact_match_against_enumeration(self):
        # dyadic fixture (<= 100 impressions): exact float equality
        table = rlb_lite_build([dyadic_episode(40)], slot_count=10,
                               budget_units=3000, pctr_buckets=2)
        assert table.unit == pytest.approx(1.0)
        want = oracle_values(10, 60, table.pctr_values, table.pctr_probs,
                             table.price_units, table.price_probs)
        got = table.values[:, :61]
        assert np.array_equal(got, want[:, :61])

    def test_monotone_in_budget_and_steps(self, small_dataset):
        table = rlb_lite_build(small_dataset.train_episodes[:3], slot_count=24,
                               budget_units=400, pctr_buckets=30)
        assert np.all(np.diff(table.values, axis=1) >= -1e-12)
        assert np.all(np.diff(table.values, axis=0) >= -1e-12)
        assert np.all(table.values >= 0)

    def test_empty_histogram_rejected(self):
        ep = dyadic_episode()
        ep.pctrs = None
        with pytest.raises(DataError):
            rlb_lite_build([ep], slot_count=10)


class TestRlbStrategy:
    def test_replay_and_budget_safety(self, small_dataset):
        table = rlb_lite_build(small_dataset.train_episodes, slot_count=96,
                               budget_units=500, pctr_buckets=50)
        strategy = RlbStrategy(table)
        ep = small_dataset.test_episodes[0]
        result = run_episode(strategy, ep, budget=ep.budget_for(Fraction(1, 8)),
                             slot_count=96)
        assert result.cost <= result.budget

    def test_slot_count_mismatch_rejected(self, small_dataset):
        table = rlb_lite_build(small_dataset.train_episodes, slot_count=24,
                               budget_units=200, pctr_buckets=20)
        ep = small_dataset.test_episodes[0]
        with pytest.raises(DataError):
            run_episode(RlbStrategy(table), ep, budget=1000, slot_count=96)

    def test_thresholds_monotone(self, small_dataset):
        table = rlb_lite_build(small_dataset.train_episodes, slot_count=24,
                               budget_units=200, pctr_buckets=20)
        thr = greedy_bid_thresholds(table, steps_left=12, remaining=5000)
        finite = thr[np.isfinite(thr)]
        assert np.all(np.diff(finite) >= 0)

    def test_persistence_round_trip(self, small_dataset, tmp_path):
        table = rlb_lite_build(small_dataset.train_episodes, slot_count=24,
                               budget_units=200, pctr_buckets=20)
        path = tmp_path / "table.rlb"
        save_table(table, path)
        again = load_table(path)
        np.testing.assert_array_equal(again.values, table.values)
        assert again.unit == table.unit
        assert again.slot_count == table.slot_count
