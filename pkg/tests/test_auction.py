import numpy as np
import pytest
from fractions import Fraction

from rtb_arena.auction import (BidStrategy, ConstantStrategy, EpisodeResult,
                               SlotStats, clip_bid, objective_value, run_episode,
                               settle_auction, settle_sequence)
from rtb_arena.errors import DataError, NumericalError
from rtb_arena.logs import ImpressionRecord
from tests.conftest import make_episode


def naive_settle(bids, prices, clicks, pctrs, remaining):
    """Reference implementation: plain per-impression walk."""
    won = clk = cost = 0
    pctr = 0.0
    first_skip = None
    skipped_clicks = 0
    for i in range(len(bids)):
        if remaining == 0:
            if first_skip is None:
                first_skip = i
            skipped_clicks += int(clicks[i])
            continue
        p = int(prices[i])
        if bids[i] >= p and p <= remaining:
            won += 1
            clk += int(clicks[i])
            pctr += float(pctrs[i])
            cost += p
            remaining -= p
    return won, clk, pctr, cost, remaining, first_skip, skipped_clicks


def record(price, click=0, pctr=0.01):
    return ImpressionRecord(date="20130606", seconds=0, features=(),
                            market_price=price, click=click, pctr=pctr)


class TestSettleAuction:
    def test_win_pays_market_price(self):
        out = settle_auction(100, record(80, click=1, pctr=0.2), 500)
        assert out.won and out.cost == 80 and out.click == 1 and out.pctr == 0.2

    def test_tie_bid_wins(self):
        out = settle_auction(80, record(80), 500)
        assert out.won and out.cost == 80

    def test_below_market_price_loses(self):
        out = settle_auction(79, record(80), 500)
        assert not out.won and out.cost == 0 and out.click == 0 and out.pctr == 0.0

    def test_unaffordable_loses(self):
        out = settle_auction(300, record(80), 79)
        assert not out.won

    def test_bid_preclipped_to_cap(self):
        # a 1000 bid is treated as 300; price 299 still wins
        assert settle_auction(1000, record(299), 1000).won


class TestSettleSequence:
    @pytest.mark.parametrize("seed", range(40))
    def test_matches_naive_reference(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 200))
        bids = rng.integers(0, 301, n)
        prices = rng.integers(0, 301, n)
        clicks = rng.integers(0, 2, n)
        pctrs = rng.random(n)
        for budget_scale in (0.05, 0.3, 1.0):
            remaining = int(prices.sum() * budget_scale)
            got = settle_sequence(bids, prices, clicks.astype(np.int8), pctrs, remaining)
            want = naive_settle(bids, prices, clicks, pctrs, remaining)
            assert (got[0], got[1], got[3], got[4]) == (want[0], want[1], want[3], want[4])
            assert got[2] == pytest.approx(want[2], rel=1e-12)
            assert got[5] == want[5]
            assert got[6] == want[6]

    def test_zero_budget_skips_everything(self):
        got = settle_sequence(np.array([300, 300]), np.array([0, 10]),
                              np.array([1, 1], dtype=np.int8), np.array([0.5, 0.5]), 0)
        assert got[0] == 0 and got[5] == 0 and got[6] == 2

    def test_exact_exhaustion_marks_next_as_skip(self):
        bids = np.array([300, 300, 300])
        prices = np.array([10, 10, 5])
        got = settle_sequence(bids, prices, np.zeros(3, np.int8), np.zeros(3), 20)
        # wins the first two exactly, third is skipped at zero budget
        assert got[0] == 2 and got[3] == 20 and got[4] == 0 and got[5] == 2


class TestRunEpisode:
    def test_constant_cap_full_budget_wins_everything(self, small_dataset):
        ep = small_dataset.train_episodes[0]
        result = run_episode(ConstantStrategy(300), ep, budget=ep.total_cost)
        assert result.imps_won == len(ep)
        assert result.clicks == int(ep.clicks.sum())
        assert result.cost == ep.total_cost
        assert result.early_stop_slot is None or result.cost == result.budget

    def test_constant_zero_wins_only_free(self, small_dataset):
        ep = small_dataset.train_episodes[0]
        result = run_episode(ConstantStrategy(0), ep, budget=ep.total_cost)
        free = int((ep.prices == 0).sum())
        assert result.imps_won == free
        assert result.early_stop_slot is None

    def test_half_budget_early_stop_prefix_sum_oracle(self):
        prices = np.full(100, 10)
        clicks = np.zeros(100, dtype=np.int8)
        ep = make_episode(prices, clicks, pctrs=np.full(100, 0.1), slot_count=24)
        budget = ep.total_cost // 2
        result = run_episode(ConstantStrategy(300), ep, budget=budget)
        # prefix-sum oracle: budget buys exactly 50 impressions; the 51st
        # impression is the first skip
        stop_index = 50
        spans = ep.slot_spans(24)
        expected_slot = int(np.searchsorted(spans, stop_index, side="right")) - 1
        assert result.cost == budget
        assert result.imps_won == 50
        assert result.early_stop_slot == expected_slot

    def test_budget_conservation_many_strategies(self, small_dataset):
        ep = small_dataset.train_episodes[1]
        for frac in (Fraction(1, 2), Fraction(1, 8), Fraction(1, 16)):
            for price in (50, 150, 300):
                result = run_episode(ConstantStrategy(price), ep,
                                     budget=ep.budget_for(frac))
                assert result.cost <= result.budget

    def test_nonfinite_bid_aborts(self, small_dataset):
        class BadStrategy(BidStrategy):
            def slot_bids(self, pctrs):
                return np.full(len(pctrs), np.nan)

        ep = small_dataset.train_episodes[0]
        with pytest.raises(NumericalError):
            run_episode(BadStrategy(), ep, budget=1000)

    def test_zero_budget_rejected(self, small_dataset):
        with pytest.raises(DataError):
            run_episode(ConstantStrategy(10), small_dataset.train_episodes[0], budget=0)

    def test_slot_hook_called_once_per_slot(self):
        calls = []

        class Probe(BidStrategy):
            def begin_slot(self, t, prev, remaining):
                calls.append((t, None if prev is None else prev.t))

            def slot_bids(self, pctrs):
                return np.zeros(len(pctrs), dtype=np.int64)

        ep = make_episode([10] * 48, [0] * 48, pctrs=[0.1] * 48, slot_count=24)
        run_episode(Probe(), ep, budget=100)
        assert [t for t, _ in calls] == list(range(24))
        assert calls[0][1] is None
        assert all(prev == t - 1 for t, prev in calls[1:])

    def test_foregone_clicks_counted_after_stop(self):
        prices = [10, 10, 10, 10]
        clicks = [0, 0, 1, 1]
        ep = make_episode(prices, clicks, pctrs=[0.1] * 4, slot_count=24,
                          seconds=[0, 30000, 60000, 80000])
        result = run_episode(ConstantStrategy(300), ep, budget=20)
        assert result.clicks == 0
        assert result.foregone_clicks == 2
        assert result.early_stop_slot is not None


class TestAuctionLaws:
    def test_second_price_dominance_unlimited_budget(self, small_dataset):
        ep = small_dataset.train_episodes[2]
        big = ep.total_cost
        lo = run_episode(ConstantStrategy(60), ep, budget=big)
        hi = run_episode(ConstantStrategy(90), ep, budget=big)
        won_lo = int((ep.prices <= 60).sum())
        won_hi = int((ep.prices <= 90).sum())
        assert lo.imps_won == won_lo and hi.imps_won == won_hi
        assert hi.imps_won >= lo.imps_won
        # identical cost per won auction: both pay the market price
        assert lo.cost == int(ep.prices[ep.prices <= 60].sum())
        assert hi.cost == int(ep.prices[ep.prices <= 90].sum())

    def test_replay_determinism(self, small_dataset):
        ep = small_dataset.test_episodes[0]
        r1 = run_episode(ConstantStrategy(120), ep, budget=ep.budget_for(Fraction(1, 4)))
        r2 = run_episode(ConstantStrategy(120), ep, budget=ep.budget_for(Fraction(1, 4)))
        assert r1.to_dict() == r2.to_dict()
        assert [s.__dict__ for s in r1.slots] == [s.__dict__ for s in r2.slots]


class TestStatsConsistency:
    def test_derived_fields_recomputable(self, small_dataset):
        ep = small_dataset.train_episodes[0]
        result = run_episode(ConstantStrategy(150), ep,
                             budget=ep.budget_for(Fraction(1, 8)))
        for s in result.slots:
            expected_wr = s.imps_won / s.imps_seen if s.imps_seen else 0.0
            expected_cpm = s.cost / s.imps_won * 1000 if s.imps_won else 0.0
            expected_bcr = s.cost / s.budget_at_start if s.budget_at_start else 0.0
            assert s.win_rate == expected_wr
            assert s.cpm == expected_cpm
            assert s.budget_cost_ratio == expected_bcr
        assert result.clicks == sum(s.clicks for s in result.slots)
        assert result.cost == sum(s.cost for s in result.slots)
        assert result.pctr_sum == pytest.approx(sum(s.pctr_sum for s in result.slots))


class TestObjective:
    def test_empty_result(self):
        result = EpisodeResult(date="x", budget=1, slot_count=24, clicks=0,
                               pctr_sum=0.0, cost=0, imps_seen=0, imps_won=0,
                               early_stop_slot=None, foregone_clicks=0)
        assert objective_value(result) == (0, 0.0)

    def test_additivity_over_slots(self):
        s1 = SlotStats(t=0, imps_seen=5, imps_won=3, clicks=1, pctr_sum=0.2,
                       cost=30, budget_at_start=100, budget_remaining_at_end=70)
        s2 = SlotStats(t=1, imps_seen=5, imps_won=4, clicks=2, pctr_sum=0.3,
                       cost=40, budget_at_start=70, budget_remaining_at_end=30)
        result = EpisodeResult(date="x", budget=100, slot_count=2,
                               clicks=s1.clicks + s2.clicks,
                               pctr_sum=s1.pctr_sum + s2.pctr_sum,
                               cost=s1.cost + s2.cost, imps_seen=10, imps_won=7,
                               early_stop_slot=None, foregone_clicks=0,
                               slots=[s1, s2])
        assert objective_value(result) == (3, 0.5)

    def test_full_budget_cap_matches_click_column(self, small_dataset):
        ep = small_dataset.test_episodes[1]
        result = run_episode(ConstantStrategy(300), ep, budget=ep.total_cost)
        assert objective_value(result)[0] == int(ep.clicks.sum())


class TestClipBid:
    def test_round_half_up(self):
        assert clip_bid(0.5) == 1
        assert clip_bid(1.49) == 1
        assert clip_bid(1.5) == 2
        assert clip_bid(299.5) == 300
        assert clip_bid(10_000) == 300
        assert clip_bid(-3) == 0
