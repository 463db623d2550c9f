"""Second-price auction replay: settlement, budget accounting, per-slot stats.

A replayed auction is won iff the (pre-clipped) bid is at least the logged
market price AND the price fits the remaining budget; the winner pays the
market price. Once the remaining budget hits zero every later bid is
skipped, and the first skipped impression marks the early stop. The replay
still walks to the end of the day so foregone clicks can be reported.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DataError, NumericalError
from .logs import Episode, ImpressionRecord, PRICE_CAP


def round_half_up(x):
    """Round-half-up for non-negative bids (scalar or array)."""
    return np.floor(np.asarray(x, dtype=np.float64) + 0.5)


def clip_bid(x) -> int:
    """Round and clip a real-valued bid into the [0, 300] price grid."""
    return int(min(max(round_half_up(x), 0.0), float(PRICE_CAP)))


def clip_bids(x: np.ndarray) -> np.ndarray:
    return np.clip(round_half_up(x), 0.0, float(PRICE_CAP)).astype(np.int64)


@dataclass(frozen=True)
class AuctionOutcome:
    won: bool
    cost: int
    click: int
    pctr: float


def settle_auction(bid: int, record: ImpressionRecord, budget_remaining: int) -> AuctionOutcome:
    """Settle one auction under second-price semantics."""
    if bid < 0 or budget_remaining < 0:
        raise DataError("bid and budget_remaining must be non-negative")
    bid = min(bid, PRICE_CAP)
    price = record.market_price
    if bid >= price and price <= budget_remaining:
        return AuctionOutcome(won=True, cost=price, click=record.click,
                              pctr=record.pctr or 0.0)
    return AuctionOutcome(won=False, cost=0, click=0, pctr=0.0)


@dataclass
class SlotStats:
    """Auction outcomes of one time slot.

    win_rate, cpm, and budget_cost_ratio are derived from the raw counters
    (0 where the denominator is 0).
    """

    t: int
    imps_seen: int
    imps_won: int
    clicks: int
    pctr_sum: float
    cost: int
    budget_at_start: int
    budget_remaining_at_end: int

    @property
    def win_rate(self) -> float:
        return self.imps_won / self.imps_seen if self.imps_seen else 0.0

    @property
    def cpm(self) -> float:
        return self.cost / self.imps_won * 1000.0 if self.imps_won else 0.0

    @property
    def budget_cost_ratio(self) -> float:
        return self.cost / self.budget_at_start if self.budget_at_start else 0.0


@dataclass
class EpisodeResult:
    """Aggregate outcome of replaying one episode with one strategy."""

    date: str
    budget: int
    slot_count: int
    clicks: int
    pctr_sum: float
    cost: int
    imps_seen: int
    imps_won: int
    early_stop_slot: int | None
    foregone_clicks: int
    slots: list[SlotStats] = field(default_factory=list)

    @property
    def cpm(self) -> float:
        return self.cost / self.imps_won * 1000.0 if self.imps_won else 0.0

    @property
    def cpc(self) -> float | None:
        return self.cost / self.clicks if self.clicks else None

    def to_dict(self) -> dict:
        return {
            "date": self.date, "budget": self.budget, "slot_count": self.slot_count,
            "clicks": self.clicks, "pctr_sum": self.pctr_sum, "cost": self.cost,
            "imps_seen": self.imps_seen, "imps_won": self.imps_won,
            "early_stop_slot": self.early_stop_slot,
            "foregone_clicks": self.foregone_clicks,
        }


def objective_value(result: EpisodeResult) -> tuple[int, float]:
    """The two benchmark metrics: clicks, with total pCTR as tie-breaker."""
    return result.clicks, result.pctr_sum


class BidStrategy:
    """Uniform bidding interface driven by the replay engine.

    The engine calls `begin_episode` once, then `begin_slot` exactly once
    before each slot (with the previous slot's stats, None before slot 0),
    asks for bids, and calls `end_episode` with the final result. Bids may
    be emitted per impression via `bid` or for a whole slot via `slot_bids`
    (default: vectorize `bid`).
    """

    name = "strategy"

    def begin_episode(self, episode: Episode, budget: int, slot_count: int) -> None:
        pass

    def begin_slot(self, t: int, prev: SlotStats | None, budget_remaining: int) -> None:
        pass

    def bid(self, pctr: float) -> int:
        raise NotImplementedError

    def slot_bids(self, pctrs: np.ndarray) -> np.ndarray:
        return np.array([self.bid(float(p)) for p in pctrs], dtype=np.int64)

    def end_episode(self, result: EpisodeResult) -> None:
        pass


class ConstantStrategy(BidStrategy):
    """Bid a fixed price for every impression."""

    def __init__(self, price: int):
        self.price = int(price)
        self.name = f"const-{price}"

    def bid(self, pctr: float) -> int:
        return self.price

    def slot_bids(self, pctrs: np.ndarray) -> np.ndarray:
        return np.full(len(pctrs), min(max(self.price, 0), PRICE_CAP), dtype=np.int64)


def settle_sequence(bids: np.ndarray, prices: np.ndarray, clicks: np.ndarray,
                    pctrs: np.ndarray, remaining: int):
    """Settle a contiguous run of auctions under a shared budget.

    Returns (imps_won, clicks_won, pctr_won, cost, remaining_after,
    first_skip_index or None, clicks_skipped). Uses a vectorized fast path
    while the budget cannot bind and falls back to a scalar walk once it
    can, preserving the exact per-impression semantics.
    """
    n = len(bids)
    if remaining == 0:
        return 0, 0, 0.0, 0, 0, (0 if n else None), int(clicks.sum())
    won = bids >= prices
    costs = np.where(won, prices, 0)
    cum = np.cumsum(costs, dtype=np.int64)
    if cum[-1] <= remaining:
        # Budget cannot bind inside this run.
        imps_won = int(won.sum())
        total_cost = int(cum[-1])
        after = remaining - total_cost
        first_skip = None
        clicks_skipped = 0
        if after == 0:
            win_idx = np.flatnonzero(won)
            last_win = int(win_idx[-1]) if len(win_idx) else -1
            if last_win + 1 < n:
                first_skip = last_win + 1
                clicks_skipped = int(clicks[first_skip:].sum())
        return (imps_won, int(clicks[won].sum()), float(pctrs[won].sum()),
                total_cost, after, first_skip, clicks_skipped)
    # Fast-forward through the prefix that provably fits, then walk.
    cut = int(np.searchsorted(cum, remaining, side="right"))
    pre = won[:cut]
    imps_won = int(pre.sum())
    clicks_won = int(clicks[:cut][pre].sum())
    pctr_won = float(pctrs[:cut][pre].sum())
    cost = int(cum[cut - 1]) if cut else 0
    rem = remaining - cost
    first_skip = None
    clicks_skipped = 0
    for i in range(cut, n):
        if rem == 0:
            if first_skip is None:
                first_skip = i
            clicks_skipped += int(clicks[i])
            continue
        price = int(prices[i])
        if bids[i] >= price and price <= rem:
            imps_won += 1
            clicks_won += int(clicks[i])
            pctr_won += float(pctrs[i])
            cost += price
            rem -= price
    return imps_won, clicks_won, pctr_won, cost, rem, first_skip, clicks_skipped


def run_episode(strategy: BidStrategy, episode: Episode, budget: int | None = None,
                slot_count: int | None = None, pctrs: np.ndarray | None = None) -> EpisodeResult:
    """Replay an episode against a strategy under a budget.

    The strategy's slot hook runs exactly once before each slot; bids are
    clipped to [0, 300] before settlement; the budget is never overspent.
    """
    budget = episode.budget if budget is None else int(budget)
    slot_count = slot_count or episode.slot_count
    if budget <= 0:
        raise DataError("episode budget must be positive")
    if pctrs is None:
        pctrs = episode.pctrs
    if pctrs is None:
        raise DataError("episode has no pctr column; apply the CTR model first")
    spans = episode.slot_spans(slot_count)
    prices = episode.prices
    clicks = episode.clicks

    strategy.begin_episode(episode, budget, slot_count)
    remaining = budget
    slots: list[SlotStats] = []
    prev: SlotStats | None = None
    total_clicks = 0
    total_pctr = 0.0
    total_cost = 0
    total_won = 0
    early_stop: int | None = None
    foregone = 0
    for t in range(slot_count):
        strategy.begin_slot(t, prev, remaining)
        lo, hi = int(spans[t]), int(spans[t + 1])
        start_budget = remaining
        if hi > lo:
            raw = np.asarray(strategy.slot_bids(pctrs[lo:hi]))
            if raw.dtype.kind == "f" and not np.isfinite(raw).all():
                raise NumericalError(
                    f"strategy {strategy.name!r} emitted a non-finite bid in slot {t}")
            bids = np.clip(round_half_up(raw), 0, PRICE_CAP).astype(np.int64)
            won, clk, pc, cost, remaining, skip, skipped_clicks = settle_sequence(
                bids, prices[lo:hi], clicks[lo:hi], pctrs[lo:hi], remaining)
            if skip is not None and early_stop is None:
                early_stop = t
            if early_stop is not None:
                foregone += skipped_clicks
        else:
            won = clk = cost = 0
            pc = 0.0
        stats = SlotStats(
            t=t, imps_seen=hi - lo, imps_won=won, clicks=clk, pctr_sum=pc,
            cost=cost, budget_at_start=start_budget, budget_remaining_at_end=remaining)
        slots.append(stats)
        total_clicks += clk
        total_pctr += pc
        total_cost += cost
        total_won += won
        prev = stats
    result = EpisodeResult(
        date=episode.date, budget=budget, slot_count=slot_count,
        clicks=total_clicks, pctr_sum=total_pctr, cost=total_cost,
        imps_seen=int(spans[-1]), imps_won=total_won,
        early_stop_slot=early_stop, foregone_clicks=foregone, slots=slots)
    strategy.end_episode(result)
    return result


def run_episodes(strategy: BidStrategy, episodes: Sequence[Episode],
                 budgets: Sequence[int] | None = None,
                 slot_count: int | None = None) -> list[EpisodeResult]:
    budgets = budgets if budgets is not None else [ep.budget for ep in episodes]
    return [run_episode(strategy, ep, budget=b, slot_count=slot_count)
            for ep, b in zip(episodes, budgets)]


def write_trace_csv(result: EpisodeResult, path) -> None:
    """Dump per-slot stats as CSV."""
    import csv
    from pathlib import Path

    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["slot", "imps_seen", "imps_won", "clicks", "pctr_sum",
                         "cost", "budget_at_start", "budget_remaining_at_end",
                         "win_rate", "cpm", "budget_cost_ratio"])
        for s in result.slots:
            writer.writerow([s.t, s.imps_seen, s.imps_won, s.clicks,
                             f"{s.pctr_sum:.6f}", s.cost, s.budget_at_start,
                             s.budget_remaining_at_end, f"{s.win_rate:.6f}",
                             f"{s.cpm:.6f}", f"{s.budget_cost_ratio:.6f}"])
