"""Static bidding strategies: the proportional (LIN) and concave (ORTB)
bidding functions, exhaustive base-bid tuning, per-slot optimal base bids,
and the base-bid deviation measure.

Bids are round-half-up of the real-valued formula, clipped to [0, 300].
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .auction import BidStrategy, EpisodeResult, clip_bids, run_episode, settle_sequence
from .errors import DataError
from .logs import Episode, PRICE_CAP


@dataclass(frozen=True)
class LinParams:
    base_bid: int
    avg_pctr: float

    def __post_init__(self):
        if self.avg_pctr <= 0:
            raise DataError("avg_pctr must be positive")


@dataclass(frozen=True)
class OrtbParams:
    c: float = 34.0
    lam: float = 5.2e-7

    def __post_init__(self):
        if not (self.c > 0 and self.lam > 0):
            raise DataError("ORTB parameters must be positive")


def lin_bid_raw(pctr, params: LinParams):
    """Unclipped real-valued proportional bid."""
    return np.asarray(pctr, dtype=np.float64) * params.base_bid / params.avg_pctr


def lin_bid(pctr: float, params: LinParams) -> int:
    return int(clip_bids(lin_bid_raw(pctr, params))[()])


def lin_bids(pctrs: np.ndarray, params: LinParams) -> np.ndarray:
    return clip_bids(lin_bid_raw(pctrs, params))


def ortb_bid_raw(pctr, params: OrtbParams):
    """Unclipped concave bid: sqrt(c/lam * pctr + c^2) - c."""
    p = np.asarray(pctr, dtype=np.float64)
    return np.sqrt(params.c / params.lam * p + params.c ** 2) - params.c


def ortb_bid(pctr: float, params: OrtbParams) -> int:
    return int(clip_bids(ortb_bid_raw(pctr, params))[()])


def ortb_bids(pctrs: np.ndarray, params: OrtbParams) -> np.ndarray:
    return clip_bids(ortb_bid_raw(pctrs, params))


class LinStrategy(BidStrategy):
    name = "lin"

    def __init__(self, params: LinParams):
        self.params = params

    def bid(self, pctr: float) -> int:
        return lin_bid(pctr, self.params)

    def slot_bids(self, pctrs: np.ndarray) -> np.ndarray:
        return lin_bids(pctrs, self.params)


class OrtbStrategy(BidStrategy):
    name = "ortb"

    def __init__(self, params: OrtbParams):
        self.params = params

    def bid(self, pctr: float) -> int:
        return ortb_bid(pctr, self.params)

    def slot_bids(self, pctrs: np.ndarray) -> np.ndarray:
        return ortb_bids(pctrs, self.params)


# ---------------------------------------------------------------------------
# Base-bid tuning


@dataclass(frozen=True)
class TuneResult:
    base_bid: int
    clicks: int
    pctr_sum: float


def _replay_lin_total(episodes: Sequence[Episode], budgets: Sequence[int],
                      base: int, avg_pctr: float) -> tuple[int, float]:
    # Slot boundaries are irrelevant to a budget-sequential static replay,
    # so the whole day settles in one call.
    clicks = 0
    pctr = 0.0
    params = LinParams(base_bid=base, avg_pctr=avg_pctr) if base >= 1 else None
    for ep, budget in zip(episodes, budgets):
        if ep.pctrs is None:
            raise DataError("episodes need pctr before tuning")
        if base == 0:
            bids_all = np.zeros(len(ep), dtype=np.int64)
        else:
            bids_all = lin_bids(ep.pctrs, params)
        _, clk, pc, _, _, _, _ = settle_sequence(
            bids_all, ep.prices, ep.clicks, ep.pctrs, budget)
        clicks += clk
        pctr += pc
    return clicks, pctr


def tune_base_bid(train_episodes: Sequence[Episode], budget_fraction: Fraction,
                  avg_pctr: float, grid: Sequence[int] | None = None) -> TuneResult:
    """Exhaustive base-bid search over [1, 300] maximizing training clicks.

    Replays every candidate under each episode's fractional budget. Ties
    break by higher total pCTR, then by the lower base bid.
    """
    if not train_episodes:
        raise DataError("need at least one training episode")
    if avg_pctr <= 0:
        raise DataError("avg_pctr must be positive")
    grid = list(grid) if grid is not None else list(range(1, PRICE_CAP + 1))
    budgets = [ep.budget_for(budget_fraction) for ep in train_episodes]
    best: tuple[int, float, int] | None = None   # (clicks, pctr, -base) maximized
    best_base = grid[0]
    for base in grid:
        clicks, pctr = _replay_lin_total(train_episodes, budgets, base, avg_pctr)
        key = (clicks, pctr, -base)
        if best is None or key > best:
            best = key
            best_base = base
    assert best is not None
    return TuneResult(base_bid=best_base, clicks=best[0], pctr_sum=best[1])


def per_slot_optimal_base_bid(episode: Episode, slot_count: int | None = None,
                              budget_fraction: Fraction = Fraction(1, 2),
                              avg_pctr: float = 0.0) -> np.ndarray:
    """Per-slot ground-truth base bids via independent grid search.

    Each slot is searched over [0, 300] with a budget equal to the slot's
    own cost scaled by `budget_fraction`; the winner maximizes slot clicks
    (ties: pctr sum, then the lower bid). Slots without any clicked
    impression return 0 outright.
    """
    if episode.pctrs is None:
        raise DataError("episode needs pctr before per-slot tuning")
    if avg_pctr <= 0:
        raise DataError("avg_pctr must be positive")
    slot_count = slot_count or episode.slot_count
    spans = episode.slot_spans(slot_count)
    out = np.zeros(slot_count, dtype=np.int64)
    frac = Fraction(budget_fraction)
    for t in range(slot_count):
        lo, hi = int(spans[t]), int(spans[t + 1])
        if hi <= lo:
            continue
        clicks = episode.clicks[lo:hi]
        if int(clicks.sum()) == 0:
            continue
        prices = episode.prices[lo:hi]
        pctrs = episode.pctrs[lo:hi]
        slot_cost = int(prices.sum())
        budget = slot_cost * frac.numerator // frac.denominator
        best: tuple[int, float, int] | None = None
        best_base = 0
        for base in range(0, PRICE_CAP + 1):
            if base == 0:
                bids = np.zeros(hi - lo, dtype=np.int64)
            else:
                bids = lin_bids(pctrs, LinParams(base_bid=base, avg_pctr=avg_pctr))
            if budget <= 0:
                clk, pc = 0, 0.0
            else:
                _, clk, pc, _, _, _, _ = settle_sequence(bids, prices, clicks, pctrs, budget)
            key = (clk, pc, -base)
            if best is None or key > best:
                best = key
                best_base = base
        out[t] = best_base
    return out


def base_bid_deviation(b0: float, bs: Sequence[float]) -> float:
    """Deviation of per-period optimal base bids from the training optimum:
    sqrt(sum_i (b_i/b0 - 1)^2) / N."""
    if b0 <= 0:
        raise DataError("training-set base bid must be positive")
    if len(bs) == 0:
        raise DataError("need at least one comparison base bid")
    ratios = np.asarray(bs, dtype=np.float64) / float(b0) - 1.0
    return float(np.sqrt(np.sum(ratios ** 2)) / len(bs))


def evaluate_lin(episodes: Sequence[Episode], fraction: Fraction,
                 params: LinParams, slot_count: int | None = None) -> list[EpisodeResult]:
    strategy = LinStrategy(params)
    return [run_episode(strategy, ep, budget=ep.budget_for(fraction), slot_count=slot_count)
            for ep in episodes]
