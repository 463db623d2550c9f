"""Lookup-table bidder: backward value iteration over (steps remaining,
discretized budget), with a marginal-value greedy bid at replay time.

Steps aggregate per slot (a per-impression table is intractable); the
budget axis spans [0, 300 * slot_count] in `budget_units` cells, the only
range over which the constraint can bind across the remaining steps, and
larger remaining budgets clamp to the top cell. Value recurrence per cell:

    V(n, b) = E_{pctr, price} max( pctr + V(n-1, b - price)   if price <= b
                                 , V(n-1, b) )

with V(0, .) = 0; pctr and price expectations use empirical histograms
from the training episodes (pctr in quantile buckets, prices on the native
integer grid quantized to budget units).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .auction import BidStrategy, SlotStats
from .binio import load_bundle, save_bundle
from .errors import DataError
from .logs import Episode, PRICE_CAP

CHECKPOINT_KIND = "rlb-table"


@dataclass
class RlbTable:
    values: np.ndarray        # (steps + 1, units + 1), V[n, u]
    unit: float               # native price per budget cell
    slot_count: int
    pctr_values: np.ndarray   # ascending bucket values
    pctr_probs: np.ndarray
    price_units: np.ndarray   # ascending distinct price cells
    price_probs: np.ndarray

    @property
    def units(self) -> int:
        return self.values.shape[1] - 1

    def budget_cell(self, remaining: int) -> int:
        return int(min(self.units, np.floor(remaining / self.unit)))


def pctr_histogram(pctrs: np.ndarray, buckets: int) -> tuple[np.ndarray, np.ndarray]:
    """Quantile-bucket histogram: bucket means with their empirical mass."""
    pctrs = np.sort(np.asarray(pctrs, dtype=np.float64))
    if len(pctrs) == 0:
        raise DataError("empty pctr histogram")
    buckets = min(buckets, len(pctrs))
    splits = np.array_split(pctrs, buckets)
    values = np.array([s.mean() for s in splits])
    probs = np.array([len(s) for s in splits], dtype=np.float64) / len(pctrs)
    # Merge buckets that collapse to the same mean.
    uniq, inverse = np.unique(values, return_inverse=True)
    merged = np.zeros(len(uniq))
    np.add.at(merged, inverse, probs)
    return uniq, merged


def price_histogram(prices: np.ndarray, unit: float) -> tuple[np.ndarray, np.ndarray]:
    """Distinct price cells (units) with their empirical mass."""
    prices = np.asarray(prices, dtype=np.int64)
    if len(prices) == 0:
        raise DataError("empty price histogram")
    counts = np.bincount(prices, minlength=PRICE_CAP + 1)
    cells = np.round(np.arange(PRICE_CAP + 1) / unit).astype(np.int64)
    n_cells = int(cells.max()) + 1
    mass = np.zeros(n_cells)
    np.add.at(mass, cells, counts)
    keep = mass > 0
    return np.flatnonzero(keep).astype(np.int64), mass[keep] / len(prices)


def _expected_gain(delta: np.ndarray, pctr_values: np.ndarray,
                   pctr_probs: np.ndarray) -> np.ndarray:
    """E[(pctr - delta)+] for each entry of delta, via suffix sums."""
    suffix_mass = np.concatenate([np.cumsum(pctr_probs[::-1])[::-1], [0.0]])
    weighted = pctr_probs * pctr_values
    suffix_value = np.concatenate([np.cumsum(weighted[::-1])[::-1], [0.0]])
    idx = np.searchsorted(pctr_values, delta, side="right")
    return suffix_value[idx] - delta * suffix_mass[idx]


def rlb_lite_build(train_episodes: Sequence[Episode], slot_count: int = 96,
                   budget_units: int = 1000, pctr_buckets: int = 100) -> RlbTable:
    """Build the value table from training-episode histograms."""
    pctr_parts = []
    price_parts = []
    for ep in train_episodes:
        if ep.pctrs is None:
            raise DataError("episodes need pctr before building the value table")
        pctr_parts.append(ep.pctrs)
        price_parts.append(ep.prices)
    pctr_values, pctr_probs = pctr_histogram(np.concatenate(pctr_parts), pctr_buckets)
    unit = PRICE_CAP * slot_count / budget_units
    price_units, price_probs = price_histogram(np.concatenate(price_parts), unit)

    values = np.zeros((slot_count + 1, budget_units + 1))
    u_axis = np.arange(budget_units + 1)
    for n in range(1, slot_count + 1):
        prev = values[n - 1]
        row = prev.copy()
        for p_u, p_mass in zip(price_units, price_probs):
            affordable = u_axis >= p_u
            delta = prev[affordable] - prev[u_axis[affordable] - p_u]
            row[affordable] += p_mass * _expected_gain(delta, pctr_values, pctr_probs)
        values[n] = row
    table = RlbTable(values=values, unit=unit, slot_count=slot_count,
                     pctr_values=pctr_values, pctr_probs=pctr_probs,
                     price_units=price_units, price_probs=price_probs)
    if not np.isfinite(values).all():
        raise DataError("value table has non-finite entries")
    return table


def greedy_bid_thresholds(table: RlbTable, steps_left: int, remaining: int) -> np.ndarray:
    """Non-decreasing pctr thresholds per native price.

    thresholds[p] is the marginal value a win at price p must beat given
    the continuation V(steps_left - 1, .); unaffordable prices get +inf.
    The greedy bid for an impression is the largest p with
    thresholds[p] <= pctr.
    """
    if steps_left < 1:
        return np.full(PRICE_CAP + 1, np.inf)
    u = table.budget_cell(remaining)
    prev = table.values[steps_left - 1]
    prices = np.arange(PRICE_CAP + 1)
    cells = np.round(prices / table.unit).astype(np.int64)
    thresholds = np.full(PRICE_CAP + 1, np.inf)
    affordable = cells <= u
    thresholds[affordable] = prev[u] - prev[u - cells[affordable]]
    return np.maximum.accumulate(thresholds)


class RlbStrategy(BidStrategy):
    """Replays with the greedy marginal-value bid, refreshed per slot."""

    name = "rlb"

    def __init__(self, table: RlbTable):
        self.table = table
        self._thresholds = np.full(PRICE_CAP + 1, np.inf)

    def begin_episode(self, episode: Episode, budget: int, slot_count: int) -> None:
        if slot_count != self.table.slot_count:
            raise DataError(
                f"table built for {self.table.slot_count} slots, replayed with {slot_count}")
        self._slot_count = slot_count

    def begin_slot(self, t: int, prev: SlotStats | None, budget_remaining: int) -> None:
        self._thresholds = greedy_bid_thresholds(
            self.table, self._slot_count - t, budget_remaining)

    def bid(self, pctr: float) -> int:
        idx = int(np.searchsorted(self._thresholds, pctr, side="right")) - 1
        return max(idx, 0)

    def slot_bids(self, pctrs: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(self._thresholds, pctrs, side="right") - 1
        return np.maximum(idx, 0).astype(np.int64)


def save_table(table: RlbTable, path: str | Path, extra_meta: dict | None = None) -> None:
    meta = {
        "kind": CHECKPOINT_KIND, "version": 1,
        "unit": table.unit, "slot_count": table.slot_count,
    }
    if extra_meta:
        meta.update(extra_meta)
    save_bundle(path, meta, {
        "values": table.values,
        "pctr_values": table.pctr_values, "pctr_probs": table.pctr_probs,
        "price_units": table.price_units, "price_probs": table.price_probs,
    })


def load_table(path: str | Path) -> RlbTable:
    meta, arrays = load_bundle(path)
    if meta.get("kind") != CHECKPOINT_KIND:
        raise DataError(f"{path}: not a value-table file")
    return RlbTable(values=arrays["values"], unit=meta["unit"],
                    slot_count=meta["slot_count"],
                    pctr_values=arrays["pctr_values"], pctr_probs=arrays["pctr_probs"],
                    price_units=arrays["price_units"], price_probs=arrays["price_probs"])
