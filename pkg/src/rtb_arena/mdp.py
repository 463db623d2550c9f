"""MDP building blocks shared by the RL bidders: state encoders, the
bidding-factor action set and its bid transforms, and the four reward
variants (clicks, pctr, learned-net, comparison-to-baseline).

Feature scaling: budget and remaining-adjustment counts are divided by
their episode-initial values, the previous slot's per-win average price by
the 300 cap, and the previous slot's total win value by its running max,
keeping every input to the small networks in [0, 1].
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .auction import SlotStats, round_half_up
from .errors import DataError
from .logs import PRICE_CAP
from .rl.mlp import Adam, Mlp, flatten_grads
from .static import LinParams, lin_bid_raw

# Adjustment action set for the discrete (value-based) bidder.
BETA_ACTIONS = (-0.08, -0.03, -0.01, 0.0, 0.01, 0.03, 0.08)

FAB_ACTION_BOUND = 0.99


def initial_lambda(avg_pctr: float, base_bid: int) -> float:
    """lambda_0 = avg_pctr / base_bid*, the proportional-bid fixed point."""
    if base_bid <= 0 or avg_pctr <= 0:
        raise DataError("base bid and avg_pctr must be positive")
    return avg_pctr / base_bid


@dataclass
class LambdaTrack:
    """Multiplicatively adjusted bidding factor; stays positive because every
    multiplier is in (0.92, 1.08)."""

    value: float

    def step(self, action_index: int) -> float:
        if not 0 <= action_index < len(BETA_ACTIONS):
            raise DataError(f"action index {action_index} outside the 7-way set")
        self.value = self.value * (1.0 + BETA_ACTIONS[action_index])
        return self.value


def drlb_bid_raw(pctr, lam: float):
    if lam <= 0:
        raise DataError("bidding factor must be positive")
    return np.asarray(pctr, dtype=np.float64) / lam


def drlb_bid(pctr: float, lam: float) -> int:
    """Integer bid pctr / lambda, round-half-up, clipped to [0, 300]."""
    return int(min(max(round_half_up(drlb_bid_raw(pctr, lam)), 0.0), float(PRICE_CAP)))


def drlb_bids(pctrs: np.ndarray, lam: float) -> np.ndarray:
    return np.clip(round_half_up(drlb_bid_raw(pctrs, lam)), 0, PRICE_CAP).astype(np.int64)


def closed_form_lambda(lambda0: float, action_history: tuple[int, ...]) -> float:
    """Product form of the iterated adjustment: lambda0 * prod(1 + beta)."""
    prod = 1.0
    for a in action_history:
        prod *= 1.0 + BETA_ACTIONS[a]
    return lambda0 * prod


def fab_base_bid(base_bid: int, a: float) -> float:
    """Per-slot effective base bid base_bid* / (1 + a)."""
    return base_bid / (1.0 + a)


def fab_bid_raw(pctr, params: LinParams, a: float):
    a = clip_fab_action(a)
    # Single rounding path shared with the scaled-base form.
    return np.asarray(pctr, dtype=np.float64) * fab_base_bid(params.base_bid, a) / params.avg_pctr


def clip_fab_action(a: float) -> float:
    if not -FAB_ACTION_BOUND <= a <= FAB_ACTION_BOUND:
        warnings.warn(f"bidding factor {a} outside [-0.99, 0.99]; clipped")
        a = float(np.clip(a, -FAB_ACTION_BOUND, FAB_ACTION_BOUND))
    return a


def fab_bid(pctr: float, params: LinParams, a: float) -> int:
    """Proportional bid scaled by the continuous factor 1 / (1 + a)."""
    return int(min(max(round_half_up(fab_bid_raw(pctr, params, a)), 0.0), float(PRICE_CAP)))


def fab_bids(pctrs: np.ndarray, params: LinParams, a: float) -> np.ndarray:
    return np.clip(round_half_up(fab_bid_raw(pctrs, params, a)), 0, PRICE_CAP).astype(np.int64)


# ---------------------------------------------------------------------------
# State encoders

DRLB_SCHEMES: dict[str, tuple[str, ...]] = {
    # Table-ordered subsets of the value-based bidder's state features.
    "full":    ("t", "B", "ROL", "BCR", "CPM", "WR", "r_prev"),
    "state_6": ("B", "ROL", "BCR", "CPM", "WR", "r_prev"),
    "state_5": ("B", "BCR", "CPM", "WR", "r_prev"),
    "state_4": ("B", "BCR", "CPM", "WR"),
    "state_3": ("BCR", "CPM", "WR"),
    "state_2": ("BCR", "CPM"),
    "state_1": ("BCR",),
}


@dataclass
class SlotContext:
    """Episode-level bookkeeping needed to scale state features."""

    t: int
    slot_count: int
    initial_budget: int
    remaining_budget: int
    cum_cost: int = 0
    cum_wins: int = 0
    cum_imps: int = 0
    r_max: float = 0.0


def encode_drlb_state(prev: SlotStats | None, ctx: SlotContext, scheme: str = "full",
                      cumulative: bool = False) -> np.ndarray:
    """Feature vector for the discrete bidder, in the scheme's table order.

    Slot-history features are zero at t=0. With `cumulative`, the rate
    features aggregate over all finished slots instead of the last one.
    """
    features = DRLB_SCHEMES.get(scheme)
    if features is None:
        raise DataError(f"unknown state scheme {scheme!r}")
    b0 = max(ctx.initial_budget, 1)
    values: dict[str, float] = {
        "t": ctx.t / ctx.slot_count,
        "B": ctx.remaining_budget / b0,
        "ROL": (ctx.slot_count - ctx.t) / ctx.slot_count,
    }
    if prev is None:
        values.update({"BCR": 0.0, "CPM": 0.0, "WR": 0.0, "r_prev": 0.0})
    elif cumulative:
        values["BCR"] = (ctx.initial_budget - ctx.remaining_budget) / b0
        avg_price = ctx.cum_cost / ctx.cum_wins if ctx.cum_wins else 0.0
        values["CPM"] = avg_price / PRICE_CAP
        values["WR"] = ctx.cum_wins / ctx.cum_imps if ctx.cum_imps else 0.0
        values["r_prev"] = prev.pctr_sum / ctx.r_max if ctx.r_max > 0 else 0.0
    else:
        values["BCR"] = prev.budget_cost_ratio
        values["CPM"] = (prev.cpm / 1000.0) / PRICE_CAP
        values["WR"] = prev.win_rate
        values["r_prev"] = prev.pctr_sum / ctx.r_max if ctx.r_max > 0 else 0.0
    return np.array([values[f] for f in features], dtype=np.float64)


def encode_fab_state(prev: SlotStats | None, ctx: SlotContext) -> np.ndarray:
    """[avbudget_ratio, cost_ratio, ctr, win_ratio], all clipped to [0, 1];
    all-zeros at t=0 (no slot history)."""
    if prev is None or ctx.t == 0:
        return np.zeros(4)
    b0 = max(ctx.initial_budget, 1)
    remaining_slots = max(ctx.slot_count - ctx.t, 1)
    per_slot_budget = b0 / ctx.slot_count
    avbudget = (ctx.remaining_budget / remaining_slots) / per_slot_budget
    cost_ratio = prev.cost / b0
    ctr = prev.clicks / prev.imps_won if prev.imps_won else 0.0
    win_ratio = prev.win_rate
    vec = np.array([avbudget, cost_ratio, ctr, win_ratio], dtype=np.float64)
    return np.clip(vec, 0.0, 1.0)


class EpisodeTracker:
    """Rolls a SlotContext forward as slot stats arrive."""

    def __init__(self, budget: int, slot_count: int):
        self.ctx = SlotContext(t=0, slot_count=slot_count, initial_budget=budget,
                               remaining_budget=budget)

    def enter_slot(self, t: int, prev: SlotStats | None, remaining: int) -> SlotContext:
        self.ctx.t = t
        self.ctx.remaining_budget = remaining
        if prev is not None and prev.t == t - 1:
            self.ctx.cum_cost += prev.cost
            self.ctx.cum_wins += prev.imps_won
            self.ctx.cum_imps += prev.imps_seen
            self.ctx.r_max = max(self.ctx.r_max, prev.pctr_sum)
        return self.ctx


# ---------------------------------------------------------------------------
# Reward functions

REWARD_VARIANTS = ("clk", "pctr", "dnn", "op")

# The four comparison-reward constants, by (won_clicks, saved_cost) branch.
OP_REWARDS = {
    (True, True): 0.005,     # at least baseline clicks, cheaper
    (True, False): 0.001,    # at least baseline clicks, not cheaper
    (False, True): -0.0025,  # fewer clicks, cheaper
    (False, False): -0.005,  # fewer clicks, not cheaper
}


def reward_op(stats: SlotStats, baseline: SlotStats) -> float:
    key = (stats.clicks >= baseline.clicks, stats.cost < baseline.cost)
    return OP_REWARDS[key]


def reward_value(variant: str, stats: SlotStats, baseline: SlotStats | None = None,
                 dnn: "DnnReward | None" = None, state: np.ndarray | None = None,
                 action: float | None = None) -> float:
    """Immediate reward for one finished slot under the chosen variant."""
    if variant == "clk":
        return float(stats.clicks)
    if variant == "pctr":
        return float(stats.pctr_sum)
    if variant == "op":
        if baseline is None:
            raise DataError("comparison reward needs the baseline slot outcome")
        return reward_op(stats, baseline)
    if variant == "dnn":
        if dnn is None or state is None or action is None:
            raise DataError("dnn reward needs the reward net and the (state, action) pair")
        return dnn.reward(state, action)
    raise DataError(f"unknown reward variant {variant!r}")


class _SelectionRule:
    """Baseline-guarded checkpoint selection.

    A trained epoch ships only if its primary objective (clicks or pctr)
    clears the neutral baseline's by a relative margin; among qualifying
    epochs the lexicographically best (primary, secondary) wins.
    """

    def __init__(self, metric: str, margin: float, neutral: tuple[int, float]):
        if metric not in ("clicks", "pctr"):
            raise DataError(f"unknown selection metric {metric!r}")
        self.metric = metric
        neutral_clicks, neutral_pctr = neutral
        if metric == "clicks":
            self.threshold = neutral_clicks * (1.0 + margin)
            self.best = (float(neutral_clicks), neutral_pctr)
        else:
            self.threshold = neutral_pctr * (1.0 + margin)
            self.best = (neutral_pctr, float(neutral_clicks))

    def accept(self, clicks: int, pctr: float) -> bool:
        key = (float(clicks), pctr) if self.metric == "clicks" else (pctr, float(clicks))
        if key[0] > self.threshold and key > self.best:
            self.best = key
            return True
        return False


class DnnReward:
    """Learned reward: a table of max-episode-return per quantized
    (state, action) pair, regression-fit by a three-hidden-layer net.

    The table key quantizes each scaled feature (and the action value) to
    two decimal digits; `record_episode` keeps the maximum return seen for
    each key and `refit` re-fits the net to the table.
    """

    def __init__(self, state_dim: int, seed: int, hidden: tuple[int, int, int] = (100, 100, 100),
                 lr: float = 1e-3, quant_digits: int = 2):
        rng = np.random.Generator(np.random.PCG64(seed))
        self.net = Mlp((state_dim + 1, *hidden, 1), rng)
        self.optimizer = Adam(self.net.parameters(), lr=lr)
        self.quant_digits = quant_digits
        self.table: dict[tuple[float, ...], float] = {}

    def _key(self, state: np.ndarray, action: float) -> tuple[float, ...]:
        vec = np.append(np.asarray(state, dtype=np.float64), float(action))
        return tuple(float(v) for v in np.round(vec, self.quant_digits))

    def record_episode(self, pairs: list[tuple[np.ndarray, float]], episode_return: float) -> None:
        """Update every (state, action) key with the episode's return if larger."""
        for state, action in pairs:
            key = self._key(state, action)
            prev = self.table.get(key)
            if prev is None or episode_return > prev:
                self.table[key] = episode_return

    def refit(self, steps: int = 200, batch_size: int = 64,
              rng: np.random.Generator | None = None) -> float:
        """Fit the net to the table by mini-batch squared error; returns the
        final batch loss."""
        if not self.table:
            return 0.0
        keys = sorted(self.table)
        x = np.array(keys, dtype=np.float64)
        y = np.array([self.table[k] for k in keys], dtype=np.float64)[:, None]
        gen = rng if rng is not None else np.random.Generator(np.random.PCG64(0))
        loss = 0.0
        for _ in range(steps):
            idx = gen.integers(0, len(x), size=min(batch_size, len(x)))
            out, cache = self.net.forward_cached(x[idx])
            diff = out - y[idx]
            loss = float(np.mean(diff ** 2))
            grads, _ = self.net.backward(cache, 2.0 * diff / len(idx))
            self.optimizer.step(self.net.parameters(), flatten_grads(grads))
        return loss

    def reward(self, state: np.ndarray, action: float) -> float:
        vec = np.append(np.asarray(state, dtype=np.float64), float(action))
        return float(self.net.forward(vec)[0])
