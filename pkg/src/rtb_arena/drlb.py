"""Value-based slot bidder: a DQN-style agent that nudges the bidding
factor once per slot from the 7-way adjustment set.

Slot 0 always bids with the initial factor avg_pctr / base_bid* (the
proportional-bid fixed point); actions apply from slot 1 on. A training
episode terminates early for the agent when the budget is exhausted at a
slot boundary, while the replay itself continues for diagnostics.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from .auction import BidStrategy, EpisodeResult, SlotStats, run_episode
from .binio import load_bundle, save_bundle
from .errors import DataError
from .logs import CampaignDataset, Episode
from .mdp import (BETA_ACTIONS, DRLB_SCHEMES, DnnReward, EpisodeTracker, LambdaTrack,
                  _SelectionRule, drlb_bids, encode_drlb_state, initial_lambda,
                  reward_value)
from .rl.buffer import ReplayBuffer
from .rl.updates import ValueNets, q_update
from .static import LinParams, LinStrategy

CHECKPOINT_KIND = "drlb-checkpoint"
NEUTRAL_ACTION = BETA_ACTIONS.index(0.0)   # hold the factor: the 0% adjustment


@dataclass(frozen=True)
class DrlbConfig:
    slot_count: int = 96
    scheme: str = "full"
    reward: str = "pctr"
    cumulative_rates: bool = False
    epochs: int = 40
    gamma: float = 1.0
    learning_rate: float = 1e-3
    batch_size: int = 32
    buffer_capacity: int = 100_000
    target_refresh: int = 100
    hidden: tuple[int, int] = (100, 100)
    eps_start: float = 1.0
    eps_end: float = 0.05
    selection_margin: float = 0.01
    seed: int = 0

    def state_dim(self) -> int:
        return len(DRLB_SCHEMES[self.scheme])

    def selection_metric(self) -> str:
        # Variant-aligned: value-style rewards ship on the pctr objective,
        # click-style on clicks.
        return "pctr" if self.reward in ("pctr", "dnn") else "clicks"


@dataclass
class EpochLog:
    epoch: int
    train_clicks: int
    train_pctr: float
    mean_loss: float
    epsilon: float


class _DrlbPolicy(BidStrategy):
    """Replay-engine driver shared by training and greedy evaluation."""

    name = "drlb"

    def __init__(self, agent: "DrlbAgent", training: bool,
                 frozen_action: int | None = None):
        self.agent = agent
        self.training = training
        self.frozen_action = frozen_action
        self.track = LambdaTrack(agent.lambda0)
        self.tracker: EpisodeTracker | None = None
        self.pending: tuple[np.ndarray, int] | None = None
        self.terminated = False
        self.losses: list[float] = []
        self.action_history: list[int] = []
        self.lambda_history: list[float] = []
        self.episode_pairs: list[tuple[np.ndarray, float]] = []

    def begin_episode(self, episode: Episode, budget: int, slot_count: int) -> None:
        self.track = LambdaTrack(self.agent.lambda0)
        self.tracker = EpisodeTracker(budget, slot_count)
        self.pending = None
        self.terminated = False
        self.action_history = []
        self.lambda_history = [self.track.value]
        self.episode_pairs = []
        if self.training and self.agent.config.reward == "op":
            self.agent.ensure_baseline(episode, budget, slot_count)

    def begin_slot(self, t: int, prev: SlotStats | None, budget_remaining: int) -> None:
        agent = self.agent
        ctx = self.tracker.enter_slot(t, prev, budget_remaining)
        if t == 0:
            return
        state = encode_drlb_state(prev, ctx, agent.config.scheme,
                                  cumulative=agent.config.cumulative_rates)
        if self.pending is not None and self.training:
            done = budget_remaining == 0
            self._push(prev, state, done)
            if done:
                self.terminated = True
        if self.terminated:
            self.lambda_history.append(self.track.value)
            return
        if self.frozen_action is not None:
            action = self.frozen_action
        else:
            action = agent.select_action(state, explore=self.training)
        self.track.step(action)
        self.action_history.append(action)
        self.lambda_history.append(self.track.value)
        self.pending = (state, action)
        if self.training:
            self.episode_pairs.append((state, float(BETA_ACTIONS[action])))

    def slot_bids(self, pctrs: np.ndarray) -> np.ndarray:
        return drlb_bids(pctrs, self.track.value)

    def bid(self, pctr: float) -> int:
        return int(drlb_bids(np.array([pctr]), self.track.value)[0])

    def end_episode(self, result: EpisodeResult) -> None:
        if not self.training:
            return
        if self.pending is not None and not self.terminated:
            last = result.slots[-1]
            ctx = self.tracker.enter_slot(result.slot_count, last,
                                          last.budget_remaining_at_end)
            final_state = encode_drlb_state(last, ctx, self.agent.config.scheme,
                                            cumulative=self.agent.config.cumulative_rates)
            self._push(last, final_state, done=True)
        self.agent.finish_episode(self, result)

    def _push(self, finished: SlotStats, next_state: np.ndarray, done: bool) -> None:
        agent = self.agent
        state, action = self.pending
        reward = agent.slot_reward(finished, state, float(BETA_ACTIONS[action]))
        agent.buffer.push(state, action, reward, next_state, done)
        self.pending = None
        if len(agent.buffer) >= agent.config.batch_size:
            batch = agent.buffer.sample(agent.config.batch_size)
            self.losses.append(q_update(agent.nets, batch, agent.config.gamma))


class DrlbAgent:
    """Trains and evaluates the discrete slot bidder for one campaign and
    budget fraction."""

    def __init__(self, config: DrlbConfig, lin: LinParams):
        self.config = config
        self.lin = lin
        self.lambda0 = initial_lambda(lin.avg_pctr, lin.base_bid)
        root = np.random.SeedSequence(config.seed)
        net_seed, buf_seed, explore_seed, dnn_seed = root.spawn(4)
        self.nets = ValueNets.build(
            config.state_dim(), len(BETA_ACTIONS), config.hidden,
            config.learning_rate, config.target_refresh,
            np.random.Generator(np.random.PCG64(net_seed)))
        self.buffer = ReplayBuffer(config.buffer_capacity, config.state_dim(),
                                   seed=int(buf_seed.generate_state(1)[0]))
        self._explore_rng = np.random.Generator(np.random.PCG64(explore_seed))
        self.dnn_reward = (DnnReward(config.state_dim(), seed=int(dnn_seed.generate_state(1)[0]))
                           if config.reward == "dnn" else None)
        self._baselines: dict[tuple[str, int], list[SlotStats]] = {}
        self._baseline_slots: list[SlotStats] = []
        self.action_step = 0
        self.total_action_steps = 1
        self.train_step = 0
        self.neutral_policy = False
        self.history: list[EpochLog] = []

    # -- policy -------------------------------------------------------------

    def epsilon(self) -> float:
        cfg = self.config
        frac = min(self.action_step / max(self.total_action_steps, 1), 1.0)
        return cfg.eps_start + (cfg.eps_end - cfg.eps_start) * frac

    def select_action(self, state: np.ndarray, explore: bool) -> int:
        if explore:
            eps = self.epsilon()
            self.action_step += 1
            if self._explore_rng.random() < eps:
                return int(self._explore_rng.integers(0, len(BETA_ACTIONS)))
        q = self.nets.online.forward(state)
        return int(np.argmax(q))

    def slot_reward(self, stats: SlotStats, state: np.ndarray, action_value: float) -> float:
        baseline = self._baseline_slots[stats.t] if self.config.reward == "op" else None
        return reward_value(self.config.reward, stats, baseline=baseline,
                            dnn=self.dnn_reward, state=state, action=action_value)

    def ensure_baseline(self, episode: Episode, budget: int, slot_count: int) -> None:
        key = (episode.date, budget)
        if key not in self._baselines:
            result = run_episode(LinStrategy(self.lin), episode, budget=budget,
                                 slot_count=slot_count)
            self._baselines[key] = result.slots
        self._current_key = key
        self._baseline_slots = self._baselines[key]

    def finish_episode(self, policy: _DrlbPolicy, result: EpisodeResult) -> None:
        self.train_step += 1
        if self.dnn_reward is not None and policy.episode_pairs:
            # Learned-reward bookkeeping: the episode return is the total
            # value (pctr) of winning impressions across slots.
            episode_return = sum(s.pctr_sum for s in result.slots)
            self.dnn_reward.record_episode(policy.episode_pairs, episode_return)
            self.dnn_reward.refit(steps=50, rng=self._explore_rng)

    # -- training loop --------------------------------------------------------

    def train(self, dataset: CampaignDataset, fraction: Fraction) -> list[EpochLog]:
        """Epoch loop with baseline-candidate selection.

        The shipped policy is the epoch whose greedy replay scores best on
        the reward variant's objective (train pctr for value-style rewards,
        train clicks otherwise); the neutral hold-the-factor policy (the
        proportional baseline) stays unless an epoch clears it by the
        selection margin.
        """
        cfg = self.config
        episodes = dataset.train_episodes
        budgets = [ep.budget_for(fraction) for ep in episodes]
        self.total_action_steps = cfg.epochs * len(episodes) * max(cfg.slot_count - 1, 1)
        chooser = _SelectionRule(cfg.selection_metric(), cfg.selection_margin,
                                 self._evaluate(episodes, budgets,
                                                frozen_action=NEUTRAL_ACTION))
        best_params: dict[str, np.ndarray] | None = None
        for epoch in range(cfg.epochs):
            driver = _DrlbPolicy(self, training=True)
            losses: list[float] = []
            for ep, budget in zip(episodes, budgets):
                run_episode(driver, ep, budget=budget, slot_count=cfg.slot_count)
                losses.extend(driver.losses)
                driver.losses = []
            clicks, pctr = self._evaluate(episodes, budgets)
            self.history.append(EpochLog(
                epoch=epoch, train_clicks=clicks, train_pctr=pctr,
                mean_loss=float(np.mean(losses)) if losses else 0.0,
                epsilon=self.epsilon()))
            if chooser.accept(clicks, pctr):
                best_params = {k: v.copy() for k, v in
                               self.nets.online.params_dict("q").items()}
        if best_params is not None:
            self.nets.online.load_params_dict("q", best_params)
            self.nets.target.load_from(self.nets.online)
        else:
            self.neutral_policy = True
        return self.history

    def _evaluate(self, episodes: Sequence[Episode], budgets: Sequence[int],
                  frozen_action: int | None = None) -> tuple[int, float]:
        clicks = 0
        pctr = 0.0
        for ep, budget in zip(episodes, budgets):
            policy = _DrlbPolicy(self, training=False, frozen_action=frozen_action)
            result = run_episode(policy, ep, budget=budget,
                                 slot_count=self.config.slot_count)
            clicks += result.clicks
            pctr += result.pctr_sum
        return clicks, pctr

    def strategy(self) -> _DrlbPolicy:
        """Greedy evaluation policy; holds the factor when training never
        beat the neutral baseline."""
        return _DrlbPolicy(self, training=False,
                           frozen_action=NEUTRAL_ACTION if self.neutral_policy else None)

    # -- persistence ----------------------------------------------------------

    def save(self, path: str | Path) -> None:
        meta = {
            "kind": CHECKPOINT_KIND,
            "version": 1,
            "config": asdict(self.config),
            "lin": {"base_bid": self.lin.base_bid, "avg_pctr": self.lin.avg_pctr},
            "seed": self.config.seed,
            "train_step": self.train_step,
            "action_step": self.action_step,
            "neutral_policy": self.neutral_policy,
            "history": [asdict(h) for h in self.history],
        }
        save_bundle(path, meta, self.nets.online.params_dict("q"))

    @staticmethod
    def load(path: str | Path) -> "DrlbAgent":
        meta, arrays = load_bundle(path)
        if meta.get("kind") != CHECKPOINT_KIND:
            raise DataError(f"{path}: not a drlb checkpoint")
        cfg_dict = dict(meta["config"])
        cfg_dict["hidden"] = tuple(cfg_dict["hidden"])
        config = DrlbConfig(**cfg_dict)
        agent = DrlbAgent(config, LinParams(**meta["lin"]))
        agent.nets.online.load_params_dict("q", arrays)
        agent.nets.target.load_from(agent.nets.online)
        agent.train_step = meta["train_step"]
        agent.action_step = meta["action_step"]
        agent.neutral_policy = bool(meta.get("neutral_policy", False))
        agent.history = [EpochLog(**h) for h in meta["history"]]
        return agent
