"""Actor-critic slot bidder: a TD3-style agent emitting one continuous
bidding factor per slot that rescales the proportional bid.

The actor acts every slot (state is all-zeros at slot 0); with the actor
frozen at output 0 the strategy reproduces the proportional baseline
exactly. The default reward compares each slot's clicks and cost against a
baseline replay of the same slot.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from .auction import BidStrategy, EpisodeResult, SlotStats, run_episode
from .binio import load_bundle, save_bundle
from .errors import DataError
from .logs import CampaignDataset, Episode
from .mdp import (FAB_ACTION_BOUND, DnnReward, EpisodeTracker, _SelectionRule,
                  encode_fab_state, fab_bids, reward_value)
from .rl.buffer import ReplayBuffer
from .rl.updates import ActorCriticNets, twin_critic_update
from .static import LinParams, LinStrategy

CHECKPOINT_KIND = "fab-checkpoint"
FAB_STATE_DIM = 4


@dataclass(frozen=True)
class FabConfig:
    slot_count: int = 24
    reward: str = "op"
    epochs: int = 40
    gamma: float = 1.0
    learning_rate: float = 1e-3
    batch_size: int = 32
    buffer_capacity: int = 100_000
    hidden: tuple[int, int] = (100, 100)
    tau: float = 0.005
    policy_delay: int = 2
    target_noise: float = 0.2
    noise_clip: float = 0.5
    explore_noise: float = 0.1
    warmup_steps: int = 1000     # uniform-random actions before the actor drives
    uniform_eps: float = 0.1     # lasting share of uniform actions (buffer diversity)
    action_bound: float = FAB_ACTION_BOUND
    selection_margin: float = 0.01
    seed: int = 0

    def selection_metric(self) -> str:
        return "pctr" if self.reward in ("pctr", "dnn") else "clicks"


@dataclass
class EpochLog:
    epoch: int
    train_clicks: int
    train_pctr: float
    mean_critic_loss: float


class _FabPolicy(BidStrategy):
    """Replay-engine driver shared by training and greedy evaluation."""

    name = "fab"

    def __init__(self, agent: "FabAgent", training: bool, frozen_action: float | None = None):
        self.agent = agent
        self.training = training
        self.frozen_action = frozen_action
        self.tracker: EpisodeTracker | None = None
        self.pending: tuple[np.ndarray, float] | None = None
        self.terminated = False
        self.action = 0.0
        self.losses: list[float] = []
        self.action_history: list[float] = []
        self.episode_pairs: list[tuple[np.ndarray, float]] = []

    def begin_episode(self, episode: Episode, budget: int, slot_count: int) -> None:
        self.tracker = EpisodeTracker(budget, slot_count)
        self.pending = None
        self.terminated = False
        self.action = 0.0
        self.action_history = []
        self.episode_pairs = []
        if self.training and self.agent.config.reward == "op":
            self.agent.ensure_baseline(episode, budget, slot_count)

    def begin_slot(self, t: int, prev: SlotStats | None, budget_remaining: int) -> None:
        agent = self.agent
        ctx = self.tracker.enter_slot(t, prev, budget_remaining)
        state = encode_fab_state(prev, ctx)
        if t > 0 and self.pending is not None and self.training:
            done = budget_remaining == 0
            self._push(prev, state, done)
            if done:
                self.terminated = True
        if self.terminated:
            self.action_history.append(self.action)
            return
        if self.frozen_action is not None:
            self.action = self.frozen_action
        else:
            self.action = agent.select_action(state, explore=self.training)
        self.action_history.append(self.action)
        self.pending = (state, self.action)
        if self.training:
            self.episode_pairs.append((state, self.action))

    def slot_bids(self, pctrs: np.ndarray) -> np.ndarray:
        return fab_bids(pctrs, self.agent.lin, self.action)

    def bid(self, pctr: float) -> int:
        return int(fab_bids(np.array([pctr]), self.agent.lin, self.action)[0])

    def end_episode(self, result: EpisodeResult) -> None:
        if not self.training:
            return
        if self.pending is not None and not self.terminated:
            last = result.slots[-1]
            ctx = self.tracker.enter_slot(result.slot_count, last,
                                          last.budget_remaining_at_end)
            final_state = encode_fab_state(last, ctx)
            self._push(last, final_state, done=True)
        self.agent.finish_episode(self, result)

    def _push(self, finished: SlotStats, next_state: np.ndarray, done: bool) -> None:
        agent = self.agent
        state, action = self.pending
        reward = agent.slot_reward(finished, state, action)
        agent.buffer.push(state, action, reward, next_state, done)
        self.pending = None
        if len(agent.buffer) >= agent.config.batch_size:
            batch = agent.buffer.sample(agent.config.batch_size)
            critic_loss, _ = twin_critic_update(
                agent.nets, batch, agent.config.gamma, agent.config.target_noise,
                agent.config.noise_clip, agent.config.policy_delay, agent.config.tau,
                agent._noise_rng)
            self.losses.append(critic_loss)


class FabAgent:
    """Trains and evaluates the continuous slot bidder for one campaign and
    budget fraction."""

    def __init__(self, config: FabConfig, lin: LinParams):
        self.config = config
        self.lin = lin
        root = np.random.SeedSequence(config.seed)
        net_seed, buf_seed, explore_seed, noise_seed, dnn_seed = root.spawn(5)
        self.nets = ActorCriticNets.build(
            FAB_STATE_DIM, config.hidden, config.learning_rate, config.action_bound,
            np.random.Generator(np.random.PCG64(net_seed)))
        self.buffer = ReplayBuffer(config.buffer_capacity, FAB_STATE_DIM,
                                   seed=int(buf_seed.generate_state(1)[0]))
        self._explore_rng = np.random.Generator(np.random.PCG64(explore_seed))
        self._noise_rng = np.random.Generator(np.random.PCG64(noise_seed))
        self.dnn_reward = (DnnReward(FAB_STATE_DIM, seed=int(dnn_seed.generate_state(1)[0]))
                           if config.reward == "dnn" else None)
        self._baselines: dict[tuple[str, int], list[SlotStats]] = {}
        self._baseline_slots: list[SlotStats] = []
        self.train_step = 0
        self.explore_step = 0
        self.neutral_policy = False
        self.history: list[EpochLog] = []

    def select_action(self, state: np.ndarray, explore: bool) -> float:
        bound = self.config.action_bound
        if explore:
            self.explore_step += 1
            if (self.explore_step <= self.config.warmup_steps
                    or self._explore_rng.random() < self.config.uniform_eps):
                return float(self._explore_rng.uniform(-bound, bound))
            action = self.nets.act(state)
            action += self._explore_rng.normal(0.0, self.config.explore_noise)
        else:
            action = self.nets.act(state)
        return float(np.clip(action, -bound, bound))

    def slot_reward(self, stats: SlotStats, state: np.ndarray, action: float) -> float:
        baseline = self._baseline_slots[stats.t] if self.config.reward == "op" else None
        return reward_value(self.config.reward, stats, baseline=baseline,
                            dnn=self.dnn_reward, state=state, action=action)

    def ensure_baseline(self, episode: Episode, budget: int, slot_count: int) -> None:
        key = (episode.date, budget)
        if key not in self._baselines:
            result = run_episode(LinStrategy(self.lin), episode, budget=budget,
                                 slot_count=slot_count)
            self._baselines[key] = result.slots
        self._baseline_slots = self._baselines[key]

    def finish_episode(self, policy: _FabPolicy, result: EpisodeResult) -> None:
        self.train_step += 1
        if self.dnn_reward is not None and policy.episode_pairs:
            episode_return = sum(s.pctr_sum for s in result.slots)
            self.dnn_reward.record_episode(policy.episode_pairs, episode_return)
            self.dnn_reward.refit(steps=50, rng=self._explore_rng)

    def train(self, dataset: CampaignDataset, fraction: Fraction) -> list[EpochLog]:
        """Epoch loop with baseline-candidate selection.

        Ships the epoch scoring best on the reward variant's objective
        (train pctr for value-style rewards, train clicks otherwise); the
        neutral zero factor (the exact proportional baseline) stays unless
        an epoch clears it by the selection margin.
        """
        cfg = self.config
        episodes = dataset.train_episodes
        budgets = [ep.budget_for(fraction) for ep in episodes]
        chooser = _SelectionRule(cfg.selection_metric(), cfg.selection_margin,
                                 self._evaluate(episodes, budgets, frozen_action=0.0))
        best_params: dict[str, np.ndarray] | None = None
        for epoch in range(cfg.epochs):
            driver = _FabPolicy(self, training=True)
            losses: list[float] = []
            for ep, budget in zip(episodes, budgets):
                run_episode(driver, ep, budget=budget, slot_count=cfg.slot_count)
                losses.extend(driver.losses)
                driver.losses = []
            clicks, pctr = self._evaluate(episodes, budgets)
            self.history.append(EpochLog(
                epoch=epoch, train_clicks=clicks, train_pctr=pctr,
                mean_critic_loss=float(np.mean(losses)) if losses else 0.0))
            if chooser.accept(clicks, pctr):
                best_params = self._snapshot()
        if best_params is not None:
            self._restore(best_params)
        else:
            self.neutral_policy = True
        return self.history

    def _evaluate(self, episodes: Sequence[Episode], budgets: Sequence[int],
                  frozen_action: float | None = None) -> tuple[int, float]:
        clicks = 0
        pctr = 0.0
        for ep, budget in zip(episodes, budgets):
            policy = _FabPolicy(self, training=False, frozen_action=frozen_action)
            result = run_episode(policy, ep, budget=budget,
                                 slot_count=self.config.slot_count)
            clicks += result.clicks
            pctr += result.pctr_sum
        return clicks, pctr

    def strategy(self, frozen_action: float | None = None) -> _FabPolicy:
        """Greedy evaluation policy; `frozen_action` pins the factor (0 ->
        exact proportional baseline). A trained agent that never beat the
        neutral baseline on the training set holds the zero factor."""
        if frozen_action is None and self.neutral_policy:
            frozen_action = 0.0
        return _FabPolicy(self, training=False, frozen_action=frozen_action)

    def _snapshot(self) -> dict[str, np.ndarray]:
        params = {}
        params.update(self.nets.actor.params_dict("actor"))
        params.update(self.nets.critic1.params_dict("critic1"))
        params.update(self.nets.critic2.params_dict("critic2"))
        return {k: v.copy() for k, v in params.items()}

    def _restore(self, params: dict[str, np.ndarray]) -> None:
        self.nets.actor.load_params_dict("actor", params)
        self.nets.critic1.load_params_dict("critic1", params)
        self.nets.critic2.load_params_dict("critic2", params)
        self.nets.actor_target.load_from(self.nets.actor)
        self.nets.critic1_target.load_from(self.nets.critic1)
        self.nets.critic2_target.load_from(self.nets.critic2)

    # -- persistence ----------------------------------------------------------

    def save(self, path: str | Path) -> None:
        meta = {
            "kind": CHECKPOINT_KIND,
            "version": 1,
            "config": asdict(self.config),
            "lin": {"base_bid": self.lin.base_bid, "avg_pctr": self.lin.avg_pctr},
            "seed": self.config.seed,
            "train_step": self.train_step,
            "neutral_policy": self.neutral_policy,
            "history": [asdict(h) for h in self.history],
        }
        save_bundle(path, meta, self._snapshot())

    @staticmethod
    def load(path: str | Path) -> "FabAgent":
        meta, arrays = load_bundle(path)
        if meta.get("kind") != CHECKPOINT_KIND:
            raise DataError(f"{path}: not a fab checkpoint")
        cfg_dict = dict(meta["config"])
        cfg_dict["hidden"] = tuple(cfg_dict["hidden"])
        config = FabConfig(**cfg_dict)
        agent = FabAgent(config, LinParams(**meta["lin"]))
        agent._restore(arrays)
        agent.train_step = meta["train_step"]
        agent.neutral_policy = bool(meta.get("neutral_policy", False))
        agent.history = [EpochLog(**h) for h in meta["history"]]
        return agent
