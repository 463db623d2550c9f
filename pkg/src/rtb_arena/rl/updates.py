"""Value-network (DQN-style) and twin-critic actor-critic (TD3-style)
update rules over the plain-numpy MLPs."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DataError, NumericalError
from .buffer import Batch
from .mlp import Adam, Mlp, flatten_grads


def polyak_update(target: Mlp, online: Mlp, tau: float) -> None:
    """target <- tau * online + (1 - tau) * target, elementwise."""
    for t, o in zip(target.parameters(), online.parameters()):
        t *= (1.0 - tau)
        t += tau * o


@dataclass
class ValueNets:
    """Online/target Q-networks for a discrete-action agent."""

    online: Mlp
    target: Mlp
    optimizer: Adam
    target_refresh: int = 100
    update_count: int = 0

    @staticmethod
    def build(state_dim: int, n_actions: int, hidden: tuple[int, ...],
              lr: float, target_refresh: int, rng: np.random.Generator) -> "ValueNets":
        online = Mlp((state_dim, *hidden, n_actions), rng, final_scale=1e-3)
        target = online.copy()
        return ValueNets(online=online, target=target,
                         optimizer=Adam(online.parameters(), lr=lr),
                         target_refresh=target_refresh)


def q_update(nets: ValueNets, batch: Batch, gamma: float) -> float:
    """One mean-squared-error step toward y = r + gamma * max_a Q_target(s')
    (y = r on terminal transitions); hard target refresh every
    `target_refresh` updates. Returns the batch loss."""
    if len(batch) == 0:
        raise DataError("empty batch")
    actions = batch.actions.astype(np.int64)
    n_actions = nets.online.out_dim
    if actions.min() < 0 or actions.max() >= n_actions:
        raise DataError("action index outside the discrete action set")
    q_next = nets.target.forward(batch.next_states)
    targets = batch.rewards + gamma * (1.0 - batch.terminals) * q_next.max(axis=1)
    q_all, cache = nets.online.forward_cached(batch.states)
    rows = np.arange(len(batch))
    diff = q_all[rows, actions] - targets
    loss = float(np.mean(diff ** 2))
    if not np.isfinite(loss):
        raise NumericalError("non-finite value-network loss")
    grad_out = np.zeros_like(q_all)
    grad_out[rows, actions] = 2.0 * diff / len(batch)
    grads, _ = nets.online.backward(cache, grad_out)
    nets.optimizer.step(nets.online.parameters(), flatten_grads(grads))
    nets.update_count += 1
    if nets.update_count % nets.target_refresh == 0:
        nets.target.load_from(nets.online)
    return loss


@dataclass
class ActorCriticNets:
    """Actor, twin critics, and their lagged targets for a continuous agent."""

    actor: Mlp
    actor_target: Mlp
    critic1: Mlp
    critic2: Mlp
    critic1_target: Mlp
    critic2_target: Mlp
    actor_opt: Adam
    critic1_opt: Adam
    critic2_opt: Adam
    action_bound: float = 0.99
    update_count: int = 0

    @staticmethod
    def build(state_dim: int, hidden: tuple[int, ...], lr: float,
              action_bound: float, rng: np.random.Generator) -> "ActorCriticNets":
        # Small final layers start the actor at the neutral factor (the
        # proportional baseline) and the critics near zero value.
        actor = Mlp((state_dim, *hidden, 1), rng, output="tanh", final_scale=1e-3)
        critic1 = Mlp((state_dim + 1, *hidden, 1), rng, final_scale=1e-3)
        critic2 = Mlp((state_dim + 1, *hidden, 1), rng, final_scale=1e-3)
        return ActorCriticNets(
            actor=actor, actor_target=actor.copy(),
            critic1=critic1, critic2=critic2,
            critic1_target=critic1.copy(), critic2_target=critic2.copy(),
            actor_opt=Adam(actor.parameters(), lr=lr),
            critic1_opt=Adam(critic1.parameters(), lr=lr),
            critic2_opt=Adam(critic2.parameters(), lr=lr),
            action_bound=action_bound)

    def act(self, state: np.ndarray) -> float:
        return float(self.actor.forward(state)) * self.action_bound


def twin_critic_update(nets: ActorCriticNets, batch: Batch, gamma: float,
                       noise_std: float, noise_clip: float, policy_delay: int,
                       tau: float, rng: np.random.Generator) -> tuple[float, float | None]:
    """One twin-critic step with clipped target-policy smoothing.

    Target action: clip(actor_target(s') + clipped gaussian noise, bounds).
    Both critics regress to r + gamma * min(Q1_t, Q2_t)(s', a'); the actor
    ascends critic-1 every `policy_delay` updates, followed by polyak target
    averaging. Returns (critic loss, actor loss or None).
    """
    if len(batch) == 0:
        raise DataError("empty batch")
    bound = nets.action_bound
    a_next = nets.actor_target.forward(batch.next_states) * bound
    noise = np.clip(rng.normal(0.0, noise_std, size=a_next.shape), -noise_clip, noise_clip)
    a_next = np.clip(a_next + noise, -bound, bound)
    sa_next = np.concatenate([batch.next_states, a_next], axis=1)
    q1_t = nets.critic1_target.forward(sa_next)[:, 0]
    q2_t = nets.critic2_target.forward(sa_next)[:, 0]
    targets = batch.rewards + gamma * (1.0 - batch.terminals) * np.minimum(q1_t, q2_t)

    sa = np.concatenate([batch.states, batch.actions[:, None]], axis=1)
    critic_loss = 0.0
    for critic, opt in ((nets.critic1, nets.critic1_opt), (nets.critic2, nets.critic2_opt)):
        q, cache = critic.forward_cached(sa)
        diff = q[:, 0] - targets
        critic_loss += float(np.mean(diff ** 2))
        grads, _ = critic.backward(cache, (2.0 * diff / len(batch))[:, None])
        opt.step(critic.parameters(), flatten_grads(grads))
    if not np.isfinite(critic_loss):
        raise NumericalError("non-finite critic loss")

    actor_loss: float | None = None
    nets.update_count += 1
    if nets.update_count % policy_delay == 0:
        a_pred, actor_cache = nets.actor.forward_cached(batch.states)
        a_scaled = a_pred * bound
        sa_pred = np.concatenate([batch.states, a_scaled], axis=1)
        q1, critic_cache = nets.critic1.forward_cached(sa_pred)
        actor_loss = float(-np.mean(q1))
        if not np.isfinite(actor_loss):
            raise NumericalError("non-finite actor loss")
        gout = np.zeros_like(q1)
        gout[:, 0] = -1.0 / len(batch)
        _, dsa = nets.critic1.backward(critic_cache, gout)
        da = dsa[:, -1:] * bound
        actor_grads, _ = nets.actor.backward(actor_cache, da)
        nets.actor_opt.step(nets.actor.parameters(), flatten_grads(actor_grads))
        polyak_update(nets.actor_target, nets.actor, tau)
        polyak_update(nets.critic1_target, nets.critic1, tau)
        polyak_update(nets.critic2_target, nets.critic2, tau)
    return critic_loss, actor_loss
