"""Seeded ring replay buffer with uniform with-replacement sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DataError


@dataclass
class Batch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    terminals: np.ndarray

    def __len__(self) -> int:
        return len(self.rewards)


class ReplayBuffer:
    """Fixed-capacity transition store; push evicts the oldest entry."""

    def __init__(self, capacity: int, state_dim: int, seed: int = 0):
        if capacity < 1:
            raise DataError("buffer capacity must be >= 1")
        self.capacity = capacity
        self.state_dim = state_dim
        self._states = np.zeros((capacity, state_dim))
        self._actions = np.zeros(capacity)
        self._rewards = np.zeros(capacity)
        self._next_states = np.zeros((capacity, state_dim))
        self._terminals = np.zeros(capacity)
        self._size = 0
        self._head = 0
        self._rng = np.random.Generator(np.random.PCG64(seed))

    def __len__(self) -> int:
        return self._size

    def push(self, state, action, reward, next_state, terminal: bool) -> None:
        i = self._head
        self._states[i] = state
        self._actions[i] = action
        self._rewards[i] = reward
        self._next_states[i] = next_state
        self._terminals[i] = 1.0 if terminal else 0.0
        self._head = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator | None = None) -> Batch:
        """Uniform sample with replacement using the buffer's seeded generator."""
        if batch_size > self._size:
            raise DataError(f"cannot sample {batch_size} from buffer of size {self._size}")
        gen = rng if rng is not None else self._rng
        idx = gen.integers(0, self._size, size=batch_size)
        return Batch(
            states=self._states[idx].copy(),
            actions=self._actions[idx].copy(),
            rewards=self._rewards[idx].copy(),
            next_states=self._next_states[idx].copy(),
            terminals=self._terminals[idx].copy(),
        )
