"""FIFO experience memory of joint transitions. Not thread-safe."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class InsufficientDataError(RuntimeError):
    pass


@dataclass
class Transition:
    obs: np.ndarray  # (n_agents, obs_dim)
    action: np.ndarray  # (n_agents, action_dim), as commanded
    reward: float
    next_obs: np.ndarray
    done: bool


@dataclass
class Batch:
    obs: np.ndarray  # (b, n_agents, obs_dim)
    action: np.ndarray  # (b, n_agents, action_dim)
    reward: np.ndarray  # (b,)
    next_obs: np.ndarray
    done: np.ndarray  # (b,) float, 1.0 at terminals

    def __len__(self):
        return len(self.reward)


class ReplayBuffer:
    """Ring buffer over preallocated arrays; the oldest entry is overwritten when full."""

    def __init__(self, capacity: int, n_agents: int, obs_dim: int, action_dim: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.n_agents = n_agents
        self.obs_dim = obs_dim
        self.action_dim = action_dim
        # np.empty leaves untouched pages unallocated, so large capacities are cheap
        self._obs = np.empty((capacity, n_agents, obs_dim))
        self._next_obs = np.empty((capacity, n_agents, obs_dim))
        self._action = np.empty((capacity, n_agents, action_dim))
        self._reward = np.empty(capacity)
        self._done = np.empty(capacity)
        self._next = 0
        self._size = 0

    def __len__(self):
        return self._size

    def push(self, t: Transition) -> None:
        obs_shape = (self.n_agents, self.obs_dim)
        act_shape = (self.n_agents, self.action_dim)
        obs, next_obs, action = (np.asarray(x, dtype=np.float64) for x in (t.obs, t.next_obs, t.action))
        if obs.shape != obs_shape or next_obs.shape != obs_shape or action.shape != act_shape:
            raise ValueError(
                f"transition shape mismatch: obs {obs.shape}, next_obs {next_obs.shape}, "
                f"action {action.shape}; expected {obs_shape} and {act_shape}"
            )
        i = self._next
        self._obs[i] = obs
        self._next_obs[i] = next_obs
        self._action[i] = action
        self._reward[i] = t.reward
        self._done[i] = float(t.done)
        self._next = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def _ordered_indices(self) -> np.ndarray:
        start = (self._next - self._size) % self.capacity
        return (start + np.arange(self._size)) % self.capacity

    def __iter__(self):
        """Stored transitions, oldest first."""
        for i in self._ordered_indices():
            yield Transition(
                self._obs[i].copy(),
                self._action[i].copy(),
                float(self._reward[i]),
                self._next_obs[i].copy(),
                bool(self._done[i]),
            )

    def sample(self, b: int, rng: np.random.Generator) -> Batch:
        """Draw ``b`` transitions uniformly with replacement.

        Any non-empty buffer can serve any ``b``; the trainer separately waits
        until it holds at least one batch worth.
        """
        if self._size == 0:
            raise InsufficientDataError(f"cannot sample {b} transitions from an empty buffer")
        slots = self._ordered_indices()[rng.integers(0, self._size, size=b)]
        return Batch(
            self._obs[slots],
            self._action[slots],
            self._reward[slots],
            self._next_obs[slots],
            self._done[slots],
        )
