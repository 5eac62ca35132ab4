"""Fixed-capacity ring buffer of transitions with uniform sampling."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, EmptyBuffer


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    terminal: bool = False


@dataclass
class Batch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    terminals: np.ndarray

    def __len__(self):
        return len(self.rewards)


class ReplayBuffer:
    def __init__(self, capacity: int, state_dim: int, action_dim: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = int(capacity)
        self.state_dim = int(state_dim)
        self.action_dim = int(action_dim)
        self._s = np.empty((capacity, state_dim))
        self._a = np.empty((capacity, action_dim))
        self._r = np.empty(capacity)
        self._s2 = np.empty((capacity, state_dim))
        self._term = np.empty(capacity, dtype=bool)
        self.cursor = 0
        self.size = 0

    def __len__(self):
        return self.size

    def push(self, t: Transition) -> None:
        s = np.asarray(t.state, dtype=np.float64).ravel()
        a = np.asarray(t.action, dtype=np.float64).ravel()
        s2 = np.asarray(t.next_state, dtype=np.float64).ravel()
        if s.size != self.state_dim or s2.size != self.state_dim:
            raise DimensionMismatch(f"state width {s.size}/{s2.size}, expected {self.state_dim}")
        if a.size != self.action_dim:
            raise DimensionMismatch(f"action width {a.size}, expected {self.action_dim}")
        i = self.cursor
        self._s[i], self._a[i], self._r[i] = s, a, float(t.reward)
        self._s2[i], self._term[i] = s2, bool(t.terminal)
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def __getitem__(self, k: int) -> Transition:
        """k-th oldest stored transition."""
        if not 0 <= k < self.size:
            raise IndexError(k)
        i = (self.cursor - self.size + k) % self.capacity
        return Transition(self._s[i].copy(), self._a[i].copy(), float(self._r[i]),
                          self._s2[i].copy(), bool(self._term[i]))

    def sample(self, n: int, rng: np.random.Generator) -> Batch:
        """``n`` uniform draws with replacement; arrays are copies."""
        if self.size == 0:
            raise EmptyBuffer("cannot sample from an empty buffer")
        idx = rng.integers(0, self.size, size=n)
        return Batch(self._s[idx], self._a[idx], self._r[idx], self._s2[idx], self._term[idx])


def push(buf: ReplayBuffer, t: Transition) -> None:
    buf.push(t)


def sample(buf: ReplayBuffer, n: int, rng: np.random.Generator) -> Batch:
    return buf.sample(n, rng)
