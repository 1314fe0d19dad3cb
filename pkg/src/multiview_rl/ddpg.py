"""Pieces shared by the per-view workers and the global network.

Replay storage, Ornstein-Uhlenbeck exploration, hyperparameters and the two
deterministic-policy-gradient building blocks (critic TD step, action
gradient of a critic).
"""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .numerics import DivergenceError, Mlp, Optimizer, backward_trace, forward_trace


@dataclass
class DDPGHyper:
    gamma: float = 0.99
    tau: float = 0.005
    lr_actor: float = 1e-4
    lr_critic: float = 1e-3
    batch_size: int = 64
    buffer_capacity: int = 100_000
    optimizer: str = "sgd"

    def __post_init__(self):
        if not 0 <= self.gamma <= 1:
            raise ValueError("gamma must lie in [0, 1]")
        if not 0 < self.tau <= 1:
            raise ValueError("tau must lie in (0, 1]")
        if self.batch_size < 1 or self.buffer_capacity < self.batch_size:
            raise ValueError("need 1 <= batch_size <= buffer_capacity")

    @classmethod
    def from_dict(cls, d: dict) -> "DDPGHyper":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class Transition:
    obs: np.ndarray
    action: np.ndarray
    reward: float
    next_obs: np.ndarray
    terminal: bool

    def __post_init__(self):
        if not np.isfinite(self.reward):
            raise ValueError("transition reward must be finite")


class ReplayBuffer:
    """Fixed-capacity FIFO ring of transitions stored column-wise.

    Each stored item is a mapping of field name to array (or scalar); all items
    must carry the same fields.  ``sample`` returns a dict of stacked columns.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self._cols: dict[str, np.ndarray] | None = None
        self._cursor = 0
        self._size = 0

    def __len__(self):
        return self._size

    def add(self, item) -> None:
        if isinstance(item, Transition):
            item = {"obs": item.obs, "action": item.action, "reward": item.reward,
                    "next_obs": item.next_obs, "terminal": float(item.terminal)}
        if self._cols is None:
            self._cols = {}
            for key, value in item.items():
                value = np.asarray(value, dtype=np.float64)
                self._cols[key] = np.zeros((self.capacity,) + value.shape)
        elif item.keys() != self._cols.keys():
            raise ValueError(f"transition fields {sorted(item)} differ from buffer fields {sorted(self._cols)}")
        for key, value in item.items():
            self._cols[key][self._cursor] = value
        self._cursor = (self._cursor + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
        if self._size < batch_size:
            raise ValueError(f"buffer holds {self._size} transitions, cannot sample {batch_size}")
        idx = rng.integers(0, self._size, size=batch_size)
        return {k: v[idx] for k, v in self._cols.items()}

    def contents(self) -> dict[str, np.ndarray]:
        """All stored items, oldest first."""
        if self._cols is None:
            return {}
        if self._size < self.capacity:
            order = np.arange(self._size)
        else:
            order = (np.arange(self.capacity) + self._cursor) % self.capacity
        return {k: v[order] for k, v in self._cols.items()}


class OUNoise:
    """Ornstein-Uhlenbeck process ``x += theta (mu - x) dt + sigma sqrt(dt) N(0, 1)``."""

    def __init__(self, dim: int, theta=0.15, mu=0.0, sigma=0.2, dt=1.0):
        self.dim = dim
        self.theta, self.mu, self.sigma, self.dt = theta, mu, sigma, dt
        self.state = np.full(dim, float(mu))

    def reset(self):
        self.state = np.full(self.dim, float(self.mu))

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        dx = self.theta * (self.mu - self.state) * self.dt
        dx = dx + self.sigma * np.sqrt(self.dt) * rng.standard_normal(self.dim)
        self.state = self.state + dx
        return self.state.copy()


def noise_schedule(step: int, total: int, start=1.0, final=0.1) -> float:
    """Linear decay from ``start`` to ``final`` over the first half of ``total`` steps."""
    half = max(1, total // 2)
    if step >= half:
        return final
    return start + (final - start) * step / half


def td_targets(rewards, terminals, next_q, gamma: float) -> np.ndarray:
    """``r + gamma * (1 - terminal) * Q_target(s', mu_target(s'))``."""
    return rewards + gamma * (1.0 - terminals) * next_q


def critic_step(critic: Mlp, opt: Optimizer, states, actions, targets):
    """One squared-TD-error step on ``mean((Q(s, a) - y)^2)``.

    Returns the updated critic, the loss before the update and the gradient of
    the loss w.r.t. the state part of the critic input.
    """
    inp = np.concatenate([states, actions], axis=1)
    q, trace = forward_trace(critic, inp)
    with np.errstate(over="ignore", invalid="ignore"):
        td = q[:, 0] - targets
        loss = float(np.mean(td * td))
    if not np.isfinite(loss):
        raise DivergenceError("critic loss is not finite")
    grad_q = (2.0 / len(td)) * td[:, None]
    rep = backward_trace(critic, trace, grad_q)
    state_grads = rep.input_grads[:, :states.shape[1]]
    return opt.step(critic, rep.param_grads), loss, state_grads


def action_gradient(critic: Mlp, states, actions):
    """Mean critic value over the batch and its gradient w.r.t. each action row."""
    inp = np.concatenate([states, actions], axis=1)
    q, trace = forward_trace(critic, inp)
    n = len(q)
    rep = backward_trace(critic, trace, np.full((n, 1), 1.0 / n))
    objective = float(np.mean(q))
    if not np.isfinite(objective):
        raise DivergenceError("actor objective is not finite")
    return objective, rep.input_grads[:, states.shape[1]:]
