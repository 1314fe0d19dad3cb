"""Per-view DDPG learner.

A worker sees one view.  Its policy is ``actor_head(encoder(obs))``; the
encoder output is the feature vector handed to the attention module, and the
critic ``Q(obs, action)`` evaluated at the worker's own proposal is the gate
signal.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ddpg import DDPGHyper, OUNoise, ReplayBuffer, Transition, action_gradient, critic_step, td_targets
from .numerics import (
    DimensionError,
    Mlp,
    Optimizer,
    backward_trace,
    forward,
    forward_trace,
    init_mlp,
    load_mlp,
    save_mlp,
    soft_update,
)


@dataclass
class NetSizes:
    feature_dim: int = 16
    encoder_hidden: tuple[int, ...] = (32,)
    actor_hidden: tuple[int, ...] = (32,)
    critic_hidden: tuple[int, ...] = (64, 64)
    hidden_activation: str = "tanh"


class WorkerNet:
    def __init__(self, encoder: Mlp, actor_head: Mlp, critic: Mlp, view_index: int,
                 hyper: DDPGHyper | None = None, ou: dict | None = None):
        if actor_head.n_in != encoder.n_out:
            raise DimensionError("actor head input must match encoder feature dim")
        if critic.n_in != encoder.n_in + actor_head.n_out or critic.n_out != 1:
            raise DimensionError("critic must map view obs (+) action to a scalar")
        self.encoder = encoder
        self.actor_head = actor_head
        self.critic = critic
        self.target_encoder = encoder
        self.target_actor = actor_head
        self.target_critic = critic
        self.view_index = int(view_index)
        self.hyper = hyper or DDPGHyper()
        self.replay = ReplayBuffer(self.hyper.buffer_capacity)
        self.noise = OUNoise(actor_head.n_out, **(ou or {}))
        self._opts = {name: Optimizer(self.hyper.optimizer, lr) for name, lr in
                      (("encoder", self.hyper.lr_actor), ("actor", self.hyper.lr_actor),
                       ("critic", self.hyper.lr_critic))}

    @classmethod
    def build(cls, view_dim: int, action_dim: int, action_bound: float, sizes: NetSizes,
              rng: np.random.Generator, view_index: int, hyper=None, ou=None) -> "WorkerNet":
        act = sizes.hidden_activation
        encoder = init_mlp((view_dim, *sizes.encoder_hidden, sizes.feature_dim), rng, act,
                           "tanh_scaled", 1.0)
        head = init_mlp((sizes.feature_dim, *sizes.actor_hidden, action_dim), rng, act,
                        "tanh_scaled", action_bound, final_scale=3e-3)
        critic = init_mlp((view_dim + action_dim, *sizes.critic_hidden, 1), rng, act,
                          "identity", final_scale=3e-3)
        return cls(encoder, head, critic, view_index, hyper, ou)

    @property
    def view_dim(self) -> int:
        return self.encoder.n_in

    @property
    def feature_dim(self) -> int:
        return self.encoder.n_out

    @property
    def action_dim(self) -> int:
        return self.actor_head.n_out

    @property
    def action_bound(self) -> float:
        return self.actor_head.output_bound

    def _check_obs(self, obs):
        obs = np.asarray(obs, dtype=np.float64)
        if obs.shape[-1] != self.view_dim:
            raise DimensionError(f"view {self.view_index} obs has dim {obs.shape[-1]}, expected {self.view_dim}")
        return obs

    def encode(self, obs) -> np.ndarray:
        return forward(self.encoder, self._check_obs(obs))

    def policy(self, obs) -> np.ndarray:
        """Deterministic proposal ``actor_head(encoder(obs))``."""
        return forward(self.actor_head, self.encode(obs))

    def act(self, obs, noise_scale: float, rng: np.random.Generator) -> np.ndarray:
        a = self.policy(obs)
        if noise_scale > 0:
            a = a + noise_scale * self.noise.sample(rng)
        return np.clip(a, -self.action_bound, self.action_bound)

    def gate_signal(self, obs, action) -> float | np.ndarray:
        """Critic value ``Q(obs, action)``; a float for one observation, an array for a batch."""
        obs = self._check_obs(obs)
        action = np.asarray(action, dtype=np.float64)
        if action.shape[-1] != self.action_dim:
            raise DimensionError(f"action has dim {action.shape[-1]}, expected {self.action_dim}")
        q = forward(self.critic, np.concatenate([obs, action], axis=-1))
        return float(q[0]) if q.ndim == 1 else q[:, 0]

    def perceive(self, obs):
        """Feature vector, deterministic proposal and gate signal for one observation."""
        feat = self.encode(obs)
        proposal = forward(self.actor_head, feat)
        return feat, proposal, self.gate_signal(obs, proposal)

    def remember(self, transition: Transition) -> None:
        self.replay.add(transition)

    def train_step(self, batch, hyper: DDPGHyper | None = None) -> dict:
        """One critic step, one actor step through head and encoder, then soft target updates.

        ``batch`` is a list of :class:`Transition` or a dict of stacked columns as
        returned by :meth:`ReplayBuffer.sample`.
        """
        h = hyper or self.hyper
        if isinstance(batch, dict):
            obs, actions = batch["obs"], batch["action"]
            rewards, next_obs, terms = batch["reward"], batch["next_obs"], batch["terminal"]
        else:
            if len(batch) < 1:
                raise ValueError("empty batch")
            obs = np.stack([t.obs for t in batch])
            actions = np.stack([np.atleast_1d(t.action) for t in batch])
            rewards = np.array([t.reward for t in batch], dtype=np.float64)
            next_obs = np.stack([t.next_obs for t in batch])
            terms = np.array([float(t.terminal) for t in batch])
        obs = self._check_obs(obs)
        next_obs = self._check_obs(next_obs)

        next_act = forward(self.target_actor, forward(self.target_encoder, next_obs))
        next_q = forward(self.target_critic, np.concatenate([next_obs, next_act], axis=1))[:, 0]
        y = td_targets(rewards, terms, next_q, h.gamma)

        self.critic, critic_loss, _ = critic_step(self.critic, self._opts["critic"], obs, actions, y)

        feat, enc_trace = forward_trace(self.encoder, obs)
        pi, head_trace = forward_trace(self.actor_head, feat)
        objective, dq_da = action_gradient(self.critic, obs, pi)
        # ascend the objective: feed the negated cotangent to the descent optimizer
        head_rep = backward_trace(self.actor_head, head_trace, -dq_da)
        enc_rep = backward_trace(self.encoder, enc_trace, head_rep.input_grads)
        self.actor_head = self._opts["actor"].step(self.actor_head, head_rep.param_grads)
        self.encoder = self._opts["encoder"].step(self.encoder, enc_rep.param_grads)

        self.target_critic = soft_update(self.target_critic, self.critic, h.tau)
        self.target_actor = soft_update(self.target_actor, self.actor_head, h.tau)
        self.target_encoder = soft_update(self.target_encoder, self.encoder, h.tau)
        return {"critic_loss": critic_loss, "actor_objective": objective}

    # checkpoints: one file per network, view index in every header
    NETS = ("encoder", "actor_head", "critic", "target_encoder", "target_actor", "target_critic")

    def save(self, directory, fmt: str = "bin") -> list[Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        ext = ".json" if fmt == "json" else ".bin"
        return [save_mlp(getattr(self, name), directory / f"worker{self.view_index}_{name}{ext}",
                         tag=f"view_index={self.view_index};net={name}") for name in self.NETS]

    @classmethod
    def load(cls, directory, view_index: int, hyper=None, ou=None, fmt: str = "bin") -> "WorkerNet":
        directory = Path(directory)
        ext = ".json" if fmt == "json" else ".bin"
        nets = {}
        for name in cls.NETS:
            net, tag = load_mlp(directory / f"worker{view_index}_{name}{ext}")
            if f"view_index={view_index};" not in tag:
                raise ValueError(f"checkpoint header {tag!r} does not belong to view {view_index}")
            nets[name] = net
        worker = cls(nets["encoder"], nets["actor_head"], nets["critic"], view_index, hyper, ou)
        worker.target_encoder = nets["target_encoder"]
        worker.target_actor = nets["target_actor"]
        worker.target_critic = nets["target_critic"]
        return worker


def check_feature_dims(workers) -> int:
    dims = {w.feature_dim for w in workers}
    if len(dims) != 1:
        raise DimensionError(f"workers disagree on feature dim: {sorted(dims)}")
    return dims.pop()
