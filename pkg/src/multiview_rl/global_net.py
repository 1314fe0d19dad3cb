"""Global actor-critic on fused states, with the worker-disagreement penalty."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .attention import AttentionGate, attend, attend_backward
from .ddpg import DDPGHyper, OUNoise, ReplayBuffer, action_gradient, critic_step, td_targets
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


def _action_matrix(actions) -> np.ndarray:
    a = np.asarray(actions, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise DimensionError("action matrix must be (N_w, action_dim)")
    if a.shape[0] < 2:
        raise ValueError("the deviation penalty needs at least two workers")
    return a


def deviations(actions) -> np.ndarray:
    """Squared distance of each worker's action from the mean of the others'.

    ``actions`` holds one row per worker.
    """
    a = _action_matrix(actions)
    n = a.shape[0]
    # a_w - mean_{v != w} a_v as a mean of pairwise differences: exactly 0 when rows agree
    d = (a[:, None, :] - a[None, :, :]).sum(axis=1) / (n - 1)
    return np.einsum("wi,wi->w", d, d)


def deviation_w(actions, w: int) -> float:
    """Deviation of worker ``w`` (0-based) from the others' mean action."""
    a = _action_matrix(actions)
    if not 0 <= w < a.shape[0]:
        raise IndexError(f"worker index {w} out of range for {a.shape[0]} workers")
    return float(deviations(a)[w])


def penalty(actions) -> float:
    return float(np.mean(deviations(actions)))


def modified_reward(reward: float, actions, gamma_r: float) -> float:
    if gamma_r < 0:
        raise ValueError("gamma_r must be non-negative")
    return reward - gamma_r * penalty(actions)


class GlobalNet:
    def __init__(self, actor: Mlp, critic: Mlp, hyper: DDPGHyper | None = None,
                 ou: dict | None = None, lr_gate: float | None = None):
        if critic.n_in != actor.n_in + actor.n_out or critic.n_out != 1:
            raise DimensionError("critic must map fused state (+) action to a scalar")
        self.actor = actor
        self.critic = critic
        self.target_actor = actor
        self.target_critic = critic
        self.hyper = hyper or DDPGHyper()
        self.replay = ReplayBuffer(self.hyper.buffer_capacity)
        self.noise = OUNoise(actor.n_out, **(ou or {}))
        self._actor_opt = Optimizer(self.hyper.optimizer, self.hyper.lr_actor)
        self._critic_opt = Optimizer(self.hyper.optimizer, self.hyper.lr_critic)
        self._gate_opt = Optimizer(self.hyper.optimizer,
                                   self.hyper.lr_critic if lr_gate is None else lr_gate)

    @classmethod
    def build(cls, feature_dim: int, action_dim: int, action_bound: float, actor_hidden, critic_hidden,
              rng: np.random.Generator, hidden_activation="tanh", hyper=None, ou=None, lr_gate=None):
        actor = init_mlp((feature_dim, *actor_hidden, action_dim), rng, hidden_activation,
                         "tanh_scaled", action_bound, final_scale=3e-3)
        critic = init_mlp((feature_dim + action_dim, *critic_hidden, 1), rng, hidden_activation,
                          "identity", final_scale=3e-3)
        return cls(actor, critic, hyper, ou, lr_gate)

    @property
    def feature_dim(self) -> int:
        return self.actor.n_in

    @property
    def action_bound(self) -> float:
        return self.actor.output_bound

    def policy(self, fused) -> np.ndarray:
        fused = np.asarray(fused, dtype=np.float64)
        if fused.shape[-1] != self.feature_dim:
            raise DimensionError(f"fused state has dim {fused.shape[-1]}, expected {self.feature_dim}")
        return forward(self.actor, fused)

    def act(self, fused, noise_scale: float, rng: np.random.Generator) -> np.ndarray:
        a = self.policy(fused)
        if noise_scale > 0:
            a = a + noise_scale * self.noise.sample(rng)
        return np.clip(a, -self.action_bound, self.action_bound)

    def train_step(self, batch: dict, gate: AttentionGate | None = None,
                   hyper: DDPGHyper | None = None, joint: bool = False) -> dict:
        """One DDPG update on a batch of fused transitions.

        With ``joint`` the fused states are rebuilt from the stored per-view
        features and gate signals under the current gate, and the gate takes a
        gradient step on the critic loss through that attention.
        """
        h = hyper or self.hyper
        rewards, terms, actions = batch["reward"], batch["terminal"], batch["action"]
        if joint:
            if gate is None:
                raise ValueError("joint gate training needs the gate")
            fused = attend(gate, batch["features"], batch["signals"]).fused
            next_fused = attend(gate, batch["next_features"], batch["next_signals"]).fused
        else:
            fused, next_fused = batch["fused"], batch["next_fused"]

        next_q = forward(self.target_critic,
                         np.concatenate([next_fused, forward(self.target_actor, next_fused)], axis=1))[:, 0]
        y = td_targets(rewards, terms, next_q, h.gamma)
        self.critic, critic_loss, state_grads = critic_step(self.critic, self._critic_opt, fused, actions, y)

        if joint:
            grads = attend_backward(gate, batch["features"], batch["signals"], state_grads)
            gate.g = self._gate_opt.step_array(gate.g, grads.gate_grads)

        pi, trace = forward_trace(self.actor, fused)
        objective, dq_da = action_gradient(self.critic, fused, pi)
        rep = backward_trace(self.actor, trace, -dq_da)
        self.actor = self._actor_opt.step(self.actor, rep.param_grads)

        self.target_critic = soft_update(self.target_critic, self.critic, h.tau)
        self.target_actor = soft_update(self.target_actor, self.actor, h.tau)
        return {"critic_loss": critic_loss, "actor_objective": objective}

    NETS = ("actor", "critic", "target_actor", "target_critic")

    def save(self, directory, gate: AttentionGate | None = None, fmt: str = "bin") -> list[Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        ext = ".json" if fmt == "json" else ".bin"
        paths = [save_mlp(getattr(self, n), directory / f"global_{n}{ext}", tag=f"global;net={n}")
                 for n in self.NETS]
        if gate is not None:
            paths.append(save_gate(gate, directory / "gate.bin"))
        return paths

    @classmethod
    def load(cls, directory, hyper=None, ou=None, fmt: str = "bin") -> "GlobalNet":
        directory = Path(directory)
        ext = ".json" if fmt == "json" else ".bin"
        nets = {n: load_mlp(directory / f"global_{n}{ext}")[0] for n in cls.NETS}
        gn = cls(nets["actor"], nets["critic"], hyper, ou)
        gn.target_actor = nets["target_actor"]
        gn.target_critic = nets["target_critic"]
        return gn


def save_gate(gate: AttentionGate, path) -> Path:
    """Gate parameters as u32 count + little-endian f64 values."""
    path = Path(path)
    path.write_bytes(np.uint32(gate.n_workers).tobytes() + gate.g.astype("<f8").tobytes())
    return path


def load_gate(path) -> AttentionGate:
    data = Path(path).read_bytes()
    n = int(np.frombuffer(data[:4], dtype="<u4")[0])
    return AttentionGate(np.frombuffer(data[4:4 + 8 * n], dtype="<f8").astype(np.float64))
