"""Run configuration.

A config is one JSON document; every field has a default, so ``{}`` is valid.
The resolved config is echoed into each run directory and the manifest.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..ddpg import DDPGHyper
from ..worker import NetSizes


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    env: Literal["point_mass", "corridor", "constant"] = "corridor"
    env_params: dict = Field(default_factory=dict)
    # point_mass only; the corridor always has two views
    n_views: int | None = None

    feature_dim: int = 16
    encoder_hidden: list[int] = [32]
    actor_hidden: list[int] = [32]
    critic_hidden: list[int] = [64, 64]
    global_actor_hidden: list[int] = [64]
    global_critic_hidden: list[int] = [64, 64]
    hidden_activation: Literal["tanh", "relu"] = "tanh"

    gamma: float = 0.99
    tau: float = 0.005
    lr_actor: float = 1e-4
    lr_critic: float = 1e-3
    batch_size: int = 64
    buffer_capacity: int = 100_000
    optimizer: Literal["sgd", "adam"] = "sgd"

    gamma_r: float = 0.1
    gate_init: float = 0.1
    lr_gate: float | None = None

    ou_theta: float = 0.15
    ou_sigma: float = 0.2
    ou_dt: float = 1.0
    noise_start: float = 1.0
    noise_final: float = 0.1
    warmup_steps: int = 1000
    bootstrap_on_timeout: bool = True

    stage1_steps: int = 50_000
    stage2_steps: int = 50_000
    seeds: list[int] = [0, 1, 2, 3, 4]
    worker_updates_in_stage2: bool = False
    joint_gate_training: bool = True
    parallel_workers: bool = True

    eval_episodes: int = 100
    checkpoint_format: Literal["bin", "json"] = "bin"
    output_dir: str = "runs"

    @model_validator(mode="after")
    def _check(self):
        counts = {"feature_dim": self.feature_dim, "batch_size": self.batch_size,
                  "buffer_capacity": self.buffer_capacity, "eval_episodes": self.eval_episodes}
        for name, value in counts.items():
            if value < 1:
                raise ValueError(f"{name} must be positive")
        if self.stage1_steps < 0 or self.stage2_steps < 0 or self.warmup_steps < 0:
            raise ValueError("step counts must be non-negative")
        if not self.seeds:
            raise ValueError("seeds must be non-empty")
        if self.gamma_r < 0:
            raise ValueError("gamma_r must be non-negative")
        if self.n_views is not None and self.n_views < 1:
            raise ValueError("n_views must be positive")
        return self

    def hyper(self) -> DDPGHyper:
        return DDPGHyper(self.gamma, self.tau, self.lr_actor, self.lr_critic, self.batch_size,
                         self.buffer_capacity, self.optimizer)

    def sizes(self) -> NetSizes:
        return NetSizes(self.feature_dim, tuple(self.encoder_hidden), tuple(self.actor_hidden),
                        tuple(self.critic_hidden), self.hidden_activation)

    def ou(self) -> dict:
        return {"theta": self.ou_theta, "sigma": self.ou_sigma, "dt": self.ou_dt}

    def resolved_env_params(self) -> dict:
        params = dict(self.env_params)
        if self.env == "point_mass" and self.n_views is not None:
            params["n_views"] = self.n_views
        if self.env == "constant" and self.n_views is not None:
            params["n_views"] = self.n_views
        return params


def load_config(path=None, **overrides) -> RunConfig:
    doc = {}
    if path is not None:
        doc = json.loads(Path(path).read_text())
    doc.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig.model_validate(doc)


def dump_config(config: RunConfig, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(config.model_dump(), indent=2, sort_keys=True))
    return path
