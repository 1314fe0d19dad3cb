from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, Field

EnvName = Literal["point_mass", "corridor"]


class TrainRequest(BaseModel):
    config: dict = Field(default_factory=dict)
    seed: int | None = None
    out: str | None = None
    env: EnvName | None = None


class SeedSummary(BaseModel):
    seed: int
    directory: str
    run_csv: str
    occlusion_csv: str
    checkpoints: str
    failed: bool
    error: str | None = None
    wall_clock_s: float
    final_reward: dict[str, float] = Field(default_factory=dict)


class SweepRequest(BaseModel):
    config: dict = Field(default_factory=dict)
    seed: int | None = None
    out: str | None = None
    env: EnvName | None = None
    jobs: int = Field(1, ge=1)


class SweepResponse(BaseModel):
    out: str
    completed_seeds: int
    failed_seeds: list[int]
    mean_curve_csv: str
    final_reward: dict[str, float] = Field(default_factory=dict)
    seeds: list[SeedSummary]


class EvalRequest(BaseModel):
    run_dir: str
    episodes: int = Field(100, ge=1)
    seed: int = 0
    worker: int | None = Field(None, ge=0)
    random_policy: bool = False


class EvalResponse(BaseModel):
    mean_reward: float
    std: float
    episode_returns: list[float]


class OracleCheck(BaseModel):
    name: str
    passed: bool
    cases: int
    worst: float
    line: str


class OracleResponse(BaseModel):
    passed: bool
    checks: list[OracleCheck]


class Health(BaseModel):
    status: str = "ok"
    version: str
