"""Per-step metrics rows and their CSV files.

``run.csv``: step, stage, reward, modified_reward, penalty, p_1..p_N,
critic_loss, actor_objective (empty where a field does not apply).
``occlusion.csv``: step, episode_step, occluded_1..occluded_N, so attention
weights can be split by sensor state.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass
class StepRow:
    step: int
    stage: int
    reward: float
    modified_reward: float | None = None
    penalty: float | None = None
    weights: list[float] | None = None
    critic_loss: float | None = None
    actor_objective: float | None = None
    episode_step: int = 0
    occluded: list[bool] = field(default_factory=list)


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def run_header(n_views: int) -> list[str]:
    return (["step", "stage", "reward", "modified_reward", "penalty"]
            + [f"p_{w + 1}" for w in range(n_views)] + ["critic_loss", "actor_objective"])


def write_run_csv(path, rows: list[StepRow], n_views: int) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(run_header(n_views))
        for r in rows:
            weights = r.weights if r.weights is not None else [None] * n_views
            writer.writerow([r.step, r.stage, _fmt(r.reward), _fmt(r.modified_reward), _fmt(r.penalty),
                             *(_fmt(p) for p in weights), _fmt(r.critic_loss), _fmt(r.actor_objective)])
    return path


def write_occlusion_csv(path, rows: list[StepRow], n_views: int) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "episode_step"] + [f"occluded_{w + 1}" for w in range(n_views)])
        for r in rows:
            flags = r.occluded or [False] * n_views
            writer.writerow([r.step, r.episode_step, *(int(f) for f in flags)])
    return path


def read_run_csv(path) -> dict[str, np.ndarray]:
    """Columns of a run.csv as float arrays (empty cells become NaN)."""
    with Path(path).open() as fh:
        reader = csv.reader(fh)
        header = next(reader)
        data = [[float(c) if c != "" else np.nan for c in row] for row in reader]
    arr = np.array(data, dtype=np.float64).reshape(-1, len(header))
    return {name: arr[:, i] for i, name in enumerate(header)}


def write_mean_curve(path, curves: list[np.ndarray]) -> Path:
    """step, mean_reward, std_reward over seeds (population std, 0 for one seed)."""
    path = Path(path)
    stacked = np.vstack(curves) if curves else np.zeros((0, 0))
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "mean_reward", "std_reward", "n_seeds"])
        for k in range(stacked.shape[1]):
            col = stacked[:, k]
            writer.writerow([k, repr(float(col.mean())), repr(float(col.std())), len(col)])
    return path
