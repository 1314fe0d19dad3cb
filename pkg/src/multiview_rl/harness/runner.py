"""Full runs, seed sweeps, evaluation and the run manifest."""
from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..attention import AttentionGate, attend
from ..global_net import GlobalNet, load_gate
from ..worker import WorkerNet
from .config import RunConfig, dump_config, load_config
from .metrics import StepRow, write_mean_curve, write_occlusion_csv, write_run_csv
from .training import build_env, train_stage1, train_stage2

log = logging.getLogger(__name__)


@dataclass
class SeedRun:
    seed: int
    directory: Path
    rows: list[StepRow]
    workers: list[WorkerNet]
    global_net: GlobalNet | None
    gate: AttentionGate | None
    failed: bool
    error: str | None
    wall_clock: float

    def summary(self) -> dict:
        return {
            "seed": self.seed,
            "directory": str(self.directory),
            "run_csv": str(self.directory / "run.csv"),
            "occlusion_csv": str(self.directory / "occlusion.csv"),
            "checkpoints": str(self.directory / "checkpoints"),
            "failed": self.failed,
            "error": self.error,
            "wall_clock_s": self.wall_clock,
            "final_reward": final_stage_rewards(self.rows),
        }


def final_stage_rewards(rows: list[StepRow], fraction: float = 0.1) -> dict:
    """Mean logged reward over the last ``fraction`` of each stage."""
    out = {}
    for stage in (1, 2):
        rewards = [r.reward for r in rows if r.stage == stage]
        if rewards:
            tail = rewards[-max(1, int(len(rewards) * fraction)):]
            out[f"stage{stage}"] = float(np.mean(tail))
    return out


def run_seed(config: RunConfig, seed: int, out_dir=None) -> SeedRun:
    """Both stages for one seed; writes run.csv, occlusion.csv, config.json and checkpoints."""
    out_dir = Path(out_dir or config.output_dir) / f"seed_{seed}"
    out_dir.mkdir(parents=True, exist_ok=True)
    dump_config(config, out_dir / "config.json")
    t0 = time.perf_counter()
    n = build_env(config).spec.n_views
    workers, s1 = train_stage1(config, seed)
    rows = list(s1.rows)
    gn = gate = None
    failed, error = s1.failed, s1.error
    if not failed:
        gn, gate, s2 = train_stage2(config, seed, workers)
        rows += s2.rows
        failed, error = s2.failed, s2.error
    write_run_csv(out_dir / "run.csv", rows, n)
    write_occlusion_csv(out_dir / "occlusion.csv", rows, n)
    ckpt = out_dir / "checkpoints"
    for wk in workers:
        wk.save(ckpt, config.checkpoint_format)
    if gn is not None:
        gn.save(ckpt, gate, config.checkpoint_format)
    if failed:
        log.error("seed %d failed: %s", seed, error)
    return SeedRun(seed, out_dir, rows, workers, gn, gate, failed, error, time.perf_counter() - t0)


def _run_seed_summary(args):
    config, seed, out_dir = args
    run = run_seed(config, seed, out_dir)
    return run.summary(), [r.reward for r in run.rows]


def run_sweep(config: RunConfig, out_dir=None, jobs: int = 1) -> dict:
    """Run every seed, write the mean curve and the manifest; returns the manifest."""
    out_dir = Path(out_dir or config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    tasks = [(config, s, out_dir) for s in config.seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_seed_summary, tasks))
    else:
        results = [_run_seed_summary(t) for t in tasks]
    expected = config.stage1_steps + config.stage2_steps
    completed = [np.array(curve) for summary, curve in results
                 if not summary["failed"] and len(curve) == expected]
    write_mean_curve(out_dir / "mean_curve.csv", completed)
    manifest = {
        "config": config.model_dump(),
        "seeds": [summary for summary, _ in results],
        "completed_seeds": len(completed),
        "failed_seeds": [s["seed"] for s, _ in results if s["failed"]],
        "mean_curve_csv": str(out_dir / "mean_curve.csv"),
        "wall_clock_s": time.perf_counter() - t0,
        "final_reward": {
            stage: float(np.mean([s["final_reward"][stage] for s, _ in results if stage in s["final_reward"]]))
            for stage in ("stage1", "stage2")
            if any(stage in s["final_reward"] for s, _ in results)
        },
    }
    write_manifest(out_dir / "manifest.json", manifest)
    return manifest


def write_manifest(path, manifest: dict) -> Path:
    path = Path(path)
    if path.exists():
        raise FileExistsError(f"manifest {path} already written")
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


@dataclass
class Pipeline:
    config: RunConfig
    workers: list[WorkerNet]
    global_net: GlobalNet | None
    gate: AttentionGate | None


def load_pipeline(run_dir) -> Pipeline:
    """Rebuild workers, global net and gate from ``<run_dir>/config.json`` and ``checkpoints/``."""
    run_dir = Path(run_dir)
    config = load_config(run_dir / "config.json")
    ckpt = run_dir / "checkpoints"
    spec = build_env(config).spec
    workers = [WorkerNet.load(ckpt, w, config.hyper(), config.ou(), config.checkpoint_format)
               for w in range(spec.n_views)]
    for wk in workers:
        if wk.view_dim != spec.view_dims[wk.view_index] or wk.action_dim != spec.action_dim:
            raise ValueError(f"worker {wk.view_index} checkpoint does not match the configured environment")
    gn = gate = None
    ext = ".json" if config.checkpoint_format == "json" else ".bin"
    if (ckpt / f"global_actor{ext}").exists():
        gn = GlobalNet.load(ckpt, config.hyper(), config.ou(), config.checkpoint_format)
        gate = load_gate(ckpt / "gate.bin")
        if gate.n_workers != spec.n_views or gn.feature_dim != workers[0].feature_dim:
            raise ValueError("global checkpoint does not match the workers / environment")
    return Pipeline(config, workers, gn, gate)


@dataclass
class EvalResult:
    mean_reward: float
    std: float
    episode_returns: list[float]
    weights: np.ndarray | None = None
    occluded: np.ndarray | None = None

    def as_dict(self) -> dict:
        return {"mean_reward": self.mean_reward, "std": self.std, "episode_returns": self.episode_returns}


def evaluate(run_dir, episodes: int, seed: int, worker: int | None = None, random_policy: bool = False,
             config_overrides: dict | None = None) -> EvalResult:
    """Zero-noise rollouts.

    By default the full pipeline acts (workers -> attention -> global actor).
    ``worker=w`` lets worker ``w`` act alone on its own view; ``random_policy``
    draws uniform actions.  Returns mean and std of per-episode returns; for the
    pipeline it also records per-step attention weights and occlusion flags.
    """
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    pipe = load_pipeline(run_dir)
    config = pipe.config
    if config_overrides:
        config = config.model_copy(update=config_overrides)
    return rollout(config, pipe, episodes, seed, worker, random_policy)


def rollout(config: RunConfig, pipe: Pipeline, episodes: int, seed: int, worker: int | None = None,
            random_policy: bool = False) -> EvalResult:
    env = build_env(config)
    rng = np.random.default_rng([int(seed) & 0xFFFFFFFF, 0xE7A1])
    use_pipeline = worker is None and not random_policy
    if use_pipeline and pipe.global_net is None:
        raise ValueError("no global network checkpoint to evaluate")
    returns, weights, occluded = [], [], []
    for _ in range(episodes):
        obs = env.reset(int(rng.integers(0, 2 ** 31 - 1)))
        total, done = 0.0, False
        while not done:
            k = obs.step_index
            if random_policy:
                a = rng.uniform(-env.spec.action_bound, env.spec.action_bound, size=env.spec.action_dim)
            elif worker is not None:
                wk = pipe.workers[worker]
                a = wk.policy(obs.views[wk.view_index])
            else:
                out = [wk.perceive(obs.views[wk.view_index]) for wk in pipe.workers]
                att = attend(pipe.gate, np.stack([o[0] for o in out]), np.array([o[2] for o in out]))
                a = pipe.global_net.policy(att.fused)
                weights.append(att.weights)
                occluded.append([env.occluded(w, k) for w in range(env.spec.n_views)])
            res = env.step(a)
            total += res.reward
            done = res.terminal
            obs = res.observation
        returns.append(total)
    arr = np.array(returns)
    return EvalResult(float(arr.mean()), float(arr.std()), returns,
                      np.array(weights) if weights else None, np.array(occluded) if occluded else None)
