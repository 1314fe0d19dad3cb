"""Two-stage training loops.

Stage 1 trains every worker on its own copy of the environment, seeing only its
own view and the raw reward.  Stage 2 freezes the workers (by default), fuses
their features with the critic-gated attention, and trains the global
actor-critic on the penalized reward while the global action drives the
environment.

Random streams are derived from ``(seed, stage, ...)`` labels so every part of
a run is reproducible on its own.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..attention import AttentionGate, attend
from ..ddpg import Transition, noise_schedule
from ..env import MultiViewEnv, make_env
from ..global_net import GlobalNet, penalty
from ..numerics import DivergenceError
from ..worker import WorkerNet, check_feature_dims
from .config import RunConfig
from .metrics import StepRow


def stream(seed: int, *labels: int) -> np.random.Generator:
    return np.random.default_rng([int(seed) & 0xFFFFFFFF, *labels])


def next_episode_seed(rng: np.random.Generator) -> int:
    return int(rng.integers(0, 2 ** 31 - 1))


def build_env(config: RunConfig) -> MultiViewEnv:
    return make_env(config.env, config.resolved_env_params())


def _truncated(env: MultiViewEnv, terminal: bool) -> bool:
    return terminal and not env._terminal()


def _stored_terminal(config: RunConfig, env: MultiViewEnv, terminal: bool) -> bool:
    # a time-limit cut is not a true terminal state; by default we keep bootstrapping through it
    if config.bootstrap_on_timeout and _truncated(env, terminal):
        return False
    return terminal


@dataclass
class StageResult:
    rows: list[StepRow] = field(default_factory=list)
    failed: bool = False
    error: str | None = None


def build_workers(config: RunConfig, seed: int, env: MultiViewEnv | None = None) -> list[WorkerNet]:
    env = env or build_env(config)
    spec = env.spec
    workers = []
    for w in range(spec.n_views):
        workers.append(WorkerNet.build(spec.view_dims[w], spec.action_dim, spec.action_bound, config.sizes(),
                                       stream(seed, 1, w, 0), w, config.hyper(), config.ou()))
    check_feature_dims(workers)
    return workers


def _train_worker(config: RunConfig, seed: int, worker: WorkerNet):
    """Run one worker's stage-1 loop; returns per-step (reward, critic_loss, actor_objective)."""
    env = build_env(config)
    w = worker.view_index
    act_rng, ep_rng = stream(seed, 1, w, 1), stream(seed, 1, w, 2)
    steps, bound = config.stage1_steps, env.spec.action_bound
    log = []
    obs = env.reset(next_episode_seed(ep_rng))
    worker.noise.reset()
    for t in range(steps):
        s = obs.views[w]
        if t < config.warmup_steps:
            a = act_rng.uniform(-bound, bound, size=env.spec.action_dim)
        else:
            a = worker.act(s, noise_schedule(t, steps, config.noise_start, config.noise_final), act_rng)
        res = env.step(a)
        worker.remember(Transition(s, a, res.reward, res.observation.views[w],
                                   _stored_terminal(config, env, res.terminal)))
        diag = None
        if len(worker.replay) >= config.batch_size and t >= config.warmup_steps:
            diag = worker.train_step(worker.replay.sample(config.batch_size, act_rng))
        log.append((res.reward, diag))
        if res.terminal:
            obs = env.reset(next_episode_seed(ep_rng))
            worker.noise.reset()
        else:
            obs = res.observation
    return log


def train_stage1(config: RunConfig, seed: int, workers: list[WorkerNet] | None = None):
    """Train every worker independently; returns (workers, StageResult).

    The logged reward at step ``t`` is the mean over workers of their step-``t``
    rewards; losses are averaged likewise once every worker trains.
    """
    workers = workers if workers is not None else build_workers(config, seed)
    result = StageResult()
    if config.stage1_steps == 0:
        return workers, result
    try:
        if config.parallel_workers and len(workers) > 1:
            with ThreadPoolExecutor(max_workers=len(workers)) as pool:
                logs = list(pool.map(lambda wk: _train_worker(config, seed, wk), workers))
        else:
            logs = [_train_worker(config, seed, wk) for wk in workers]
    except DivergenceError as exc:
        result.failed, result.error = True, f"stage 1 diverged: {exc}"
        return workers, result
    for t in range(config.stage1_steps):
        entries = [log[t] for log in logs]
        reward = float(np.mean([e[0] for e in entries]))
        diags = [e[1] for e in entries]
        loss = obj = None
        if all(d is not None for d in diags):
            loss = float(np.mean([d["critic_loss"] for d in diags]))
            obj = float(np.mean([d["actor_objective"] for d in diags]))
        result.rows.append(StepRow(t, 1, reward, critic_loss=loss, actor_objective=obj))
    return workers, result


def build_global(config: RunConfig, seed: int, feature_dim: int, env: MultiViewEnv) -> GlobalNet:
    return GlobalNet.build(feature_dim, env.spec.action_dim, env.spec.action_bound,
                           config.global_actor_hidden, config.global_critic_hidden, stream(seed, 2, 0),
                           config.hidden_activation, config.hyper(), config.ou(), config.lr_gate)


def _perceive(workers, obs):
    out = [wk.perceive(obs.views[wk.view_index]) for wk in workers]
    feats = np.stack([o[0] for o in out])
    proposals = np.stack([o[1] for o in out])
    signals = np.array([o[2] for o in out])
    return feats, proposals, signals


def train_stage2(config: RunConfig, seed: int, workers: list[WorkerNet], step_offset: int | None = None):
    """Train the gate and the global actor-critic; returns (GlobalNet, AttentionGate, StageResult)."""
    env = build_env(config)
    n = env.spec.n_views
    if len(workers) != n:
        raise ValueError(f"{len(workers)} workers for {n} views")
    if n < 2 and config.gamma_r > 0:
        raise ValueError("the deviation penalty needs at least two views; set gamma_r = 0 for one view")
    feature_dim = check_feature_dims(workers)
    gn = build_global(config, seed, feature_dim, env)
    gate = AttentionGate.constant(n, config.gate_init)
    act_rng, ep_rng = stream(seed, 2, 1), stream(seed, 2, 2)
    steps, bound = config.stage2_steps, env.spec.action_bound
    offset = config.stage1_steps if step_offset is None else step_offset
    result = StageResult()

    obs = env.reset(next_episode_seed(ep_rng))
    gn.noise.reset()
    feats, proposals, signals = _perceive(workers, obs)
    try:
        for t in range(steps):
            k = obs.step_index
            att = attend(gate, feats, signals)
            if t < config.warmup_steps:
                a = act_rng.uniform(-bound, bound, size=env.spec.action_dim)
            else:
                a = gn.act(att.fused, noise_schedule(t, steps, config.noise_start, config.noise_final), act_rng)
            res = env.step(a)
            pen = penalty(proposals) if n >= 2 else 0.0
            r_mod = res.reward - config.gamma_r * pen
            n_feats, n_props, n_signals = _perceive(workers, res.observation)
            terminal = _stored_terminal(config, env, res.terminal)
            gn.replay.add({
                "fused": att.fused, "action": a, "reward": r_mod,
                "next_fused": attend(gate, n_feats, n_signals).fused, "terminal": float(terminal),
                "features": feats, "signals": signals, "next_features": n_feats, "next_signals": n_signals,
                "worker_actions": proposals, "raw_reward": res.reward,
            })
            if config.worker_updates_in_stage2:
                for wk in workers:
                    wv = wk.view_index
                    wk.remember(Transition(obs.views[wv], a, res.reward, res.observation.views[wv], terminal))
                    if len(wk.replay) >= config.batch_size:
                        wk.train_step(wk.replay.sample(config.batch_size, act_rng))
            diag = {}
            if len(gn.replay) >= config.batch_size and t >= config.warmup_steps:
                diag = gn.train_step(gn.replay.sample(config.batch_size, act_rng), gate,
                                     joint=config.joint_gate_training)
            result.rows.append(StepRow(
                offset + t, 2, res.reward, r_mod, pen, [float(p) for p in att.weights],
                diag.get("critic_loss"), diag.get("actor_objective"), k,
                [env.occluded(w, k) for w in range(n)]))
            if res.terminal:
                obs = env.reset(next_episode_seed(ep_rng))
                gn.noise.reset()
                feats, proposals, signals = _perceive(workers, obs)
            else:
                obs = res.observation
                feats, proposals, signals = n_feats, n_props, n_signals
    except DivergenceError as exc:
        result.failed, result.error = True, f"stage 2 diverged: {exc}"
    return gn, gate, result


def train_single_view_ddpg(config: RunConfig, seed: int, worker: WorkerNet, step_offset: int | None = None):
    """Plain DDPG on one frozen worker's encoder features with the raw reward.

    Same random streams and update order as stage 2, without attention or
    penalty; with one view and ``gamma_r = 0`` stage 2 must reproduce it.
    """
    env = build_env(config)
    w = worker.view_index
    gn = build_global(config, seed, worker.feature_dim, env)
    act_rng, ep_rng = stream(seed, 2, 1), stream(seed, 2, 2)
    steps, bound = config.stage2_steps, env.spec.action_bound
    offset = config.stage1_steps if step_offset is None else step_offset
    rows = []
    obs = env.reset(next_episode_seed(ep_rng))
    gn.noise.reset()
    state = worker.encode(obs.views[w])
    for t in range(steps):
        if t < config.warmup_steps:
            a = act_rng.uniform(-bound, bound, size=env.spec.action_dim)
        else:
            a = gn.act(state, noise_schedule(t, steps, config.noise_start, config.noise_final), act_rng)
        res = env.step(a)
        next_state = worker.encode(res.observation.views[w])
        gn.replay.add({"fused": state, "action": a, "reward": res.reward, "next_fused": next_state,
                       "terminal": float(_stored_terminal(config, env, res.terminal))})
        diag = {}
        if len(gn.replay) >= config.batch_size and t >= config.warmup_steps:
            diag = gn.train_step(gn.replay.sample(config.batch_size, act_rng))
        rows.append(StepRow(offset + t, 2, res.reward, critic_loss=diag.get("critic_loss"),
                            actor_objective=diag.get("actor_objective")))
        if res.terminal:
            obs = env.reset(next_episode_seed(ep_rng))
            gn.noise.reset()
            state = worker.encode(obs.views[w])
        else:
            state = next_state
    return gn, rows
