"""Synthetic multi-view environments.

Both environments expose one true state and several *views* of it.  A view is
a fixed-dimension real vector; views may be noisy, and during configured
occlusion windows a view reports the in-band sentinel (all ``-1``).  Noise for
view ``w`` at episode step ``k`` is drawn from a generator seeded by
``(episode seed, w, k)``, so adding or removing a view never changes what the
others see.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numerics import DimensionError

SENTINEL = -1.0


class EpisodeFinished(RuntimeError):
    pass


@dataclass(frozen=True)
class EnvSpec:
    n_views: int
    view_dims: tuple[int, ...]
    action_dim: int
    action_bound: float
    max_episode_steps: int
    reward_range: tuple[float, float] = (-math.inf, math.inf)

    def __post_init__(self):
        if self.n_views < 1 or len(self.view_dims) != self.n_views:
            raise ValueError("view_dims must list one dimension per view")
        if any(d < 1 for d in self.view_dims) or self.action_dim < 1:
            raise ValueError("all dimensions must be >= 1")
        if not self.action_bound > 0 or self.max_episode_steps < 1:
            raise ValueError("action_bound and max_episode_steps must be positive")


@dataclass
class MultiViewObservation:
    views: list[np.ndarray]
    step_index: int


@dataclass
class StepResult:
    observation: MultiViewObservation
    reward: float
    terminal: bool


def _windows(raw):
    out = []
    for start, end in raw or ():
        if end <= start or start < 0:
            raise ValueError(f"bad occlusion window [{start}, {end})")
        out.append((int(start), int(end)))
    return tuple(out)


class MultiViewEnv:
    """Shared episode bookkeeping: clamping, occlusion, noise streams, step cap."""

    spec: EnvSpec

    def __init__(self, noise_std, occlusion):
        self.noise_std = tuple(float(s) for s in noise_std)
        if len(self.noise_std) != self.spec.n_views:
            raise ValueError("need one noise scale per view")
        if any(s < 0 for s in self.noise_std):
            raise ValueError("noise scales must be non-negative")
        occlusion = list(occlusion or [])
        occlusion += [[]] * (self.spec.n_views - len(occlusion))
        if len(occlusion) != self.spec.n_views:
            raise ValueError("more occlusion lists than views")
        self.occlusion = tuple(_windows(w) for w in occlusion)
        self._seed = None
        self._k = 0
        self._done = True

    # subclasses implement these three
    def _reset_state(self, rng: np.random.Generator):
        raise NotImplementedError

    def _advance(self, action: np.ndarray) -> float:
        raise NotImplementedError

    def _clean_views(self) -> list[np.ndarray]:
        raise NotImplementedError

    def occluded(self, view: int, k: int) -> bool:
        return any(start <= k < end for start, end in self.occlusion[view])

    def _observe(self) -> MultiViewObservation:
        views = []
        for w, v in enumerate(self._clean_views()):
            if self.occluded(w, self._k):
                v = np.full(self.spec.view_dims[w], SENTINEL)
            elif self.noise_std[w] > 0:
                noise_rng = np.random.default_rng([self._seed, w, self._k])
                v = v + self.noise_std[w] * noise_rng.standard_normal(v.shape)
            views.append(np.asarray(v, dtype=np.float64))
        return MultiViewObservation(views, self._k)

    def reset(self, seed: int) -> MultiViewObservation:
        self._seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._k = 0
        self._done = False
        self._reset_state(np.random.default_rng([self._seed, 0x5EED]))
        return self._observe()

    def clamp(self, action) -> np.ndarray:
        a = np.asarray(action, dtype=np.float64).ravel()
        if a.size != self.spec.action_dim:
            raise DimensionError(f"action has dim {a.size}, environment expects {self.spec.action_dim}")
        b = self.spec.action_bound
        return np.clip(a, -b, b)

    def step(self, action) -> StepResult:
        if self._done:
            raise EpisodeFinished("episode is terminal; call reset() first")
        a = self.clamp(action)
        reward = float(self._advance(a))
        self._k += 1
        terminal = self._terminal() or self._k >= self.spec.max_episode_steps
        self._done = terminal
        return StepResult(self._observe(), reward, terminal)

    def _terminal(self) -> bool:
        return False


@dataclass
class PointMassConfig:
    n_views: int = 2
    # one (d_w x 4) matrix per view over the state [px, py, vx, vy]; None = identity
    projections: list | None = None
    noise_std: list | float = 0.0
    occlusion: list = field(default_factory=list)
    dt: float = 0.05
    action_bound: float = 1.0
    max_episode_steps: int = 100
    start_radius: float = 1.0


class PointMassMultiView(MultiViewEnv):
    """2-D point mass driven by bounded acceleration towards the origin.

    State ``[px, py, vx, vy]``, explicit Euler with step ``dt``::

        pos' = pos + dt * vel
        vel' = vel + dt * clip(action)

    Reward is ``-|pos'|`` (distance to the goal after the step), so it lies in
    ``[-(start_radius + dt^2 * bound * T(T-1)/sqrt(2)), 0]``.  Episodes start at
    rest on the circle of radius ``start_radius`` at a seeded random angle.
    """

    def __init__(self, config: PointMassConfig):
        n = int(config.n_views)
        if n < 1:
            raise ValueError("need at least one view")
        projections = config.projections
        if projections is None:
            projections = [np.eye(4)] * n
        mats = []
        for p in projections:
            m = np.atleast_2d(np.asarray(p, dtype=np.float64))
            if m.size == 0 or m.shape[1] != 4:
                raise ValueError("each projection must be a non-empty (d_w x 4) matrix")
            mats.append(m)
        if len(mats) != n:
            raise ValueError(f"got {len(mats)} projections for {n} views")
        self.projections = tuple(mats)
        self.config = config
        T = int(config.max_episode_steps)
        worst = config.start_radius + config.dt ** 2 * config.action_bound * T * (T - 1) / math.sqrt(2)
        self.spec = EnvSpec(n, tuple(m.shape[0] for m in mats), 2, float(config.action_bound), T, (-worst, 0.0))
        noise = config.noise_std
        if np.isscalar(noise):
            noise = [float(noise)] * n
        super().__init__(noise, config.occlusion)
        self.state = np.zeros(4)

    def _reset_state(self, rng):
        angle = rng.uniform(0.0, 2.0 * math.pi)
        r = self.config.start_radius
        self.state = np.array([r * math.cos(angle), r * math.sin(angle), 0.0, 0.0])

    def set_state(self, state):
        """Place the mass at an explicit state (tests and scripted rollouts)."""
        self.state = np.asarray(state, dtype=np.float64).copy()

    def _advance(self, action):
        dt = self.config.dt
        pos, vel = self.state[:2], self.state[2:]
        self.state = np.concatenate([pos + dt * vel, vel + dt * action])
        return -math.hypot(self.state[0], self.state[1])

    def _clean_views(self):
        return [m @ self.state for m in self.projections]


@dataclass
class CorridorConfig:
    # hazard_speed <= 0 means no hazard
    hazard_speed: float = 0.05
    hazard_period: int = 40
    gap_range: tuple[float, float] = (0.3, 3.0)
    # agent start position, uniform in this interval; the hazard starts gap ahead of it.
    # A random start keeps either view alone from revealing the gap.
    start_range: tuple[float, float] = (0.0, 3.0)
    agent_speed: float = 0.1
    collision_radius: float = 0.2
    collision_penalty: float = 2.0
    knockback: float = 0.3
    max_episode_steps: int = 100
    obs_scale: float = 5.0
    noise_std: list | float = 0.0
    occlusion: list = field(default_factory=list)


class OccludedCorridor(MultiViewEnv):
    """1-D corridor shared with a stop-and-go hazard ahead of the agent.

    View 0 reports the agent position, view 1 the hazard position (both divided
    by ``obs_scale``).  The agent starts at a seeded position in
    ``start_range`` and moves ``agent_speed * a`` per step (position floored at
    0).  The hazard starts ``gap`` ahead of it and advances
    ``hazard_speed * (1 + sin(2 pi k / period + phase)) / 2`` per step, so
    it periodically stalls.  If after a step the agent is within
    ``collision_radius`` of the hazard (or past it), the collision penalty is
    charged and the agent is pushed back to ``hazard - knockback``.

    Reward = progress (signed displacement this step) - penalty on collision, in
    ``[-(agent_speed + radius + knockback) - penalty, agent_speed]``.  Only the
    fused picture (gap = hazard - agent) tells when it is safe to advance.
    """

    def __init__(self, config: CorridorConfig):
        self.config = config
        c = config
        low = -(c.agent_speed + c.collision_radius + c.knockback) - c.collision_penalty
        self.spec = EnvSpec(2, (1, 1), 1, 1.0, int(c.max_episode_steps), (low, c.agent_speed))
        noise = c.noise_std
        if np.isscalar(noise):
            noise = [float(noise)] * 2
        if c.agent_speed <= 0 or c.collision_radius < 0 or c.collision_penalty < 0 or c.knockback < 0:
            raise ValueError("invalid corridor parameters")
        lo, hi = c.gap_range
        if not 0 <= lo <= hi:
            raise ValueError("gap_range must satisfy 0 <= low <= high")
        if not 0 <= c.start_range[0] <= c.start_range[1]:
            raise ValueError("start_range must satisfy 0 <= low <= high")
        super().__init__(noise, c.occlusion)
        self.agent = 0.0
        self.hazard = None
        self.phase = 0.0
        self.collided = False

    @property
    def has_hazard(self) -> bool:
        return self.config.hazard_speed > 0

    def _reset_state(self, rng):
        lo, hi = self.config.gap_range
        gap = rng.uniform(lo, hi)
        self.phase = rng.uniform(0.0, 2.0 * math.pi)
        self.agent = float(rng.uniform(*self.config.start_range))
        self.hazard = self.agent + gap if self.has_hazard else None
        self.collided = False

    def hazard_step(self, k: int) -> float:
        c = self.config
        return c.hazard_speed * 0.5 * (1.0 + math.sin(2.0 * math.pi * k / c.hazard_period + self.phase))

    def _advance(self, action):
        c = self.config
        old = self.agent
        progress = c.agent_speed * float(action[0])
        x = old + progress
        if x < 0.0:
            x, progress = 0.0, -old
        penalty = 0.0
        self.collided = False
        if self.hazard is not None:
            self.hazard += self.hazard_step(self._k)
            if x > self.hazard - c.collision_radius:
                self.collided = True
                penalty = c.collision_penalty
                x = max(0.0, self.hazard - c.knockback)
                progress = x - old
        self.agent = x
        return progress - penalty

    def _clean_views(self):
        s = self.config.obs_scale
        hazard = SENTINEL if self.hazard is None else self.hazard / s
        return [np.array([self.agent / s]), np.array([hazard])]


class ConstantRewardEnv(MultiViewEnv):
    """Stub: every step pays ``reward``; views are seeded constants.  Used to test bookkeeping."""

    def __init__(self, n_views=2, view_dim=2, action_dim=1, reward=1.0, max_episode_steps=10):
        self.reward = float(reward)
        self.spec = EnvSpec(n_views, (view_dim,) * n_views, action_dim, 1.0, max_episode_steps,
                            (self.reward, self.reward))
        super().__init__([0.0] * n_views, [])
        self._base = None

    def _reset_state(self, rng):
        self._base = rng.uniform(-1.0, 1.0, size=self.spec.view_dims[0])

    def _advance(self, action):
        return self.reward

    def _clean_views(self):
        return [self._base.copy() for _ in range(self.spec.n_views)]


def make_point_mass_multiview(config: PointMassConfig | dict | None = None) -> PointMassMultiView:
    if config is None:
        config = PointMassConfig()
    elif isinstance(config, dict):
        config = PointMassConfig(**config)
    return PointMassMultiView(config)


def make_occluded_corridor(config: CorridorConfig | dict | None = None) -> OccludedCorridor:
    if config is None:
        config = CorridorConfig()
    elif isinstance(config, dict):
        config = CorridorConfig(**config)
    return OccludedCorridor(config)


def make_env(name: str, params: dict | None = None) -> MultiViewEnv:
    params = dict(params or {})
    if name == "point_mass":
        return make_point_mass_multiview(params)
    if name == "corridor":
        return make_occluded_corridor(params)
    if name == "constant":
        return ConstantRewardEnv(**params)
    raise ValueError(f"unknown environment {name!r}")


def write_trajectory_csv(path, rows) -> Path:
    """Dump ``(step, views, action, reward, terminal)`` tuples, one CSV row per step."""
    path = Path(path)
    rows = list(rows)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        if rows:
            _, views, action, _, _ = rows[0]
            header = ["step"]
            for w, v in enumerate(views):
                header += [f"obs{w + 1}_{i}" for i in range(len(v))]
            header += [f"action_{i}" for i in range(len(action))] + ["reward", "terminal"]
            writer.writerow(header)
        for step, views, action, reward, terminal in rows:
            flat = [repr(float(x)) for v in views for x in v]
            writer.writerow([step, *flat, *(repr(float(a)) for a in action), repr(float(reward)), int(terminal)])
    return path
