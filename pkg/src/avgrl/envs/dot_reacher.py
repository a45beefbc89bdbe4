"""Dot Reacher: steer a point mass onto a fixed target and stop there."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .base import Env, EnvStep

VARIANTS = {
    "easy": {"target_radius": 0.15, "velocity_threshold": 0.25},
    "hard": {"target_radius": 0.05, "velocity_threshold": 0.10},
}


@dataclass(frozen=True)
class DotReacherConfig:
    variant: str = "easy"
    dt: float = 0.05
    max_accel: float = 1.0
    arena_half_width: float = 1.0
    target_radius: float | None = None
    velocity_threshold: float | None = None
    timeout_steps: int = 500
    reward_per_step: float = -1.0
    target: tuple = (0.0, 0.0)
    reward_scale: float = 1.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {sorted(VARIANTS)}, got {self.variant!r}")
        for key, value in VARIANTS[self.variant].items():
            if getattr(self, key) is None:
                object.__setattr__(self, key, value)
        object.__setattr__(self, "target", tuple(float(t) for t in self.target))
        if not self.target_radius < self.arena_half_width:
            raise ValueError("target_radius must be smaller than arena_half_width")
        if self.timeout_steps < 1:
            raise ValueError("timeout_steps must be >= 1")
        if self.dt <= 0 or self.max_accel <= 0:
            raise ValueError("dt and max_accel must be positive")


class DotReacher(Env):
    """Point mass in a square arena driven by a clipped 2-D acceleration.

    Observation is ``[pos_x, pos_y, vel_x, vel_y]``. Walls are inelastic: the
    position is clamped and the velocity component into the wall is zeroed.
    Every step costs ``reward_per_step`` except the terminal one, which pays 0.
    ``reward_scale`` multiplies every reward (used for stress tests).
    """

    obs_dim = 4
    act_dim = 2

    def __init__(self, config=None, seed=None, **kwargs):
        super().__init__(seed)
        self.config = config if config is not None else DotReacherConfig(**kwargs)
        self.pos = np.zeros(2)
        self.vel = np.zeros(2)
        self.t = 0
        self._target = np.array(self.config.target)

    def _obs(self):
        return np.concatenate([self.pos, self.vel])

    def _reset(self):
        cfg = self.config
        w = cfg.arena_half_width
        while True:
            pos = self.rng.uniform(-w, w, size=2)
            if np.linalg.norm(pos - self._target) > cfg.target_radius:
                break
        self.pos = pos
        self.vel = np.zeros(2)
        self.t = 0
        return self._obs()

    def at_goal(self):
        cfg = self.config
        return bool(
            np.linalg.norm(self.pos - self._target) <= cfg.target_radius
            and np.linalg.norm(self.vel) <= cfg.velocity_threshold
        )

    def _step(self, action):
        cfg = self.config
        self.vel = self.vel + cfg.max_accel * action * cfg.dt
        self.pos = self.pos + self.vel * cfg.dt
        w = cfg.arena_half_width
        hit = np.abs(self.pos) >= w
        if hit.any():
            self.pos = np.clip(self.pos, -w, w)
            self.vel = np.where(hit, 0.0, self.vel)
        self.t += 1
        terminal = self.at_goal()
        truncated = self.t >= cfg.timeout_steps
        reward = 0.0 if terminal else cfg.reward_per_step
        return EnvStep(self._obs(), reward * cfg.reward_scale, terminal, truncated and not terminal)

    def _get_state(self):
        return {"pos": self.pos.tolist(), "vel": self.vel.tolist(), "t": self.t}

    def _set_state(self, state):
        self.pos = np.array(state["pos"], dtype=np.float64)
        self.vel = np.array(state["vel"], dtype=np.float64)
        self.t = int(state["t"])

    def describe(self):
        return asdict(self.config)


def pd_controller(obs, rng=None, target=(0.0, 0.0), kp=2.0, kd=2.5):
    """Scripted baseline: accelerate toward the target and damp the velocity."""
    pos, vel = obs[:2], obs[2:4]
    return np.clip(kp * (np.asarray(target) - pos) - kd * vel, -1.0, 1.0)


def run_policy(env, policy, episodes, seed=0):
    """Mean undiscounted return of ``policy(obs, rng)`` over ``episodes`` episodes."""
    rng = np.random.default_rng(seed)
    returns = []
    obs = env.reset(seed=seed)
    for _ in range(episodes):
        total = 0.0
        while True:
            out = env.step(policy(obs, rng))
            total += out.reward
            if out.terminal or out.truncated:
                break
            obs = out.observation
        returns.append(total)
        obs = env.reset()
    return float(np.mean(returns)), returns

