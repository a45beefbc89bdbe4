"""Torque-limited pendulum swing-up.

Dynamics follow the usual frictionless pendulum ``theta'' = -3g/(2l) sin(theta + pi)
+ 3/(m l^2) u`` integrated with semi-implicit Euler; ``theta = 0`` is upright.
There is no terminal state; episodes end by timeout.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .base import Env, EnvStep


@dataclass(frozen=True)
class PendulumConfig:
    dt: float = 0.05
    gravity: float = 10.0
    mass: float = 1.0
    length: float = 1.0
    max_torque: float = 2.0
    max_speed: float = 8.0
    timeout_steps: int = 200
    reward_scale: float = 1.0


def _wrap(theta):
    return (theta + math.pi) % (2.0 * math.pi) - math.pi


class Pendulum(Env):
    """Observation ``[cos theta, sin theta, theta_dot]``; action is a scaled torque."""

    obs_dim = 3
    act_dim = 1

    def __init__(self, config=None, seed=None, **kwargs):
        super().__init__(seed)
        self.config = config if config is not None else PendulumConfig(**kwargs)
        self.theta = 0.0
        self.theta_dot = 0.0
        self.t = 0

    def _obs(self):
        return np.array([math.cos(self.theta), math.sin(self.theta), self.theta_dot])

    def _reset(self):
        self.theta = float(self.rng.uniform(-math.pi, math.pi))
        self.theta_dot = float(self.rng.uniform(-1.0, 1.0))
        self.t = 0
        return self._obs()

    def _step(self, action):
        cfg = self.config
        u = float(action[0]) * cfg.max_torque
        cost = _wrap(self.theta) ** 2 + 0.1 * self.theta_dot**2 + 0.001 * u**2
        acc = 3.0 * cfg.gravity / (2.0 * cfg.length) * math.sin(self.theta) + 3.0 / (
            cfg.mass * cfg.length**2
        ) * u
        self.theta_dot = float(np.clip(self.theta_dot + acc * cfg.dt, -cfg.max_speed, cfg.max_speed))
        self.theta = self.theta + self.theta_dot * cfg.dt
        self.t += 1
        return EnvStep(self._obs(), -cost * cfg.reward_scale, False, self.t >= cfg.timeout_steps)

    def _get_state(self):
        return {"theta": self.theta, "theta_dot": self.theta_dot, "t": self.t}

    def _set_state(self, state):
        self.theta = float(state["theta"])
        self.theta_dot = float(state["theta_dot"])
        self.t = int(state["t"])

    def describe(self):
        return asdict(self.config)
