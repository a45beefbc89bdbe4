from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class EnvStep:
    observation: np.ndarray
    reward: float
    terminal: bool
    truncated: bool


class EnvUsageError(RuntimeError):
    """The environment was driven out of protocol (e.g. step after episode end)."""


class EnvFault(RuntimeError):
    """An external environment misbehaved (malformed reply, timeout, crash)."""


class Env:
    """Minimal episodic continuous-control interface.

    Subclasses implement ``_reset`` and ``_step``; the base class tracks the
    episode boundary so stepping a finished episode fails loudly.
    """

    obs_dim: int
    act_dim: int

    def __init__(self, seed=None):
        self.rng = np.random.default_rng(seed)
        self._done = True

    def reset(self, seed=None):
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        self._done = False
        return self._reset()

    def step(self, action):
        if self._done:
            raise EnvUsageError("step() called on a finished episode; call reset() first")
        action = np.asarray(action, dtype=np.float64)
        if action.shape != (self.act_dim,):
            raise ValueError(f"action must have shape ({self.act_dim},), got {action.shape}")
        if not np.isfinite(action).all():
            raise ValueError(f"non-finite action {action!r}")
        out = self._step(np.clip(action, -1.0, 1.0))
        self._done = out.terminal or out.truncated
        return out

    def close(self):
        pass

    # checkpoint support
    def get_state(self):
        return {"rng": self.rng.bit_generator.state, "done": self._done, **self._get_state()}

    def set_state(self, state):
        self.rng = np.random.default_rng()
        self.rng.bit_generator.state = state["rng"]
        self._done = state["done"]
        self._set_state(state)

    def _get_state(self):
        return {}

    def _set_state(self, state):
        pass
