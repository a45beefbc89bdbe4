"""Incremental deep reinforcement learning with the Action Value Gradient method."""

from .agents import AVG, IAC, SAC1, AVGTargetQ, make_agent
from .envs import DotReacher, Pendulum, make_env
from .norm import OnlineStandardizer, RunningStat, TdScaleState

__version__ = "0.1.0"

__all__ = [
    "AVG",
    "AVGTargetQ",
    "DotReacher",
    "IAC",
    "OnlineStandardizer",
    "Pendulum",
    "RunningStat",
    "SAC1",
    "TdScaleState",
    "make_agent",
    "make_env",
]
