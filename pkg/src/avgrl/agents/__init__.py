from .avg import AVG, AVGTargetQ
from .base import (
    AgentDivergedError,
    IncrementalAgent,
    Transition,
    UpdateDiagnostics,
)
from .iac import IAC
from .sac1 import SAC1

AGENTS = {cls.kind: cls for cls in (AVG, AVGTargetQ, IAC, SAC1)}


def make_agent(kind, **params):
    if kind not in AGENTS:
        raise ValueError(f"unknown agent kind {kind!r}; choose from {sorted(AGENTS)}")
    return AGENTS[kind](**params)


__all__ = [
    "AGENTS",
    "AVG",
    "AVGTargetQ",
    "AgentDivergedError",
    "IAC",
    "IncrementalAgent",
    "SAC1",
    "Transition",
    "UpdateDiagnostics",
    "make_agent",
]
