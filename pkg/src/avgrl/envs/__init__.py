from .base import Env, EnvFault, EnvStep, EnvUsageError
from .dot_reacher import DotReacher, DotReacherConfig, pd_controller, run_policy
from .pendulum import Pendulum, PendulumConfig
from .protocol import ProtocolEnv, SubprocessEnv, serve

ENVS = {"dot_reacher": DotReacher, "pendulum": Pendulum}
ENV_CONFIGS = {"dot_reacher": DotReacherConfig, "pendulum": PendulumConfig}


def make_env(kind, seed=None, **kwargs):
    """Build a built-in environment, or a subprocess one for ``kind="subprocess"``."""
    if kind == "subprocess":
        return SubprocessEnv(kwargs["command"], timeout=kwargs.get("timeout", 30.0))
    if kind not in ENVS:
        raise ValueError(f"unknown env kind {kind!r}; choose from {sorted(ENVS) + ['subprocess']}")
    return ENVS[kind](ENV_CONFIGS[kind](**kwargs), seed=seed)


__all__ = [
    "ENVS",
    "Env",
    "EnvFault",
    "EnvStep",
    "EnvUsageError",
    "DotReacher",
    "DotReacherConfig",
    "Pendulum",
    "PendulumConfig",
    "ProtocolEnv",
    "SubprocessEnv",
    "make_env",
    "pd_controller",
    "run_policy",
    "serve",
]
