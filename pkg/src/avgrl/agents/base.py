"""Shared machinery for the incremental agents."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .. import dist
from .._validation import (
    NonFiniteError,
    check_positive,
    check_unit_interval,
    check_vector,
)
from ..nn import (
    AdamState,
    MlpSpec,
    ParamBundle,
    forward,
    init_params,
    split_policy_head,
)
from ..norm import RunningStat, TdScaleState, scale_td_update, welford_update


class AgentDivergedError(RuntimeError):
    """The agent produced a non-finite quantity and refuses to continue."""


@dataclass
class UpdateDiagnostics:
    delta: float = math.nan
    delta_scaled: float = math.nan
    actor_grad_norm: float = math.nan
    critic_grad_norm: float = math.nan
    q_value: float = math.nan
    entropy_term: float = math.nan
    sigma_delta: float = 1.0
    diverged: bool = False

    def as_dict(self):
        return asdict(self)


@dataclass
class Transition:
    """One step of experience as seen by the learner (observations already normalized)."""

    obs: np.ndarray
    action: np.ndarray
    reward: float
    next_obs: np.ndarray
    terminal: bool
    truncated: bool
    pre_tanh: np.ndarray
    noise: np.ndarray


class IncrementalAgent(BaseEstimator):
    """Base class for agents that learn from one transition at a time.

    The interaction cycle is::

        agent.begin_episode(obs)
        while True:
            action = agent.act()
            ...env.step(action)...
            agent.learn(reward, next_obs, terminal, truncated)
            if terminal or truncated:
                break

    Each observed state passes through the observation statistics exactly
    once (in ``begin_episode`` or ``learn``). Hyperparameters are ordinary
    constructor arguments, so ``get_params``/``set_params``/``clone`` work.
    """

    kind = "base"

    # ---- construction -------------------------------------------------
    def _validate_params(self):
        check_unit_interval(self.gamma, "gamma")
        check_positive(self.actor_lr, "actor_lr")
        check_positive(self.critic_lr, "critic_lr")
        check_unit_interval(self.beta1, "beta1")
        check_unit_interval(self.beta2, "beta2")
        if self.eta < 0:
            raise ValueError(f"eta must be >= 0, got {self.eta}")

    def _mlp(self, input_dim, output_dim):
        return MlpSpec(
            input_dim=input_dim,
            output_dim=output_dim,
            hidden_dims=tuple(self.hidden_dims),
            activation=self.activation,
            feature_norm=self.feature_norm,
        )

    def _adam(self, params, lr):
        return AdamState.zeros(len(params), lr, self.beta1, self.beta2, raw_sgd=self.raw_sgd)

    def setup(self, obs_dim, act_dim):
        """Allocate networks, optimizers and statistics for the given dimensions."""
        self._validate_params()
        self.obs_dim_ = int(obs_dim)
        self.act_dim_ = int(act_dim)
        self.rng_ = np.random.default_rng(self.seed)
        self.actor_spec_ = self._mlp(self.obs_dim_, 2 * self.act_dim_)
        self.actor_ = init_params(self.actor_spec_, self.rng_)
        self.actor_opt_ = self._adam(self.actor_, self.actor_lr)
        self._build_critics()
        self.obs_stat_ = RunningStat((self.obs_dim_,), self.obs_norm_mode)
        self.td_ = TdScaleState()
        self.steps_ = 0
        self.episodes_ = 0
        self.diverged_ = False
        self._obs = None
        self._pending = None
        return self

    def _build_critics(self):
        raise NotImplementedError

    def _networks(self):
        """Mapping of name -> ParamBundle for everything checkpointed."""
        return {"actor": self.actor_}

    def _optimizers(self):
        return {"actor": self.actor_opt_}

    # ---- interaction --------------------------------------------------
    def _check_alive(self):
        check_is_fitted(self, "actor_")
        if self.diverged_:
            raise AgentDivergedError(f"{type(self).__name__} diverged; refusing to continue")

    def _observe(self, obs):
        obs = check_vector(obs, self.obs_dim_, "observation")
        if self.norm_obs:
            obs, _, _ = welford_update(self.obs_stat_, obs)
        return obs

    def begin_episode(self, obs):
        self._check_alive()
        self._obs = self._observe(obs)
        self._pending = None
        self.td_.begin_episode()

    def _policy(self, obs):
        out, tp = forward(self.actor_, self.actor_spec_, obs, check=False)
        mean, log_std, active = split_policy_head(out)
        return mean, log_std, active, tp

    def act(self):
        """Sample an action for the current state and remember it for :meth:`learn`."""
        self._check_alive()
        if self._obs is None:
            raise RuntimeError("act() before begin_episode()")
        mean, log_std, active, tape = self._policy(self._obs)
        sample = dist.sample_reparam(mean, log_std, self.rng_)
        if not np.isfinite(sample.pre_tanh).all():
            self.diverged_ = True
            raise AgentDivergedError("policy produced a non-finite action")
        self._pending = (sample, mean, log_std, active, tape)
        return sample.action.copy()

    def learn(self, reward, next_obs, terminal, truncated):
        """Consume the outcome of the last action; returns :class:`UpdateDiagnostics`."""
        self._check_alive()
        if self._pending is None:
            raise RuntimeError("learn() without a preceding act()")
        next_s = self._observe(next_obs)
        sample = self._pending[0]
        tr = Transition(self._obs, sample.action, float(reward), next_s, bool(terminal),
                        bool(truncated), sample.pre_tanh, sample.noise)
        try:
            diag = self._update(tr)
        except NonFiniteError:
            self.diverged_ = True
            diag = UpdateDiagnostics(diverged=True)
        self.steps_ += 1
        if terminal or truncated:
            self.episodes_ += 1
        self._obs = next_s
        self._pending = None
        return diag

    def _scale_td(self, reward, terminal):
        if not self.scaled_td:
            return 1.0
        gamma_step = 0.0 if terminal else self.gamma
        return scale_td_update(self.td_, reward, gamma_step)[0]

    def _end_episode_scale(self, reward, terminal, truncated):
        if self.scaled_td and (terminal or truncated):
            scale_td_update(self.td_, reward, 0.0, terminal_G=self.td_.G)

    def _bootstrap_mask(self, terminal):
        return 0.0 if (terminal and self.terminal_mask) else 1.0

    def _update(self, tr):
        raise NotImplementedError

    @staticmethod
    def _finite(*values):
        for v in values:
            if not np.all(np.isfinite(v)):
                raise NonFiniteError(f"non-finite value during update: {v!r}")

    # ---- sklearn-style helpers ----------------------------------------
    def fit(self, env, total_steps=10_000):
        """Train on ``env`` for ``total_steps`` interaction steps."""
        from ..harness import Trainer

        if not hasattr(self, "actor_"):
            self.setup(env.obs_dim, env.act_dim)
        Trainer(self, env, total_steps=total_steps).run()
        return self

    def predict(self, X):
        """Deterministic (zero-noise) actions for each row of raw observations in ``X``."""
        check_is_fitted(self, "actor_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.obs_dim_:
            raise ValueError(
                f"X has {X.shape[1]} features, but {type(self).__name__} "
                f"is expecting {self.obs_dim_} features as input"
            )
        if self.norm_obs:
            X = self.obs_stat_.normalize(X)
        out = np.empty((X.shape[0], self.act_dim_))
        for i, row in enumerate(X):
            mean, _, _, _ = self._policy(row)
            out[i] = np.tanh(mean)
        return out

    # ---- checkpoint support -------------------------------------------
    def state_dict(self):
        check_is_fitted(self, "actor_")
        params = {k: v.values for k, v in self._networks().items()}
        optim = {}
        for name, opt in self._optimizers().items():
            optim[f"{name}.m"] = opt.m
            optim[f"{name}.v"] = opt.v
            optim[f"{name}.t"] = np.array(opt.t)
        stats = {f"obs.{k}": v for k, v in self.obs_stat_.state_arrays().items()}
        stats.update({f"td.{k}": v for k, v in self.td_.state_arrays().items()})
        if self._obs is not None:
            stats["loop.obs"] = self._obs
        meta = {
            "kind": self.kind,
            "params": _jsonable(self.get_params()),
            "obs_dim": self.obs_dim_,
            "act_dim": self.act_dim_,
            "steps": self.steps_,
            "episodes": self.episodes_,
            "diverged": self.diverged_,
        }
        return {"meta": meta, "params": params, "optimizer": optim, "stats": stats,
                "rng": self.rng_.bit_generator.state}

    def load_state_dict(self, state):
        meta = state["meta"]
        if meta["kind"] != self.kind:
            raise ValueError(f"checkpoint holds a {meta['kind']!r} agent, not {self.kind!r}")
        self.set_params(**_from_jsonable(meta["params"]))
        self.setup(meta["obs_dim"], meta["act_dim"])
        for name, bundle in self._networks().items():
            bundle.assign(np.asarray(state["params"][name], dtype=np.float64))
        for name, opt in self._optimizers().items():
            opt.m[...] = state["optimizer"][f"{name}.m"]
            opt.v[...] = state["optimizer"][f"{name}.v"]
            opt.t = int(state["optimizer"][f"{name}.t"])
        stats = state["stats"]
        self.obs_stat_.load_arrays({k[4:]: v for k, v in stats.items() if k.startswith("obs.")})
        self.td_.load_arrays({k[3:]: v for k, v in stats.items() if k.startswith("td.")})
        self._obs = np.array(stats["loop.obs"]) if "loop.obs" in stats else None
        self.rng_.bit_generator.state = state["rng"]
        self.steps_ = int(meta["steps"])
        self.episodes_ = int(meta["episodes"])
        self.diverged_ = bool(meta["diverged"])
        self._after_load()
        return self

    def _after_load(self):
        pass


def _jsonable(params):
    out = {}
    for k, v in params.items():
        out[k] = list(v) if isinstance(v, tuple) else v
    return out


def _from_jsonable(params):
    out = dict(params)
    if "hidden_dims" in out:
        out["hidden_dims"] = tuple(out["hidden_dims"])
    return out


def grad_norm(g):
    return float(math.sqrt(float(g @ g)))


def scalar_bundle(value):
    """One-element ParamBundle (used for learnable scalars such as log-entropy)."""
    from ..nn import LayerLayout

    return ParamBundle(np.array([float(value)]), (LayerLayout(1, 0, 0),))
