"""Action Value Gradient agents: plain and with a Polyak-averaged target critic."""

from __future__ import annotations

import numpy as np

from .. import dist
from ..nn import (
    adam_step,
    forward,
    grad_wrt_input,
    grad_wrt_params,
    init_params,
    polyak_update,
)
from .._validation import check_unit_interval
from .base import IncrementalAgent, UpdateDiagnostics, grad_norm

_ONE = np.ones(1)


class AVG(IncrementalAgent):
    """Incremental actor-critic using the reparameterization gradient.

    One critic ``Q(s, a)``, no replay buffer, no target network. The action
    drawn in :meth:`act` drives both the critic and the actor update.

    Parameters
    ----------
    gamma : float, default=0.99
        Discount factor.
    eta : float, default=0.07
        Fixed entropy coefficient.
    actor_lr, critic_lr : float
        Adam step sizes.
    beta1, beta2 : float
        Adam moment coefficients.
    hidden_dims : tuple of int, default=(256, 256)
    activation : str, default="leaky_relu"
    feature_norm : {"pnorm", "layer_norm", "rms_norm", "none"}, default="pnorm"
        Normalization of the last hidden layer of both networks.
    norm_obs : bool, default=True
        Welford z-scoring of observations.
    scaled_td : bool, default=True
        Divide the TD error by the running return-scale estimate.
    entropy : {"sample", "distribution"}, default="sample"
        ``-log pi(A|S)`` at the drawn action, or the closed-form entropy of
        the underlying normal.
    terminal_mask : bool, default=True
        Drop the bootstrap term on true terminal transitions. ``False``
        bootstraps through terminals as the bare pseudocode does.
    obs_norm_mode : {"zscore", "literal"}, default="zscore"
    raw_sgd : bool, default=False
        Replace Adam by plain gradient steps.
    seed : int, default=0
    """

    kind = "avg"

    def __init__(
        self,
        gamma=0.99,
        eta=0.07,
        actor_lr=6.3e-3,
        critic_lr=8.7e-3,
        beta1=0.0,
        beta2=0.999,
        hidden_dims=(256, 256),
        activation="leaky_relu",
        feature_norm="pnorm",
        norm_obs=True,
        scaled_td=True,
        entropy="sample",
        terminal_mask=True,
        obs_norm_mode="zscore",
        raw_sgd=False,
        seed=0,
    ):
        self.gamma = gamma
        self.eta = eta
        self.actor_lr = actor_lr
        self.critic_lr = critic_lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.hidden_dims = hidden_dims
        self.activation = activation
        self.feature_norm = feature_norm
        self.norm_obs = norm_obs
        self.scaled_td = scaled_td
        self.entropy = entropy
        self.terminal_mask = terminal_mask
        self.obs_norm_mode = obs_norm_mode
        self.raw_sgd = raw_sgd
        self.seed = seed

    def _validate_params(self):
        super()._validate_params()
        if self.entropy not in ("sample", "distribution"):
            raise ValueError(f"entropy must be 'sample' or 'distribution', got {self.entropy!r}")

    def _build_critics(self):
        self.critic_spec_ = self._mlp(self.obs_dim_ + self.act_dim_, 1)
        self.critic_ = init_params(self.critic_spec_, self.rng_)
        self.critic_opt_ = self._adam(self.critic_, self.critic_lr)

    def _networks(self):
        return {"actor": self.actor_, "critic": self.critic_}

    def _optimizers(self):
        return {"actor": self.actor_opt_, "critic": self.critic_opt_}

    def _bootstrap_critic(self):
        return self.critic_

    def _q(self, params, obs, action):
        out, tape = forward(params, self.critic_spec_, np.concatenate([obs, action]), check=False)
        return float(out[0]), tape

    def _update(self, tr):
        sample, mean, log_std, active, actor_tape = self._pending
        eta = self.eta
        sigma_delta = self._scale_td(tr.reward, tr.terminal)

        # bootstrap target from a fresh action at S'
        mean_n, log_std_n, _, _ = self._policy(tr.next_obs)
        nxt = dist.sample_reparam(mean_n, log_std_n, self.rng_)
        q_next, _ = self._q(self._bootstrap_critic(), tr.next_obs, nxt.action)
        if self.entropy == "sample":
            ent_next = -dist.log_prob(mean_n, log_std_n, nxt.pre_tanh)
        else:
            ent_next = dist.normal_entropy(log_std_n)
        q, critic_tape = self._q(self.critic_, tr.obs, tr.action)
        mask = self._bootstrap_mask(tr.terminal)
        delta = tr.reward + self.gamma * mask * (q_next + eta * ent_next) - q
        delta_scaled = delta / sigma_delta
        self._finite(delta_scaled)

        # critic: semi-gradient TD, ascent on delta * dQ/dphi
        g_critic = grad_wrt_params(critic_tape, _ONE)
        g_critic *= -delta_scaled
        adam_step(self.critic_opt_, self.critic_, g_critic, "descent")

        # actor: ascend Q(S, A_theta) + eta * entropy through the updated critic
        _, tape2 = self._q(self.critic_, tr.obs, tr.action)
        dq_da = grad_wrt_input(tape2, _ONE)[self.obs_dim_:]
        da_dm, da_dls, dlp_dm, dlp_dls = dist.reparam_grads(mean, log_std, sample)
        g_mean = dq_da * da_dm
        g_ls = dq_da * da_dls
        if self.entropy == "sample":
            g_mean = g_mean - eta * dlp_dm
            g_ls = g_ls - eta * dlp_dls
            entropy_term = -eta * dist.log_prob(mean, log_std, sample.pre_tanh)
        else:
            g_ls = g_ls + eta
            entropy_term = eta * dist.normal_entropy(log_std)
        g_ls = np.where(active, g_ls, 0.0)
        g_actor = grad_wrt_params(actor_tape, np.concatenate([g_mean, g_ls]))
        adam_step(self.actor_opt_, self.actor_, g_actor, "ascent")

        self._after_update()
        self._end_episode_scale(tr.reward, tr.terminal, tr.truncated)
        return UpdateDiagnostics(
            delta=float(delta),
            delta_scaled=float(delta_scaled),
            actor_grad_norm=grad_norm(g_actor),
            critic_grad_norm=grad_norm(g_critic),
            q_value=q,
            entropy_term=float(entropy_term),
            sigma_delta=float(sigma_delta),
        )

    def _after_update(self):
        pass


class AVGTargetQ(AVG):
    """AVG whose bootstrap uses a Polyak-averaged copy of the critic.

    ``tau=1`` makes the target track the critic exactly (plain AVG);
    ``tau=0`` freezes it at initialization.
    """

    kind = "avg_target"

    def __init__(
        self,
        gamma=0.99,
        eta=0.07,
        actor_lr=6.3e-3,
        critic_lr=8.7e-3,
        beta1=0.0,
        beta2=0.999,
        hidden_dims=(256, 256),
        activation="leaky_relu",
        feature_norm="pnorm",
        norm_obs=True,
        scaled_td=True,
        entropy="sample",
        terminal_mask=True,
        obs_norm_mode="zscore",
        raw_sgd=False,
        seed=0,
        tau=0.005,
    ):
        super().__init__(
            gamma=gamma, eta=eta, actor_lr=actor_lr, critic_lr=critic_lr, beta1=beta1,
            beta2=beta2, hidden_dims=hidden_dims, activation=activation,
            feature_norm=feature_norm, norm_obs=norm_obs, scaled_td=scaled_td,
            entropy=entropy, terminal_mask=terminal_mask, obs_norm_mode=obs_norm_mode,
            raw_sgd=raw_sgd, seed=seed,
        )
        self.tau = tau

    def _validate_params(self):
        super()._validate_params()
        check_unit_interval(self.tau, "tau")

    def _build_critics(self):
        super()._build_critics()
        self.target_ = self.critic_.copy()

    def _networks(self):
        return {**super()._networks(), "target": self.target_}

    def _bootstrap_critic(self):
        return self.target_

    def _after_update(self):
        polyak_update(self.target_, self.critic_, self.tau)
