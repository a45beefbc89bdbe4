"""Soft actor-critic reduced to a buffer of one transition."""

from __future__ import annotations

import math

import numpy as np

from .. import dist
from .._validation import check_positive, check_unit_interval
from ..nn import (
    AdamState,
    adam_step,
    forward,
    grad_wrt_input,
    grad_wrt_params,
    init_params,
    polyak_update,
)
from .base import IncrementalAgent, UpdateDiagnostics, grad_norm, scalar_bundle

_ONE = np.ones(1)


class SAC1(IncrementalAgent):
    """Twin critics with Polyak targets and a learned entropy coefficient.

    Unlike :class:`~avgrl.agents.AVG`, the actor is updated with a freshly
    sampled action rather than the executed one, through the minimum of the
    two critics. ``eta`` is the initial entropy coefficient; it is learned in
    log space with step size ``alpha_lr`` toward ``target_entropy``
    (default ``-act_dim``).
    """

    kind = "sac1"

    def __init__(
        self,
        gamma=0.99,
        eta=1.0,
        actor_lr=3e-4,
        critic_lr=3e-4,
        alpha_lr=3e-4,
        beta1=0.9,
        beta2=0.999,
        rho=0.005,
        target_entropy=None,
        hidden_dims=(256, 256),
        activation="leaky_relu",
        feature_norm="none",
        norm_obs=False,
        scaled_td=False,
        terminal_mask=True,
        obs_norm_mode="zscore",
        raw_sgd=False,
        seed=0,
    ):
        self.gamma = gamma
        self.eta = eta
        self.actor_lr = actor_lr
        self.critic_lr = critic_lr
        self.alpha_lr = alpha_lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.rho = rho
        self.target_entropy = target_entropy
        self.hidden_dims = hidden_dims
        self.activation = activation
        self.feature_norm = feature_norm
        self.norm_obs = norm_obs
        self.scaled_td = scaled_td
        self.terminal_mask = terminal_mask
        self.obs_norm_mode = obs_norm_mode
        self.raw_sgd = raw_sgd
        self.seed = seed

    def _validate_params(self):
        super()._validate_params()
        check_positive(self.eta, "eta")
        check_positive(self.alpha_lr, "alpha_lr")
        check_unit_interval(self.rho, "rho")

    def _build_critics(self):
        self.critic_spec_ = self._mlp(self.obs_dim_ + self.act_dim_, 1)
        self.critics_ = [init_params(self.critic_spec_, self.rng_) for _ in range(2)]
        self.targets_ = [c.copy() for c in self.critics_]
        self.critic_opts_ = [self._adam(c, self.critic_lr) for c in self.critics_]
        self.log_eta_ = scalar_bundle(math.log(self.eta))
        self.eta_opt_ = AdamState.zeros(1, self.alpha_lr, self.beta1, self.beta2,
                                        raw_sgd=self.raw_sgd)

    @property
    def target_entropy_(self):
        if self.target_entropy is None:
            return -float(self.act_dim_)
        return float(self.target_entropy)

    @property
    def eta_(self):
        return math.exp(self.log_eta_.values[0])

    def _networks(self):
        return {
            "actor": self.actor_,
            "critic1": self.critics_[0],
            "critic2": self.critics_[1],
            "target1": self.targets_[0],
            "target2": self.targets_[1],
            "log_eta": self.log_eta_,
        }

    def _optimizers(self):
        return {
            "actor": self.actor_opt_,
            "critic1": self.critic_opts_[0],
            "critic2": self.critic_opts_[1],
            "log_eta": self.eta_opt_,
        }

    def _q(self, params, obs, action):
        out, tape = forward(params, self.critic_spec_, np.concatenate([obs, action]), check=False)
        return float(out[0]), tape

    def _update(self, tr):
        _, mean, log_std, active, actor_tape = self._pending
        eta = self.eta_
        sigma_delta = self._scale_td(tr.reward, tr.terminal)

        mean_n, log_std_n, _, _ = self._policy(tr.next_obs)
        nxt = dist.sample_reparam(mean_n, log_std_n, self.rng_)
        logp_next = dist.log_prob(mean_n, log_std_n, nxt.pre_tanh)
        mask = self._bootstrap_mask(tr.terminal)
        deltas, critic_norms, qs = [], [], []
        for critic, target, opt in zip(self.critics_, self.targets_, self.critic_opts_):
            q_next, _ = self._q(target, tr.next_obs, nxt.action)
            q, tape = self._q(critic, tr.obs, tr.action)
            delta = tr.reward + self.gamma * mask * (q_next - eta * logp_next) - q
            delta_scaled = delta / sigma_delta
            self._finite(delta_scaled)
            g = grad_wrt_params(tape, _ONE)
            g *= -delta_scaled
            adam_step(opt, critic, g, "descent")
            deltas.append((delta, delta_scaled))
            critic_norms.append(grad_norm(g))
            qs.append(q)

        # actor on a fresh reparameterized action
        x = dist.sample_reparam(mean, log_std, self.rng_)
        q1, t1 = self._q(self.critics_[0], tr.obs, x.action)
        q2, t2 = self._q(self.critics_[1], tr.obs, x.action)
        tape = t1 if q1 <= q2 else t2
        dq_da = grad_wrt_input(tape, _ONE)[self.obs_dim_:]
        da_dm, da_dls, dlp_dm, dlp_dls = dist.reparam_grads(mean, log_std, x)
        g_mean = dq_da * da_dm - eta * dlp_dm
        g_ls = np.where(active, dq_da * da_dls - eta * dlp_dls, 0.0)
        g_actor = grad_wrt_params(actor_tape, np.concatenate([g_mean, g_ls]))
        adam_step(self.actor_opt_, self.actor_, g_actor, "ascent")

        # entropy coefficient: minimize eta * (-log pi(X) - target) over log eta
        logp_x = dist.log_prob(mean, log_std, x.pre_tanh)
        g_eta = np.array([eta * (-logp_x - self.target_entropy_)])
        adam_step(self.eta_opt_, self.log_eta_, g_eta, "descent")

        for critic, target in zip(self.critics_, self.targets_):
            polyak_update(target, critic, self.rho)

        self._end_episode_scale(tr.reward, tr.terminal, tr.truncated)
        return UpdateDiagnostics(
            delta=float(deltas[0][0]),
            delta_scaled=float(deltas[0][1]),
            actor_grad_norm=grad_norm(g_actor),
            critic_grad_norm=float(max(critic_norms)),
            q_value=qs[0],
            entropy_term=float(-eta * logp_x),
            sigma_delta=float(sigma_delta),
        )
