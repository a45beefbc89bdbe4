"""Incremental one-step actor-critic with a likelihood-ratio actor update."""

from __future__ import annotations

import numpy as np

from .. import dist
from ..nn import adam_step, forward, grad_wrt_params, init_params
from .base import IncrementalAgent, UpdateDiagnostics, grad_norm

_ONE = np.ones(1)
ENTROPY_KINDS = ("distribution", "sample", "squashed")


class IAC(IncrementalAgent):
    """One-step actor-critic with a state-value critic ``V(s)``.

    The actor follows ``delta * grad log pi(A|S) + eta * grad H`` with the TD
    error held constant and no discount correction. ``entropy`` picks the
    entropy term: the closed-form entropy of the pre-squash normal
    (``"distribution"``), ``-log pi(A|S)`` at the executed action
    (``"sample"``), or a Monte-Carlo estimate of the squashed-normal entropy
    with ``entropy_samples`` reparameterized draws (``"squashed"``).

    Normalization switches default to off (the plain baseline).
    """

    kind = "iac"

    def __init__(
        self,
        gamma=0.99,
        eta=0.01,
        actor_lr=1e-4,
        critic_lr=1e-3,
        beta1=0.0,
        beta2=0.999,
        hidden_dims=(256, 256),
        activation="leaky_relu",
        feature_norm="none",
        norm_obs=False,
        scaled_td=False,
        entropy="distribution",
        entropy_samples=16,
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
        self.entropy_samples = entropy_samples
        self.terminal_mask = terminal_mask
        self.obs_norm_mode = obs_norm_mode
        self.raw_sgd = raw_sgd
        self.seed = seed

    def _validate_params(self):
        super()._validate_params()
        if self.entropy not in ENTROPY_KINDS:
            raise ValueError(f"entropy must be one of {ENTROPY_KINDS}, got {self.entropy!r}")

    def _build_critics(self):
        self.critic_spec_ = self._mlp(self.obs_dim_, 1)
        self.critic_ = init_params(self.critic_spec_, self.rng_)
        self.critic_opt_ = self._adam(self.critic_, self.critic_lr)

    def _networks(self):
        return {"actor": self.actor_, "critic": self.critic_}

    def _optimizers(self):
        return {"actor": self.actor_opt_, "critic": self.critic_opt_}

    def _value(self, obs):
        out, tape = forward(self.critic_, self.critic_spec_, obs, check=False)
        return float(out[0]), tape

    def _entropy_grad(self, mean, log_std, sample):
        """Entropy value and its gradient w.r.t. (mean, log_std)."""
        if self.entropy == "distribution":
            return dist.normal_entropy(log_std), np.zeros_like(mean), np.ones_like(log_std)
        if self.entropy == "sample":
            s_m, s_ls = dist.score(mean, log_std, sample.pre_tanh)
            return -dist.log_prob(mean, log_std, sample.pre_tanh), -s_m, -s_ls
        value, g_m, g_ls = 0.0, np.zeros_like(mean), np.zeros_like(log_std)
        for _ in range(self.entropy_samples):
            x = dist.sample_reparam(mean, log_std, self.rng_)
            _, _, dlp_dm, dlp_dls = dist.reparam_grads(mean, log_std, x)
            value -= dist.log_prob(mean, log_std, x.pre_tanh)
            g_m -= dlp_dm
            g_ls -= dlp_dls
        k = self.entropy_samples
        return value / k, g_m / k, g_ls / k

    def _update(self, tr):
        sample, mean, log_std, active, actor_tape = self._pending
        sigma_delta = self._scale_td(tr.reward, tr.terminal)
        v_next, _ = self._value(tr.next_obs)
        v, critic_tape = self._value(tr.obs)
        delta = tr.reward + self.gamma * self._bootstrap_mask(tr.terminal) * v_next - v
        delta_scaled = delta / sigma_delta
        self._finite(delta_scaled)

        g_critic = grad_wrt_params(critic_tape, _ONE)
        g_critic *= -delta_scaled
        adam_step(self.critic_opt_, self.critic_, g_critic, "descent")

        s_m, s_ls = dist.score(mean, log_std, sample.pre_tanh)
        ent, e_m, e_ls = self._entropy_grad(mean, log_std, sample)
        g_mean = delta_scaled * s_m + self.eta * e_m
        g_ls = np.where(active, delta_scaled * s_ls + self.eta * e_ls, 0.0)
        g_actor = grad_wrt_params(actor_tape, np.concatenate([g_mean, g_ls]))
        adam_step(self.actor_opt_, self.actor_, g_actor, "ascent")

        self._end_episode_scale(tr.reward, tr.terminal, tr.truncated)
        return UpdateDiagnostics(
            delta=float(delta),
            delta_scaled=float(delta_scaled),
            actor_grad_norm=grad_norm(g_actor),
            critic_grad_norm=grad_norm(g_critic),
            q_value=v,
            entropy_term=float(self.eta * ent),
            sigma_delta=float(sigma_delta),
        )
