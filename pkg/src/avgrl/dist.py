"""Normal and tanh-squashed normal policy distributions."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
HALF_LOG_2PIE = 0.5 * math.log(2.0 * math.pi * math.e)
LOG2 = math.log(2.0)


@dataclass
class SquashedSample:
    noise: np.ndarray
    pre_tanh: np.ndarray
    action: np.ndarray


def sample_reparam(mean, log_std, rng=None, noise=None):
    """Draw ``tanh(mean + exp(log_std) * noise)`` with ``noise ~ N(0, I)``.

    Pass ``noise`` explicitly to evaluate the map at a fixed point (for
    instance ``np.zeros_like(mean)`` for the deterministic action).
    """
    mean = np.asarray(mean, dtype=np.float64)
    if noise is None:
        noise = rng.standard_normal(mean.shape[0])
    u = mean + np.exp(log_std) * noise
    return SquashedSample(noise, u, np.tanh(u))


def log1m_tanh_sq(u):
    """``log(1 - tanh(u)**2)`` without cancellation for large ``|u|``."""
    return 2.0 * (LOG2 - u - np.logaddexp(0.0, -2.0 * u))


def normal_log_prob(mean, log_std, u):
    z = (u - mean) * np.exp(-log_std)
    return float(np.sum(-0.5 * z * z - log_std - HALF_LOG_2PI))


def log_prob(mean, log_std, pre_tanh):
    """Log-density of the squashed normal at ``tanh(pre_tanh)``."""
    u = np.asarray(pre_tanh, dtype=np.float64)
    return normal_log_prob(mean, log_std, u) - float(np.sum(log1m_tanh_sq(u)))


def normal_entropy(log_std):
    return float(np.sum(HALF_LOG_2PIE + np.asarray(log_std, dtype=np.float64)))


def squashed_entropy_mc(mean, log_std, n_samples, rng):
    """Monte-Carlo estimate of the squashed-normal entropy.

    Returns ``(estimate, standard_error)``.
    """
    if n_samples < 1000:
        raise ValueError(f"n_samples must be >= 1000, got {n_samples}")
    mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
    log_std = np.atleast_1d(np.asarray(log_std, dtype=np.float64))
    xi = rng.standard_normal((n_samples, mean.shape[0]))
    u = mean + np.exp(log_std) * xi
    # -log pi = -log N(u) + log(1 - tanh^2 u), with (u - mean)/std = xi
    neg_logp = np.sum(0.5 * xi * xi + log_std + HALF_LOG_2PI + log1m_tanh_sq(u), axis=1)
    return float(neg_logp.mean()), float(neg_logp.std(ddof=1) / math.sqrt(n_samples))


def reparam_grads(mean, log_std, sample):
    """Jacobians of the reparameterized sample at fixed noise.

    Returns ``(da_dmean, da_dlogstd, dlogp_dmean, dlogp_dlogstd)``, all
    elementwise (the maps are diagonal). ``dlogp`` is the total derivative of
    :func:`log_prob` when the sample moves with the parameters.
    """
    a = sample.action
    sigma_xi = np.exp(log_std) * sample.noise
    one_m_a2 = 1.0 - a * a
    # log_prob = sum(-xi^2/2 - log_std - log(2 pi)/2 - log(1 - tanh(u)^2))
    # and d/du[-log(1 - tanh(u)^2)] = 2 tanh(u)
    dlogp_dmean = 2.0 * a
    dlogp_dlogstd = -1.0 + 2.0 * a * sigma_xi
    return one_m_a2, one_m_a2 * sigma_xi, dlogp_dmean, dlogp_dlogstd


def score(mean, log_std, pre_tanh):
    """Gradient of :func:`log_prob` w.r.t. ``(mean, log_std)`` with the sample held fixed."""
    z = (np.asarray(pre_tanh) - mean) * np.exp(-log_std)
    return z * np.exp(-log_std), z * z - 1.0
