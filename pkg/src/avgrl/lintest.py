"""Batch reparameterized actor-critic with a linear critic on small, fully known MDPs.

The MDP has a finite state set and a scalar continuous action. Everything
the learner estimates from samples (stationary and discounted state
distributions, the exact TD solution, the true policy gradient) can be
computed exactly here, which makes the module a testbed for the sampled
algorithm in :func:`rpg_td_iteration`.

Model
    ``P(s'|s, a) = softmax_s'(logits[s] + coupling[s] * a)``
    ``r(s, a) = bump_height[s] * exp(-(a - bump_center[s])**2 / (2 * bump_width**2))``
    Policy ``f(s, eps) = theta[s] + noise_std * eps`` with ``eps ~ N(0, 1)``.

Critic features are ``[(a - theta[s]) e_s, e_s]``: a per-state action slope
(compatible with the policy) and a per-state baseline.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy.special import softmax

CSV_FIELDS = ("t", "grad_norm_sq", "tracking_err", "M", "seed")
STATIONARY_TOL = 1e-12
QUAD_ORDER = 64
QUAD_TOL = 1e-10


class NonErgodicError(ValueError):
    """Power iteration oscillates or fails to settle (periodic or reducible chain)."""


class QuadratureError(ArithmeticError):
    """Noise integrals did not converge at the requested order."""


class SingularSystemError(np.linalg.LinAlgError):
    """The TD system for the linear critic is singular."""


@dataclass
class SmallMdp:
    logits: np.ndarray
    coupling: np.ndarray
    bump_height: np.ndarray
    bump_center: np.ndarray
    bump_width: float = 0.7
    gamma: float = 0.9
    d0: np.ndarray | None = None
    noise_std: float = 0.5

    def __post_init__(self):
        self.logits = np.asarray(self.logits, dtype=np.float64)
        self.coupling = np.asarray(self.coupling, dtype=np.float64)
        n = self.logits.shape[0]
        if self.logits.shape != (n, n) or self.coupling.shape != (n, n):
            raise ValueError("logits and coupling must both be (n_states, n_states)")
        if not 1 <= n <= 10:
            raise ValueError(f"n_states must be in [1, 10], got {n}")
        self.bump_height = np.asarray(self.bump_height, dtype=np.float64).reshape(n)
        self.bump_center = np.asarray(self.bump_center, dtype=np.float64).reshape(n)
        self.d0 = (np.full(n, 1.0 / n) if self.d0 is None
                   else np.asarray(self.d0, dtype=np.float64).reshape(n))
        if abs(self.d0.sum() - 1.0) > 1e-12 or (self.d0 < 0).any():
            raise ValueError("d0 must be a probability vector")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if self.bump_width <= 0 or self.noise_std <= 0:
            raise ValueError("bump_width and noise_std must be positive")

    @property
    def n_states(self):
        return self.logits.shape[0]

    @property
    def r_max(self):
        return float(np.abs(self.bump_height).max())

    def transition(self, s, a):
        """``P(.|s, a)`` for integer array ``s`` and matching actions ``a``; shape (..., n)."""
        s = np.asarray(s)
        a = np.asarray(a, dtype=np.float64)
        return softmax(self.logits[s] + self.coupling[s] * a[..., None], axis=-1)

    def transition_grad(self, s, a):
        p = self.transition(s, a)
        c = self.coupling[np.asarray(s)]
        return p * (c - (p * c).sum(axis=-1, keepdims=True))

    def reward(self, s, a):
        s = np.asarray(s)
        z = (np.asarray(a, dtype=np.float64) - self.bump_center[s]) / self.bump_width
        return self.bump_height[s] * np.exp(-0.5 * z * z)

    def reward_grad(self, s, a):
        s = np.asarray(s)
        a = np.asarray(a, dtype=np.float64)
        return self.reward(s, a) * -(a - self.bump_center[s]) / self.bump_width**2

    def act(self, theta, s, eps):
        return np.asarray(theta)[s] + self.noise_std * eps


def default_mdp():
    """Three-state MDP used throughout the tests."""
    return SmallMdp(
        logits=[[0.2, 0.5, -0.3], [-0.1, 0.0, 0.4], [0.3, -0.2, 0.1]],
        coupling=[[1.0, -0.5, -0.5], [-0.8, 0.6, 0.2], [0.3, 0.5, -0.8]],
        bump_height=[1.0, 0.6, 0.8],
        bump_center=[0.8, -0.5, 0.3],
    )


@lru_cache(maxsize=8)
def _nodes(order):
    x, w = hermegauss(order)
    return x, w / np.sqrt(2.0 * np.pi)


def policy_kernel(mdp, theta, order=QUAD_ORDER):
    """Policy-averaged transition matrix and reward vector."""
    eps, wts = _nodes(order)
    n = mdp.n_states
    s = np.repeat(np.arange(n), eps.size)
    a = mdp.act(theta, s, np.tile(eps, n))
    p = mdp.transition(s, a).reshape(n, eps.size, n)
    r = mdp.reward(s, a).reshape(n, eps.size)
    return np.einsum("k,skt->st", wts, p), r @ wts


def _checked_kernel(mdp, theta, order):
    p, r = policy_kernel(mdp, theta, order)
    p2, r2 = policy_kernel(mdp, theta, 2 * order)
    err = max(np.abs(p - p2).max(), np.abs(r - r2).max())
    if err > QUAD_TOL:
        raise QuadratureError(
            f"noise quadrature of order {order} differs from order {2 * order} by {err:.2e}; "
            f"raise the order (try {4 * order})"
        )
    return p, r


def stationary_from_matrix(P, start=None, tol=STATIONARY_TOL, max_iter=200_000):
    """Fixed point ``d = d P`` by power iteration from ``start`` (default uniform)."""
    P = np.asarray(P, dtype=np.float64)
    n = P.shape[0]
    if np.abs(P.sum(axis=1) - 1.0).max() > 1e-12:
        raise ValueError("rows of the transition matrix must sum to 1")
    d = np.full(n, 1.0 / n) if start is None else np.asarray(start, dtype=np.float64)
    prev_step = np.inf
    for it in range(max_iter):
        nxt = d @ P
        step = np.abs(nxt - d).sum()
        if step < tol:
            return nxt / nxt.sum()
        if it > 1000 and step >= prev_step * (1.0 - 1e-12):
            two = np.abs(nxt @ P - d).sum()
            raise NonErgodicError(
                f"power iteration is not contracting (step {step:.3e}, two-step gap {two:.3e}); "
                "the chain looks periodic or reducible"
            )
        prev_step = step if it % 100 == 0 else min(prev_step, step)
        d = nxt
    raise NonErgodicError(f"power iteration did not settle within {max_iter} iterations")


def stationary_distribution(mdp, theta, order=QUAD_ORDER):
    P, _ = policy_kernel(mdp, theta, order)
    return stationary_from_matrix(P, mdp.d0)


def discounted_visitation(mdp, theta, order=QUAD_ORDER):
    """Unnormalized discounted state visitation (sums to ``1 / (1 - gamma)``)."""
    P, _ = policy_kernel(mdp, theta, order)
    n = mdp.n_states
    return np.linalg.solve((np.eye(n) - mdp.gamma * P).T, mdp.d0)


def state_values(mdp, theta, order=QUAD_ORDER):
    P, r = policy_kernel(mdp, theta, order)
    return np.linalg.solve(np.eye(mdp.n_states) - mdp.gamma * P, r)


def objective(mdp, theta, order=QUAD_ORDER):
    """Expected discounted return from ``d0``."""
    return float(mdp.d0 @ state_values(mdp, theta, order))


def action_value_grad(mdp, theta, s, a, values=None):
    """``dQ/da`` at integer states ``s`` and actions ``a`` for the current policy."""
    if values is None:
        values = state_values(mdp, theta)
    return mdp.reward_grad(s, a) + mdp.gamma * mdp.transition_grad(s, a) @ values


def compatible_targets(mdp, theta, order=QUAD_ORDER):
    """Per-state mean of ``dQ/da`` over the policy noise.

    This is the best compatible critic slope (the minimizer of the mean
    squared action-gradient error); weighted by the discounted visitation it
    gives the policy gradient.
    """
    eps, wts = _nodes(order)
    n = mdp.n_states
    values = state_values(mdp, theta, order)
    s = np.repeat(np.arange(n), eps.size)
    g = action_value_grad(mdp, theta, s, mdp.act(theta, s, np.tile(eps, n)), values)
    return g.reshape(n, eps.size) @ wts


def brute_force_policy_gradient(mdp, theta, order=QUAD_ORDER, check=True):
    """Exact gradient of :func:`objective` from visitation, Bellman solve and quadrature."""
    theta = np.asarray(theta, dtype=np.float64)
    if check:
        _checked_kernel(mdp, theta, order)
    nu = discounted_visitation(mdp, theta, order)
    return nu * compatible_targets(mdp, theta, order)


def features(mdp, theta, s, a):
    """Critic features ``[(a - theta[s]) e_s, e_s]`` for batches of (s, a)."""
    s = np.asarray(s)
    n = mdp.n_states
    phi = np.zeros(s.shape + (2 * n,))
    idx = np.arange(s.size)
    flat = phi.reshape(-1, 2 * n)
    flat[idx, s.ravel()] = (np.asarray(a) - np.asarray(theta)[s]).ravel()
    flat[idx, n + s.ravel()] = 1.0
    return phi


def td_system(mdp, theta, order=QUAD_ORDER):
    """``(A, b)`` of the expected TD update ``A w + b`` under the stationary distribution."""
    eps, wts = _nodes(order)
    n = mdp.n_states
    d = stationary_distribution(mdp, theta, order)
    s = np.repeat(np.arange(n), eps.size)
    a = mdp.act(theta, s, np.tile(eps, n))
    weight = d[s] * np.tile(wts, n)
    phi = features(mdp, theta, s, a)
    # next-action slope features average out (zero-mean noise); only the baseline survives
    next_phi = np.zeros_like(phi)
    next_phi[:, n:] = mdp.transition(s, a)
    A = (phi * weight[:, None]).T @ (mdp.gamma * next_phi - phi)
    b = (phi * weight[:, None]).T @ mdp.reward(s, a)
    return A, b


def td_fixed_point(mdp, theta, order=QUAD_ORDER):
    """Exact TD solution ``w*`` with ``A w* + b = 0``."""
    A, b = td_system(mdp, theta, order)
    if np.linalg.cond(A) > 1e12:
        raise SingularSystemError(
            f"TD matrix is singular (condition number {np.linalg.cond(A):.2e}); "
            "check the features and that every state is visited"
        )
    return np.linalg.solve(A, -b)


def compatible_weights(mdp, theta, order=QUAD_ORDER):
    """Least-squares compatible critic ``w*_xi`` padded with the exact state values."""
    return np.concatenate([compatible_targets(mdp, theta, order), state_values(mdp, theta, order)])


def measure_kappa(mdp, thetas, order=QUAD_ORDER):
    """Largest gap between the TD and least-squares compatible slopes over ``thetas``."""
    n = mdp.n_states
    return max(
        float(np.linalg.norm(td_fixed_point(mdp, th, order)[:n]
                             - compatible_targets(mdp, th, order)))
        for th in thetas
    )


@dataclass
class RpgTdConfig:
    alpha_w: float = 0.1
    alpha_theta: float = 0.05
    M: int = 8
    T: int = 2000
    seed: int = 0
    mode: str = "sampled"  # or "expected"
    quad_order: int = QUAD_ORDER

    def __post_init__(self):
        if self.alpha_w <= 0 or self.alpha_theta < 0:
            raise ValueError("alpha_w must be > 0 and alpha_theta >= 0")
        if int(self.M) < 1:
            raise ValueError("M must be >= 1")
        if self.mode not in ("sampled", "expected"):
            raise ValueError(f"mode must be 'sampled' or 'expected', got {self.mode!r}")


@dataclass
class RpgTdState:
    w: np.ndarray
    theta: np.ndarray
    t: int = 0
    rng: np.random.Generator = field(default_factory=np.random.default_rng, repr=False)


@dataclass
class ExactQuantities:
    stationary: np.ndarray
    visitation: np.ndarray
    w_star: np.ndarray
    grad: np.ndarray


def exact_quantities(mdp, theta, order=QUAD_ORDER):
    return ExactQuantities(
        stationary=stationary_distribution(mdp, theta, order),
        visitation=discounted_visitation(mdp, theta, order),
        w_star=td_fixed_point(mdp, theta, order),
        grad=brute_force_policy_gradient(mdp, theta, order, check=False),
    )


def _sample_states(rng, probs, size):
    return np.minimum(np.searchsorted(np.cumsum(probs), rng.random(size), side="right"),
                      probs.size - 1)


def _sample_next(rng, P):
    u = rng.random(P.shape[0])[:, None]
    return np.minimum((np.cumsum(P, axis=1) < u).sum(axis=1), P.shape[1] - 1)


def sample_critic_update(mdp, theta, w, d, M, rng):
    """Mean of ``delta * phi(x)`` over ``M`` i.i.d. transitions with ``s ~ d``."""
    s = _sample_states(rng, d, M)
    a = mdp.act(theta, s, rng.standard_normal(M))
    s_next = _sample_next(rng, mdp.transition(s, a))
    a_next = mdp.act(theta, s_next, rng.standard_normal(M))
    phi = features(mdp, theta, s, a)
    phi_next = features(mdp, theta, s_next, a_next)
    delta = mdp.reward(s, a) + mdp.gamma * phi_next @ w - phi @ w
    return (delta[:, None] * phi).mean(axis=0)


def sample_actor_update(mdp, theta, w, visitation, M, rng):
    """Mean of ``grad f grad f^T w`` over ``M`` states drawn from the normalized visitation."""
    n = mdp.n_states
    s = _sample_states(rng, visitation / visitation.sum(), M)
    # grad_theta f(s, eps) = e_s whatever eps is, so eps never enters the update
    upd = np.zeros((M, n))
    upd[np.arange(M), s] = w[s]
    return upd.mean(axis=0), upd


def rpg_td_iteration(state, mdp, config, exact=None):
    """One coupled critic/actor step; returns ``(w', theta', diagnostics)``.

    ``exact`` may carry precomputed :class:`ExactQuantities` for ``state.theta``.
    """
    theta, w = state.theta, state.w
    ex = exact if exact is not None else exact_quantities(mdp, theta, config.quad_order)
    n = mdp.n_states
    diag = {
        "t": state.t,
        "grad_norm_sq": float(ex.grad @ ex.grad),
        "tracking_err": float(np.linalg.norm(w - ex.w_star)),
    }
    if config.mode == "expected":
        A, b = td_system(mdp, theta, config.quad_order)
        critic_step = A @ w + b
        nu = ex.visitation / ex.visitation.sum()
        actor_step = nu * w[:n]
    else:
        critic_step = sample_critic_update(mdp, theta, w, ex.stationary, config.M, state.rng)
        actor_step, _ = sample_actor_update(mdp, theta, w, ex.visitation, config.M, state.rng)
    w_new = w + config.alpha_w * critic_step
    theta_new = theta + config.alpha_theta * actor_step
    return w_new, theta_new, diag


def run_testbed(mdp, config, w0=None, theta0=None):
    """Run ``config.T`` iterations; returns one diagnostics row per iteration (plus final)."""
    n = mdp.n_states
    state = RpgTdState(
        w=np.zeros(2 * n) if w0 is None else np.array(w0, dtype=np.float64),
        theta=np.zeros(n) if theta0 is None else np.array(theta0, dtype=np.float64),
        rng=np.random.default_rng(config.seed),
    )
    _checked_kernel(mdp, state.theta, config.quad_order)
    rows = []
    for _ in range(int(config.T)):
        w, theta, diag = rpg_td_iteration(state, mdp, config)
        diag.update(M=int(config.M), seed=int(config.seed))
        rows.append(diag)
        state.w, state.theta, state.t = w, theta, state.t + 1
    ex = exact_quantities(mdp, state.theta, config.quad_order)
    rows.append({"t": state.t, "grad_norm_sq": float(ex.grad @ ex.grad),
                 "tracking_err": float(np.linalg.norm(state.w - ex.w_star)),
                 "M": int(config.M), "seed": int(config.seed)})
    return rows, state


def critic_only(mdp, theta, config, w0=None):
    """Critic iterations with the policy frozen (``alpha_theta`` ignored); fast path."""
    n = mdp.n_states
    theta = np.asarray(theta, dtype=np.float64)
    ex = exact_quantities(mdp, theta, config.quad_order)
    A, b = td_system(mdp, theta, config.quad_order)
    rng = np.random.default_rng(config.seed)
    w = np.zeros(2 * n) if w0 is None else np.array(w0, dtype=np.float64)
    errs = np.empty(int(config.T) + 1)
    for t in range(int(config.T)):
        errs[t] = np.linalg.norm(w - ex.w_star)
        if config.mode == "expected":
            w = w + config.alpha_w * (A @ w + b)
        else:
            w = w + config.alpha_w * sample_critic_update(mdp, theta, w, ex.stationary,
                                                          config.M, rng)
    errs[-1] = np.linalg.norm(w - ex.w_star)
    return errs, w


def min_grad_norm_sq(rows, T=None):
    vals = [r["grad_norm_sq"] for r in rows if T is None or r["t"] <= T]
    return float(min(vals))


def write_csv(rows, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_FIELDS, extrasaction="ignore",
                                lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
