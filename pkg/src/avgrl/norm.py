"""Online normalization statistics and temporal-difference error scaling.

``RunningStat`` holds Welford's running mean and sum of squared deviations.
Internally every lane is shifted by its first observed value before the
recurrences are applied; this changes nothing mathematically but keeps the
accumulators small when the stream sits far from zero (e.g. ``1e9 + noise``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ._validation import NonFiniteError

NORM_MODES = ("zscore", "literal")
STD_EPS = 1e-8
SIGMA_DELTA_FLOOR = 1e-4


@dataclass
class RunningStat:
    """Welford accumulator for a scalar or per-component vector stream.

    ``mode="zscore"`` normalizes by ``sqrt(variance) + 1e-8``;
    ``mode="literal"`` divides by the variance itself (returning 0 while the
    variance is exactly 0).
    """

    shape: tuple = ()
    mode: str = "zscore"
    n: int = 0
    shift: np.ndarray = field(default=None)
    mean_shifted: np.ndarray = field(default=None)
    m2: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.mode not in NORM_MODES:
            raise ValueError(f"mode must be one of {NORM_MODES}, got {self.mode!r}")
        self.shape = tuple(self.shape)
        if self.shift is None:
            self.shift = np.zeros(self.shape)
            self.mean_shifted = np.zeros(self.shape)
            self.m2 = np.zeros(self.shape)

    @property
    def mu(self):
        if self.n == 0:
            return np.zeros(self.shape)
        return self.shift + self.mean_shifted

    @property
    def variance(self):
        """Population variance ``m2 / n`` (0 before any data)."""
        if self.n == 0:
            return np.zeros(self.shape)
        return self.m2 / self.n

    def copy(self):
        return RunningStat(self.shape, self.mode, self.n, self.shift.copy(),
                           self.mean_shifted.copy(), self.m2.copy())

    def normalize(self, x):
        """Normalize ``x`` with the current statistics, without updating them."""
        x = np.asarray(x, dtype=np.float64)
        return self._scale((x - self.shift) - self.mean_shifted, self.variance)

    def _scale(self, centered, variance):
        if self.mode == "zscore":
            return centered / (np.sqrt(variance) + STD_EPS)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(variance > 0, centered / np.where(variance > 0, variance, 1.0), 0.0)
        return out

    def state_arrays(self):
        return {"n": np.array(self.n), "shift": self.shift, "mean_shifted": self.mean_shifted,
                "m2": self.m2}

    def load_arrays(self, arrays):
        self.n = int(arrays["n"])
        self.shift = np.array(arrays["shift"], dtype=np.float64).reshape(self.shape)
        self.mean_shifted = np.array(arrays["mean_shifted"], dtype=np.float64).reshape(self.shape)
        self.m2 = np.array(arrays["m2"], dtype=np.float64).reshape(self.shape)


def welford_update(stat, x):
    """Fold ``x`` into ``stat`` (in place) and normalize it.

    Returns ``(x_norm, stat, variance)``. Non-finite input raises
    :class:`NonFiniteError` and leaves ``stat`` untouched.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != stat.shape:
        raise ValueError(f"expected shape {stat.shape}, got {x.shape}")
    if not np.isfinite(x).all():
        raise NonFiniteError(f"non-finite value in running-stat update: {x!r}")
    if stat.n == 0:
        stat.shift = x.copy()
    stat.n += 1
    xs = x - stat.shift
    delta = xs - stat.mean_shifted
    stat.mean_shifted = stat.mean_shifted + delta / stat.n
    delta2 = xs - stat.mean_shifted
    stat.m2 = stat.m2 + delta * delta2
    variance = stat.m2 / stat.n
    x_norm = stat._scale(delta2, variance)
    if not stat.shape:
        return float(x_norm), stat, float(variance)
    return x_norm, stat, variance


@dataclass
class TdScaleState:
    """Running statistics behind the TD-error scale ``sigma_delta``.

    Tracks rewards, per-step discounts and squared episode returns; ``G`` is
    the undiscounted return of the current episode.
    """

    stat_r: RunningStat = field(default_factory=RunningStat)
    stat_gamma: RunningStat = field(default_factory=RunningStat)
    stat_g2: RunningStat = field(default_factory=RunningStat)
    G: float = 0.0
    sigma_delta: float = 1.0
    floor: float = SIGMA_DELTA_FLOOR

    def begin_episode(self):
        self.G = 0.0

    def copy(self):
        return TdScaleState(self.stat_r.copy(), self.stat_gamma.copy(), self.stat_g2.copy(),
                            self.G, self.sigma_delta, self.floor)

    def state_arrays(self):
        out = {"G": np.array(self.G), "sigma_delta": np.array(self.sigma_delta)}
        for name in ("stat_r", "stat_gamma", "stat_g2"):
            for k, v in getattr(self, name).state_arrays().items():
                out[f"{name}.{k}"] = v
        return out

    def load_arrays(self, arrays):
        self.G = float(arrays["G"])
        self.sigma_delta = float(arrays["sigma_delta"])
        for name in ("stat_r", "stat_gamma", "stat_g2"):
            prefix = name + "."
            getattr(self, name).load_arrays(
                {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)}
            )


def scale_td_update(state, r, gamma_step, terminal_G=None):
    """Update the reward/discount/return statistics and recompute ``sigma_delta``.

    In-episode calls (``terminal_G is None``) also add ``r`` to the running
    episode return ``state.G``. The end-of-episode call passes the episode
    return, whose square enters the return statistics.
    """
    if not 0.0 <= gamma_step <= 1.0:
        raise ValueError(f"gamma_step must lie in [0, 1], got {gamma_step}")
    welford_update(state.stat_r, r)
    welford_update(state.stat_gamma, gamma_step)
    if terminal_G is not None:
        welford_update(state.stat_g2, float(terminal_G) ** 2)
    else:
        state.G += float(r)
    if state.stat_g2.n > 1:
        var_r = float(state.stat_r.variance)
        var_gamma = float(state.stat_gamma.variance)
        mean_g2 = float(state.stat_g2.mu)
        state.sigma_delta = max(math.sqrt(var_r + mean_g2 * var_gamma), state.floor)
    else:
        state.sigma_delta = 1.0
    return state.sigma_delta, state


def scale(delta, sigma_delta):
    if sigma_delta <= 0:
        raise ValueError(f"sigma_delta must be > 0, got {sigma_delta}")
    return delta / sigma_delta


class OnlineStandardizer(TransformerMixin, BaseEstimator):
    """Streaming per-feature z-scoring backed by :class:`RunningStat`.

    ``partial_fit`` folds rows into the statistics one at a time, so feeding a
    batch gives exactly the state of the equivalent incremental stream.

    Parameters
    ----------
    mode : {"zscore", "literal"}, default="zscore"
        Denominator used by :meth:`transform`.
    """

    def __init__(self, mode="zscore"):
        self.mode = mode

    def partial_fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        if not hasattr(self, "stat_"):
            self.stat_ = RunningStat((X.shape[1],), self.mode)
            self.n_features_in_ = X.shape[1]
        elif X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, but {type(self).__name__} "
                f"is expecting {self.n_features_in_} features as input"
            )
        for row in X:
            welford_update(self.stat_, row)
        return self

    def fit(self, X, y=None):
        if hasattr(self, "stat_"):
            del self.stat_
        return self.partial_fit(X, y)

    def transform(self, X):
        check_is_fitted(self, "stat_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, but {type(self).__name__} "
                f"is expecting {self.n_features_in_} features as input"
            )
        return self.stat_.normalize(X)

    @property
    def mean_(self):
        check_is_fitted(self, "stat_")
        return self.stat_.mu

    @property
    def var_(self):
        check_is_fitted(self, "stat_")
        return self.stat_.variance
