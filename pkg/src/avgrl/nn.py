"""Small reverse-mode differentiable MLPs with an Adam optimizer.

Parameters of a network live in one flat float64 vector (:class:`ParamBundle`)
so that optimizers, Polyak averaging and checkpointing all operate on a single
array. :func:`forward` records the activations needed by the two backward
passes, :func:`grad_wrt_params` and :func:`grad_wrt_input`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from ._validation import NonFiniteError, check_vector

ACTIVATIONS = ("leaky_relu", "relu", "tanh", "identity")
FEATURE_NORMS = ("none", "pnorm", "layer_norm", "rms_norm")
INITS = ("orthogonal", "uniform_fan_in")

LEAKY_SLOPE = 0.01
PNORM_MIN_NORM = 1e-8
NORM_EPS = 1e-8  # variance floor for layer_norm / rms_norm
LOG_STD_MIN = -10.0
LOG_STD_MAX = 2.0


@dataclass(frozen=True)
class MlpSpec:
    """Architecture of a fully connected network.

    ``feature_norm`` is applied to the post-activation output of the last
    hidden layer only (the features feeding the linear output layer).
    """

    input_dim: int
    output_dim: int
    hidden_dims: tuple = (256, 256)
    activation: str = "leaky_relu"
    feature_norm: str = "none"
    init: str = "orthogonal"
    hidden_gain: float = math.sqrt(2.0)
    output_gain: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        if any(int(d) < 1 for d in dims):
            raise ValueError(f"all layer sizes must be >= 1, got {dims}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")
        if self.feature_norm not in FEATURE_NORMS:
            raise ValueError(
                f"feature_norm must be one of {FEATURE_NORMS}, got {self.feature_norm!r}"
            )
        if self.feature_norm != "none" and not self.hidden_dims:
            raise ValueError("feature_norm needs at least one hidden layer")
        if self.init not in INITS:
            raise ValueError(f"init must be one of {INITS}, got {self.init!r}")

    @property
    def layer_dims(self):
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        return list(zip(dims[:-1], dims[1:]))

    @cached_property
    def layout(self):
        return make_layout(self)


@dataclass(frozen=True)
class LayerLayout:
    rows: int
    cols: int
    offset: int

    @property
    def bias_offset(self):
        return self.offset + self.rows * self.cols

    @property
    def size(self):
        return self.rows * (self.cols + 1)


def make_layout(spec):
    layout, offset = [], 0
    for fan_in, fan_out in spec.layer_dims:
        rec = LayerLayout(rows=fan_out, cols=fan_in, offset=offset)
        layout.append(rec)
        offset += rec.size
    return tuple(layout)


class ParamBundle:
    """Flat parameter vector plus per-layer ``(rows, cols, offset)`` records.

    ``weights[i]`` and ``biases[i]`` are views into ``values``; update
    ``values`` in place to keep them valid.
    """

    def __init__(self, values, layout):
        self.values = np.ascontiguousarray(values, dtype=np.float64)
        self.layout = tuple(layout)
        expected = sum(rec.size for rec in self.layout)
        if self.values.shape != (expected,):
            raise ValueError(
                f"parameter vector has shape {self.values.shape}, layout needs ({expected},)"
            )
        self.weights = [
            self.values[r.offset : r.bias_offset].reshape(r.rows, r.cols) for r in self.layout
        ]
        self.biases = [self.values[r.bias_offset : r.offset + r.size] for r in self.layout]

    def __len__(self):
        return self.values.shape[0]

    def copy(self):
        return ParamBundle(self.values.copy(), self.layout)

    def assign(self, other):
        """Copy ``other``'s values into this bundle without reallocating."""
        self.values[...] = other.values if isinstance(other, ParamBundle) else other


def orthogonal_init(rng, rows, cols, gain=1.0):
    """Random matrix with orthonormal columns (or rows) scaled by ``gain``."""
    big, small = max(rows, cols), min(rows, cols)
    a = rng.standard_normal((big, small))
    q, r = np.linalg.qr(a)
    d = np.sign(np.diag(r))
    d[d == 0] = 1.0
    q = q * d
    if rows < cols:
        q = q.T
    return gain * q


def init_params(spec, rng):
    layout = spec.layout
    bundle = ParamBundle(np.zeros(sum(r.size for r in layout)), layout)
    n_layers = len(layout)
    for i, rec in enumerate(layout):
        if spec.init == "orthogonal":
            gain = spec.output_gain if i == n_layers - 1 else spec.hidden_gain
            bundle.weights[i][...] = orthogonal_init(rng, rec.rows, rec.cols, gain)
        else:
            bound = 1.0 / math.sqrt(rec.cols)
            bundle.weights[i][...] = rng.uniform(-bound, bound, size=(rec.rows, rec.cols))
            bundle.biases[i][...] = rng.uniform(-bound, bound, size=rec.rows)
    return bundle


def _activate(name, z):
    if name == "leaky_relu":
        return np.maximum(z, LEAKY_SLOPE * z)
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return z


def _activation_grad(name, z, h, g):
    if name == "leaky_relu":
        return np.where(z > 0, g, LEAKY_SLOPE * g)
    if name == "relu":
        return np.where(z > 0, g, 0.0)
    if name == "tanh":
        return g * (1.0 - h * h)
    return g


def normalize_features(kind, psi):
    """Forward pass of a feature normalization; returns ``(out, scale)``."""
    if kind == "pnorm":
        scale = max(math.sqrt(float(psi @ psi)), PNORM_MIN_NORM)
        return psi / scale, scale
    if kind == "layer_norm":
        centered = psi - psi.mean()
        scale = math.sqrt(float(centered @ centered) / psi.shape[0] + NORM_EPS)
        return centered / scale, scale
    if kind == "rms_norm":
        scale = math.sqrt(float(psi @ psi) / psi.shape[0] + NORM_EPS)
        return psi / scale, scale
    return psi, 1.0


def normalize_features_grad(kind, psi, out, scale, g):
    """Vector-Jacobian product of :func:`normalize_features`."""
    if kind == "pnorm":
        if scale == PNORM_MIN_NORM:
            return g / scale
        return (g - out * float(out @ g)) / scale
    if kind == "layer_norm":
        n = psi.shape[0]
        return (g - g.mean() - out * (float(out @ g) / n)) / scale
    if kind == "rms_norm":
        n = psi.shape[0]
        return (g - out * (float(out @ g) / n)) / scale
    return g


@dataclass
class Tape:
    """Activations recorded by :func:`forward` for one input."""

    spec: MlpSpec
    params: ParamBundle
    layer_inputs: list  # input to each linear layer; last entry is the normalized feature
    pre_activations: list  # hidden-layer pre-activations
    hidden_outputs: list  # hidden-layer post-activations (before feature norm)
    feature_scale: float = 1.0
    output: np.ndarray = field(default=None, repr=False)


def forward(params, spec, x, check=True):
    """Evaluate the network on a single input vector.

    Returns ``(output, tape)``.
    """
    if check:
        x = check_vector(x, spec.input_dim, "network input")
    _check_structure(params, spec)
    h = x
    layer_inputs, pre, post = [], [], []
    n_hidden = len(spec.hidden_dims)
    for i in range(n_hidden):
        layer_inputs.append(h)
        z = params.weights[i] @ h + params.biases[i]
        h = _activate(spec.activation, z)
        pre.append(z)
        post.append(h)
    scale = 1.0
    if n_hidden and spec.feature_norm != "none":
        h, scale = normalize_features(spec.feature_norm, h)
    layer_inputs.append(h)
    out = params.weights[-1] @ h + params.biases[-1]
    return out, Tape(spec, params, layer_inputs, pre, post, scale, out)


def _check_structure(params, spec):
    if params.layout is not spec.layout and params.layout != spec.layout:
        raise ValueError("parameter layout does not match the network spec")


def _backward(tape, upstream, want_params, want_input):
    spec, params = tape.spec, tape.params
    if len(params.values) != sum(r.size for r in params.layout) or len(params.layout) != len(
        tape.layer_inputs
    ):
        raise ValueError("tape does not match its parameter bundle")
    g = check_vector(upstream, spec.output_dim, "upstream gradient")
    grad = np.empty_like(params.values) if want_params else None
    n_hidden = len(spec.hidden_dims)
    last = n_hidden
    if want_params:
        np.multiply.outer(g, tape.layer_inputs[last], out=_weight_view(grad, params.layout[last]))
        _bias_view(grad, params.layout[last])[...] = g
    if not want_input and n_hidden == 0:
        return grad, None
    g = params.weights[last].T @ g
    if n_hidden and spec.feature_norm != "none":
        g = normalize_features_grad(
            spec.feature_norm,
            tape.hidden_outputs[-1],
            tape.layer_inputs[last],
            tape.feature_scale,
            g,
        )
    for i in range(n_hidden - 1, -1, -1):
        g = _activation_grad(spec.activation, tape.pre_activations[i], tape.hidden_outputs[i], g)
        if want_params:
            np.multiply.outer(g, tape.layer_inputs[i], out=_weight_view(grad, params.layout[i]))
            _bias_view(grad, params.layout[i])[...] = g
        if i > 0 or want_input:
            g = params.weights[i].T @ g
    return grad, (g if want_input else None)


def _weight_view(flat, rec):
    return flat[rec.offset : rec.bias_offset].reshape(rec.rows, rec.cols)


def _bias_view(flat, rec):
    return flat[rec.bias_offset : rec.offset + rec.size]


def grad_wrt_params(tape, upstream):
    """Gradient of ``upstream . output`` with respect to the flat parameters."""
    return _backward(tape, upstream, True, False)[0]


def grad_wrt_input(tape, upstream):
    """Gradient of ``upstream . output`` with respect to the network input."""
    return _backward(tape, upstream, False, True)[1]


def grad_wrt_params_and_input(tape, upstream):
    return _backward(tape, upstream, True, True)


def split_policy_head(output):
    """Split an actor output into ``(mean, log_std, log_std_active)``.

    ``log_std`` is clamped to ``[LOG_STD_MIN, LOG_STD_MAX]``; the boolean mask
    marks entries where the clamp is inactive (where gradient flows).
    """
    d = output.shape[0] // 2
    mean = output[:d]
    raw = output[d:]
    log_std = np.clip(raw, LOG_STD_MIN, LOG_STD_MAX)
    active = (raw >= LOG_STD_MIN) & (raw <= LOG_STD_MAX)
    return mean, log_std, active


@dataclass
class AdamState:
    """Adam moments. ``raw_sgd`` turns the update into ``p -= lr * g``."""

    m: np.ndarray
    v: np.ndarray
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    raw_sgd: bool = False

    @classmethod
    def zeros(cls, n, lr, beta1=0.9, beta2=0.999, eps=1e-8, raw_sgd=False):
        return cls(np.zeros(n), np.zeros(n), float(lr), float(beta1), float(beta2), eps,
                   0, raw_sgd)

    def copy(self):
        return AdamState(self.m.copy(), self.v.copy(), self.lr, self.beta1, self.beta2,
                         self.eps, self.t, self.raw_sgd)


def adam_step(state, params, gradient, direction="descent"):
    """Apply one Adam update to ``params`` in place.

    ``direction="ascent"`` maximizes instead of minimizing. A non-finite
    gradient raises :class:`NonFiniteError` and leaves both arguments untouched.
    """
    g = np.asarray(gradient, dtype=np.float64)
    if g.shape != params.values.shape:
        raise ValueError(f"gradient shape {g.shape} != parameter shape {params.values.shape}")
    if not np.isfinite(g).all():
        raise NonFiniteError("non-finite gradient; update refused")
    if direction not in ("ascent", "descent"):
        raise ValueError(f"direction must be 'ascent' or 'descent', got {direction!r}")
    sign = -1.0 if direction == "ascent" else 1.0
    with np.errstate(over="ignore"):
        g_sq = g * g
    if not state.raw_sgd and not np.isfinite(g_sq).all():
        raise NonFiniteError("squared gradient overflows; update refused")
    state.t += 1
    if state.raw_sgd:
        params.values -= (sign * state.lr) * g
        return params, state
    b1, b2 = state.beta1, state.beta2
    if b1 == 0.0:
        np.multiply(g, sign, out=state.m)
    else:
        state.m *= b1
        state.m += (sign * (1.0 - b1)) * g
    state.v *= b2
    state.v += (1.0 - b2) * g_sq
    bc1 = 1.0 - b1**state.t
    bc2 = 1.0 - b2**state.t
    denom = np.sqrt(state.v)
    denom /= math.sqrt(bc2)
    denom += state.eps
    np.divide(state.m, denom, out=denom)
    denom *= state.lr / bc1
    params.values -= denom
    return params, state


def polyak_update(target, source, tau):
    """``target <- (1 - tau) * target + tau * source`` in place."""
    target.values *= 1.0 - tau
    target.values += tau * source.values
    return target
