import math
import zlib

import numpy as np
import pytest

from avgrl._validation import NonFiniteError
from avgrl.nn import (
    FEATURE_NORMS,
    NORM_EPS,
    AdamState,
    LayerLayout,
    MlpSpec,
    ParamBundle,
    adam_step,
    forward,
    grad_wrt_input,
    grad_wrt_params,
    init_params,
    make_layout,
    normalize_features,
    normalize_features_grad,
    orthogonal_init,
    polyak_update,
    split_policy_head,
)

from conftest import central_diff, rel_err


def single_layer(W, b=None, activation="identity"):
    W = np.asarray(W, dtype=np.float64)
    spec = MlpSpec(W.shape[1], W.shape[0], hidden_dims=(), activation=activation)
    bias = np.zeros(W.shape[0]) if b is None else np.asarray(b, dtype=np.float64)
    return spec, ParamBundle(np.concatenate([W.ravel(), bias]), make_layout(spec))


class TestOrthogonalInit:
    def test_square(self, rng):
        W = orthogonal_init(rng, 4, 4, 1.0)
        np.testing.assert_allclose(W.T @ W, np.eye(4), atol=1e-10)

    def test_tall_with_gain(self, rng):
        W = orthogonal_init(rng, 256, 8, 1.41)
        assert W.shape == (256, 8)
        np.testing.assert_allclose(W.T @ W, 1.41**2 * np.eye(8), atol=1e-9)

    def test_wide(self, rng):
        W = orthogonal_init(rng, 3, 7, 2.0)
        np.testing.assert_allclose(W @ W.T, 4.0 * np.eye(3), atol=1e-10)

    def test_scalar_is_unit(self, rng):
        W = orthogonal_init(rng, 1, 1, 1.0)
        assert abs(abs(W[0, 0]) - 1.0) < 1e-15

    def test_seeded(self):
        a = orthogonal_init(np.random.default_rng(3), 5, 2)
        b = orthogonal_init(np.random.default_rng(3), 5, 2)
        assert np.array_equal(a, b)

    def test_network_gains(self, rng):
        spec = MlpSpec(5, 3, hidden_dims=(8, 6))
        p = init_params(spec, rng)
        W0, W1, W2 = p.weights
        np.testing.assert_allclose(W0.T @ W0, 2.0 * np.eye(5), atol=1e-10)
        np.testing.assert_allclose(W1 @ W1.T, 2.0 * np.eye(6), atol=1e-10)
        np.testing.assert_allclose(W2 @ W2.T, np.eye(3), atol=1e-10)
        assert all(not b.any() for b in p.biases)


class TestLayout:
    def test_contiguous(self):
        spec = MlpSpec(3, 2, hidden_dims=(4, 5))
        layout = make_layout(spec)
        offset = 0
        for rec in layout:
            assert rec.offset == offset
            offset += rec.size
        assert offset == 3 * 4 + 4 + 4 * 5 + 5 + 5 * 2 + 2

    def test_wrong_length_rejected(self):
        spec = MlpSpec(3, 2, hidden_dims=(4,))
        with pytest.raises(ValueError, match="layout needs"):
            ParamBundle(np.zeros(5), make_layout(spec))

    def test_mismatched_tape_structure(self, rng):
        a = MlpSpec(3, 2, hidden_dims=(4,))
        b = MlpSpec(3, 2, hidden_dims=(5,))
        with pytest.raises(ValueError):
            forward(init_params(a, rng), b, np.zeros(3))

    def test_bad_spec(self):
        with pytest.raises(ValueError, match="activation"):
            MlpSpec(2, 2, activation="gelu")
        with pytest.raises(ValueError, match=">= 1"):
            MlpSpec(0, 2)


class TestForward:
    def test_zero_weights(self):
        spec = MlpSpec(3, 2, hidden_dims=(4,))
        p = ParamBundle(np.zeros(len(init_params(spec, np.random.default_rng(0)))),
                        make_layout(spec))
        out, _ = forward(p, spec, np.array([1.0, -2.0, 3.0]))
        assert np.array_equal(out, np.zeros(2))

    def test_identity_layer(self):
        spec, p = single_layer(np.eye(3))
        x = np.array([0.3, -1.0, 2.0])
        out, _ = forward(p, spec, x)
        assert np.array_equal(out, x)

    def test_nonfinite_input_names_index(self, rng):
        spec = MlpSpec(3, 1, hidden_dims=(4,))
        with pytest.raises(NonFiniteError, match="index 1"):
            forward(init_params(spec, rng), spec, np.array([0.0, np.nan, 1.0]))

    def test_wrong_input_length(self, rng):
        spec = MlpSpec(3, 1, hidden_dims=(4,))
        with pytest.raises(ValueError):
            forward(init_params(spec, rng), spec, np.zeros(4))

    def test_replay_is_bit_exact(self, rng):
        spec = MlpSpec(4, 2, hidden_dims=(8, 8), feature_norm="pnorm")
        p = init_params(spec, rng)
        x = rng.standard_normal(4)
        o1, t1 = forward(p, spec, x)
        o2, t2 = forward(p, spec, x)
        assert np.array_equal(o1, o2)
        for a, b in zip(t1.hidden_outputs, t2.hidden_outputs):
            assert np.array_equal(a, b)

    @pytest.mark.parametrize("kind", ["pnorm", "layer_norm", "rms_norm"])
    def test_feature_norm_invariants(self, kind, rng):
        spec = MlpSpec(4, 2, hidden_dims=(16, 12), feature_norm=kind)
        p = init_params(spec, rng)
        for _ in range(20):
            _, tape = forward(p, spec, rng.standard_normal(4))
            feat, psi = tape.layer_inputs[-1], tape.hidden_outputs[-1]
            if kind == "pnorm":
                assert abs(np.linalg.norm(feat) - 1.0) < 1e-12
            elif kind == "layer_norm":
                v = psi.var()
                assert abs(feat.mean()) < 1e-12
                assert abs(feat.var() - v / (v + NORM_EPS)) < 1e-12
            else:
                ms = np.mean(psi**2)
                assert abs(np.mean(feat**2) - ms / (ms + NORM_EPS)) < 1e-12


class TestFeatureNorm:
    def test_pnorm_example(self):
        out, scale = normalize_features("pnorm", np.array([3.0, 4.0]))
        np.testing.assert_allclose(out, [0.6, 0.8], rtol=0, atol=1e-15)
        assert scale == 5.0

    def test_pnorm_jacobian_row(self):
        psi = np.array([3.0, 4.0])
        out, scale = normalize_features("pnorm", psi)
        g = normalize_features_grad("pnorm", psi, out, scale, np.array([1.0, 0.0]))
        np.testing.assert_allclose(g, [0.128, -0.096], atol=1e-15)

    def test_pnorm_zero_vector_is_finite(self):
        out, scale = normalize_features("pnorm", np.zeros(3))
        assert np.array_equal(out, np.zeros(3))
        assert scale == 1e-8


class TestGradients:
    def test_linear_param_grad(self):
        W = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
        spec, p = single_layer(W)
        x = np.array([0.5, -1.5])
        _, tape = forward(p, spec, x)
        g = grad_wrt_params(tape, np.array([0.0, 1.0, 0.0]))
        gW = g[: W.size].reshape(W.shape)
        assert np.array_equal(gW[1], x)
        assert not gW[0].any() and not gW[2].any()
        assert np.array_equal(g[W.size:], [0.0, 1.0, 0.0])

    def test_linear_input_grad(self):
        W = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
        spec, p = single_layer(W)
        _, tape = forward(p, spec, np.array([0.1, 0.2]))
        u = np.array([1.0, -1.0, 2.0])
        assert np.array_equal(grad_wrt_input(tape, u), W.T @ u)

    def test_constant_network_has_zero_input_grad(self):
        spec = MlpSpec(3, 1, hidden_dims=(4,))
        layout = make_layout(spec)
        values = np.zeros(sum(r.size for r in layout))
        p = ParamBundle(values, layout)
        p.biases[-1][...] = 7.0
        _, tape = forward(p, spec, np.ones(3))
        assert not grad_wrt_input(tape, np.ones(1)).any()

    @pytest.mark.parametrize("norm", FEATURE_NORMS)
    @pytest.mark.parametrize("activation", ["leaky_relu", "tanh"])
    def test_finite_differences(self, norm, activation):
        rng = np.random.default_rng(zlib.crc32(f"{norm}/{activation}".encode()))
        worst_p = worst_x = 0.0
        for _ in range(20):
            spec = MlpSpec(3, 2, hidden_dims=(5, 4), activation=activation, feature_norm=norm)
            p = init_params(spec, rng)
            p.values += 0.1 * rng.standard_normal(len(p))
            x = rng.standard_normal(3)
            u = rng.standard_normal(2)
            _, tape = forward(p, spec, x)
            if activation == "leaky_relu" and min(np.abs(z).min() for z in tape.pre_activations) < 1e-4:
                continue

            def f_params(v):
                return float(u @ forward(ParamBundle(v, p.layout), spec, x)[0])

            def f_input(z):
                return float(u @ forward(p, spec, z)[0])

            worst_p = max(worst_p, rel_err(grad_wrt_params(tape, u), central_diff(f_params, p.values)))
            worst_x = max(worst_x, rel_err(grad_wrt_input(tape, u), central_diff(f_input, x)))
        assert worst_p < 1e-5
        assert worst_x < 1e-5


class TestPolicyHead:
    def test_split_and_clamp(self):
        mean, log_std, active = split_policy_head(np.array([0.5, -0.5, 3.0, -12.0]))
        assert np.array_equal(mean, [0.5, -0.5])
        assert np.array_equal(log_std, [2.0, -10.0])
        assert not active.any()

    def test_inside_range_active(self):
        _, log_std, active = split_policy_head(np.array([0.0, -1.0]))
        assert log_std[0] == -1.0 and active[0]


class TestAdam:
    def test_first_step_is_lr(self):
        lr = 1e-3
        st = AdamState.zeros(1, lr, beta1=0.0, beta2=0.999)
        p = ParamBundle(np.array([0.0]), (LayerLayout(1, 0, 0),))
        adam_step(st, p, np.array([1.0]))
        # m_hat = 1, v_hat = 1 after bias correction
        expected = -lr * 1.0 / (1.0 + 1e-8)
        assert abs(p.values[0] - expected) < 1e-18
        assert st.t == 1

    def test_closed_form_two_steps(self):
        lr, b1, b2, eps = 0.01, 0.9, 0.999, 1e-8
        st = AdamState.zeros(2, lr, b1, b2, eps)
        p = ParamBundle(np.array([1.0, -1.0]), (LayerLayout(2, 0, 0),))
        g1, g2 = np.array([0.5, -2.0]), np.array([1.5, 0.25])
        adam_step(st, p, g1)
        adam_step(st, p, g2)
        x = np.array([1.0, -1.0])
        m = v = 0.0
        for t, g in enumerate((g1, g2), start=1):
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            x = x - lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
        np.testing.assert_allclose(p.values, x, rtol=1e-14)

    def test_ascent_is_negated_descent(self):
        a = ParamBundle(np.array([0.3, 0.4]), (LayerLayout(2, 0, 0),))
        b = a.copy()
        g = np.array([1.0, -3.0])
        adam_step(AdamState.zeros(2, 0.1), a, g, "ascent")
        adam_step(AdamState.zeros(2, 0.1), b, -g, "descent")
        assert np.array_equal(a.values, b.values)

    def test_zero_gradient(self):
        p = ParamBundle(np.array([0.3]), (LayerLayout(1, 0, 0),))
        st = AdamState.zeros(1, 0.1)
        adam_step(st, p, np.zeros(1))
        assert p.values[0] == 0.3 and st.t == 1

    def test_nonfinite_refused(self):
        p = ParamBundle(np.array([0.3]), (LayerLayout(1, 0, 0),))
        st = AdamState.zeros(1, 0.1)
        with pytest.raises(NonFiniteError):
            adam_step(st, p, np.array([np.inf]))
        assert p.values[0] == 0.3 and st.t == 0 and st.m[0] == 0.0

    def test_second_moment_overflow_refused(self):
        p = ParamBundle(np.array([0.3]), (LayerLayout(1, 0, 0),))
        st = AdamState.zeros(1, 0.1)
        with pytest.raises(NonFiniteError, match="overflow"):
            adam_step(st, p, np.array([1e200]))
        assert st.t == 0 and st.v[0] == 0.0

    def test_raw_sgd(self):
        p = ParamBundle(np.array([1.0]), (LayerLayout(1, 0, 0),))
        adam_step(AdamState.zeros(1, 0.5, raw_sgd=True), p, np.array([2.0]), "ascent")
        assert p.values[0] == 2.0

    def test_deterministic(self, rng):
        spec = MlpSpec(2, 1, hidden_dims=(3,))
        base = init_params(spec, rng)
        g = rng.standard_normal(len(base))
        outs = []
        for _ in range(2):
            p, st = base.copy(), AdamState.zeros(len(base), 0.01)
            for _ in range(3):
                adam_step(st, p, g)
            outs.append(p.values)
        assert np.array_equal(outs[0], outs[1])


def test_polyak_scalar_probe():
    target = ParamBundle(np.array([0.0]), (LayerLayout(1, 0, 0),))
    source = ParamBundle(np.array([1.0]), (LayerLayout(1, 0, 0),))
    polyak_update(target, source, 0.005)
    assert target.values[0] == 0.005
    polyak_update(target, source, 1.0)
    assert target.values[0] == 1.0


def test_sqrt2_default_gain():
    assert MlpSpec(1, 1).hidden_gain == math.sqrt(2.0)
