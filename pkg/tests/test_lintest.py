import csv

import numpy as np
import pytest
from scipy import linalg

from avgrl.lintest import (
    CSV_FIELDS,
    NonErgodicError,
    QuadratureError,
    RpgTdConfig,
    RpgTdState,
    SingularSystemError,
    SmallMdp,
    brute_force_policy_gradient,
    compatible_targets,
    compatible_weights,
    critic_only,
    default_mdp,
    discounted_visitation,
    exact_quantities,
    features,
    measure_kappa,
    objective,
    policy_kernel,
    rpg_td_iteration,
    run_testbed,
    sample_actor_update,
    sample_critic_update,
    stationary_distribution,
    stationary_from_matrix,
    td_fixed_point,
    td_system,
    write_csv,
)

THETA = np.array([0.3, -0.2, 0.1])


@pytest.fixture(scope="module")
def mdp():
    return default_mdp()


class TestStationary:
    def test_symmetric_swap(self):
        d = stationary_from_matrix([[0.5, 0.5], [0.5, 0.5]])
        np.testing.assert_allclose(d, [0.5, 0.5], atol=1e-12)

    def test_absorbing(self):
        d = stationary_from_matrix([[1.0, 0.0], [0.3, 0.7]], start=[0.0, 1.0])
        np.testing.assert_allclose(d, [1.0, 0.0], atol=1e-10)

    def test_eigen_oracle(self):
        rng = np.random.default_rng(5)
        for _ in range(5):
            P = rng.random((3, 3))
            P /= P.sum(axis=1, keepdims=True)
            vals, vecs = linalg.eig(P.T)
            v = np.real(vecs[:, np.argmin(np.abs(vals - 1.0))])
            np.testing.assert_allclose(stationary_from_matrix(P), v / v.sum(), atol=1e-11)

    def test_periodic_chain_rejected(self):
        with pytest.raises(NonErgodicError):
            stationary_from_matrix([[0.0, 1.0], [1.0, 0.0]], start=[1.0, 0.0])

    def test_rows_must_sum_to_one(self):
        with pytest.raises(ValueError):
            stationary_from_matrix([[0.5, 0.4], [0.5, 0.5]])

    def test_policy_kernel_rows(self, mdp):
        P, r = policy_kernel(mdp, THETA)
        np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-12)
        assert (np.abs(r) <= mdp.r_max).all()

    def test_stationary_is_fixed_point(self, mdp):
        P, _ = policy_kernel(mdp, THETA)
        d = stationary_distribution(mdp, THETA)
        assert abs(d.sum() - 1) < 1e-12
        np.testing.assert_allclose(d @ P, d, atol=1e-11)

    def test_visitation_mass(self, mdp):
        assert discounted_visitation(mdp, THETA).sum() == pytest.approx(1 / (1 - mdp.gamma), rel=1e-12)


class TestPolicyGradient:
    def test_matches_finite_differences(self, mdp):
        grad = brute_force_policy_gradient(mdp, THETA)
        h = 1e-5
        for i in range(3):
            e = np.zeros(3)
            e[i] = h
            fd = (objective(mdp, THETA + e) - objective(mdp, THETA - e)) / (2 * h)
            assert abs(grad[i] - fd) < 1e-4 * max(1.0, abs(fd))
            assert abs(grad[i] - fd) < 1e-8

    def test_action_independent_world(self):
        flat = SmallMdp(logits=np.zeros((3, 3)), coupling=np.zeros((3, 3)),
                        bump_height=[1.0, 2.0, 3.0], bump_center=[0, 0, 0], bump_width=1e6)
        np.testing.assert_allclose(brute_force_policy_gradient(flat, THETA), 0.0, atol=1e-10)

    def test_linear_in_rewards(self, mdp):
        scaled = default_mdp()
        scaled.bump_height = scaled.bump_height * 3.5
        np.testing.assert_allclose(brute_force_policy_gradient(scaled, THETA),
                                   3.5 * brute_force_policy_gradient(mdp, THETA), rtol=1e-12)

    def test_quadrature_refusal(self):
        sharp = default_mdp()
        sharp.bump_width = 0.01
        with pytest.raises(QuadratureError, match="raise the order"):
            brute_force_policy_gradient(sharp, THETA, order=8)


class TestCritic:
    def test_feature_layout(self, mdp):
        phi = features(mdp, THETA, np.array([1, 2]), np.array([0.5, 0.0]))
        np.testing.assert_allclose(phi[0], [0, 0.5 + 0.2, 0, 0, 1, 0])
        np.testing.assert_allclose(phi[1], [0, 0, -0.1, 0, 0, 1])

    def test_fixed_point_solves_system(self, mdp):
        A, b = td_system(mdp, THETA)
        w = td_fixed_point(mdp, THETA)
        np.testing.assert_allclose(A @ w + b, 0.0, atol=1e-12)

    def test_kappa_is_negligible(self, mdp):
        thetas = np.random.default_rng(0).uniform(-1, 1, (5, 3))
        assert measure_kappa(mdp, thetas) < 1e-10

    def test_fixed_point_equals_compatible(self, mdp):
        np.testing.assert_allclose(td_fixed_point(mdp, THETA), compatible_weights(mdp, THETA),
                                   atol=1e-10)

    def test_singular_system(self, mdp, monkeypatch):
        import avgrl.lintest as lt

        monkeypatch.setattr(lt, "td_system", lambda *a, **k: (np.zeros((6, 6)), np.ones(6)))
        with pytest.raises(SingularSystemError):
            lt.td_fixed_point(mdp, THETA)

    def test_mean_update_vanishes_at_fixed_point(self, mdp):
        ex = exact_quantities(mdp, THETA)
        rng = np.random.default_rng(1)
        norms = {}
        for M in (100, 10_000):
            reps = np.array([sample_critic_update(mdp, THETA, ex.w_star, ex.stationary, M, rng)
                             for _ in range(40)])
            norms[M] = np.linalg.norm(reps.mean(axis=0))
            spread = reps.std(axis=0, ddof=1).max()
            assert norms[M] < 5 * spread / np.sqrt(40) * np.sqrt(6)
        assert norms[10_000] < norms[100]

    def test_expected_critic_contracts(self, mdp):
        errs, _ = critic_only(mdp, THETA, RpgTdConfig(mode="expected", T=3000, alpha_w=0.5))
        assert errs[-1] < 1e-10 * errs[0]
        ratios = errs[1:300] / errs[:299]
        assert ratios.max() < 1.0

    def test_sampled_critic_tracks(self, mdp):
        errs, _ = critic_only(mdp, THETA, RpgTdConfig(T=3000, M=8))
        assert errs[1000:].mean() < 0.25 * errs[0]


class TestIteration:
    def test_zero_actor_rate_freezes_policy(self, mdp):
        rows, state = run_testbed(mdp, RpgTdConfig(alpha_theta=0.0, T=20), theta0=THETA)
        np.testing.assert_array_equal(state.theta, THETA)
        assert rows[-1]["tracking_err"] < rows[0]["tracking_err"]

    def test_compatible_actor_update_is_gradient(self, mdp):
        ex = exact_quantities(mdp, THETA)
        w = compatible_weights(mdp, THETA)
        _, upd = sample_actor_update(mdp, THETA, w, ex.visitation, 20_000, np.random.default_rng(3))
        scaled = upd * ex.visitation.sum()
        mean = scaled.mean(axis=0)
        se = scaled.std(axis=0, ddof=1) / np.sqrt(len(scaled))
        assert (np.abs(mean - ex.grad) < 4 * se + 1e-12).all()

    def test_expected_mode_ascends(self, mdp):
        rows, _ = run_testbed(mdp, RpgTdConfig(mode="expected", T=300, alpha_theta=0.2))
        assert rows[-1]["grad_norm_sq"] < rows[0]["grad_norm_sq"]

    def test_iteration_is_seeded(self, mdp):
        cfg = RpgTdConfig(T=15, seed=4)
        assert run_testbed(mdp, cfg)[0] == run_testbed(mdp, cfg)[0]

    def test_single_step_diagnostics(self, mdp):
        state = RpgTdState(w=np.zeros(6), theta=THETA.copy(), rng=np.random.default_rng(0))
        w, theta, diag = rpg_td_iteration(state, mdp, RpgTdConfig())
        assert diag["t"] == 0 and diag["tracking_err"] == pytest.approx(
            np.linalg.norm(td_fixed_point(mdp, THETA)))
        assert w.shape == (6,) and np.array_equal(theta, THETA)  # w starts at 0

    def test_csv(self, mdp, tmp_path):
        rows, _ = run_testbed(mdp, RpgTdConfig(T=5))
        write_csv(rows, tmp_path / "r.csv")
        with open(tmp_path / "r.csv") as fh:
            back = list(csv.DictReader(fh))
        assert tuple(back[0]) == CSV_FIELDS and len(back) == 6

    def test_config_validation(self):
        with pytest.raises(ValueError):
            RpgTdConfig(M=0)
        with pytest.raises(ValueError):
            RpgTdConfig(alpha_w=0)
        with pytest.raises(ValueError):
            RpgTdConfig(mode="exact")

    def test_mdp_validation(self):
        with pytest.raises(ValueError):
            SmallMdp(logits=np.zeros((11, 11)), coupling=np.zeros((11, 11)),
                     bump_height=np.ones(11), bump_center=np.zeros(11))
        with pytest.raises(ValueError):
            SmallMdp(logits=np.zeros((2, 2)), coupling=np.zeros((2, 2)), bump_height=[1, 1],
                     bump_center=[0, 0], gamma=1.0)
