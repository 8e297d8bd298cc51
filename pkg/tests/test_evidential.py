import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from gradcheck import max_relative_error, numeric_gradients, random_problem
from osal.core import PoolState, RoundConfig, FeatureSet, UNKNOWN
from osal.evidential import (
    calibrated_softmax,
    deflate,
    dirichlet_alpha,
    dirichlet_expected_prob,
    fit,
    forward,
    init_params,
    kl_to_flat_dirichlet,
    loss_kl,
    loss_nll,
    predict,
    softmax,
    total_loss,
    train,
    training_targets,
)


def beta_kl_to_uniform(a, b):
    """KL(Beta(a, b) || U(0, 1)) = E[log pdf], by adaptive quadrature."""
    log_norm = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)

    def integrand(x):
        logp = log_norm + (a - 1) * math.log(x) + (b - 1) * math.log1p(-x)
        return math.exp(logp) * logp

    value, _ = integrate.quad(integrand, 0.0, 1.0, epsabs=1e-13, epsrel=1e-12, limit=200)
    return value


class TestCalibratedSoftmax:
    def test_peaked(self):
        p = calibrated_softmax([0.0, 5.0, 0.0, 0.0], 1.0)
        # (e^5 + 1) / (e^5 + 1 + 3 * 2)
        assert p[1] == pytest.approx((math.exp(5) + 1) / (math.exp(5) + 7), abs=1e-15)
        assert p[1] == pytest.approx(0.96139, abs=5e-6)

    def test_weak_evidence(self):
        p = calibrated_softmax([-5.0, 0.0, -5.0, -5.0], 1.0)
        assert p[1] == pytest.approx(0.39839, abs=5e-6)

    @pytest.mark.parametrize("c", [-20.0, 0.0, 3.5])
    @pytest.mark.parametrize("gamma", [0.01, 1.0, 50.0])
    def test_equal_logits_uniform(self, c, gamma):
        np.testing.assert_allclose(calibrated_softmax([c] * 4, gamma), 0.25, atol=1e-15)

    def test_translation_sensitive(self):
        o = np.array([0.0, 5.0, 0.0, 0.0])
        assert not np.allclose(calibrated_softmax(o, 1.0), calibrated_softmax(o - 5.0, 1.0))
        np.testing.assert_allclose(softmax(o), softmax(o - 5.0), atol=1e-15)

    def test_gamma_must_be_positive(self):
        with pytest.raises(ValueError):
            calibrated_softmax([0.0, 1.0], 0.0)

    @settings(max_examples=200)
    @given(st.lists(st.floats(-10, 10), min_size=2, max_size=10), st.floats(1e-2, 1e2))
    def test_identity_with_dirichlet_mean(self, logits, gamma):
        o = np.array(logits)
        np.testing.assert_allclose(
            dirichlet_expected_prob(np.exp(o) / gamma + 1.0), calibrated_softmax(o, gamma), rtol=0, atol=1e-12
        )


class TestDirichlet:
    def test_uniform(self):
        np.testing.assert_allclose(dirichlet_expected_prob([1.0] * 4), 0.25)

    def test_ratio(self):
        np.testing.assert_allclose(dirichlet_expected_prob([2.0, 1.0, 1.0]), [0.5, 0.25, 0.25])

    def test_matches_calibrated_softmax_example(self):
        o = np.array([0.0, 5.0, 0.0, 0.0])
        np.testing.assert_allclose(
            dirichlet_expected_prob(dirichlet_alpha(o, 1.0)), calibrated_softmax(o, 1.0), atol=1e-12
        )

    @pytest.mark.parametrize("alpha", [[0.0, 1.0], [-1.0, 2.0], [np.nan, 1.0]])
    def test_invalid(self, alpha):
        with pytest.raises(ValueError, match="invalid concentration"):
            dirichlet_expected_prob(alpha)

    def test_alpha_at_least_one(self):
        alpha = dirichlet_alpha(np.array([-100.0, 0.0, 100.0]), 2.0)
        assert np.all(alpha >= 1.0) and np.all(np.isfinite(alpha))


class TestLosses:
    def test_nll_uniform(self):
        assert loss_nll([1.0] * 4, 0) == pytest.approx(math.log(4), abs=1e-15)

    def test_nll_ratio(self):
        assert loss_nll([2.0, 1.0, 1.0], 0) == pytest.approx(math.log(2), abs=1e-15)

    def test_nll_limit(self):
        assert loss_nll([1e12, 1.0, 1.0], 0) < 1e-11

    def test_kl_flat_is_zero(self):
        assert kl_to_flat_dirichlet([1.0, 1.0, 1.0]) == pytest.approx(0.0, abs=1e-14)

    def test_kl_beta_case(self):
        # closed form: integral of 2x log(2x) over [0, 1]
        assert kl_to_flat_dirichlet([2.0, 1.0]) == pytest.approx(math.log(2) - 0.5, abs=1e-12)
        assert beta_kl_to_uniform(2.0, 1.0) == pytest.approx(math.log(2) - 0.5, abs=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_kl_two_classes_quadrature(self, seed):
        a, b = np.random.default_rng(seed).uniform(1.0, 5.0, 2)
        assert kl_to_flat_dirichlet([a, b]) == pytest.approx(beta_kl_to_uniform(a, b), abs=1e-9)

    def test_loss_kl_deflates_target(self):
        alpha = np.array([7.0, 1.0, 1.0])
        assert loss_kl(alpha, 0) == pytest.approx(0.0, abs=1e-14)
        assert loss_kl(alpha, 1) > 0
        np.testing.assert_array_equal(deflate(alpha, 0), [1.0, 1.0, 1.0])

    @settings(max_examples=100)
    @given(st.lists(st.floats(1.0, 50.0), min_size=2, max_size=8))
    def test_kl_non_negative(self, alpha):
        value = kl_to_flat_dirichlet(alpha)
        assert value >= -1e-12
        if all(a == 1.0 for a in alpha):
            assert value == pytest.approx(0.0, abs=1e-12)


class TestTotalLoss:
    def test_zero_evidence_case(self):
        rng = np.random.default_rng(0)
        k, u_hat = 3, 2
        params = init_params(4, 6, k, k + u_hat, 1.0, rng)
        params.w_aux[...] = 0.0
        params.b_aux[...] = -params.logit_clamp  # evidence e^-30, zero to 1e-13
        x = rng.standard_normal((6, 4))
        y = rng.integers(0, k, 6)
        z, _ = forward(params, x)
        p = softmax(z)
        ce = float(np.mean(-np.log(p[np.arange(6), y])))
        loss, _ = total_loss(params, x, y, y)
        assert loss - ce == pytest.approx(math.log(k + u_hat), abs=1e-11)

    def test_empty_batch(self):
        params = init_params(2, 3, 2, 2, 1.0, np.random.default_rng(0))
        with pytest.raises(ValueError, match="empty batch"):
            total_loss(params, np.zeros((0, 2)), [], [])

    def test_label_range(self):
        params = init_params(2, 3, 2, 3, 1.0, np.random.default_rng(0))
        with pytest.raises(ValueError):
            total_loss(params, np.zeros((1, 2)), [0], [3])

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_gradients_match_finite_differences(self, seed):
        params, x, yp, ya = random_problem(np.random.default_rng(seed))
        _, grads = total_loss(params, x, yp, ya)
        assert max_relative_error(grads, numeric_gradients(params, x, yp, ya)) < 1e-4

    def test_gradients_unknown_only_batch(self):
        params, x, _, ya = random_problem(np.random.default_rng(4), k=2, u_hat=3)
        ya = np.full(ya.shape, 3)
        yp = np.full(ya.shape, -1)
        _, grads = total_loss(params, x, yp, ya)
        assert np.all(grads["w_pri"] == 0)
        assert max_relative_error(grads, numeric_gradients(params, x, yp, ya)) < 1e-4

    def test_clamped_logits_have_zero_gradient(self):
        params = init_params(2, 3, 2, 3, 1.0, np.random.default_rng(1))
        params.b_aux[...] = [40.0, -40.0, 0.0]
        x = np.random.default_rng(2).standard_normal((4, 2)) * 0.01
        loss, grads = total_loss(params, x, [0, 1, 0, 1], [0, 1, 2, 2])
        assert np.isfinite(loss)
        assert grads["b_aux"][0] == 0.0 and grads["b_aux"][1] == 0.0


def separable(n_classes, per, dim, seed, gap=6.0):
    rng = np.random.default_rng(seed)
    centers = gap * np.eye(n_classes, dim)
    x = np.concatenate([c + 0.5 * rng.standard_normal((per, dim)) for c in centers])
    return x, np.repeat(np.arange(n_classes), per)


class TestTraining:
    def test_full_batch_loss_strictly_decreases(self):
        x, y = separable(2, 20, 3, 0)
        cfg = RoundConfig(epochs=50, batch_size=40, momentum=0.0, weight_decay=0.0, learning_rate=0.05,
                          hidden_dim=8, u_max=10)
        params = init_params(3, 8, 2, 2, 1.0, np.random.default_rng(0))
        fit(params, x, y, y, cfg, np.random.default_rng(1))
        assert len(params.loss_history) == 50
        assert np.all(np.diff(params.loss_history) < 0)

    def test_separable_three_classes_fit_exactly(self):
        x, y = separable(3, 30, 4, 1)
        features = FeatureSet.from_matrix(x)
        state = PoolState.initial(dict(enumerate(y.tolist())), [])
        cfg = RoundConfig(epochs=100, hidden_dim=16, u_max=10)
        params = train(features, state, 3, cfg)
        z, _ = predict(params, x)
        assert np.mean(np.argmax(z, axis=1) == y) == 1.0

    def test_auxiliary_width_follows_u_hat(self):
        x, y = separable(3, 10, 4, 2)
        features = FeatureSet.from_matrix(np.concatenate([x, x[:5] + 20.0]))
        state = PoolState.initial(dict(enumerate(y.tolist())), [])
        state = PoolState(state.labeled_known, tuple(range(30, 35)), ())
        cfg = RoundConfig(epochs=2, u_max=20)
        assert train(features, state, 3, cfg).aux_width == 3
        proxy = np.array([3, 4, 5, 9, 3])
        params = train(features, state, 3, cfg, u_hat=7, proxy_labels=proxy)
        assert params.aux_width == 10 and params.u_hat == 7

    def test_deterministic(self):
        x, y = separable(3, 20, 4, 3)
        features = FeatureSet.from_matrix(x)
        state = PoolState.initial(dict(enumerate(y.tolist())), [])
        cfg = RoundConfig(epochs=5, u_max=10, seed=9)
        a = train(features, state, 3, cfg)
        b = train(features, state, 3, cfg)
        assert a.loss_history == b.loss_history
        assert np.array_equal(a.w_aux, b.w_aux)

    def test_learnable_gamma_moves(self):
        x, y = separable(3, 20, 4, 4)
        features = FeatureSet.from_matrix(x)
        state = PoolState.initial(dict(enumerate(y.tolist())), [])
        fixed = train(features, state, 3, RoundConfig(epochs=5, u_max=10))
        learned = train(features, state, 3, RoundConfig(epochs=5, u_max=10, learn_gamma=True))
        assert fixed.gamma == 1.0
        assert learned.gamma != 1.0 and learned.all_finite()

    def test_step_decay(self):
        x, y = separable(2, 20, 3, 5)
        cfg = RoundConfig(epochs=6, lr_decay_every=2, u_max=10)
        params = fit(init_params(3, 4, 2, 2, 1.0, np.random.default_rng(0)), x, y, y, cfg,
                     np.random.default_rng(0))
        assert len(params.loss_history) == 6 and params.all_finite()

    def test_training_targets(self):
        state = PoolState({0: 1, 2: 0}, (5, 7), (9,))
        idx, yp, ya = training_targets(state, 2, proxy_labels=[3, 2])
        assert list(idx) == [0, 2, 5, 7]
        assert list(yp) == [1, 0, -1, -1]
        assert list(ya) == [1, 0, 3, 2]
        idx, _, _ = training_targets(state, 2)
        assert list(idx) == [0, 2]

    def test_nothing_to_train_on(self):
        features = FeatureSet.from_matrix(np.zeros((3, 2)))
        with pytest.raises(ValueError, match="nothing to train on"):
            train(features, PoolState({}, (), (0, 1, 2)), 2, RoundConfig(u_max=10))
