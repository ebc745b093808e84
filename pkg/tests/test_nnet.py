"""Network tests: forward math, backprop vs finite differences, training.

Gradient correctness is established against central finite differences
computed inside ``grad_check``; targeted cases below additionally pin
hand-derivable gradients (zero-parameter nets) and distributional
identities (inverted dropout, posterior collapse).
"""

import math

import numpy as np
import pytest

from shiftbench.errors import ConfigError, TrainingError
from shiftbench.nnet import (
    Architecture,
    ModelParams,
    TrainConfig,
    _backward,
    _forward_cache,
    _nll_and_grad,
    forward,
    grad_check,
    init_params,
    kl_gaussian,
    load_model,
    mean_nll,
    save_model,
    softmax,
    train_deterministic,
    train_ensemble,
    train_variational,
)


def _blobs(n_per_class, seed=0, dim=4, spread=0.3):
    """Two well-separated Gaussian clusters; linearly separable."""
    rng = np.random.default_rng(seed)
    mu0 = np.array([-1.0, -1.0, 0.0, 0.0][:dim])
    mu1 = -mu0
    x = np.concatenate(
        [
            rng.normal(size=(n_per_class, dim)) * spread + mu0,
            rng.normal(size=(n_per_class, dim)) * spread + mu1,
        ]
    )
    y = np.concatenate([np.zeros(n_per_class, int), np.ones(n_per_class, int)])
    perm = rng.permutation(len(y))
    return x[perm], y[perm]


def _zeroed(arch):
    params = init_params(arch, seed=0)
    for layer in params.layers:
        for k in layer:
            layer[k] = np.zeros_like(layer[k])
    return params


class TestSoftmax:
    def test_uniform_for_equal_logits(self):
        np.testing.assert_allclose(softmax(np.zeros(4)), 0.25, atol=1e-15)

    def test_overflow_safe(self):
        p = softmax(np.array([1000.0, 0.0]))
        assert np.all(np.isfinite(p))
        np.testing.assert_allclose(p, [1.0, 0.0], atol=1e-12)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(0)
        z = rng.normal(size=(50, 5)) * 10
        np.testing.assert_allclose(softmax(z).sum(axis=1), 1.0, atol=1e-12)

    def test_shift_invariance(self):
        z = np.array([0.3, -1.2, 2.0])
        np.testing.assert_allclose(softmax(z), softmax(z + 100.0), atol=1e-12)


class TestForward:
    def test_zero_net_gives_uniform(self):
        arch = Architecture(input_dim=4, num_classes=3, hidden=(8,))
        params = _zeroed(arch)
        logits = forward(params, np.ones(4))
        np.testing.assert_array_equal(logits, np.zeros(3))
        np.testing.assert_allclose(softmax(logits), 1.0 / 3.0, atol=1e-15)

    def test_1d_and_2d_shapes(self):
        arch = Architecture(input_dim=4, num_classes=3, hidden=(8,))
        params = init_params(arch, seed=1)
        x = np.random.default_rng(2).normal(size=(5, 4))
        out2 = forward(params, x)
        out1 = forward(params, x[0])
        assert out2.shape == (5, 3)
        assert out1.shape == (3,)
        # vector and matrix products may use different BLAS kernels, so
        # agreement is up to rounding, not bit-exact
        np.testing.assert_allclose(out1, out2[0], rtol=1e-12, atol=1e-14)

    def test_wrong_dim_rejected(self):
        arch = Architecture(input_dim=4, num_classes=3, hidden=(8,))
        params = init_params(arch, seed=1)
        with pytest.raises(ConfigError):
            forward(params, np.ones(5))

    def test_dropout_mode_needs_rng(self):
        arch = Architecture(input_dim=4, num_classes=2, hidden=(8,), dropout=0.5)
        params = init_params(arch, seed=1)
        with pytest.raises(ConfigError):
            forward(params, np.ones(4), mode="dropout")

    def test_unknown_mode_rejected(self):
        arch = Architecture(input_dim=4, num_classes=2, hidden=(8,))
        params = init_params(arch, seed=1)
        with pytest.raises(ConfigError):
            forward(params, np.ones(4), mode="stochastic")

    def test_dropout_zero_equals_deterministic(self):
        arch = Architecture(input_dim=4, num_classes=3, hidden=(8, 6), dropout=0.0)
        params = init_params(arch, seed=3)
        x = np.random.default_rng(4).normal(size=(6, 4))
        det = forward(params, x)
        drop = forward(params, x, mode="dropout", rng=0)
        np.testing.assert_array_equal(det, drop)

    def test_variational_mode_needs_variational_arch(self):
        arch = Architecture(input_dim=4, num_classes=2, hidden=(8,))
        params = init_params(arch, seed=1)
        with pytest.raises(ConfigError):
            forward(params, np.ones(4), mode="variational", rng=0)


class TestInvertedDropout:
    def test_mask_scaling_preserves_expectation(self):
        # One hidden layer: logits are linear in the dropout mask, so the
        # Monte Carlo mean of dropout logits must approach the
        # deterministic logits. Checked to five standard errors.
        arch = Architecture(input_dim=6, num_classes=3, hidden=(16,), dropout=0.5)
        params = init_params(arch, seed=5)
        x = np.random.default_rng(6).normal(size=6)
        det = forward(params, x)
        m = 20000
        batch = np.tile(x, (m, 1))
        sampled = forward(params, batch, mode="dropout", rng=7)
        est = sampled.mean(axis=0)
        se = sampled.std(axis=0, ddof=1) / math.sqrt(m)
        assert np.all(np.abs(est - det) <= 5.0 * se + 1e-12)


class TestHandGradients:
    def test_output_bias_gradient_zero_net(self):
        # All-zero parameters, one sample with label 1: the only nonzero
        # gradient is the output bias, equal to softmax(0) - onehot.
        arch = Architecture(input_dim=4, num_classes=3, hidden=(5,))
        params = _zeroed(arch)
        x = np.zeros((1, 4))
        y = np.array([1])
        logits, cache = _forward_cache(params, x)
        _, dlogits = _nll_and_grad(logits, y)
        grads = _backward(params, cache, dlogits)
        np.testing.assert_allclose(
            grads[-1]["b"], [1.0 / 3.0, 1.0 / 3.0 - 1.0, 1.0 / 3.0], atol=1e-15
        )
        np.testing.assert_array_equal(grads[-1]["w"], np.zeros((3, 5)))
        np.testing.assert_array_equal(grads[0]["w"], np.zeros((5, 4)))

    def test_nll_value_uniform(self):
        # NLL of the zero net is log K regardless of labels
        logits = np.zeros((7, 3))
        y = np.array([0, 1, 2, 0, 1, 2, 0])
        assert math.isclose(mean_nll(logits, y), math.log(3.0), rel_tol=1e-15)


class TestGradCheck:
    def test_deterministic_net(self):
        rng = np.random.default_rng(8)
        arch = Architecture(input_dim=8, num_classes=3, hidden=(8, 6))
        params = init_params(arch, seed=9)
        x = rng.normal(size=(16, 8))
        y = rng.integers(0, 3, size=16)
        worst = grad_check(params, (x, y), n_checks=150, seed=0)
        assert worst < 1e-4

    def test_variational_net(self):
        rng = np.random.default_rng(10)
        arch = Architecture(
            input_dim=6, num_classes=3, hidden=(6, 5), variational=True
        )
        params = init_params(arch, seed=11)
        x = rng.normal(size=(12, 6))
        y = rng.integers(0, 3, size=12)
        worst = grad_check(params, (x, y), n_checks=150, seed=1)
        assert worst < 1e-4

    def test_multiple_seeds(self):
        for seed in (0, 1, 2):
            rng = np.random.default_rng(seed)
            arch = Architecture(input_dim=5, num_classes=2, hidden=(7,))
            params = init_params(arch, seed=seed + 20)
            x = rng.normal(size=(10, 5))
            y = rng.integers(0, 2, size=10)
            assert grad_check(params, (x, y), n_checks=80, seed=seed) < 1e-4


class TestKL:
    def test_unit_gaussian_shifted_mean(self):
        # KL(N(1,1) || N(0,1)) = 0.5 per element
        mu = np.ones(4)
        sigma = np.ones(4)
        assert math.isclose(kl_gaussian(mu, sigma, 1.0), 2.0, rel_tol=1e-12)

    def test_matching_prior_is_zero(self):
        mu = np.zeros(6)
        sigma = np.full(6, 0.7)
        assert abs(kl_gaussian(mu, sigma, 0.7)) < 1e-12

    def test_nonnegative(self):
        rng = np.random.default_rng(12)
        for _ in range(100):
            mu = rng.normal(size=5)
            sigma = rng.uniform(0.05, 3.0, size=5)
            assert kl_gaussian(mu, sigma, 1.0) >= -1e-12


class TestVariationalCollapse:
    def test_tiny_sigma_matches_mean_forward(self):
        arch = Architecture(input_dim=5, num_classes=3, hidden=(8,), variational=True)
        params = init_params(arch, seed=13)
        for layer in params.layers:
            for k in ("w_rho", "b_rho"):
                if k in layer:
                    layer[k] = np.full_like(layer[k], -40.0)
        x = np.random.default_rng(14).normal(size=(4, 5))
        det = forward(params, x)
        sampled = forward(params, x, mode="variational", rng=15)
        np.testing.assert_allclose(sampled, det, atol=1e-9)


class TestTraining:
    def test_learns_separable_blobs(self):
        xtr, ytr = _blobs(60, seed=0)
        xva, yva = _blobs(20, seed=1)
        arch = Architecture(input_dim=4, num_classes=2, hidden=(16, 8))
        cfg = TrainConfig(epochs=40, batch_size=16, learning_rate=1e-3, seed=0)
        params = train_deterministic((xtr, ytr), (xva, yva), arch, cfg)
        preds = np.argmax(forward(params, xva), axis=1)
        assert np.mean(preds == yva) >= 0.95
        assert mean_nll(forward(params, xva), yva) < math.log(2.0)

    def test_bit_identical_reruns(self):
        xtr, ytr = _blobs(30, seed=2)
        xva, yva = _blobs(10, seed=3)
        arch = Architecture(input_dim=4, num_classes=2, hidden=(8,), dropout=0.25)
        cfg = TrainConfig(epochs=10, batch_size=16, learning_rate=1e-3, seed=5)
        a = train_deterministic((xtr, ytr), (xva, yva), arch, cfg)
        b = train_deterministic((xtr, ytr), (xva, yva), arch, cfg)
        for la, lb in zip(a.layers, b.layers):
            for k in la:
                np.testing.assert_array_equal(la[k], lb[k])

    def test_seed_changes_params(self):
        xtr, ytr = _blobs(30, seed=2)
        xva, yva = _blobs(10, seed=3)
        arch = Architecture(input_dim=4, num_classes=2, hidden=(8,))
        a = train_deterministic(
            (xtr, ytr), (xva, yva), arch, TrainConfig(epochs=5, seed=0)
        )
        b = train_deterministic(
            (xtr, ytr), (xva, yva), arch, TrainConfig(epochs=5, seed=1)
        )
        assert not np.array_equal(a.layers[0]["w"], b.layers[0]["w"])

    def test_variational_learns_blobs(self):
        xtr, ytr = _blobs(60, seed=4)
        xva, yva = _blobs(20, seed=5)
        arch = Architecture(
            input_dim=4, num_classes=2, hidden=(16,), variational=True
        )
        cfg = TrainConfig(epochs=80, batch_size=16, learning_rate=1e-3, seed=6)
        params = train_variational((xtr, ytr), (xva, yva), arch, cfg)
        preds = np.argmax(forward(params, xva), axis=1)
        assert np.mean(preds == yva) >= 0.9

    def test_wrong_trainer_for_arch(self):
        arch_v = Architecture(input_dim=4, num_classes=2, hidden=(8,), variational=True)
        arch_d = Architecture(input_dim=4, num_classes=2, hidden=(8,))
        xtr, ytr = _blobs(10, seed=0)
        cfg = TrainConfig(epochs=1)
        with pytest.raises(ConfigError):
            train_deterministic((xtr, ytr), (xtr, ytr), arch_v, cfg)
        with pytest.raises(ConfigError):
            train_variational((xtr, ytr), (xtr, ytr), arch_d, cfg)

    def test_label_validation(self):
        arch = Architecture(input_dim=4, num_classes=2, hidden=(8,))
        x = np.zeros((4, 4))
        with pytest.raises(ConfigError):
            train_deterministic((x, np.array([0, 1, 2, 0])), (x, np.zeros(4, int)), arch, TrainConfig(epochs=1))

    def test_epochs_validation(self):
        with pytest.raises(ConfigError):
            TrainConfig(epochs=0)

    def test_divergence_reported(self):
        # inputs large enough to overflow the first matmul produce a
        # non-finite loss, which must surface as TrainingError
        arch = Architecture(input_dim=4, num_classes=2, hidden=(16,))
        x = np.full((8, 4), 1e308)
        y = np.array([0, 1, 0, 1, 0, 1, 0, 1])
        cfg = TrainConfig(epochs=2, batch_size=8, seed=0)
        with np.errstate(all="ignore"), pytest.raises(TrainingError):
            train_deterministic((x, y), (x, y), arch, cfg)


class TestEnsembleTraining:
    def test_members_distinct_and_counted(self):
        xtr, ytr = _blobs(20, seed=7)
        xva, yva = _blobs(8, seed=8)
        arch = Architecture(input_dim=4, num_classes=2, hidden=(8,))
        cfg = TrainConfig(epochs=5, seed=3)
        members = train_ensemble((xtr, ytr), (xva, yva), arch, cfg, num_members=3)
        assert len(members) == 3
        for i in range(3):
            for j in range(i + 1, 3):
                assert not np.array_equal(
                    members[i].layers[0]["w"], members[j].layers[0]["w"]
                )

    def test_worker_count_does_not_change_results(self):
        xtr, ytr = _blobs(15, seed=9)
        xva, yva = _blobs(6, seed=10)
        arch = Architecture(input_dim=4, num_classes=2, hidden=(8,))
        cfg = TrainConfig(epochs=4, seed=4)
        serial = train_ensemble((xtr, ytr), (xva, yva), arch, cfg, 3, workers=1)
        pooled = train_ensemble((xtr, ytr), (xva, yva), arch, cfg, 3, workers=4)
        for a, b in zip(serial, pooled):
            for la, lb in zip(a.layers, b.layers):
                for k in la:
                    np.testing.assert_array_equal(la[k], lb[k])

    def test_zero_members_rejected(self):
        arch = Architecture(input_dim=4, num_classes=2, hidden=(8,))
        xtr, ytr = _blobs(5, seed=0)
        with pytest.raises(ConfigError):
            train_ensemble((xtr, ytr), (xtr, ytr), arch, TrainConfig(epochs=1), 0)


class TestCheckpoints:
    def test_round_trip_bit_exact(self, tmp_path):
        arch = Architecture(input_dim=6, num_classes=3, hidden=(10, 5), dropout=0.5)
        params = init_params(arch, seed=21)
        p = save_model(params, tmp_path / "model.npz")
        back = load_model(p)
        assert back.arch == arch
        for la, lb in zip(params.layers, back.layers):
            assert sorted(la) == sorted(lb)
            for k in la:
                np.testing.assert_array_equal(la[k], lb[k])

    def test_variational_round_trip(self, tmp_path):
        arch = Architecture(input_dim=4, num_classes=2, hidden=(6,), variational=True)
        params = init_params(arch, seed=22)
        back = load_model(save_model(params, tmp_path / "v"))
        assert back.arch.variational
        np.testing.assert_array_equal(back.layers[0]["w_rho"], params.layers[0]["w_rho"])

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_model(tmp_path / "absent.npz")

    def test_predictions_survive_round_trip(self, tmp_path):
        arch = Architecture(input_dim=5, num_classes=2, hidden=(8,))
        params = init_params(arch, seed=23)
        x = np.random.default_rng(24).normal(size=(9, 5))
        before = forward(params, x)
        after = forward(load_model(save_model(params, tmp_path / "m")), x)
        np.testing.assert_array_equal(before, after)
