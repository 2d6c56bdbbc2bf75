"""Masked power-iteration search, soft interpolation, and the adversarial
loss, checked against closed forms on linear models."""

import numpy as np
import pytest

from ruad import autodiff as ad
from ruad.autodiff import Tape, Tensor
from ruad.adversarial import (
    AdvConfig,
    adversarial_loss,
    adversarial_search,
    soft_interpolate,
)
from ruad.errors import ConfigError
from ruad.feature_selection import MaskerNet, apply_mask, compute_mask
from ruad.models import TLearner


def linear_uplift_model(weights: np.ndarray, intercept: float = 0.0) -> TLearner:
    """T-learner whose uplift is exactly w . x + intercept (control net zero,
    treated net affine)."""
    w = np.asarray(weights, dtype=float)
    model = TLearner(w.size, hidden=(), rng=np.random.default_rng(0))
    model.net0.weights[0].data = np.zeros((w.size, 1))
    model.net0.biases[0].data = np.zeros(1)
    model.net1.weights[0].data = w.reshape(-1, 1).copy()
    model.net1.biases[0].data = np.array([float(intercept)])
    return model


def test_zero_mask_freezes_search():
    model = linear_uplift_model([1.0, -2.0, 0.5])
    x_m = np.random.default_rng(1).normal(size=(6, 3))
    clean = model.predict_uplift(x_m)
    x_adv, info = adversarial_search(model, x_m, np.zeros_like(x_m), clean,
                                     AdvConfig(epsilon=0.5, iterations=4))
    assert np.array_equal(x_adv, x_m)


def test_single_feature_step_moves_exactly_epsilon():
    """Z=1, eps=0.1, hardened one-feature mask on a linear model whose weight
    sits on that feature: it moves by exactly +-0.1 and the prediction grows
    (the squared deviation has a positive w^2 coefficient either way)."""
    for w0 in (2.0, -3.0):
        model = linear_uplift_model([w0])
        x_m = np.array([[0.5], [-1.0], [0.0]])
        mask = np.ones_like(x_m)
        clean = model.predict_uplift(x_m)
        x_adv, info = adversarial_search(model, x_m, mask, clean,
                                         AdvConfig(epsilon=0.1, iterations=1))
        delta = x_adv - x_m
        assert np.allclose(np.abs(delta[:, 0]), 0.1, atol=1e-12)
        assert np.allclose(delta[:, 0], 0.1 * np.sign(w0), atol=1e-12)
        assert info["skipped_rows"] == 0


def test_masked_update_follows_whole_row_normalization():
    """The L2 normalization runs over the full gradient row before masking, so
    a partially masked update moves by eps * g_j / ||g||."""
    w = np.array([2.0, -3.0])
    model = linear_uplift_model(w)
    x_m = np.array([[0.5, -1.0], [0.0, 2.0]])
    mask = np.array([[1.0, 0.0], [1.0, 0.0]])
    clean = model.predict_uplift(x_m)
    x_adv, _ = adversarial_search(model, x_m, mask, clean,
                                  AdvConfig(epsilon=0.1, iterations=1))
    delta = x_adv - x_m
    assert np.allclose(delta[:, 0], 0.1 * w[0] / np.linalg.norm(w), atol=1e-12)
    assert np.array_equal(delta[:, 1], np.zeros(2))


def test_loss_is_nondecreasing_over_iterations():
    model = linear_uplift_model([1.5, -0.5, 1.0])
    rng = np.random.default_rng(2)
    x_m = rng.normal(size=(5, 3))
    mask = np.ones_like(x_m)
    clean = model.predict_uplift(x_m)
    losses = []
    for z in range(1, 6):
        x_adv, _ = adversarial_search(model, x_m, mask, clean,
                                      AdvConfig(epsilon=0.05, iterations=z))
        losses.append(float(((model.predict_uplift(x_adv) - clean) ** 2).mean()))
    for earlier, later in zip(losses, losses[1:]):
        assert later >= earlier - 1e-15


def test_update_norm_bounded_by_epsilon():
    model = linear_uplift_model([1.0, 1.0, 1.0, 1.0])
    rng = np.random.default_rng(3)
    x_m = rng.normal(size=(7, 4))
    clean = model.predict_uplift(x_m)
    eps = 0.25
    # all-ones mask: per-iteration update norm is exactly epsilon
    x_adv, _ = adversarial_search(model, x_m, np.ones_like(x_m), clean,
                                  AdvConfig(epsilon=eps, iterations=1))
    norms = np.linalg.norm(x_adv - x_m, axis=1)
    assert np.allclose(norms, eps, atol=1e-12)
    # soft mask: bounded above by epsilon
    soft = rng.uniform(0.0, 1.0, size=x_m.shape)
    x_adv, _ = adversarial_search(model, x_m, soft, clean,
                                  AdvConfig(epsilon=eps, iterations=1))
    assert np.all(np.linalg.norm(x_adv - x_m, axis=1) <= eps + 1e-12)


def test_displacement_bounded_by_z_times_epsilon():
    model = linear_uplift_model([0.7, -1.1])
    rng = np.random.default_rng(4)
    x_m = rng.normal(size=(6, 2))
    clean = model.predict_uplift(x_m)
    for z in (1, 3, 5):
        x_adv, _ = adversarial_search(model, x_m, np.ones_like(x_m), clean,
                                      AdvConfig(epsilon=0.1, iterations=z))
        assert np.all(np.linalg.norm(x_adv - x_m, axis=1) <= z * 0.1 + 1e-12)


# -- soft interpolation ----------------------------------------------------------

def test_interpolation_endpoints_exact():
    rng = np.random.default_rng(5)
    x_m = rng.normal(size=(4, 3))
    x_adv = x_m + rng.normal(size=(4, 3))
    tilde, g = soft_interpolate(x_m, x_adv, gamma=1.0)
    assert np.array_equal(tilde, x_m) and g == 1.0
    tilde, g = soft_interpolate(x_m, x_adv, gamma=0.0)
    assert np.array_equal(tilde, x_adv) and g == 0.0


def test_interpolation_is_convex():
    rng = np.random.default_rng(6)
    x_m = rng.normal(size=(10, 4))
    x_adv = x_m + rng.normal(size=(10, 4))
    tilde, gamma = soft_interpolate(x_m, x_adv, rng=np.random.default_rng(7))
    assert 0.0 <= gamma <= 1.0
    lo = np.minimum(x_m, x_adv) - 1e-12
    hi = np.maximum(x_m, x_adv) + 1e-12
    assert np.all(tilde >= lo) and np.all(tilde <= hi)


def test_interpolation_preserves_untouched_coordinates_bitwise():
    rng = np.random.default_rng(8)
    x_m = rng.normal(size=(50, 6))
    x_adv = x_m.copy()
    x_adv[:, [1, 4]] += rng.normal(size=(50, 2))
    tilde, _ = soft_interpolate(x_m, x_adv, rng=np.random.default_rng(9))
    untouched = [0, 2, 3, 5]
    assert np.array_equal(tilde[:, untouched], x_m[:, untouched])


def test_per_sample_gamma_shapes():
    rng = np.random.default_rng(10)
    x_m = rng.normal(size=(8, 2))
    x_adv = x_m + 1.0
    tilde, gamma = soft_interpolate(x_m, x_adv, rng=np.random.default_rng(11),
                                    mode="sample")
    assert gamma.shape == (8, 1)
    expected = x_m + (1.0 - gamma) * (x_adv - x_m)
    assert np.allclose(tilde, expected, atol=1e-15)


# -- adversarial loss -------------------------------------------------------------

def test_loss_zero_when_inputs_identical():
    model = linear_uplift_model([1.0, 2.0])
    x_m = np.random.default_rng(12).normal(size=(5, 2))
    clean = model.predict_uplift(x_m)
    loss = adversarial_loss(model, x_m, clean, beta=2.0)
    assert loss.item() == pytest.approx(0.0, abs=1e-24)


def test_loss_beta_zero_no_gradient():
    model = linear_uplift_model([1.0, 2.0])
    rng = np.random.default_rng(13)
    x_m = rng.normal(size=(5, 2))
    clean = model.predict_uplift(x_m)
    x_tilde = x_m + rng.normal(size=(5, 2))
    with Tape() as tape:
        loss = adversarial_loss(model, x_tilde, clean, beta=0.0)
        grads = tape.backward(loss, model.params())
    assert loss.item() == 0.0
    for p in model.params():
        assert np.array_equal(grads[p], np.zeros_like(p.data))


def test_loss_closed_form_on_linear_model():
    """Perturb one feature by delta: loss = beta * (w * delta)^2."""
    w = np.array([2.0, -1.0])
    model = linear_uplift_model(w)
    x_m = np.zeros((1, 2))
    clean = model.predict_uplift(x_m)
    delta = 0.3
    x_tilde = x_m.copy()
    x_tilde[0, 0] += delta
    beta = 1.7
    loss = adversarial_loss(model, x_tilde, clean, beta=beta)
    assert loss.item() == pytest.approx(beta * (w[0] * delta) ** 2, rel=1e-12)


def test_gradient_flows_to_masker_not_to_detached_target():
    """The interpolated example keeps the gradient path into the mask alive;
    the detached clean prediction contributes nothing."""
    rng = np.random.default_rng(14)
    n_features = 4
    masker = MaskerNet(n_features, hidden=(6,), rng=rng)
    model = linear_uplift_model([1.0, -0.5, 2.0, 0.3])
    x = rng.normal(size=(6, n_features))

    with Tape() as tape:
        x_t = Tensor(x)
        mv = compute_mask(masker, x_t, 2, 0.5, rng=np.random.default_rng(15))
        x_m = apply_mask(x_t, mv.values)
        clean_tensor = model.uplift(x_m)
        clean = clean_tensor.data[:, 0].copy()  # detached target
        x_adv, _ = adversarial_search(model, x_m.data, mv.array, clean,
                                      AdvConfig(epsilon=0.1, iterations=1))
        x_tilde, _ = soft_interpolate(x_m, x_adv, gamma=0.4)
        loss = adversarial_loss(model, x_tilde, clean, beta=1.0)
        grads = tape.backward(loss, model.params() + masker.params())

    assert any(np.abs(grads[p]).max() > 0 for p in model.params())
    assert any(np.abs(grads[p]).max() > 0 for p in masker.params())
    # the detached branch gets no gradient: re-running backward on the clean
    # prediction's tape path w.r.t. the target is impossible by construction,
    # so instead check the loss at the clean point has zero model gradient
    with Tape() as tape2:
        loss2 = adversarial_loss(model, x_m.data, clean, beta=1.0)
        grads2 = tape2.backward(loss2, model.params())
    for p in model.params():
        assert np.allclose(grads2[p], 0.0, atol=1e-18)


def test_config_validation():
    with pytest.raises(ConfigError):
        AdvConfig(epsilon=0.0)
    with pytest.raises(ConfigError):
        AdvConfig(iterations=0)
    with pytest.raises(ConfigError):
        AdvConfig(gamma_mode="weird")
    with pytest.raises(ConfigError):
        adversarial_loss(linear_uplift_model([1.0]), np.zeros((1, 1)),
                         np.zeros(1), beta=-0.1)
