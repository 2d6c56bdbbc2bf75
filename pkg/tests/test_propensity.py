"""Transformed-response arithmetic and propensity pretraining."""

import numpy as np
import pytest

from ruad.data import Dataset, ResponseSpec, SyntheticConfig, generate_synthetic
from ruad.errors import ContractError, NumericError, TrainingError
from ruad.propensity import (
    PropensityConfig,
    PropensityModel,
    pretrain_propensity,
    transform_response,
    transformed_responses,
    unbiasedness_probe,
)


def test_transform_direct_substitution():
    assert transform_response(2.0, 1, 0.5) == pytest.approx(4.0)
    assert transform_response(2.0, 0, 0.5) == pytest.approx(-4.0)


def test_transform_zero_outcome():
    for t in (0, 1):
        for pi in (0.1, 0.5, 0.9):
            assert transform_response(0.0, t, pi) == 0.0


def test_transform_domain_error():
    with pytest.raises(NumericError):
        transform_response(1.0, 1, 0.0)
    with pytest.raises(NumericError):
        transform_response(1.0, 0, 1.0)


def test_transform_sign_follows_arm():
    rng = np.random.default_rng(0)
    y = rng.normal(size=200)
    t = rng.integers(0, 2, size=200)
    pi = rng.uniform(0.1, 0.9, size=200)
    y_star = transform_response(y, t, pi)
    nonzero = y != 0
    expected_sign = np.sign(y) * np.where(t == 1, 1.0, -1.0)
    assert np.array_equal(np.sign(y_star[nonzero]), expected_sign[nonzero])


def test_transform_is_homogeneous_in_y():
    rng = np.random.default_rng(1)
    y = rng.normal(size=50)
    t = rng.integers(0, 2, size=50)
    pi = rng.uniform(0.2, 0.8, size=50)
    lam = 3.7
    assert np.allclose(transform_response(lam * y, t, pi),
                       lam * transform_response(y, t, pi), atol=1e-12)


# -- pretraining -------------------------------------------------------------

def test_pretrain_recovers_randomized_assignment():
    ds = generate_synthetic(SyntheticConfig(n=2000, n_numeric=4, seed=2))
    model, _ = pretrain_propensity(ds, PropensityConfig(epochs=80), seed=0)
    assert abs(model.predict(ds.x).mean() - 0.5) < 0.05


def test_pretrain_clips_on_separable_data():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(200, 1))
    t = (x[:, 0] > 0).astype(int)  # perfectly separable
    ds = Dataset(x, t, np.zeros(200), ["x0"], np.array([True]))
    model, _ = pretrain_propensity(ds, PropensityConfig(epochs=300, lr=5e-2), seed=1)
    p = model.predict(x)
    assert p.min() >= 0.05 and p.max() <= 0.95


def test_pretrain_loss_decreases_over_first_epochs():
    ds = generate_synthetic(SyntheticConfig(
        n=1000, n_numeric=3, seed=4,
        assignment={"kind": "logistic", "coef": [1.0, -1.0]}))
    _, curve = pretrain_propensity(ds, PropensityConfig(epochs=10), seed=2)
    for a, b in zip(curve[:5], curve[1:6]):
        assert b < a


def test_pretrain_needs_both_groups():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(50, 2))
    ds = Dataset(x, np.ones(50, dtype=int), np.zeros(50), ["a", "b"],
                 np.array([True, True]))
    with pytest.raises(TrainingError):
        pretrain_propensity(ds, PropensityConfig(), seed=0)


def test_constant_mode_uses_treated_fraction():
    ds = generate_synthetic(SyntheticConfig(n=400, n_numeric=2, seed=6))
    model, curve = pretrain_propensity(ds, PropensityConfig(mode="constant"), seed=0)
    assert curve == []
    assert np.all(model.predict(ds.x) == ds.t.mean())


def test_checkpoint_roundtrip_bit_exact():
    ds = generate_synthetic(SyntheticConfig(n=300, n_numeric=3, seed=7))
    model, _ = pretrain_propensity(ds, PropensityConfig(epochs=20), seed=3)
    clone = PropensityModel.from_dict(model.to_dict())
    assert np.array_equal(model.predict(ds.x), clone.predict(ds.x))


# -- unbiasedness -------------------------------------------------------------

def test_probe_null_effect_within_3se():
    ds = generate_synthetic(SyntheticConfig(
        n=20000, n_numeric=3, seed=8,
        response=ResponseSpec(baseline_intercept=2.0, baseline_coef=[1.0])))
    report = unbiasedness_probe(ds)
    assert report["within_3se"]
    assert abs(report["mean_tau_true"]) == 0.0


def test_probe_linear_tau_within_3se():
    ds = generate_synthetic(SyntheticConfig(
        n=50000, n_numeric=4, seed=9,
        response=ResponseSpec(baseline_intercept=1.0, baseline_coef=[0.5, 1.0],
                              tau_coef=[1.0], tau_intercept=0.5)))
    report = unbiasedness_probe(ds)
    assert report["within_3se"]


def test_probe_wrong_propensity_is_biased():
    ds = generate_synthetic(SyntheticConfig(
        n=50000, n_numeric=4, seed=10,
        response=ResponseSpec(baseline_intercept=1.0, baseline_coef=[0.5, 1.0],
                              tau_coef=[1.0], tau_intercept=0.5)))
    report = unbiasedness_probe(ds, pi=0.9)  # true assignment probability is 0.5
    assert not report["within_3se"]
    assert report["abs_gap"] > 3 * report["standard_error"]


def test_probe_needs_tau_true():
    rng = np.random.default_rng(11)
    ds = Dataset(rng.normal(size=(20, 2)), rng.integers(0, 2, 20), rng.normal(size=20),
                 ["a", "b"], np.array([True, True]))
    with pytest.raises(ContractError):
        unbiasedness_probe(ds, pi=0.5)


def test_transformed_responses_use_frozen_model():
    ds = generate_synthetic(SyntheticConfig(n=500, n_numeric=2, seed=12))
    model, _ = pretrain_propensity(ds, PropensityConfig(mode="constant"), seed=0)
    y_star = transformed_responses(ds, model)
    expected = transform_response(ds.y, ds.t, float(ds.t.mean()))
    assert np.array_equal(y_star, expected)
