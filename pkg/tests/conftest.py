"""Shared fixtures and independent oracles used across the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from ruad.data import ResponseSpec, SyntheticConfig, generate_synthetic


def rel_err(a: float, b: float, floor: float = 1e-8) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def central_diff(fn, arr: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function over every entry of
    `arr`, mutating entries one at a time."""
    grad = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = fn()
        flat[i] = orig - h
        down = fn()
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * h)
    return grad


def fd_check_params(params, loss_fn, analytic, h: float = 1e-5) -> float:
    """Max relative error between `analytic[p]` and central differences of
    `loss_fn()` for every tensor in `params` (tensor data mutated in place)."""
    worst = 0.0
    for p in params:
        data = p.data.copy()

        def value() -> float:
            return loss_fn()

        # temporarily make the parameter writable through .data reassignment
        flat = data.reshape(-1)
        grad = analytic[p].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            p.data = data
            up = value()
            flat[i] = orig - h
            p.data = data
            down = value()
            flat[i] = orig
            p.data = data
            fd = (up - down) / (2.0 * h)
            worst = max(worst, rel_err(fd, grad[i]))
    return worst


def planted_benchmark_config(n: int = 5000, seed: int = 0) -> SyntheticConfig:
    """Synthetic benchmark with 20 continuous features of which only the
    first three drive the outcome and the effect; the rest are pure noise."""
    return SyntheticConfig(
        n=n,
        n_numeric=20,
        n_categorical=0,
        seed=seed,
        assignment={"kind": "constant", "p": 0.5},
        response=ResponseSpec(
            baseline_intercept=1.0,
            baseline_coef=[1.2, -0.8, 0.6],
            baseline_interactions=[(0, 1, 0.8)],
            tau_intercept=0.3,
            tau_coef=[1.0, 0.7, -0.9],
            tau_interactions=[(0, 2, 0.5)],
            noise_std=1.0,
        ),
    )


@pytest.fixture(scope="session")
def planted_dataset():
    return generate_synthetic(planted_benchmark_config(n=5000, seed=0))
