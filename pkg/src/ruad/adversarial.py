"""Masked virtual adversarial search and soft interpolation.

The search starts from the masked samples and repeatedly ascends the
normalized input gradient of the divergence between the current adversarial
uplift prediction and the (frozen) clean prediction:

    x <- x + eps * (g / ||g||_2) (*) m

with the row-wise L2 norm and the mask applied to the update, so only the
selected features ever move. The iterates are data, not a differentiable
function of the parameters; gradient flow into the model comes later, through
the interpolated example's loss.

The divergence between two identical predictions has a vanishing gradient, so
the very first step would stall at the clean starting point. In that case the
ascent direction falls back to the gradient of the prediction itself, which is
the limiting direction of the squared-error power iteration at the stationary
start. Rows where both gradients vanish are skipped and counted.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .errors import ConfigError, ShapeError

_STATIONARY = 1e-12


@dataclass
class AdvConfig:
    epsilon: float = 0.01   # per-iteration step size
    iterations: int = 1     # power-iteration count Z
    gamma_mode: str = "batch"  # batch: one gamma per batch; sample: one per row

    def __post_init__(self):
        if self.epsilon <= 0.0:
            raise ConfigError("epsilon must be positive")
        if self.iterations < 1:
            raise ConfigError("iterations must be at least 1")
        if self.gamma_mode not in ("batch", "sample"):
            raise ConfigError(f"unknown gamma mode '{self.gamma_mode}'")

    def to_dict(self) -> dict:
        return {"epsilon": self.epsilon, "iterations": self.iterations,
                "gamma_mode": self.gamma_mode}

    @classmethod
    def from_dict(cls, payload: dict) -> "AdvConfig":
        cfg = cls()
        return cls(epsilon=payload.get("epsilon", cfg.epsilon),
                   iterations=payload.get("iterations", cfg.iterations),
                   gamma_mode=payload.get("gamma_mode", cfg.gamma_mode))


def adversarial_search(model, x_m: np.ndarray, mask: np.ndarray,
                       y_star_hat: np.ndarray, cfg: AdvConfig) -> tuple[np.ndarray, dict]:
    """Run the masked power-iteration search from the masked samples.

    `y_star_hat` is the clean uplift prediction, treated as a constant target.
    Returns the final iterate and a diagnostics dict (mean displacement,
    stationary rows skipped).
    """
    if x_m.shape != mask.shape:
        raise ShapeError(f"mask shape {mask.shape} does not match input {x_m.shape}")
    target = np.asarray(y_star_hat, dtype=np.float64).reshape(-1, 1)
    x_adv = np.array(x_m, copy=True)
    skipped = 0
    for _ in range(cfg.iterations):
        with Tape() as tape:
            xt = Tensor(x_adv, requires_grad=True)
            pred = model.uplift(xt)
            loss = ad.mse(pred, Tensor(target))
            g = tape.backward(loss, [xt])[xt]
            stalled = np.linalg.norm(g, axis=1) < _STATIONARY
            if stalled.any():
                g_pred = tape.backward(ad.tsum(pred), [xt])[xt]
                g = np.where(stalled[:, None], g_pred, g)
        norms = np.linalg.norm(g, axis=1)
        movable = norms >= _STATIONARY
        skipped += int((~movable).sum())
        direction = np.zeros_like(g)
        direction[movable] = g[movable] / norms[movable, None]
        x_adv = x_adv + cfg.epsilon * direction * mask
    displacement = np.linalg.norm(x_adv - x_m, axis=1)
    return x_adv, {"mean_displacement": float(displacement.mean()),
                   "max_displacement": float(displacement.max()),
                   "skipped_rows": skipped}


def draw_gamma(rng: np.random.Generator, n: int, mode: str = "batch"):
    """gamma ~ Uniform(0,1): one scalar per batch, or one per sample."""
    if mode == "sample":
        return rng.uniform(size=(n, 1))
    return float(rng.uniform())


def soft_interpolate(x_m, x_adv, rng: np.random.Generator | None = None,
                     gamma=None, mode: str = "batch"):
    """Convex blend gamma * x_m + (1 - gamma) * x_adv.

    Computed as ``x_m + (1 - gamma) * (x_adv - x_m)`` so coordinates where the
    two points agree come back bit-identical; gamma = 0 and gamma = 1 return
    exact copies of the endpoints. Works on plain arrays and on tape tensors
    (pass a tensor `x_m` to keep the gradient path into the mask alive).
    Returns (x_tilde, gamma).
    """
    n = x_m.shape[0]
    if gamma is None:
        if rng is None:
            raise ConfigError("soft_interpolate needs an rng when gamma is not given")
        gamma = draw_gamma(rng, n, mode)
    if isinstance(gamma, float) and not isinstance(x_m, Tensor) and not isinstance(x_adv, Tensor):
        if gamma == 1.0:
            return np.array(x_m, copy=True), gamma
        if gamma == 0.0:
            return np.array(x_adv, copy=True), gamma
    if isinstance(gamma, np.ndarray) and isinstance(x_m, Tensor):
        # per-sample blend on the tape: scale rows by (1 - gamma)
        delta = ad.sub(x_adv if isinstance(x_adv, Tensor) else Tensor(x_adv), x_m)
        return ad.add(x_m, ad.scale_rows(delta, Tensor(1.0 - gamma))), gamma
    out = x_m + (1.0 - gamma) * (x_adv - x_m)
    if isinstance(out, np.ndarray):
        # untouched coordinates must come back bit-identical
        np.copyto(out, x_m, where=(x_adv == x_m))
    return out, gamma


def adversarial_loss(model, x_tilde, y_star_hat: np.ndarray, beta: float) -> Tensor:
    """beta-weighted squared error between the prediction on the interpolated
    example and the detached clean prediction."""
    if beta < 0.0:
        raise ConfigError("beta must be non-negative")
    xt = x_tilde if isinstance(x_tilde, Tensor) else Tensor(x_tilde)
    target = Tensor(np.asarray(y_star_hat, dtype=np.float64).reshape(-1, 1))
    return ad.mul(ad.mse(model.uplift(xt), target), beta)
