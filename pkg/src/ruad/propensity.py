"""Treatment-probability estimation and the transformed response.

The transformed response relabels each observed outcome as

    y_star = y / pi(x) * t  -  y / (1 - pi(x)) * (1 - t)

whose conditional expectation equals the uplift when ``pi`` is the true
assignment probability. The estimator network is pre-trained on (x, t) with a
binary cross-entropy loss and frozen before uplift training; transformed
responses are computed once from the frozen network.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Adam, Tape, Tensor
from .data import Dataset
from .errors import ConfigError, ContractError, NumericError, TrainingError
from .nn import MLP


@dataclass
class PropensityConfig:
    hidden: tuple[int, ...] = (32,)
    activation: str = "elu"
    lr: float = 1e-2
    epochs: int = 150
    clip: float = 0.05  # predictions kept inside [clip, 1 - clip]
    mode: str = "mlp"   # mlp | constant

    def to_dict(self) -> dict:
        return {"hidden": list(self.hidden), "activation": self.activation,
                "lr": self.lr, "epochs": self.epochs, "clip": self.clip,
                "mode": self.mode}

    @classmethod
    def from_dict(cls, payload: dict) -> "PropensityConfig":
        cfg = cls()
        return cls(hidden=tuple(payload.get("hidden", cfg.hidden)),
                   activation=payload.get("activation", cfg.activation),
                   lr=payload.get("lr", cfg.lr),
                   epochs=payload.get("epochs", cfg.epochs),
                   clip=payload.get("clip", cfg.clip),
                   mode=payload.get("mode", cfg.mode))


class PropensityModel:
    """Frozen treatment-probability estimator.

    Either a small network with a sigmoid output or a constant probability
    (the empirical treated fraction), for settings where the assignment is
    known to be randomized.
    """

    def __init__(self, net: MLP | None, clip: float, constant: float | None = None):
        if (net is None) == (constant is None):
            raise ConfigError("exactly one of net/constant must be given")
        self.net = net
        self.clip = float(clip)
        self.constant = None if constant is None else float(constant)

    def predict(self, x: np.ndarray) -> np.ndarray:
        if self.constant is not None:
            p = np.full(x.shape[0], self.constant)
        else:
            logits = self.net.forward_array(x)[:, 0]
            p = 1.0 / (1.0 + np.exp(-logits))
        return np.clip(p, self.clip, 1.0 - self.clip)

    def to_dict(self) -> dict:
        if self.constant is not None:
            return {"kind": "constant", "clip": self.clip, "constant": self.constant}
        return {"kind": "mlp", "clip": self.clip, "net": self.net.to_dict()}

    @classmethod
    def from_dict(cls, payload: dict) -> "PropensityModel":
        if payload["kind"] == "constant":
            return cls(None, payload["clip"], constant=payload["constant"])
        return cls(MLP.from_dict(payload["net"]), payload["clip"])


def pretrain_propensity(train: Dataset, config: PropensityConfig,
                        seed: int = 0) -> tuple[PropensityModel, list[float]]:
    """Fit pi(x) on the training split; returns the frozen model and the
    per-epoch loss curve."""
    if train.t.min() == train.t.max():
        raise TrainingError("propensity pretraining needs both treatment groups")
    if config.mode == "constant":
        return PropensityModel(None, config.clip, constant=float(train.t.mean())), []
    if config.mode != "mlp":
        raise ConfigError(f"unknown propensity mode '{config.mode}'")

    rng = np.random.default_rng(seed)
    net = MLP(train.n_features, config.hidden, 1, config.activation, rng)
    opt = Adam(net.params(), lr=config.lr)
    x = train.x
    t_col = train.t.astype(np.float64).reshape(-1, 1)
    curve: list[float] = []
    for _ in range(config.epochs):
        with Tape() as tape:
            logits = net(Tensor(x))
            # bce = mean(softplus(u) - t*u), the stable log-loss on logits
            loss = ad.tmean(ad.sub(ad.softplus(logits), ad.mul(Tensor(t_col), logits)))
            grads = tape.backward(loss, net.params())
        curve.append(loss.item())
        opt.step(grads)
    return PropensityModel(net, config.clip), curve


def transform_response(y: float | np.ndarray, t: int | np.ndarray,
                       pi: float | np.ndarray) -> float | np.ndarray:
    """y / pi * t - y / (1 - pi) * (1 - t); `pi` must lie strictly in (0, 1)."""
    pi_arr = np.asarray(pi, dtype=np.float64)
    if np.any(pi_arr <= 0.0) or np.any(pi_arr >= 1.0):
        raise NumericError("propensity must lie strictly inside (0, 1)")
    y_arr = np.asarray(y, dtype=np.float64)
    t_arr = np.asarray(t, dtype=np.float64)
    out = y_arr / pi_arr * t_arr - y_arr / (1.0 - pi_arr) * (1.0 - t_arr)
    return float(out) if out.ndim == 0 else out


def transformed_responses(dataset: Dataset, model: PropensityModel) -> np.ndarray:
    """Transformed response for every sample, using the frozen estimator."""
    return transform_response(dataset.y, dataset.t, model.predict(dataset.x))


def unbiasedness_probe(dataset: Dataset,
                       pi: np.ndarray | float | None = None) -> dict:
    """Check mean(y_star) against mean(tau_true) on ground-truth data.

    With the true assignment probabilities the transformed response is an
    unbiased uplift estimate, so the gap should sit within a few Monte Carlo
    standard errors. Returns the gap, its standard error and a 3-SE verdict.
    """
    if dataset.tau_true is None:
        raise ContractError("unbiasedness probe needs tau_true")
    if pi is None:
        if dataset.propensity is None:
            raise ContractError("no propensity given and none stored on the dataset")
        pi = dataset.propensity
    y_star = transform_response(dataset.y, dataset.t, pi)
    diff = y_star - dataset.tau_true
    gap = float(np.mean(diff))
    se = float(np.std(diff, ddof=1) / np.sqrt(dataset.n))
    return {
        "mean_y_star": float(np.mean(y_star)),
        "mean_tau_true": float(np.mean(dataset.tau_true)),
        "abs_gap": abs(gap),
        "standard_error": se,
        "z_score": gap / se if se > 0 else float("inf"),
        "within_3se": abs(gap) < 3.0 * se,
        "n": dataset.n,
    }
