"""Base uplift learners exposing both conditional means and their difference.

All learners share one inference contract: ``mu(x, arm)`` is the conditional
outcome mean under control (arm 0) or treatment (arm 1), and the uplift
prediction is ``mu(x, 1) - mu(x, 0)`` by construction. The symbolic methods
take and return tape tensors so gradients flow to parameters and, when the
input tensor requires gradients, to the input itself.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .errors import ConfigError, NumericError
from .nn import ACTIVATIONS, MLP

ARCHITECTURES = ("s", "t", "dragonlite")


def _check_input(x: np.ndarray) -> None:
    if not np.all(np.isfinite(x)):
        raise NumericError("model input contains non-finite values")


class _BaseUplift:
    kind: str

    def params(self) -> list[Tensor]:
        raise NotImplementedError

    def mu(self, x: Tensor, arm: int) -> Tensor:
        raise NotImplementedError

    def uplift(self, x: Tensor) -> Tensor:
        return ad.sub(self.mu(x, 1), self.mu(x, 0))

    # numeric convenience wrappers -------------------------------------------
    def predict_mu(self, x: np.ndarray, t: int) -> np.ndarray:
        if t not in (0, 1):
            raise ConfigError(f"treatment arm must be 0 or 1, got {t}")
        _check_input(x)
        with Tape.paused():
            return self.mu(Tensor(x), t).data[:, 0]

    def predict_uplift(self, x: np.ndarray) -> np.ndarray:
        _check_input(x)
        with Tape.paused():
            return self.uplift(Tensor(x)).data[:, 0]

    def to_dict(self) -> dict:
        raise NotImplementedError

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True) + "\n")


class SLearner(_BaseUplift):
    """One shared network on [x; t]; the group index is flipped at inference
    to obtain the counterfactual conditional mean.

    The treatment indicator enters as one extra input column; it is not part
    of the feature vector, so masks and perturbations never touch it.
    """

    kind = "s"

    def __init__(self, n_features: int, hidden: tuple[int, ...] = (64, 64),
                 activation: str = "elu", rng: np.random.Generator | None = None):
        self.n_features = int(n_features)
        self.net = MLP(self.n_features + 1, hidden, 1, activation, rng)

    def params(self) -> list[Tensor]:
        return self.net.params()

    def mu(self, x: Tensor, arm: int) -> Tensor:
        col = Tensor(np.full((x.shape[0], 1), float(arm)))
        return self.net(ad.concat_cols(x, col))

    def to_dict(self) -> dict:
        return {"architecture": "s", "n_features": self.n_features, "net": self.net.to_dict()}

    @classmethod
    def from_dict(cls, payload: dict) -> "SLearner":
        model = cls.__new__(cls)
        model.n_features = payload["n_features"]
        model.net = MLP.from_dict(payload["net"])
        return model


class TLearner(_BaseUplift):
    """Separate control/treatment networks over the same features."""

    kind = "t"

    def __init__(self, n_features: int, hidden: tuple[int, ...] = (64, 64),
                 activation: str = "elu", rng: np.random.Generator | None = None):
        self.n_features = int(n_features)
        rng = rng if rng is not None else np.random.default_rng()
        self.net0 = MLP(self.n_features, hidden, 1, activation, rng)
        self.net1 = MLP(self.n_features, hidden, 1, activation, rng)

    def params(self) -> list[Tensor]:
        return self.net0.params() + self.net1.params()

    def mu(self, x: Tensor, arm: int) -> Tensor:
        return (self.net1 if arm == 1 else self.net0)(x)

    def to_dict(self) -> dict:
        return {"architecture": "t", "n_features": self.n_features,
                "net0": self.net0.to_dict(), "net1": self.net1.to_dict()}

    @classmethod
    def from_dict(cls, payload: dict) -> "TLearner":
        model = cls.__new__(cls)
        model.n_features = payload["n_features"]
        model.net0 = MLP.from_dict(payload["net0"])
        model.net1 = MLP.from_dict(payload["net1"])
        return model


class DragonLite(_BaseUplift):
    """Reduced shared-representation learner: one trunk, two outcome heads,
    plus a treatment-probability head that is trained but never used for
    uplift prediction. Kept for the base-model compatibility study."""

    kind = "dragonlite"

    def __init__(self, n_features: int, hidden: tuple[int, ...] = (64, 64),
                 activation: str = "elu", rng: np.random.Generator | None = None):
        if not hidden:
            raise ConfigError("dragonlite needs at least one hidden layer")
        self.n_features = int(n_features)
        self.activation = activation
        rng = rng if rng is not None else np.random.default_rng()
        self.trunk = MLP(self.n_features, tuple(hidden[:-1]), hidden[-1], activation, rng)
        self.head0 = MLP(hidden[-1], (), 1, activation, rng)
        self.head1 = MLP(hidden[-1], (), 1, activation, rng)
        self.head_prop = MLP(hidden[-1], (), 1, activation, rng)

    def params(self) -> list[Tensor]:
        # the treatment head is trained separately, after the joint loop
        return self.trunk.params() + self.head0.params() + self.head1.params()

    def representation(self, x: Tensor) -> Tensor:
        return ACTIVATIONS[self.activation](self.trunk(x))

    def mu(self, x: Tensor, arm: int) -> Tensor:
        return (self.head1 if arm == 1 else self.head0)(self.representation(x))

    def propensity_logits(self, x: Tensor) -> Tensor:
        return self.head_prop(self.representation(x))

    def to_dict(self) -> dict:
        return {"architecture": "dragonlite", "n_features": self.n_features,
                "activation": self.activation, "trunk": self.trunk.to_dict(),
                "head0": self.head0.to_dict(), "head1": self.head1.to_dict(),
                "head_prop": self.head_prop.to_dict()}

    @classmethod
    def from_dict(cls, payload: dict) -> "DragonLite":
        model = cls.__new__(cls)
        model.n_features = payload["n_features"]
        model.activation = payload["activation"]
        model.trunk = MLP.from_dict(payload["trunk"])
        model.head0 = MLP.from_dict(payload["head0"])
        model.head1 = MLP.from_dict(payload["head1"])
        model.head_prop = MLP.from_dict(payload["head_prop"])
        return model


_CLASSES = {"s": SLearner, "t": TLearner, "dragonlite": DragonLite}


def build_model(architecture: str, n_features: int, hidden: tuple[int, ...] = (64, 64),
                activation: str = "elu", rng: np.random.Generator | None = None) -> _BaseUplift:
    if architecture not in _CLASSES:
        raise ConfigError(f"unknown architecture '{architecture}'; pick one of {ARCHITECTURES}")
    return _CLASSES[architecture](n_features, hidden, activation, rng)


def model_from_dict(payload: dict) -> _BaseUplift:
    arch = payload.get("architecture")
    if arch not in _CLASSES:
        raise ConfigError(f"checkpoint names unknown architecture '{arch}'")
    return _CLASSES[arch].from_dict(payload)


def load_model(path: str | Path) -> _BaseUplift:
    return model_from_dict(json.loads(Path(path).read_text()))
