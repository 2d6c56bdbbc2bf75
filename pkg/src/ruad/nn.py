"""Small fully-connected networks built on the differentiation tape."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError

ACTIVATIONS = {
    "relu": ad.relu,
    "elu": ad.elu,
    "tanh": ad.tanh,
    "sigmoid": ad.sigmoid,
}


class MLP:
    """Fully-connected network: affine layers with an activation in between.

    Weights use scaled-normal initialization (std = sqrt(2 / fan_in)), biases
    start at zero. `hidden=()` yields a single affine layer.
    """

    def __init__(self, in_dim: int, hidden: tuple[int, ...], out_dim: int,
                 activation: str = "elu", rng: np.random.Generator | None = None):
        if activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation '{activation}'")
        if in_dim < 1 or out_dim < 1 or any(h < 1 for h in hidden):
            raise ConfigError("layer sizes must be positive")
        rng = rng if rng is not None else np.random.default_rng()
        self.in_dim = int(in_dim)
        self.hidden = tuple(int(h) for h in hidden)
        self.out_dim = int(out_dim)
        self.activation = activation
        sizes = [self.in_dim, *self.hidden, self.out_dim]
        self.weights: list[Tensor] = []
        self.biases: list[Tensor] = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
            self.weights.append(Tensor(w, requires_grad=True))
            self.biases.append(Tensor(np.zeros(fan_out), requires_grad=True))

    def params(self) -> list[Tensor]:
        out: list[Tensor] = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def __call__(self, x: Tensor) -> Tensor:
        act = ACTIVATIONS[self.activation]
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = ad.add_bias(ad.matmul(h, w), b)
            if i < last:
                h = act(h)
        return h

    def forward_array(self, x: np.ndarray) -> np.ndarray:
        """Numeric forward pass with recording suspended."""
        with ad.Tape.paused():
            return self(Tensor(x)).data

    # -- checkpointing -------------------------------------------------------
    def to_dict(self) -> dict:
        flat: list[float] = []
        for w, b in zip(self.weights, self.biases):
            flat.extend(w.data.reshape(-1).tolist())
            flat.extend(b.data.reshape(-1).tolist())
        return {
            "in_dim": self.in_dim,
            "hidden": list(self.hidden),
            "out_dim": self.out_dim,
            "activation": self.activation,
            "params": flat,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "MLP":
        net = cls(payload["in_dim"], tuple(payload["hidden"]), payload["out_dim"],
                  payload["activation"], rng=np.random.default_rng(0))
        flat = np.asarray(payload["params"], dtype=np.float64)
        pos = 0
        for w, b in zip(net.weights, net.biases):
            nw = w.data.size
            w.data = flat[pos:pos + nw].reshape(w.data.shape).copy()
            pos += nw
            nb = b.data.size
            b.data = flat[pos:pos + nb].reshape(b.data.shape).copy()
            pos += nb
        if pos != flat.size:
            raise ConfigError(f"checkpoint holds {flat.size} values, architecture needs {pos}")
        return net
