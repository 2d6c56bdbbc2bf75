"""Differentiable selection of an approximately k-hot feature mask.

A masker network maps each sample to a probability vector z over the N
features (softmax output, so z_j >= 0 and sum_j z_j = 1). One standard Gumbel
perturbation xi_j = -log(-log u_j) is drawn per feature and the perturbed
log-probabilities are sharpened k times by a temperature-zeta softmax, each
round excluding the features already claimed, so that the elementwise maximum
of the k rounds approaches the exact k-hot indicator of the top-k perturbed
keys as zeta -> 0. Selecting the k largest perturbed keys is the Gumbel-max
draw of k distinct features proportional to z, which is what the hardened
mask must reproduce.

At evaluation time no noise is drawn: the mask is hardened to the exact top-k
of z per sample, which keeps inference deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import NumericError, ShapeError
from .nn import MLP

Z_FLOOR = 1e-12  # probabilities are floored here before the log
_EXCLUDED = -1e30


class MaskerNet:
    """Network producing the per-feature selection probabilities.

    The output layer starts at zero so the initial distribution is uniform
    over features: selection pressure then comes from the training signal
    instead of the random initialization.
    """

    def __init__(self, n_features: int, hidden: tuple[int, ...] = (32,),
                 activation: str = "elu", rng: np.random.Generator | None = None):
        self.n_features = int(n_features)
        self.net = MLP(self.n_features, hidden, self.n_features, activation, rng)
        self.net.weights[-1].data = np.zeros_like(self.net.weights[-1].data)

    def params(self) -> list[Tensor]:
        return self.net.params()

    def probabilities(self, x: Tensor) -> Tensor:
        """z(x): non-negative, each row summing to one."""
        return ad.softmax_rows(self.net(x))

    def probabilities_array(self, x: np.ndarray) -> np.ndarray:
        logits = self.net.forward_array(x)
        shifted = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=1, keepdims=True)

    def to_dict(self) -> dict:
        return {"n_features": self.n_features, "net": self.net.to_dict()}

    @classmethod
    def from_dict(cls, payload: dict) -> "MaskerNet":
        masker = cls.__new__(cls)
        masker.n_features = payload["n_features"]
        masker.net = MLP.from_dict(payload["net"])
        return masker


@dataclass
class MaskVector:
    """Soft selection weights for a batch, plus the draw's parameters."""

    values: Tensor  # (n, N), every entry in [0, 1]
    k: int
    zeta: float

    @property
    def array(self) -> np.ndarray:
        return self.values.data


def compute_mask(masker: MaskerNet, x: Tensor, k: int, zeta: float,
                 rng: np.random.Generator | None = None,
                 noise: np.ndarray | None = None,
                 hard: bool = False) -> MaskVector:
    """Draw a soft top-k mask for every row of `x`.

    `noise` overrides the Gumbel draw (a test hook; pass zeros for the
    deterministic softmax(log z / zeta) case). Gradients flow to the masker
    parameters through z; the winner bookkeeping is plain data.

    With ``hard=True`` the returned values are the exact k-hot indicator of
    the sampled selection while gradients still flow through the soft
    relaxation (straight-through), which keeps the training-time inputs on
    the same scale as the hardened masks used at inference.
    """
    n, n_features = x.shape
    if not 1 <= k <= n_features:
        raise NumericError(f"selection budget k={k} outside [1, {n_features}]")
    if zeta <= 0.0:
        raise NumericError("temperature zeta must be positive")
    if noise is None:
        if rng is None:
            raise NumericError("compute_mask needs an rng when noise is not injected")
        u = np.clip(rng.uniform(size=(n, n_features)), 1e-15, 1.0 - 1e-15)
        noise = -np.log(-np.log(u))
    elif noise.shape != (n, n_features):
        raise ShapeError(f"noise shape {noise.shape} does not match input {x.shape}")

    z = masker.probabilities(x)
    log_z = ad.log(ad.maximum(z, Z_FLOOR))
    alpha = ad.div(ad.add(log_z, Tensor(noise)), zeta)
    keys = log_z.data + noise

    rows = np.arange(n)
    exclusion = np.zeros((n, n_features))
    indicator = np.zeros((n, n_features))
    mask: Tensor | None = None
    for _ in range(k):
        round_softmax = ad.softmax_rows(ad.add(alpha, Tensor(exclusion.copy())))
        mask = round_softmax if mask is None else ad.maximum(mask, round_softmax)
        winners = np.argmax(keys + exclusion, axis=1)
        indicator[rows, winners] = 1.0
        exclusion[rows, winners] = _EXCLUDED
    if hard:
        mask = ad.add(mask, Tensor(indicator - mask.data))
    return MaskVector(mask, k, float(zeta))


def apply_mask(x, m):
    """Elementwise product of a sample batch and its mask (tensor or array)."""
    x_shape = x.shape
    m_shape = m.shape
    if x_shape != m_shape:
        raise ShapeError(f"mask shape {m_shape} does not match input {x_shape}")
    if isinstance(x, Tensor) or isinstance(m, Tensor):
        return ad.mul(x, m)
    return x * m


def selected_indices(m: np.ndarray | MaskVector, k: int) -> np.ndarray:
    """Indices of the k largest mask entries; ties go to the lowest index."""
    values = m.array if isinstance(m, MaskVector) else np.asarray(m)
    if values.ndim != 1:
        raise ShapeError("selected_indices expects a single mask row")
    top = np.argsort(-values, kind="stable")[:k]
    return np.sort(top)


def hardened_mask(z: np.ndarray, k: int) -> np.ndarray:
    """Exact top-k indicator of the probability rows (deterministic)."""
    z = np.asarray(z)
    single = z.ndim == 1
    rows = z.reshape(1, -1) if single else z
    out = np.zeros_like(rows)
    for i in range(rows.shape[0]):
        out[i, selected_indices(rows[i], k)] = 1.0
    return out[0] if single else out


def mask_summary(masker: MaskerNet, x: np.ndarray, k: int) -> dict:
    """Aggregate selection behaviour over a sample set, for the JSON report."""
    z = masker.probabilities_array(x)
    hard = hardened_mask(z, k)
    mean_z = z.mean(axis=0)
    return {
        "k": int(k),
        "mean_probability": mean_z.tolist(),
        "selection_frequency": hard.mean(axis=0).tolist(),
        "global_selected": selected_indices(mean_z, k).tolist(),
    }
