"""Joint optimization of the masked uplift model.

One shared Adam step per minibatch updates the base learner and the masker
together. The total objective is the sum of four pieces:

* transformed:    alpha * MSE(uplift prediction on masked input, y_star)
* response:       (1 - alpha) * MSE(predicted outcome at the observed arm, y)
* adversarial:    beta * MSE(prediction on the interpolated adversarial
                  example, detached clean prediction)
* regularization: lam * squared L2 norm of all trainable parameters

Squared error is used throughout (the outcome is continuous). The propensity
estimator is pre-trained, frozen, and excluded from the parameter set; the
transformed responses are computed once before the epoch loop.

Ablation variants: `wo_fs` forces an all-ones mask (the adversarial search
then runs over all features), `wo_afd` drops the adversarial term and never
invokes the search, `wo_fs_jmm` trains on the response label only (mask
kept), and `base` is the plain response-only learner without either module.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Adam, Tape, Tensor
from .adversarial import AdvConfig, adversarial_loss, adversarial_search, draw_gamma, soft_interpolate
from .data import Dataset, Standardizer
from .errors import ConfigError, DivergenceError, NumericError
from .evaluation import evaluate, qini_coefficient
from .feature_selection import MaskerNet, apply_mask, compute_mask, hardened_mask
from .models import build_model, model_from_dict
from .nn import MLP
from .propensity import PropensityModel, transformed_responses

VARIANTS = ("full", "wo_fs", "wo_afd", "wo_fs_jmm", "base")


@dataclass
class TrainConfig:
    architecture: str = "s"
    hidden: tuple[int, ...] = (64, 64)
    activation: str = "elu"
    masker_hidden: tuple[int, ...] = (32,)
    alpha: float = 0.5        # transformed-vs-response trade-off
    beta: float = 1.0         # adversarial loss weight
    lam: float = 1e-4         # L2 regularization
    lr: float = 1e-3
    masker_lr: float = 1e-2   # the selection logits need larger steps to separate
    masker_warmup: int = 5    # epochs with frozen (uniform) selection so the
                              # model sees every feature before logits commit
    batch_size: int = 256
    max_epochs: int = 30
    patience: int = 5
    kappa: float = 0.3        # selected feature ratio; k = floor(kappa * N)
    zeta: float = 0.5         # mask temperature
    mask_hard: bool = True    # straight-through k-hot masks during training
    epsilon: float = 0.01     # adversarial step size
    adv_iterations: int = 1
    gamma_mode: str = "batch"
    seed: int = 0
    variant: str = "full"
    validation_bins: int = 5

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha must lie in [0, 1]")
        if self.beta < 0.0 or self.lam < 0.0:
            raise ConfigError("beta and lam must be non-negative")
        if self.patience > self.max_epochs:
            raise ConfigError("patience cannot exceed max_epochs")
        if not 0.0 < self.kappa <= 1.0:
            raise ConfigError("kappa must lie in (0, 1]")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant '{self.variant}'; pick one of {VARIANTS}")

    # variant switches ---------------------------------------------------------
    @property
    def use_mask(self) -> bool:
        return self.variant not in ("wo_fs", "base")

    @property
    def use_transformed_label(self) -> bool:
        return self.variant not in ("wo_fs_jmm", "base")

    @property
    def use_adversarial(self) -> bool:
        return self.variant not in ("wo_afd", "base") and self.beta > 0.0

    def to_dict(self) -> dict:
        return {
            "architecture": self.architecture, "hidden": list(self.hidden),
            "activation": self.activation, "masker_hidden": list(self.masker_hidden),
            "alpha": self.alpha, "beta": self.beta, "lam": self.lam, "lr": self.lr,
            "masker_lr": self.masker_lr, "masker_warmup": self.masker_warmup,
            "batch_size": self.batch_size, "max_epochs": self.max_epochs,
            "patience": self.patience, "kappa": self.kappa, "zeta": self.zeta,
            "mask_hard": self.mask_hard,
            "epsilon": self.epsilon, "adv_iterations": self.adv_iterations,
            "gamma_mode": self.gamma_mode, "seed": self.seed, "variant": self.variant,
            "validation_bins": self.validation_bins,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "TrainConfig":
        defaults = cls()
        kwargs = {}
        for name in defaults.to_dict():
            value = payload.get(name, getattr(defaults, name))
            if name in ("hidden", "masker_hidden"):
                value = tuple(value)
            kwargs[name] = value
        return cls(**kwargs)


@dataclass
class TrainReport:
    epoch_losses: list[dict] = field(default_factory=list)
    validation: list[float] = field(default_factory=list)  # entry 0 = untrained model
    best_epoch: int = 0
    epochs_run: int = 0
    stopping_reason: str = ""
    adversarial_calls: int = 0
    adversarial_diagnostics: list[dict] = field(default_factory=list)
    propensity_curve: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "epoch_losses": self.epoch_losses,
            "validation": self.validation,
            "best_epoch": self.best_epoch,
            "epochs_run": self.epochs_run,
            "stopping_reason": self.stopping_reason,
            "adversarial_calls": self.adversarial_calls,
            "adversarial_diagnostics": self.adversarial_diagnostics,
            "propensity_curve": self.propensity_curve,
        }


class ModelBundle:
    """Frozen model + masker + propensity triple with one prediction contract.

    At inference the mask is hardened to the exact per-sample top-k of the
    masker probabilities, so predictions are deterministic.
    """

    def __init__(self, model, masker: MaskerNet | None, k: int,
                 propensity: PropensityModel | None = None,
                 standardizer: Standardizer | None = None,
                 meta: dict | None = None):
        self.model = model
        self.masker = masker
        self.k = int(k)
        self.propensity = propensity
        self.standardizer = standardizer
        self.meta = dict(meta or {})

    def masked_input(self, x: np.ndarray) -> np.ndarray:
        if self.masker is None:
            return x
        z = self.masker.probabilities_array(x)
        return x * hardened_mask(z, self.k)

    def predict_uplift(self, x: np.ndarray) -> np.ndarray:
        return self.model.predict_uplift(self.masked_input(x))

    def predict_mu(self, x: np.ndarray, arm: int) -> np.ndarray:
        return self.model.predict_mu(self.masked_input(x), arm)

    def save(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        def dump(name, payload):
            (out / name).write_text(json.dumps(payload, sort_keys=True) + "\n")
        dump("model.json", self.model.to_dict())
        if self.masker is not None:
            dump("masker.json", self.masker.to_dict())
        if self.propensity is not None:
            dump("propensity.json", self.propensity.to_dict())
        if self.standardizer is not None:
            dump("standardizer.json", self.standardizer.to_dict())
        dump("bundle.json", {"k": self.k, "meta": self.meta,
                             "has_masker": self.masker is not None,
                             "has_propensity": self.propensity is not None,
                             "has_standardizer": self.standardizer is not None})

    @classmethod
    def load(cls, out_dir: str | Path) -> "ModelBundle":
        out = Path(out_dir)
        info = json.loads((out / "bundle.json").read_text())
        model = model_from_dict(json.loads((out / "model.json").read_text()))
        masker = None
        if info["has_masker"]:
            masker = MaskerNet.from_dict(json.loads((out / "masker.json").read_text()))
        propensity = None
        if info["has_propensity"]:
            propensity = PropensityModel.from_dict(json.loads((out / "propensity.json").read_text()))
        standardizer = None
        if info["has_standardizer"]:
            standardizer = Standardizer.from_dict(json.loads((out / "standardizer.json").read_text()))
        return cls(model, masker, info["k"], propensity, standardizer, info["meta"])


def selection_budget(n_features: int, kappa: float) -> int:
    return max(1, int(np.floor(kappa * n_features)))


def joint_loss(model, masker: MaskerNet | None, batch: dict, cfg: TrainConfig,
               gumbel_rng: np.random.Generator | None = None,
               gamma_rng: np.random.Generator | None = None,
               mask_noise: np.ndarray | None = None,
               gamma: float | None = None):
    """Build the four loss pieces for one minibatch on a fresh tape.

    `batch` holds arrays x, t, y, y_star. Returns (total, components, tape,
    info): `total` is the scalar tensor, `components` the float values (their
    sum reproduces the total), `info` carries search diagnostics and whether
    the adversarial module ran.

    `mask_noise` and `gamma` are deterministic test hooks.
    """
    x, t, y, y_star = batch["x"], batch["t"], batch["y"], batch["y_star"]
    n, n_features = x.shape
    k = selection_budget(n_features, cfg.kappa)
    adv_cfg = AdvConfig(epsilon=cfg.epsilon, iterations=cfg.adv_iterations,
                        gamma_mode=cfg.gamma_mode)
    t_col = t.astype(np.float64).reshape(-1, 1)
    y_col = y.reshape(-1, 1)
    y_star_col = y_star.reshape(-1, 1)
    info: dict = {"adversarial_invoked": False, "search": None, "gamma": None}

    def piece(name, fn):
        try:
            value = fn()
        except NumericError as exc:
            raise DivergenceError(f"{name} loss diverged: {exc}") from exc
        if not np.isfinite(value.data).all():
            raise DivergenceError(f"{name} loss diverged")
        return value

    with Tape() as tape:
        x_t = Tensor(x)
        if cfg.use_mask:
            if masker is None:
                raise ConfigError(f"variant '{cfg.variant}' needs a masker")
            mask = compute_mask(masker, x_t, k, cfg.zeta, gumbel_rng,
                                noise=mask_noise, hard=cfg.mask_hard)
            mask_values = mask.array
            x_m = apply_mask(x_t, mask.values)
        else:
            mask_values = np.ones_like(x)
            x_m = x_t

        mu1 = model.mu(x_m, 1)
        mu0 = model.mu(x_m, 0)
        uplift = ad.sub(mu1, mu0)

        if cfg.use_transformed_label:
            transformed = piece("transformed", lambda: ad.mul(
                ad.mse(uplift, Tensor(y_star_col)), cfg.alpha))
            response_weight = 1.0 - cfg.alpha
        else:
            transformed = Tensor(0.0)
            response_weight = 1.0
        mu_observed = ad.add(ad.mul(mu1, Tensor(t_col)), ad.mul(mu0, Tensor(1.0 - t_col)))
        response = piece("response", lambda: ad.mul(
            ad.mse(mu_observed, Tensor(y_col)), response_weight))

        if cfg.use_adversarial:
            clean = uplift.data[:, 0].copy()
            x_adv, search_info = adversarial_search(model, x_m.data, mask_values,
                                                    clean, adv_cfg)
            if gamma is None:
                if gamma_rng is None:
                    raise ConfigError("adversarial variant needs a gamma rng")
                gamma = draw_gamma(gamma_rng, n, cfg.gamma_mode)
            x_tilde, gamma = soft_interpolate(x_m, x_adv, gamma=gamma, mode=cfg.gamma_mode)
            adversarial = piece("adversarial", lambda: adversarial_loss(
                model, x_tilde, clean, cfg.beta))
            info.update(adversarial_invoked=True, search=search_info,
                        gamma=gamma if isinstance(gamma, float) else np.asarray(gamma).tolist())
        else:
            adversarial = Tensor(0.0)

        if cfg.lam > 0.0:
            penalty = None
            for p in _trainable_params(model, masker, cfg):
                term = ad.tsum(ad.square(p))
                penalty = term if penalty is None else ad.add(penalty, term)
            regularization = piece("regularization", lambda: ad.mul(penalty, cfg.lam))
        else:
            regularization = Tensor(0.0)

        total = ad.add(ad.add(ad.add(transformed, response), adversarial), regularization)

    components = {
        "transformed": transformed.item(),
        "response": response.item(),
        "adversarial": adversarial.item(),
        "regularization": regularization.item(),
        "total": total.item(),
    }
    return total, components, tape, info


def _trainable_params(model, masker, cfg: TrainConfig) -> list[Tensor]:
    params = list(model.params())
    if cfg.use_mask and masker is not None:
        params += masker.params()
    return params


def train(train_set: Dataset, valid_set: Dataset, propensity: PropensityModel,
          cfg: TrainConfig, metric_fn=None) -> tuple[ModelBundle, TrainReport]:
    """Epoch loop with per-epoch ranking validation and early stopping.

    Validation uses the qini coefficient at `cfg.validation_bins` on the
    hardened-mask predictions; `metric_fn(bundle, epoch) -> float` overrides
    it (test hook). Training stops when the metric has not improved for
    `patience` epochs or at `max_epochs`, and the best epoch's parameters are
    restored.
    """
    seeds = np.random.SeedSequence(cfg.seed).spawn(4)
    model_rng, masker_rng, shuffle_rng, noise_rng = (np.random.default_rng(s) for s in seeds)

    n_features = train_set.n_features
    k = selection_budget(n_features, cfg.kappa)
    model = build_model(cfg.architecture, n_features, cfg.hidden, cfg.activation, model_rng)
    masker = MaskerNet(n_features, cfg.masker_hidden, cfg.activation, masker_rng) \
        if cfg.use_mask else None
    params = _trainable_params(model, masker, cfg)
    # only the global selection logits (output bias) take the faster rate; the
    # input-dependent pathway moves at the model rate to stay stable
    masker_lrs = {masker.net.biases[-1]: cfg.masker_lr} if masker is not None else {}
    optimizer = Adam(params, lr=cfg.lr, param_lrs=masker_lrs)

    y_star = transformed_responses(train_set, propensity)
    x, t, y = train_set.x, train_set.t, train_set.y
    n = train_set.n

    bundle = ModelBundle(model, masker, k, propensity, meta={"variant": cfg.variant})
    report = TrainReport()

    def validation_metric(epoch: int) -> float:
        if metric_fn is not None:
            return float(metric_fn(bundle, epoch))
        preds = bundle.predict_uplift(valid_set.x)
        return qini_coefficient(preds, valid_set.t, valid_set.y, cfg.validation_bins)

    report.validation.append(validation_metric(0))
    best_metric = -np.inf
    best_epoch = 0
    best_params = ad.snapshot_params(params)
    report.stopping_reason = "max_epochs"

    for epoch in range(1, cfg.max_epochs + 1):
        perm = shuffle_rng.permutation(n)
        sums = {"transformed": 0.0, "response": 0.0, "adversarial": 0.0,
                "regularization": 0.0, "total": 0.0}
        adv_disp, adv_skips, gammas = [], 0, []
        warmup = masker is not None and epoch <= cfg.masker_warmup
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            batch = {"x": x[idx], "t": t[idx], "y": y[idx], "y_star": y_star[idx]}
            total, comps, tape, info = joint_loss(model, masker, batch, cfg,
                                                  gumbel_rng=noise_rng, gamma_rng=noise_rng)
            grads = tape.backward(total, params)
            if warmup:
                # selection logits stay at their uniform start while the model
                # learns under randomly sampled feature subsets
                for p in masker.params():
                    grads[p] = np.zeros_like(p.data)
            optimizer.step(grads)
            w = idx.size / n
            for key in sums:
                sums[key] += comps[key] * w
            if info["adversarial_invoked"]:
                report.adversarial_calls += 1
                adv_disp.append(info["search"]["mean_displacement"])
                adv_skips += info["search"]["skipped_rows"]
                gammas.append(info["gamma"])
        report.epoch_losses.append(sums)
        if adv_disp:
            report.adversarial_diagnostics.append({
                "epoch": epoch,
                "mean_displacement": float(np.mean(adv_disp)),
                "skipped_rows": adv_skips,
                "gammas": gammas,
            })

        metric = validation_metric(epoch)
        report.validation.append(metric)
        if metric > best_metric:
            best_metric = metric
            best_epoch = epoch
            best_params = ad.snapshot_params(params)
        elif epoch - best_epoch >= cfg.patience:
            report.stopping_reason = "early_stopping"
            report.epochs_run = epoch
            break
        report.epochs_run = epoch

    ad.restore_params(params, best_params)
    report.best_epoch = best_epoch

    if cfg.architecture == "dragonlite":
        _fit_dragonlite_treatment_head(model, x, t, rng_steps=50)
    return bundle, report


def _fit_dragonlite_treatment_head(model, x: np.ndarray, t: np.ndarray,
                                   steps: int = 50) -> None:
    """Post-hoc fit of the auxiliary treatment head (trunk stays frozen)."""
    head_params = model.head_prop.params()
    optimizer = Adam(head_params, lr=1e-2)
    t_col = t.astype(np.float64).reshape(-1, 1)
    for _ in range(steps):
        with Tape() as tape:
            logits = model.propensity_logits(Tensor(x))
            loss = ad.tmean(ad.sub(ad.softplus(logits), ad.mul(Tensor(t_col), logits)))
            grads = tape.backward(loss, head_params)
        optimizer.step(grads)


def ablate(variant: str, train_set: Dataset, valid_set: Dataset, test_set: Dataset,
           propensity: PropensityModel, cfg: TrainConfig,
           bin_counts: tuple[int, ...] = (5, 10)) -> dict:
    """Train one named variant with otherwise identical config and seeds,
    then score it on the held-out split."""
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant '{variant}'; pick one of {VARIANTS}")
    bundle, report = train(train_set, valid_set, propensity, replace(cfg, variant=variant))
    preds = bundle.predict_uplift(test_set.x)
    eval_report = evaluate(preds, test_set.t, test_set.y, bin_counts)
    return {"variant": variant, "bundle": bundle, "train_report": report,
            "eval_report": eval_report}
