"""Robustness-enhanced uplift modeling.

A library and command-line tool for estimating individual treatment effects
with neural uplift learners, selecting the sensitive key features through a
differentiable top-k mask, supervising jointly on true and transformed
responses, and desensitizing the model against perturbations of the selected
features via virtual adversarial training.
"""

from .autodiff import Adam, Tape, Tensor
from .data import (
    Dataset,
    DatasetSchema,
    PerturbationSpec,
    SyntheticConfig,
    Standardizer,
    generate_synthetic,
    ihdp_schema,
    load_csv,
    perturb,
    split,
    write_csv,
)
from .propensity import (
    PropensityConfig,
    PropensityModel,
    pretrain_propensity,
    transform_response,
    transformed_responses,
    unbiasedness_probe,
)
from .models import DragonLite, SLearner, TLearner, build_model, load_model
from .feature_selection import (
    MaskerNet,
    MaskVector,
    apply_mask,
    compute_mask,
    hardened_mask,
    selected_indices,
)
from .adversarial import AdvConfig, adversarial_loss, adversarial_search, soft_interpolate
from .trainer import ModelBundle, TrainConfig, TrainReport, ablate, joint_loss, train
from .evaluation import (
    EvalReport,
    RobustnessReport,
    evaluate,
    kendall_uplift_rank,
    qini_coefficient,
    robustness_protocol,
    uplift_bars,
)

__version__ = "0.1.0"
