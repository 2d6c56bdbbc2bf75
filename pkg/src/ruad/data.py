"""Dataset schema, CSV ingestion, synthetic generation, splitting, perturbation.

A dataset is an immutable bundle of an encoded feature matrix ``x``, a binary
treatment vector ``t`` and an outcome vector ``y``. Synthetic and
semi-synthetic datasets additionally carry both potential outcomes and the
per-sample true uplift ``tau_true = y1 - y0``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, IngestionError, ProtocolError

FEATURE_KINDS = ("numerical", "binary", "categorical")
ROLES = ("feature", "treatment", "outcome", "tau_true", "y0", "y1", "propensity")


@dataclass
class ColumnSpec:
    """One CSV column: its role and, for features, how to encode it."""

    name: str
    role: str = "feature"
    kind: str = "numerical"
    encoding: str = "ordinal"  # ordinal | onehot, categorical features only
    categories: list[str] | None = None

    def validate(self) -> None:
        if self.role not in ROLES:
            raise ConfigError(f"column '{self.name}': unknown role '{self.role}'")
        if self.role == "feature" and self.kind not in FEATURE_KINDS:
            raise ConfigError(f"column '{self.name}': unknown kind '{self.kind}'")
        if self.kind == "categorical" and self.encoding not in ("ordinal", "onehot"):
            raise ConfigError(f"column '{self.name}': unknown encoding '{self.encoding}'")


@dataclass
class DatasetSchema:
    """Column roles and feature kinds for one delimited file."""

    columns: list[ColumnSpec]

    def __post_init__(self):
        for col in self.columns:
            col.validate()
        if sum(c.role == "treatment" for c in self.columns) != 1:
            raise ConfigError("schema needs exactly one treatment column")
        if sum(c.role == "outcome" for c in self.columns) != 1:
            raise ConfigError("schema needs exactly one outcome column")
        if sum(c.role == "feature" for c in self.columns) < 1:
            raise ConfigError("schema needs at least one feature column")

    def feature_columns(self) -> list[ColumnSpec]:
        return [c for c in self.columns if c.role == "feature"]

    def column(self, role: str) -> ColumnSpec | None:
        for c in self.columns:
            if c.role == role:
                return c
        return None

    def to_dict(self) -> dict:
        cols = []
        for c in self.columns:
            entry: dict = {"name": c.name, "role": c.role}
            if c.role == "feature":
                entry["kind"] = c.kind
                if c.kind == "categorical":
                    entry["encoding"] = c.encoding
                    if c.categories is not None:
                        entry["categories"] = list(c.categories)
            cols.append(entry)
        return {"columns": cols}

    @classmethod
    def from_dict(cls, payload: dict) -> "DatasetSchema":
        cols = [
            ColumnSpec(
                name=e["name"],
                role=e.get("role", "feature"),
                kind=e.get("kind", "numerical"),
                encoding=e.get("encoding", "ordinal"),
                categories=e.get("categories"),
            )
            for e in payload["columns"]
        ]
        return cls(cols)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "DatasetSchema":
        return cls.from_dict(json.loads(Path(path).read_text()))


def ihdp_schema(n_features: int = 25, n_continuous: int = 6,
                with_counterfactual: bool = True) -> DatasetSchema:
    """Schema for the common IHDP realization layout.

    Columns: treatment, y_factual[, y_cfactual, mu0, mu1], x1..x{n}. The first
    `n_continuous` features are continuous, the rest binary.
    """
    cols = [ColumnSpec("treatment", role="treatment"), ColumnSpec("y_factual", role="outcome")]
    if with_counterfactual:
        cols.append(ColumnSpec("y_cfactual", role="tau_true"))  # resolved against t below
    for i in range(1, n_features + 1):
        kind = "numerical" if i <= n_continuous else "binary"
        cols.append(ColumnSpec(f"x{i}", kind=kind))
    schema = DatasetSchema(cols)
    # flag so the loader knows tau_true column holds the counterfactual outcome
    schema._counterfactual_tau = with_counterfactual  # type: ignore[attr-defined]
    return schema


class Dataset:
    """Immutable encoded dataset. Arrays are locked against writes."""

    def __init__(self, x: np.ndarray, t: np.ndarray, y: np.ndarray,
                 feature_names: list[str], continuous_mask: np.ndarray,
                 tau_true: np.ndarray | None = None,
                 y0: np.ndarray | None = None, y1: np.ndarray | None = None,
                 propensity: np.ndarray | None = None,
                 schema: DatasetSchema | None = None):
        self.x = np.ascontiguousarray(x, dtype=np.float64)
        self.t = np.ascontiguousarray(t, dtype=np.int64)
        self.y = np.ascontiguousarray(y, dtype=np.float64)
        self.feature_names = list(feature_names)
        self.continuous_mask = np.ascontiguousarray(continuous_mask, dtype=bool)
        self.tau_true = None if tau_true is None else np.ascontiguousarray(tau_true, dtype=np.float64)
        self.y0 = None if y0 is None else np.ascontiguousarray(y0, dtype=np.float64)
        self.y1 = None if y1 is None else np.ascontiguousarray(y1, dtype=np.float64)
        self.propensity = None if propensity is None else np.ascontiguousarray(propensity, dtype=np.float64)
        self.schema = schema
        if self.x.ndim != 2 or self.x.shape[0] != self.t.shape[0] or self.x.shape[0] != self.y.shape[0]:
            raise ConfigError("feature/treatment/outcome lengths disagree")
        if self.x.shape[1] != len(self.feature_names) or self.x.shape[1] != self.continuous_mask.shape[0]:
            raise ConfigError("feature metadata does not match the feature matrix")
        if not np.all(np.isin(self.t, (0, 1))):
            raise ConfigError("treatment indicator must be 0/1")
        for arr in (self.x, self.t, self.y, self.tau_true, self.y0, self.y1, self.propensity):
            if arr is not None:
                arr.setflags(write=False)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def n_features(self) -> int:
        return self.x.shape[1]

    def subset(self, indices: np.ndarray) -> "Dataset":
        idx = np.asarray(indices)
        pick = lambda a: None if a is None else a[idx]
        return Dataset(self.x[idx], self.t[idx], self.y[idx], self.feature_names,
                       self.continuous_mask, pick(self.tau_true), pick(self.y0),
                       pick(self.y1), pick(self.propensity), self.schema)

    def with_x(self, new_x: np.ndarray) -> "Dataset":
        return Dataset(new_x, self.t, self.y, self.feature_names, self.continuous_mask,
                       self.tau_true, self.y0, self.y1, self.propensity, self.schema)


# -- CSV ingestion ------------------------------------------------------------

def _parse_float(raw: str, row: int, col: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise IngestionError(f"row {row}, column '{col}': cannot parse '{raw}' as a number") from None


def load_csv(path: str | Path, schema: DatasetSchema) -> Dataset:
    """Read a delimited file into an encoded dataset.

    Categorical features are encoded per their column spec (ordinal index or
    one-hot columns named ``name=category``). Numeric standardization is a
    separate, split-aware step (see `Standardizer`).
    """
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"no such file: {path}")
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in schema.columns:
            if col.name not in header:
                raise IngestionError(f"missing column '{col.name}'")
        rows = list(reader)
    if not rows:
        raise IngestionError(f"{path}: no data rows")

    # Resolve categorical vocabularies up front so encodings are stable.
    vocab: dict[str, list[str]] = {}
    for col in schema.feature_columns():
        if col.kind != "categorical":
            continue
        if col.categories is not None:
            vocab[col.name] = list(col.categories)
        else:
            vocab[col.name] = sorted({r[col.name] for r in rows})

    feature_names: list[str] = []
    continuous: list[bool] = []
    for col in schema.feature_columns():
        if col.kind == "categorical" and col.encoding == "onehot":
            for cat in vocab[col.name]:
                feature_names.append(f"{col.name}={cat}")
                continuous.append(False)
        else:
            feature_names.append(col.name)
            continuous.append(col.kind == "numerical")

    n = len(rows)
    x = np.zeros((n, len(feature_names)))
    t = np.zeros(n, dtype=np.int64)
    y = np.zeros(n)
    aux: dict[str, np.ndarray] = {}
    for role in ("tau_true", "y0", "y1", "propensity"):
        if schema.column(role) is not None:
            aux[role] = np.zeros(n)

    for i, row in enumerate(rows):
        j = 0
        for col in schema.columns:
            raw = row[col.name]
            if col.role == "treatment":
                val = _parse_float(raw, i, col.name)
                if val not in (0.0, 1.0):
                    raise IngestionError(f"row {i}, column '{col.name}': treatment must be 0 or 1, got {raw}")
                t[i] = int(val)
            elif col.role == "outcome":
                y[i] = _parse_float(raw, i, col.name)
            elif col.role == "feature":
                if col.kind == "categorical":
                    cats = vocab[col.name]
                    if raw not in cats:
                        raise IngestionError(f"row {i}, column '{col.name}': unknown category '{raw}'")
                    if col.encoding == "onehot":
                        x[i, j + cats.index(raw)] = 1.0
                        j += len(cats)
                    else:
                        x[i, j] = float(cats.index(raw))
                        j += 1
                else:
                    x[i, j] = _parse_float(raw, i, col.name)
                    j += 1
            else:
                aux[col.role][i] = _parse_float(raw, i, col.name)

    tau_true = aux.get("tau_true")
    y0, y1 = aux.get("y0"), aux.get("y1")
    if tau_true is not None and getattr(schema, "_counterfactual_tau", False):
        # column holds the counterfactual outcome, not the effect itself
        y_c = tau_true
        y0 = np.where(t == 1, y_c, y)
        y1 = np.where(t == 1, y, y_c)
        tau_true = y1 - y0
    if tau_true is None and y0 is not None and y1 is not None:
        tau_true = y1 - y0

    if not np.all(np.isfinite(x)):
        raise IngestionError("non-finite feature value")
    return Dataset(x, t, y, feature_names, np.asarray(continuous, dtype=bool),
                   tau_true, y0, y1, aux.get("propensity"), schema)


def write_csv(dataset: Dataset, path: str | Path) -> None:
    """Write a dataset (with any ground-truth columns) as a delimited file.

    Only valid for datasets whose features are plain numeric columns, which is
    the case for everything the synthetic generator produces.
    """
    header = list(dataset.feature_names) + ["treatment", "outcome"]
    extras: list[tuple[str, np.ndarray]] = []
    for name, arr in (("tau_true", dataset.tau_true), ("y0", dataset.y0),
                      ("y1", dataset.y1), ("propensity", dataset.propensity)):
        if arr is not None:
            header.append(name)
            extras.append((name, arr))
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(dataset.n):
            row = [repr(float(v)) for v in dataset.x[i]]
            row.append(str(int(dataset.t[i])))
            row.append(repr(float(dataset.y[i])))
            row.extend(repr(float(arr[i])) for _, arr in extras)
            writer.writerow(row)


# -- standardization ----------------------------------------------------------

class Standardizer:
    """Z-score transform for continuous features; statistics come from the
    training split only and are applied unchanged to the other splits."""

    def __init__(self, means: np.ndarray, stds: np.ndarray, continuous_mask: np.ndarray):
        self.means = np.asarray(means, dtype=np.float64)
        self.stds = np.asarray(stds, dtype=np.float64)
        self.continuous_mask = np.asarray(continuous_mask, dtype=bool)

    @classmethod
    def fit(cls, train: Dataset) -> "Standardizer":
        mask = train.continuous_mask
        means = np.zeros(train.n_features)
        stds = np.ones(train.n_features)
        if mask.any():
            means[mask] = train.x[:, mask].mean(axis=0)
            sd = train.x[:, mask].std(axis=0)
            stds[mask] = np.where(sd > 0.0, sd, 1.0)
        return cls(means, stds, mask)

    def transform(self, dataset: Dataset) -> Dataset:
        x = dataset.x.copy()
        m = self.continuous_mask
        x[:, m] = (x[:, m] - self.means[m]) / self.stds[m]
        return dataset.with_x(x)

    def inverse_transform_x(self, x: np.ndarray) -> np.ndarray:
        out = np.array(x, copy=True)
        m = self.continuous_mask
        out[:, m] = out[:, m] * self.stds[m] + self.means[m]
        return out

    def to_dict(self) -> dict:
        return {
            "means": self.means.tolist(),
            "stds": self.stds.tolist(),
            "continuous_mask": self.continuous_mask.astype(int).tolist(),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "Standardizer":
        return cls(np.asarray(payload["means"]), np.asarray(payload["stds"]),
                   np.asarray(payload["continuous_mask"], dtype=bool))


# -- synthetic generation -------------------------------------------------------

@dataclass
class ResponseSpec:
    """Linear + pairwise-interaction response surfaces with shared noise.

    The baseline applies to both potential outcomes; the effect surface is
    added to the treated outcome only, so ``tau_true`` equals the effect
    surface exactly.
    """

    baseline_intercept: float = 0.0
    baseline_coef: list[float] = field(default_factory=list)
    baseline_interactions: list[tuple[int, int, float]] = field(default_factory=list)
    tau_intercept: float = 0.0
    tau_coef: list[float] = field(default_factory=list)
    tau_interactions: list[tuple[int, int, float]] = field(default_factory=list)
    noise_std: float = 1.0

    def _surface(self, x: np.ndarray, intercept: float, coef: list[float],
                 interactions: list[tuple[int, int, float]]) -> np.ndarray:
        out = np.full(x.shape[0], float(intercept))
        if coef:
            c = np.zeros(x.shape[1])
            c[: len(coef)] = coef
            out = out + x @ c
        for i, j, w in interactions:
            out = out + w * x[:, i] * x[:, j]
        return out

    def baseline(self, x: np.ndarray) -> np.ndarray:
        return self._surface(x, self.baseline_intercept, self.baseline_coef,
                             self.baseline_interactions)

    def tau(self, x: np.ndarray) -> np.ndarray:
        return self._surface(x, self.tau_intercept, self.tau_coef, self.tau_interactions)

    def to_dict(self) -> dict:
        return {
            "baseline_intercept": self.baseline_intercept,
            "baseline_coef": list(self.baseline_coef),
            "baseline_interactions": [list(t) for t in self.baseline_interactions],
            "tau_intercept": self.tau_intercept,
            "tau_coef": list(self.tau_coef),
            "tau_interactions": [list(t) for t in self.tau_interactions],
            "noise_std": self.noise_std,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "ResponseSpec":
        return cls(
            baseline_intercept=payload.get("baseline_intercept", 0.0),
            baseline_coef=list(payload.get("baseline_coef", [])),
            baseline_interactions=[tuple(t) for t in payload.get("baseline_interactions", [])],
            tau_intercept=payload.get("tau_intercept", 0.0),
            tau_coef=list(payload.get("tau_coef", [])),
            tau_interactions=[tuple(t) for t in payload.get("tau_interactions", [])],
            noise_std=payload.get("noise_std", 1.0),
        )


@dataclass
class SyntheticConfig:
    n: int = 1000
    n_numeric: int = 10
    n_categorical: int = 0
    categorical_cardinality: int = 3
    seed: int = 0
    assignment: dict = field(default_factory=lambda: {"kind": "constant", "p": 0.5})
    response: ResponseSpec = field(default_factory=ResponseSpec)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "n_numeric": self.n_numeric,
            "n_categorical": self.n_categorical,
            "categorical_cardinality": self.categorical_cardinality,
            "seed": self.seed,
            "assignment": dict(self.assignment),
            "response": self.response.to_dict(),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "SyntheticConfig":
        return cls(
            n=payload.get("n", 1000),
            n_numeric=payload.get("n_numeric", 10),
            n_categorical=payload.get("n_categorical", 0),
            categorical_cardinality=payload.get("categorical_cardinality", 3),
            seed=payload.get("seed", 0),
            assignment=dict(payload.get("assignment", {"kind": "constant", "p": 0.5})),
            response=ResponseSpec.from_dict(payload.get("response", {})),
        )


def generate_synthetic(config: SyntheticConfig) -> Dataset:
    """Draw a dataset with known potential outcomes.

    Both potential outcomes share one noise draw per sample, so the stored
    ``tau_true = y1 - y0`` is exactly the configured effect surface and the
    observed outcome satisfies ``y = t*y1 + (1-t)*y0``.
    """
    if config.n <= 0:
        raise ConfigError("n must be positive")
    n_feat = config.n_numeric + config.n_categorical
    if n_feat < 1:
        raise ConfigError("need at least one feature")
    rng = np.random.default_rng(config.seed)

    cols = [rng.normal(0.0, 1.0, size=(config.n, config.n_numeric))]
    names = [f"x{i}" for i in range(config.n_numeric)]
    continuous = [True] * config.n_numeric
    for c in range(config.n_categorical):
        cols.append(rng.integers(0, config.categorical_cardinality,
                                 size=(config.n, 1)).astype(np.float64))
        names.append(f"c{c}")
        continuous.append(False)
    x = np.concatenate(cols, axis=1)

    base = config.response.baseline(x)
    tau = config.response.tau(x)
    noise = rng.normal(0.0, config.response.noise_std, size=config.n)
    y0 = base + noise
    y1 = base + tau + noise

    kind = config.assignment.get("kind", "constant")
    if kind == "constant":
        pi = np.full(config.n, float(config.assignment.get("p", 0.5)))
    elif kind == "logistic":
        coef = np.zeros(n_feat)
        raw = config.assignment.get("coef", [])
        coef[: len(raw)] = raw
        logits = x @ coef + float(config.assignment.get("intercept", 0.0))
        pi = 1.0 / (1.0 + np.exp(-logits))
    else:
        raise ConfigError(f"unknown assignment kind '{kind}'")
    if np.any(pi <= 0.0) or np.any(pi >= 1.0):
        pi = np.clip(pi, 1e-6, 1.0 - 1e-6)
    t = (rng.uniform(size=config.n) < pi).astype(np.int64)
    y = t * y1 + (1 - t) * y0

    schema_cols = [ColumnSpec(nm, kind="numerical" if cont else "binary")
                   for nm, cont in zip(names, continuous)]
    schema_cols += [ColumnSpec("treatment", role="treatment"),
                    ColumnSpec("outcome", role="outcome"),
                    ColumnSpec("tau_true", role="tau_true"),
                    ColumnSpec("y0", role="y0"), ColumnSpec("y1", role="y1"),
                    ColumnSpec("propensity", role="propensity")]
    schema = DatasetSchema(schema_cols)
    return Dataset(x, t, y, names, np.asarray(continuous, dtype=bool),
                   tau_true=y1 - y0, y0=y0, y1=y1, propensity=pi, schema=schema)


# -- feature perturbation -------------------------------------------------------

@dataclass
class PerturbationSpec:
    """Additive Gaussian noise on a random subset of continuous features.

    `fraction` of the continuous features (floor, at least one) receive noise
    drawn from N(0, sigma^2); every noise value is clipped strictly inside
    [-clip, clip] so the infinity norm of the perturbation stays below `clip`.
    """

    fraction: float = 0.3
    sigma: float = 0.05
    clip: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.fraction <= 1.0:
            raise ConfigError("fraction must be in (0, 1]")
        if self.sigma <= 0.0 or self.clip <= 0.0:
            raise ConfigError("sigma and clip must be positive")

    def to_dict(self) -> dict:
        return {"fraction": self.fraction, "sigma": self.sigma,
                "clip": self.clip, "seed": self.seed}

    @classmethod
    def from_dict(cls, payload: dict) -> "PerturbationSpec":
        return cls(**{k: payload[k] for k in ("fraction", "sigma", "clip", "seed")
                      if k in payload})


def perturb(dataset: Dataset, spec: PerturbationSpec) -> tuple[Dataset, np.ndarray]:
    """Return a perturbed copy plus the perturbed feature index set.

    Coordinates outside the selected features are byte-identical to the input.
    """
    continuous = np.flatnonzero(dataset.continuous_mask)
    if continuous.size == 0:
        raise ProtocolError("dataset has no continuous features to perturb")
    count = max(1, int(np.floor(spec.fraction * continuous.size)))
    rng = np.random.default_rng(spec.seed)
    chosen = np.sort(rng.choice(continuous, size=count, replace=False))
    noise = rng.normal(0.0, spec.sigma, size=(dataset.n, count))
    bound = np.nextafter(spec.clip, 0.0)  # strictly below the clip bound
    noise = np.clip(noise, -bound, bound)
    x = dataset.x.copy()
    old = x[:, chosen]
    new = old + noise
    # addition can round the realized difference up to the bound; nudge those
    # entries one float toward the original so |out - in| stays below it
    over = np.abs(new - old) >= spec.clip
    if over.any():
        new = np.where(over, np.nextafter(new, old), new)
    x[:, chosen] = new
    return dataset.with_x(x), chosen


# -- splitting ----------------------------------------------------------------

def _largest_remainder(total: int, ratios: np.ndarray) -> np.ndarray:
    raw = ratios * total
    counts = np.floor(raw).astype(int)
    remainder = total - counts.sum()
    order = np.argsort(-(raw - counts), kind="stable")
    for i in range(remainder):
        counts[order[i]] += 1
    return counts


def split(dataset: Dataset, ratios: tuple[float, ...], seed: int) -> tuple[Dataset, ...]:
    """Disjoint seeded splits, stratified by the treatment indicator.

    Global split sizes follow the ratios exactly (largest remainder); within
    each treatment group samples are allocated proportionally, with a final
    fix-up pass that moves samples between splits to hit the global sizes.
    """
    ratios_arr = np.asarray(ratios, dtype=np.float64)
    if abs(ratios_arr.sum() - 1.0) > 1e-9:
        raise ConfigError(f"ratios must sum to 1, got {ratios_arr.sum()}")
    if np.any(ratios_arr <= 0.0):
        raise ConfigError("every split ratio must be positive")
    n_splits = ratios_arr.size
    targets = _largest_remainder(dataset.n, ratios_arr)
    if np.any(targets == 0):
        raise ConfigError("a split would be empty at this dataset size")

    rng = np.random.default_rng(seed)
    assignment = np.empty(dataset.n, dtype=int)
    for group in (0, 1):
        members = np.flatnonzero(dataset.t == group)
        rng.shuffle(members)
        counts = _largest_remainder(members.size, ratios_arr)
        start = 0
        for s, c in enumerate(counts):
            assignment[members[start:start + c]] = s
            start += c

    # Per-group rounding can leave split totals off the global targets by a
    # sample or two; move samples from over-full to under-full splits.
    sizes = np.bincount(assignment, minlength=n_splits)
    while not np.array_equal(sizes, targets):
        over = int(np.argmax(sizes - targets))
        under = int(np.argmin(sizes - targets))
        candidates = np.flatnonzero(assignment == over)
        assignment[candidates[-1]] = under
        sizes = np.bincount(assignment, minlength=n_splits)

    return tuple(dataset.subset(np.flatnonzero(assignment == s)) for s in range(n_splits))
