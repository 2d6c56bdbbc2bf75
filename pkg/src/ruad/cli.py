"""Command-line entry point.

Subcommands: generate | train | eval | robust | ablate. Each run resolves its
JSON config (flags override config keys one-to-one), writes a manifest before
any results, then reports under the output directory:

    out/
      manifest.json        command, resolved config, seeds, artifact hashes
      checkpoints/         model / masker / propensity / standardizer
      reports/             metric and training reports (JSON)
      bars/                uplift-bar tables (CSV) and rendered figures (PNG)

Reruns with the same resolved config reproduce byte-identical report JSON.
RUAD_THREADS caps worker parallelism for robustness repeats.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import itertools
import json
import os
import sys
from pathlib import Path

import numpy as np

from .data import (
    DatasetSchema,
    PerturbationSpec,
    Standardizer,
    SyntheticConfig,
    generate_synthetic,
    load_csv,
    split,
    write_csv,
)
from .errors import ConfigError, RuadError
from .evaluation import DEFAULT_BIN_COUNTS, dump_json, evaluate, robustness_protocol
from .feature_selection import mask_summary
from .plots import render_robustness_panels, render_uplift_bars, render_validation_trace
from .propensity import PropensityConfig, pretrain_propensity
from .trainer import ModelBundle, TrainConfig, VARIANTS, ablate, train

DEFAULT_SPLIT = {"ratios": [0.6, 0.2, 0.2], "seed": 0}


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("RUAD_THREADS", "1")))
    except ValueError:
        return 1


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class Run:
    """Output directory plus the manifest written before and after results."""

    def __init__(self, command: str, config: dict, config_path: str, out_dir: Path,
                 seeds: dict):
        self.out = out_dir
        self.out.mkdir(parents=True, exist_ok=True)
        self.manifest = {
            "command": command,
            "config_path": str(config_path),
            "config": config,
            "seeds": seeds,
            "artifacts": {},
        }
        self._write_manifest()

    def _write_manifest(self) -> None:
        dump_json(self.manifest, self.out / "manifest.json")

    def finalize(self) -> None:
        artifacts = {}
        for path in sorted(self.out.rglob("*")):
            if path.is_file() and path.name != "manifest.json":
                artifacts[str(path.relative_to(self.out))] = _sha256(path)
        self.manifest["artifacts"] = artifacts
        self._write_manifest()

    def subdir(self, name: str) -> Path:
        sub = self.out / name
        sub.mkdir(parents=True, exist_ok=True)
        return sub


def _load_config(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None


def _resolve_experiment(config: dict, args) -> dict:
    resolved = copy.deepcopy(config)
    resolved.setdefault("split", dict(DEFAULT_SPLIT))
    resolved.setdefault("propensity", {})
    resolved.setdefault("train", {})
    resolved.setdefault("eval", {})
    resolved.setdefault("robust", {})
    if getattr(args, "seed", None) is not None:
        resolved["train"]["seed"] = args.seed
    if getattr(args, "variant", None) is not None:
        resolved["train"]["variant"] = args.variant
    if getattr(args, "repeats", None) is not None:
        resolved["robust"]["repeats"] = args.repeats
    if getattr(args, "bins", None) is not None:
        resolved["eval"]["bars_bins"] = args.bins
        resolved["robust"]["bins"] = args.bins
    if "data" not in resolved:
        raise ConfigError("config needs a 'data' section (csv+schema or generator)")
    # materialize full defaults so the manifest snapshot is self-contained
    resolved["train"] = TrainConfig.from_dict(resolved["train"]).to_dict()
    resolved["propensity"] = PropensityConfig.from_dict(resolved["propensity"]).to_dict()
    return resolved


def _load_dataset(data_cfg: dict):
    if "csv" in data_cfg:
        if "schema" not in data_cfg:
            raise ConfigError("'data.csv' needs a matching 'data.schema' path")
        return load_csv(data_cfg["csv"], DatasetSchema.load(data_cfg["schema"]))
    if "generator" in data_cfg:
        return generate_synthetic(SyntheticConfig.from_dict(data_cfg["generator"]))
    raise ConfigError("data section needs either 'csv'/'schema' or 'generator'")


def _prepare_splits(resolved: dict, standardizer: Standardizer | None = None):
    dataset = _load_dataset(resolved["data"])
    ratios = tuple(resolved["split"]["ratios"])
    parts = split(dataset, ratios, resolved["split"]["seed"])
    if len(parts) != 3:
        raise ConfigError("experiment split must produce train/valid/test")
    train_set, valid_set, test_set = parts
    if standardizer is None:
        standardizer = Standardizer.fit(train_set)
    return (standardizer.transform(train_set), standardizer.transform(valid_set),
            standardizer.transform(test_set), standardizer)


def _write_eval_outputs(report, run: Run, name: str, bars_bins: int | None) -> None:
    reports = run.subdir("reports")
    bars_dir = run.subdir("bars")
    dump_json(report.to_dict(), reports / f"{name}.json")
    bin_counts = [bars_bins] if bars_bins else sorted(report.bars)
    for b in bin_counts:
        report.write_bar_csv(bars_dir / f"{name}_bars_{b}.csv", b)
        render_uplift_bars(report.bars[b], bars_dir / f"{name}_bars_{b}.png",
                           title=f"{name} ({b} bins)")


# -- subcommands ---------------------------------------------------------------

def cmd_generate(args) -> int:
    config = _load_config(args.config)
    gen = SyntheticConfig.from_dict(config.get("generator", config))
    if args.seed is not None:
        gen.seed = args.seed
    run = Run("generate", {"generator": gen.to_dict()}, args.config,
              Path(args.out), {"generator": gen.seed})
    dataset = generate_synthetic(gen)
    write_csv(dataset, run.out / "data.csv")
    dataset.schema.save(run.out / "schema.json")
    dump_json({"n": dataset.n, "n_features": dataset.n_features,
               "treated_fraction": float(dataset.t.mean()),
               "mean_tau_true": float(dataset.tau_true.mean())},
              run.subdir("reports") / "generate_summary.json")
    run.finalize()
    return 0


def cmd_train(args) -> int:
    resolved = _resolve_experiment(_load_config(args.config), args)
    grid = resolved.get("train_grid") or resolved.get("grid")
    run = Run("train", resolved, args.config, Path(args.out),
              {"train": resolved["train"]["seed"], "split": resolved["split"]["seed"]})
    train_set, valid_set, test_set, standardizer = _prepare_splits(resolved)
    prop_cfg = PropensityConfig.from_dict(resolved["propensity"])
    base_cfg = TrainConfig.from_dict(resolved["train"])

    if grid:
        _run_grid(run, grid, resolved, train_set, valid_set, test_set, standardizer, prop_cfg)
        run.finalize()
        return 0

    propensity, curve = pretrain_propensity(train_set, prop_cfg, seed=base_cfg.seed)
    bundle, report = train(train_set, valid_set, propensity, base_cfg)
    report.propensity_curve = curve
    bundle.standardizer = standardizer
    bundle.meta.update({"config": resolved["train"]})
    bundle.save(run.subdir("checkpoints"))
    reports = run.subdir("reports")
    dump_json(report.to_dict(), reports / "train_report.json")
    render_validation_trace(report.validation, reports / "validation_trace.png")
    if bundle.masker is not None:
        dump_json(mask_summary(bundle.masker, valid_set.x, bundle.k),
                  reports / "mask_summary.json")
    preds = bundle.predict_uplift(test_set.x)
    eval_report = evaluate(preds, test_set.t, test_set.y, DEFAULT_BIN_COUNTS)
    _write_eval_outputs(eval_report, run, "test_eval", resolved["eval"].get("bars_bins"))
    run.finalize()
    return 0


def _run_grid(run: Run, grid: dict, resolved: dict, train_set, valid_set, test_set,
              standardizer, prop_cfg) -> None:
    keys = sorted(grid)
    combos = list(itertools.product(*(grid[k] for k in keys)))
    summary = []
    for i, combo in enumerate(combos):
        child_cfg = dict(resolved["train"])
        child_cfg.update(dict(zip(keys, combo)))
        cfg = TrainConfig.from_dict(child_cfg)
        child_dir = run.subdir(f"grid/run_{i:03d}")
        propensity, _ = pretrain_propensity(train_set, prop_cfg, seed=cfg.seed)
        bundle, report = train(train_set, valid_set, propensity, cfg)
        bundle.standardizer = standardizer
        bundle.save(child_dir / "checkpoints")
        dump_json(report.to_dict(), child_dir / "train_report.json")
        preds = bundle.predict_uplift(test_set.x)
        eval_report = evaluate(preds, test_set.t, test_set.y, DEFAULT_BIN_COUNTS)
        dump_json(eval_report.to_dict(), child_dir / "test_eval.json")
        summary.append({
            "run": f"run_{i:03d}",
            "params": dict(zip(keys, combo)),
            "best_validation_qini": max(report.validation[1:]),
            "test_qini_5": eval_report.qini[5],
        })
    summary.sort(key=lambda r: -r["best_validation_qini"])
    dump_json({"ranking": summary, "best": summary[0]["run"]},
              run.subdir("reports") / "grid_summary.json")


def _load_bundle(resolved: dict) -> ModelBundle:
    ckpt = resolved["eval"].get("checkpoint_dir")
    if ckpt is None:
        raise ConfigError("eval.checkpoint_dir missing: point it at a train run's checkpoints/")
    ckpt_path = Path(ckpt)
    if not ckpt_path.exists():
        raise ConfigError(f"checkpoint directory not found: {ckpt_path}")
    return ModelBundle.load(ckpt_path)


def cmd_eval(args) -> int:
    resolved = _resolve_experiment(_load_config(args.config), args)
    run = Run("eval", resolved, args.config, Path(args.out),
              {"split": resolved["split"]["seed"]})
    bundle = _load_bundle(resolved)
    train_s, valid_s, test_s, _ = _prepare_splits(resolved, standardizer=bundle.standardizer)
    eval_split = resolved["eval"].get("split", "test")
    if eval_split not in ("train", "valid", "test"):
        raise ConfigError(f"unknown eval split '{eval_split}'")
    target = {"train": train_s, "valid": valid_s, "test": test_s}[eval_split]
    preds = bundle.predict_uplift(target.x)
    report = evaluate(preds, target.t, target.y, DEFAULT_BIN_COUNTS)
    _write_eval_outputs(report, run, "eval", resolved["eval"].get("bars_bins"))
    if bundle.masker is not None:
        dump_json(mask_summary(bundle.masker, target.x, bundle.k),
                  run.subdir("reports") / "mask_summary.json")
    run.finalize()
    return 0


def cmd_robust(args) -> int:
    resolved = _resolve_experiment(_load_config(args.config), args)
    robust_cfg = resolved["robust"]
    spec = PerturbationSpec(
        fraction=robust_cfg.get("fraction", 0.3),
        sigma=robust_cfg.get("sigma", 0.05),
        clip=robust_cfg.get("clip", 0.1),
        seed=robust_cfg.get("seed", 0),
    )
    repeats = int(robust_cfg.get("repeats", 3))
    bins = int(robust_cfg.get("bins", 5))
    run = Run("robust", resolved, args.config, Path(args.out),
              {"split": resolved["split"]["seed"], "perturbation": spec.seed})
    bundle = _load_bundle(resolved)
    _, _, test_set, _ = _prepare_splits(resolved, standardizer=bundle.standardizer)
    report = robustness_protocol(bundle, test_set, spec, repeats=repeats,
                                 threads=_threads())
    reports = run.subdir("reports")
    dump_json(report.to_dict(), reports / "robustness.json")
    bars_dir = run.subdir("bars")
    report.baseline.write_bar_csv(bars_dir / f"baseline_bars_{bins}.csv", bins)
    for entry in report.repeats:
        entry["report"].write_bar_csv(
            bars_dir / f"perturbed_{entry['seed']}_bars_{bins}.csv", bins)
    render_robustness_panels(report.baseline.bars[bins],
                             [e["report"].bars[bins] for e in report.repeats],
                             bars_dir / f"robustness_{bins}.png", bins)
    run.finalize()
    return 0


def cmd_ablate(args) -> int:
    resolved = _resolve_experiment(_load_config(args.config), args)
    variants = [args.variant] if args.variant else list(VARIANTS)
    run = Run("ablate", resolved, args.config, Path(args.out),
              {"train": resolved["train"]["seed"], "split": resolved["split"]["seed"]})
    train_set, valid_set, test_set, standardizer = _prepare_splits(resolved)
    prop_cfg = PropensityConfig.from_dict(resolved["propensity"])
    cfg = TrainConfig.from_dict(resolved["train"])
    propensity, _ = pretrain_propensity(train_set, prop_cfg, seed=cfg.seed)
    table = {}
    for variant in variants:
        result = ablate(variant, train_set, valid_set, test_set, propensity, cfg)
        result["bundle"].standardizer = standardizer
        result["bundle"].save(run.subdir(f"checkpoints/{variant}"))
        dump_json(result["train_report"].to_dict(),
                  run.subdir("reports") / f"train_report_{variant}.json")
        _write_eval_outputs(result["eval_report"], run, f"ablation_{variant}",
                            resolved["eval"].get("bars_bins"))
        table[variant] = {
            "qini": {str(k): v for k, v in sorted(result["eval_report"].qini.items())},
            "kendall": {str(k): v for k, v in sorted(result["eval_report"].kendall.items())},
            "adversarial_calls": result["train_report"].adversarial_calls,
        }
    dump_json(table, run.subdir("reports") / "ablation_table.json")
    run.finalize()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ruad",
        description="Robustness-enhanced uplift modeling: train, evaluate, "
                    "ablate and stress-test uplift models.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_variant=False, needs_repeats=False, needs_bins=False):
        p.add_argument("--config", required=True, help="JSON config path")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the training seed")
        if needs_variant:
            p.add_argument("--variant", choices=VARIANTS, default=None,
                           help="model variant / ablation name")
        if needs_repeats:
            p.add_argument("--repeats", type=int, default=None,
                           help="number of perturbation repeats")
        if needs_bins:
            p.add_argument("--bins", type=int, choices=(5, 10), default=None,
                           help="bin count for bar outputs")

    common(sub.add_parser("generate", help="write a synthetic dataset + schema"))
    common(sub.add_parser("train", help="train a model (or a grid) and score it"),
           needs_variant=True, needs_bins=True)
    common(sub.add_parser("eval", help="score a saved checkpoint"), needs_bins=True)
    common(sub.add_parser("robust", help="run the feature-perturbation protocol"),
           needs_repeats=True, needs_bins=True)
    common(sub.add_parser("ablate", help="train and compare ablation variants"),
           needs_variant=True, needs_bins=True)
    return parser


_COMMANDS = {"generate": cmd_generate, "train": cmd_train, "eval": cmd_eval,
             "robust": cmd_robust, "ablate": cmd_ablate}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except RuadError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
