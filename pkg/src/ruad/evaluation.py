"""Uplift ranking metrics and the feature-perturbation robustness protocol.

The cited ranking scores have no single canonical formula, so this module
pins one operationalization and the tests verify it against brute-force
reconstructions:

* Qini coefficient: sort by predicted uplift (descending, ties kept in input
  order), walk equal-count bin boundaries, and at each boundary take the
  cumulative incremental outcome

      V(p) = Y_t(p) - Y_c(p) * n_t(p) / n_c(p)

  i.e. cumulative treated outcome minus cumulative control outcome scaled to
  the treated group size. Runs of tied predictions that straddle a boundary
  contribute fractionally (the expected value over random orderings of the
  tie), which makes the score permutation-invariant and exactly zero for
  constant predictions. The coefficient is the trapezoidal area between V and
  the random-targeting diagonal, divided by the sample count.

* Kendall uplift rank correlation: partition into equal-count bins by
  predicted uplift, compute the actual uplift per bin (treated mean minus
  control mean), and return Kendall's tau between the predicted bin order and
  the actual per-bin uplifts: (concordant - discordant) / total pairs. A bin
  missing one group is merged into the better-ranked neighbor and flagged.

* Uplift bars: the per-bin actual uplifts in predicted order, plus the count
  of adjacent inversions (a good model sorts the bars in descending order).
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .data import Dataset, PerturbationSpec, perturb
from .errors import MetricError

DEFAULT_BIN_COUNTS = (5, 10)


def _validate(predictions, treatments, outcomes, bins: int):
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(treatments)
    y = np.asarray(outcomes, dtype=np.float64)
    if not (p.shape == t.shape == y.shape) or p.ndim != 1:
        raise MetricError("predictions, treatments and outcomes must be equal-length vectors")
    if bins < 2:
        raise MetricError("need at least two bins")
    if t.min() == t.max():
        raise MetricError("both treatment groups are required")
    return p, t.astype(np.int64), y


def _bin_boundaries(n: int, bins: int) -> np.ndarray:
    sizes = np.full(bins, n // bins)
    sizes[: n % bins] += 1  # equal-count bins, sizes differ by at most one
    return np.cumsum(sizes)


def qini_coefficient(predictions, treatments, outcomes, bins: int = 5) -> float:
    """Area between the binned incremental-outcome curve and the diagonal."""
    p, t, y = _validate(predictions, treatments, outcomes, bins)
    n = p.size
    order = np.argsort(-p, kind="stable")
    ps, ts, ys = p[order], t[order], y[order]

    # prefix sums over the sorted arrays (index i = first i samples)
    cum_nt = np.concatenate([[0], np.cumsum(ts)])
    cum_yt = np.concatenate([[0.0], np.cumsum(ys * ts)])
    cum_nc = np.concatenate([[0], np.cumsum(1 - ts)])
    cum_yc = np.concatenate([[0.0], np.cumsum(ys * (1 - ts))])

    # runs of tied predictions, as [start, end) index pairs into the sorted order
    run_starts = np.concatenate([[0], np.flatnonzero(np.diff(ps) != 0.0) + 1])
    run_ends = np.concatenate([run_starts[1:], [n]])

    def stats_at(pos: int) -> tuple[float, float, float, float]:
        """Cumulative (n_t, Y_t, n_c, Y_c) for the top `pos` samples, with a
        straddled tie run included fractionally."""
        run = int(np.searchsorted(run_ends, pos, side="left"))
        a, b = (int(run_starts[run]), int(run_ends[run])) if run < run_starts.size else (pos, pos)
        if pos == b or pos == a:
            return cum_nt[pos], cum_yt[pos], cum_nc[pos], cum_yc[pos]
        frac = (pos - a) / (b - a)
        return (cum_nt[a] + frac * (cum_nt[b] - cum_nt[a]),
                cum_yt[a] + frac * (cum_yt[b] - cum_yt[a]),
                cum_nc[a] + frac * (cum_nc[b] - cum_nc[a]),
                cum_yc[a] + frac * (cum_yc[b] - cum_yc[a]))

    def incremental(pos: int) -> float:
        nt, yt, nc, yc = stats_at(pos)
        return yt - (yc * nt / nc if nc > 0 else 0.0)

    total = incremental(n)
    area = 0.0
    prev_pos, prev_gap = 0, 0.0
    for pos in _bin_boundaries(n, bins):
        gap = incremental(int(pos)) - total * pos / n
        area += (pos - prev_pos) * (gap + prev_gap) / 2.0
        prev_pos, prev_gap = int(pos), gap
    return area / n


def _binned(predictions, treatments, outcomes, bins: int):
    """Equal-count bins in predicted order with degenerate bins merged upward.

    Returns (bars, bin_index_lists, merged_count).
    """
    p, t, y = _validate(predictions, treatments, outcomes, bins)
    order = np.argsort(-p, kind="stable")
    groups = [list(chunk) for chunk in np.array_split(order, bins)]

    merged = 0
    i = 0
    while i < len(groups):
        idx = np.asarray(groups[i])
        has_both = t[idx].min() == 0 and t[idx].max() == 1
        if has_both:
            i += 1
            continue
        if len(groups) == 1:
            raise MetricError("all bins degenerate: a bin is missing one treatment group")
        merged += 1
        if i > 0:
            groups[i - 1] = groups[i - 1] + groups[i]
            groups.pop(i)
        else:
            groups[0] = groups[0] + groups[1]
            groups.pop(1)

    bars = []
    for g in groups:
        idx = np.asarray(g)
        treated = y[idx][t[idx] == 1]
        control = y[idx][t[idx] == 0]
        bars.append(float(treated.mean() - control.mean()))
    return bars, groups, merged


def kendall_uplift_rank(predictions, treatments, outcomes, bins: int = 5) -> float:
    """Kendall's tau between predicted bin rank and actual per-bin uplift."""
    bars, groups, _ = _binned(predictions, treatments, outcomes, bins)
    b = len(bars)
    if b < 2:
        raise MetricError("fewer than two usable bins after merging")
    concordant = discordant = 0
    for i in range(b):
        for j in range(i + 1, b):
            if bars[i] > bars[j]:
                concordant += 1
            elif bars[i] < bars[j]:
                discordant += 1
    return (concordant - discordant) / (b * (b - 1) / 2)


def uplift_bars(predictions, treatments, outcomes, bins: int = 5):
    """Actual uplift per predicted-uplift bin and the adjacent inversion count.

    Returns (bars, inversions, info) where info records bin sizes, per-bin
    group counts and how many degenerate bins were merged.
    """
    bars, groups, merged = _binned(predictions, treatments, outcomes, bins)
    t = np.asarray(treatments).astype(np.int64)
    inversions = sum(1 for i in range(len(bars) - 1) if bars[i] < bars[i + 1])
    info = {
        "bin_sizes": [len(g) for g in groups],
        "group_counts": [[int(t[np.asarray(g)].sum()), int(len(g) - t[np.asarray(g)].sum())]
                         for g in groups],
        "merged_bins": merged,
    }
    return bars, inversions, info


@dataclass
class EvalReport:
    """Ranking metrics at each requested bin count."""

    n: int
    qini: dict[int, float]
    kendall: dict[int, float]
    bars: dict[int, list[float]]
    inversions: dict[int, int]
    bin_info: dict[int, dict]

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "qini": {str(k): v for k, v in sorted(self.qini.items())},
            "kendall": {str(k): v for k, v in sorted(self.kendall.items())},
            "bars": {str(k): v for k, v in sorted(self.bars.items())},
            "inversions": {str(k): v for k, v in sorted(self.inversions.items())},
            "bin_info": {str(k): v for k, v in sorted(self.bin_info.items())},
        }

    def write_bar_csv(self, path: str | Path, bins: int) -> None:
        """Bar values as a two-column delimited file for external plotting."""
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["bin", "actual_uplift"])
            for i, v in enumerate(self.bars[bins]):
                writer.writerow([i, repr(float(v))])


def evaluate(predictions, treatments, outcomes,
             bin_counts: tuple[int, ...] = DEFAULT_BIN_COUNTS) -> EvalReport:
    qini, kendall, bars, inversions, info = {}, {}, {}, {}, {}
    for b in bin_counts:
        qini[b] = qini_coefficient(predictions, treatments, outcomes, b)
        kendall[b] = kendall_uplift_rank(predictions, treatments, outcomes, b)
        bar, inv, meta = uplift_bars(predictions, treatments, outcomes, b)
        bars[b], inversions[b], info[b] = bar, inv, meta
    return EvalReport(n=len(np.asarray(predictions)), qini=qini, kendall=kendall,
                      bars=bars, inversions=inversions, bin_info=info)


@dataclass
class RobustnessReport:
    """Baseline metrics plus one entry per perturbation repeat."""

    baseline: EvalReport
    repeats: list[dict]
    spec: PerturbationSpec
    mode: str

    def mean_inversions(self, bins: int = 5) -> float:
        return float(np.mean([r["report"].inversions[bins] for r in self.repeats]))

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "spec": self.spec.to_dict(),
            "baseline": self.baseline.to_dict(),
            "repeats": [
                {
                    "seed": r["seed"],
                    "perturbed_features": r["perturbed_features"],
                    "inversion_delta": r["inversion_delta"],
                    "report": r["report"].to_dict(),
                }
                for r in self.repeats
            ],
        }


def robustness_protocol(bundle, dataset: Dataset, spec: PerturbationSpec,
                        repeats: int = 3,
                        bin_counts: tuple[int, ...] = DEFAULT_BIN_COUNTS,
                        retrain=None, threads: int = 1) -> RobustnessReport:
    """Perturb the evaluation features `repeats` times and re-score the bundle.

    `bundle` is anything exposing ``predict_uplift(x) -> array`` and stays
    frozen. With `retrain` given (a callable ``retrain(dataset, seed) ->
    bundle``) each copy instead gets its own model fitted on the perturbed
    data, mirroring the train-per-copy variant of the protocol.
    """
    baseline = evaluate(bundle.predict_uplift(dataset.x), dataset.t, dataset.y, bin_counts)

    def one_repeat(r: int) -> dict:
        rep_spec = replace(spec, seed=spec.seed + r)
        perturbed, chosen = perturb(dataset, rep_spec)
        scorer = bundle if retrain is None else retrain(perturbed, rep_spec.seed)
        report = evaluate(scorer.predict_uplift(perturbed.x), perturbed.t,
                          perturbed.y, bin_counts)
        return {
            "seed": rep_spec.seed,
            "perturbed_features": [int(i) for i in chosen],
            "report": report,
            "inversion_delta": {str(b): report.inversions[b] - baseline.inversions[b]
                                for b in bin_counts},
        }

    if threads > 1 and retrain is None:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one_repeat, range(repeats)))
    else:
        results = [one_repeat(r) for r in range(repeats)]
    return RobustnessReport(baseline=baseline, repeats=results, spec=spec,
                            mode="retrain" if retrain is not None else "eval")


def dump_json(payload: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
