"""Ranking metrics verified against brute-force reconstructions, plus the
perturbation protocol plumbing."""

import numpy as np
import pytest

from ruad.data import PerturbationSpec, ResponseSpec, SyntheticConfig, generate_synthetic
from ruad.errors import MetricError
from ruad.evaluation import (
    evaluate,
    kendall_uplift_rank,
    qini_coefficient,
    robustness_protocol,
    uplift_bars,
)


# -- brute-force oracles -----------------------------------------------------

def brute_qini(preds, t, y, bins):
    """Slow reconstruction of the binned incremental-outcome curve with
    fractional tie runs, written with plain python loops."""
    n = len(preds)
    order = sorted(range(n), key=lambda i: (-preds[i], i))
    sp = [preds[i] for i in order]
    st = [t[i] for i in order]
    sy = [y[i] for i in order]

    def stats(pos):
        # exact prefix plus the fractional part of a straddled tie run
        run_start = 0
        run_end = n
        i = 0
        while i < n:
            j = i
            while j < n and sp[j] == sp[i]:
                j += 1
            if i < pos <= j and pos != j:
                run_start, run_end = i, j
                break
            if pos <= j:
                run_start = run_end = pos
                break
            i = j
        nt = yt = nc = yc = 0.0
        upto = run_start if run_start < pos else pos
        for idx in range(upto):
            if st[idx] == 1:
                nt += 1
                yt += sy[idx]
            else:
                nc += 1
                yc += sy[idx]
        if run_start < pos:
            frac = (pos - run_start) / (run_end - run_start)
            rnt = ryt = rnc = ryc = 0.0
            for idx in range(run_start, run_end):
                if st[idx] == 1:
                    rnt += 1
                    ryt += sy[idx]
                else:
                    rnc += 1
                    ryc += sy[idx]
            nt += frac * rnt
            yt += frac * ryt
            nc += frac * rnc
            yc += frac * ryc
        return nt, yt, nc, yc

    def curve(pos):
        nt, yt, nc, yc = stats(pos)
        return yt - (yc * nt / nc if nc > 0 else 0.0)

    sizes = [n // bins] * bins
    for i in range(n % bins):
        sizes[i] += 1
    boundaries = []
    acc = 0
    for s in sizes:
        acc += s
        boundaries.append(acc)
    total = curve(n)
    area = 0.0
    prev_pos, prev_gap = 0, 0.0
    for pos in boundaries:
        gap = curve(pos) - total * pos / n
        area += (pos - prev_pos) * (gap + prev_gap) / 2.0
        prev_pos, prev_gap = pos, gap
    return area / n


def brute_kendall_from_bars(bars):
    c = d = 0
    b = len(bars)
    for i in range(b):
        for j in range(i + 1, b):
            if bars[i] > bars[j]:
                c += 1
            elif bars[i] < bars[j]:
                d += 1
    return (c - d) / (b * (b - 1) / 2)


def dataset_with_bin_uplifts(bin_uplifts, per_group=1):
    """Samples whose predicted order groups into bins realizing exactly the
    given actual uplifts (one treated at u, one control at 0 per slot)."""
    preds, t, y = [], [], []
    score = float(len(bin_uplifts) * 2 * per_group)
    for u in bin_uplifts:
        for _ in range(per_group):
            preds += [score, score - 1.0]
            t += [1, 0]
            y += [float(u), 0.0]
            score -= 2.0
    return np.array(preds), np.array(t), np.array(y)


# -- qini ---------------------------------------------------------------------

def test_qini_constant_predictions_is_zero():
    rng = np.random.default_rng(0)
    n = 40
    t = rng.integers(0, 2, size=n)
    t[:2] = [0, 1]
    y = rng.normal(size=n)
    q = qini_coefficient(np.full(n, 0.7), t, y, bins=5)
    assert abs(q) < 1e-9


def test_qini_true_ranking_beats_reversed():
    ds = generate_synthetic(SyntheticConfig(
        n=2000, n_numeric=3, seed=1,
        response=ResponseSpec(tau_coef=[2.0], noise_std=0.1)))
    q_good = qini_coefficient(ds.tau_true, ds.t, ds.y, bins=5)
    q_bad = qini_coefficient(-ds.tau_true, ds.t, ds.y, bins=5)
    assert q_good > q_bad
    assert q_good > 0


def test_qini_matches_brute_force_on_hand_fixture():
    preds = np.array([8.0, 7.0, 6.0, 5.0, 4.0, 3.0, 2.0, 1.0])
    t = np.array([1, 0, 1, 0, 0, 1, 0, 1])
    y = np.array([3.0, 0.5, 2.0, 1.0, 0.0, 1.5, 2.0, -1.0])
    for bins in (2, 4):
        assert qini_coefficient(preds, t, y, bins) == pytest.approx(
            brute_qini(preds, t, y, bins), abs=1e-12)


def test_qini_matches_brute_force_with_ties():
    preds = np.array([5.0, 5.0, 5.0, 3.0, 3.0, 2.0, 2.0, 2.0, 1.0, 1.0])
    t = np.array([1, 0, 1, 0, 1, 0, 1, 0, 1, 0])
    y = np.array([2.0, 1.0, 3.0, 0.0, 1.0, 1.0, 0.5, 0.0, -1.0, 0.5])
    for bins in (2, 5):
        assert qini_coefficient(preds, t, y, bins) == pytest.approx(
            brute_qini(preds, t, y, bins), abs=1e-12)


def test_qini_matches_brute_force_on_random_sets():
    rng = np.random.default_rng(2)
    for trial in range(20):
        n = int(rng.integers(8, 13))
        preds = np.round(rng.normal(size=n), 1)  # rounding makes ties likely
        t = rng.integers(0, 2, size=n)
        t[:2] = [0, 1]
        y = rng.normal(size=n)
        bins = int(rng.integers(2, 5))
        assert qini_coefficient(preds, t, y, bins) == pytest.approx(
            brute_qini(preds, t, y, bins), abs=1e-12), f"trial {trial}"


def test_qini_is_permutation_invariant():
    rng = np.random.default_rng(3)
    n = 60
    preds = np.round(rng.normal(size=n), 1)
    t = rng.integers(0, 2, size=n)
    t[:2] = [0, 1]
    y = rng.normal(size=n)
    base = qini_coefficient(preds, t, y, 5)
    for _ in range(5):
        perm = rng.permutation(n)
        assert qini_coefficient(preds[perm], t[perm], y[perm], 5) == pytest.approx(
            base, abs=1e-12)


def test_qini_requires_both_groups_and_two_bins():
    with pytest.raises(MetricError):
        qini_coefficient([1.0, 2.0], [1, 1], [0.0, 1.0], 2)
    with pytest.raises(MetricError):
        qini_coefficient([1.0, 2.0], [0, 1], [0.0, 1.0], 1)


# -- kendall ------------------------------------------------------------------

def test_kendall_perfect_concordance():
    preds, t, y = dataset_with_bin_uplifts([5.0, 4.0, 3.0, 2.0, 1.0])
    assert kendall_uplift_rank(preds, t, y, 5) == 1.0


def test_kendall_perfect_discordance():
    preds, t, y = dataset_with_bin_uplifts([1.0, 2.0, 3.0, 4.0, 5.0])
    assert kendall_uplift_rank(preds, t, y, 5) == -1.0


def test_kendall_hand_counted_pairs():
    """Bin uplifts [1, 3, 4, 5, 2] in predicted order: 3 concordant and 7
    discordant pairs of 10, so the correlation is -0.4."""
    bars = [1.0, 3.0, 4.0, 5.0, 2.0]
    assert brute_kendall_from_bars(bars) == pytest.approx(-0.4)
    preds, t, y = dataset_with_bin_uplifts(bars)
    assert kendall_uplift_rank(preds, t, y, 5) == pytest.approx(-0.4)


def test_kendall_bounds_on_random_data():
    rng = np.random.default_rng(4)
    for _ in range(10):
        n = 100
        preds = rng.normal(size=n)
        t = rng.integers(0, 2, size=n)
        t[:2] = [0, 1]
        y = rng.normal(size=n)
        rho = kendall_uplift_rank(preds, t, y, 5)
        assert -1.0 <= rho <= 1.0


# -- bars ---------------------------------------------------------------------

def test_bars_perfect_ranking_has_zero_inversions():
    preds, t, y = dataset_with_bin_uplifts([5.0, 4.0, 3.0, 2.0, 1.0])
    bars, inversions, info = uplift_bars(preds, t, y, 5)
    assert bars == [5.0, 4.0, 3.0, 2.0, 1.0]
    assert inversions == 0
    assert info["merged_bins"] == 0


def test_bars_reversed_ranking_has_max_inversions():
    preds, t, y = dataset_with_bin_uplifts([1.0, 2.0, 3.0, 4.0, 5.0])
    _, inversions, _ = uplift_bars(preds, t, y, 5)
    assert inversions == 4


def test_bars_null_effect_centers_at_zero():
    ds = generate_synthetic(SyntheticConfig(
        n=20000, n_numeric=2, seed=5,
        response=ResponseSpec(baseline_coef=[1.0], noise_std=1.0)))
    preds = np.random.default_rng(6).normal(size=ds.n)
    bars, _, info = uplift_bars(preds, ds.t, ds.y, 5)
    for bar, (nt, nc) in zip(bars, info["group_counts"]):
        se = np.sqrt(ds.y.var() / nt + ds.y.var() / nc)
        assert abs(bar) < 3 * se


def test_bin_sizes_differ_by_at_most_one():
    rng = np.random.default_rng(7)
    n = 103
    preds = rng.normal(size=n)
    t = rng.integers(0, 2, size=n)
    t[:2] = [0, 1]
    y = rng.normal(size=n)
    for bins in (5, 10):
        report = evaluate(preds, t, y, (bins,))
        sizes = report.bin_info[bins]["bin_sizes"]
        assert max(sizes) - min(sizes) <= 1
        assert sum(sizes) == n


def test_degenerate_bin_merges_upward():
    # 3 bins of 2; the middle bin is all-treated and must merge into bin 0
    preds = np.array([6.0, 5.0, 4.0, 3.0, 2.0, 1.0])
    t = np.array([1, 0, 1, 1, 1, 0])
    y = np.array([2.0, 0.0, 3.0, 1.0, 1.0, 0.5])
    bars, _, info = uplift_bars(preds, t, y, 3)
    assert info["merged_bins"] == 1
    assert len(bars) == 2
    assert info["bin_sizes"] == [4, 2]


def test_all_degenerate_raises():
    preds = np.array([2.0, 1.0])
    with pytest.raises(MetricError):
        uplift_bars(preds, np.array([1, 1]), np.array([0.0, 0.0]), 2)


# -- robustness protocol ---------------------------------------------------------

class TruthScorer:
    """Stand-in bundle: scores by a fixed linear rule."""

    def __init__(self, w):
        self.w = np.asarray(w)

    def predict_uplift(self, x):
        return x @ self.w


def test_vanishing_noise_repeats_equal_baseline():
    ds = generate_synthetic(SyntheticConfig(
        n=800, n_numeric=4, seed=8, response=ResponseSpec(tau_coef=[1.0, 0.5])))
    scorer = TruthScorer([1.0, 0.5, 0.0, 0.0])
    spec = PerturbationSpec(fraction=0.5, sigma=1e-13, clip=0.1, seed=0)
    report = robustness_protocol(scorer, ds, spec, repeats=3)
    for entry in report.repeats:
        assert entry["report"].qini[5] == pytest.approx(report.baseline.qini[5], abs=1e-6)
        assert entry["inversion_delta"]["5"] == 0


def test_three_repeats_layout():
    ds = generate_synthetic(SyntheticConfig(
        n=600, n_numeric=5, seed=9, response=ResponseSpec(tau_coef=[1.0])))
    scorer = TruthScorer([1.0, 0.0, 0.0, 0.0, 0.0])
    report = robustness_protocol(scorer, ds, PerturbationSpec(seed=3), repeats=3)
    assert len(report.repeats) == 3
    seeds = [e["seed"] for e in report.repeats]
    assert seeds == [3, 4, 5]
    for entry in report.repeats:
        assert len(entry["perturbed_features"]) == 1  # floor(0.3 * 5)
    payload = report.to_dict()
    assert payload["mode"] == "eval"
    assert len(payload["repeats"]) == 3


def test_threaded_repeats_match_sequential():
    ds = generate_synthetic(SyntheticConfig(
        n=500, n_numeric=6, seed=10, response=ResponseSpec(tau_coef=[1.0, -0.5])))
    scorer = TruthScorer([1.0, -0.5, 0.0, 0.0, 0.0, 0.0])
    spec = PerturbationSpec(seed=1)
    seq = robustness_protocol(scorer, ds, spec, repeats=4, threads=1)
    par = robustness_protocol(scorer, ds, spec, repeats=4, threads=4)
    assert seq.to_dict() == par.to_dict()
