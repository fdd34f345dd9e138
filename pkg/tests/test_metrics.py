"""Scoring metrics against independent brute-force oracles.

Every oracle below recomputes its metric with plain Python loops straight
from the definitions, trading speed for obviousness.
"""

import itertools
import math

import numpy as np
import pytest

from softstage.errors import InternalConsistencyError, ValidationError
from softstage.metrics import (
    CalibrationBins,
    acs,
    aggregate,
    classification_scores,
    compute_subject_metrics,
    confusion,
    ece,
    mean_confidence,
    paired_test,
)
from softstage.records import NUM_STAGES

# ------------------------------------------------------------------ oracles


def oracle_confusion(true, pred):
    cm = [[0] * NUM_STAGES for _ in range(NUM_STAGES)]
    for t, p in zip(true, pred):
        cm[t][p] += 1
    return np.array(cm)


def oracle_scores(cm):
    n = cm.sum()
    acc = sum(cm[k][k] for k in range(NUM_STAGES)) / n
    f1s = []
    for k in range(NUM_STAGES):
        tp = cm[k][k]
        fp = cm[:, k].sum() - tp
        fn = cm[k].sum() - tp
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1s.append(2 * prec * rec / (prec + rec) if prec + rec else 0.0)
    weighted = sum(f1s[k] * cm[k].sum() for k in range(NUM_STAGES)) / n
    pe = sum(cm[k].sum() * cm[:, k].sum() for k in range(NUM_STAGES)) / (n * n)
    if pe >= 1.0:
        kappa = 1.0 if acc == 1.0 else 0.0
    else:
        kappa = (acc - pe) / (1 - pe)
    return acc, f1s, sum(f1s) / NUM_STAGES, weighted, kappa


def oracle_ece(probs, true, num_bins):
    """Bin m covers ((m-1)/M, m/M]; empty bins contribute nothing."""
    n = len(true)
    conf = probs.max(axis=1)
    pred = probs.argmax(axis=1)
    total = 0.0
    for m in range(1, num_bins + 1):
        lo, hi = (m - 1) / num_bins, m / num_bins
        members = [i for i in range(n) if lo < conf[i] <= hi]
        if not members:
            continue
        bin_acc = sum(pred[i] == true[i] for i in members) / len(members)
        bin_conf = sum(conf[i] for i in members) / len(members)
        total += len(members) / n * abs(bin_acc - bin_conf)
    return total


def oracle_acs(sc, probs):
    sims = []
    for a, b in zip(sc, probs):
        sims.append(float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b))))
    return sum(sims) / len(sims)


def oracle_signed_rank_p(a, b):
    """Exact two-sided Wilcoxon signed-rank p by enumerating sign patterns."""
    diffs = [x - y for x, y in zip(a, b) if x != y]
    if not diffs:
        return 1.0
    mags = [abs(d) for d in diffs]
    order = sorted(range(len(mags)), key=lambda i: mags[i])
    ranks = [0.0] * len(mags)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and mags[order[j + 1]] == mags[order[i]]:
            j += 1
        midrank = (i + j) / 2 + 1
        for idx in order[i : j + 1]:
            ranks[idx] = midrank
        i = j + 1
    w_obs = sum(r for d, r in zip(diffs, ranks) if d > 0)
    le = ge = total = 0
    for signs in itertools.product((0, 1), repeat=len(diffs)):
        w = sum(r for s, r in zip(signs, ranks) if s)
        total += 1
        le += w <= w_obs + 1e-12
        ge += w >= w_obs - 1e-12
    return min(1.0, 2.0 * min(le / total, ge / total))


def random_probs(rng, n):
    raw = rng.random(size=(n, NUM_STAGES)) + 1e-3
    return raw / raw.sum(axis=1, keepdims=True)


# ---------------------------------------------------------------- confusion


def test_confusion_identity_and_off_diagonal():
    assert (np.diag(confusion([0, 1, 2], [0, 1, 2]).counts) == [1, 1, 1, 0, 0]).all()
    cm = confusion([0, 0], [1, 1]).counts
    assert cm[0, 1] == 2 and cm.sum() == 2


def test_confusion_matches_tally():
    rng = np.random.default_rng(61)
    true = rng.integers(0, 5, size=200)
    pred = rng.integers(0, 5, size=200)
    np.testing.assert_array_equal(confusion(true, pred).counts, oracle_confusion(true, pred))


def test_confusion_rejects_nc_codes():
    with pytest.raises(ValidationError):
        confusion([-1, 0], [0, 0])
    with pytest.raises(ValidationError):
        confusion([0], [0, 1])


# -------------------------------------------------------------------- scores


def test_perfect_prediction_scores():
    s = classification_scores(confusion([0, 1, 2, 3, 4], [0, 1, 2, 3, 4]))
    assert s.accuracy == 1.0 and s.kappa == 1.0
    np.testing.assert_array_equal(s.per_class_f1, np.ones(5))
    assert s.macro_f1 == 1.0 and s.weighted_f1 == 1.0


def test_kappa_hand_case():
    s = classification_scores(confusion([0, 0, 1, 1], [0, 1, 1, 1]))
    assert s.accuracy == pytest.approx(0.75)
    assert s.kappa == pytest.approx(0.5)


def test_absent_class_f1_is_zero():
    s = classification_scores(confusion([0, 0, 0], [0, 0, 0]))
    np.testing.assert_array_equal(s.per_class_f1[1:], np.zeros(4))
    # degenerate single-class agreement: chance agreement saturates
    assert s.kappa == 1.0


def test_random_predictions_drive_kappa_to_zero():
    rng = np.random.default_rng(67)
    n = 10_000
    true = rng.integers(0, 5, size=n)
    pred = rng.integers(0, 5, size=n)
    assert abs(classification_scores(confusion(true, pred)).kappa) < 0.05


def test_scores_match_oracle_on_random_pairs():
    rng = np.random.default_rng(71)
    for _ in range(500):
        n = int(rng.integers(5, 120))
        true = rng.integers(0, 5, size=n)
        pred = np.where(rng.random(n) < 0.6, true, rng.integers(0, 5, size=n))
        cm = confusion(true, pred)
        np.testing.assert_array_equal(cm.counts, oracle_confusion(true, pred))
        s = classification_scores(cm)
        acc, f1s, macro, weighted, kappa = oracle_scores(cm.counts)
        assert s.accuracy == pytest.approx(acc, abs=1e-12)
        np.testing.assert_allclose(s.per_class_f1, f1s, atol=1e-12)
        assert s.macro_f1 == pytest.approx(macro, abs=1e-12)
        assert s.weighted_f1 == pytest.approx(weighted, abs=1e-12)
        assert s.kappa == pytest.approx(kappa, abs=1e-12)
        assert -1.0 <= s.kappa <= 1.0


# ---------------------------------------------------------------------- ece


def test_ece_perfectly_calibrated_and_confident():
    probs = np.zeros((6, 5))
    probs[:, 2] = 1.0
    value, bins = ece(probs, np.full(6, 2), 10)
    assert value == 0.0
    assert bins.counts.sum() == 6


def test_ece_four_sample_hand_case():
    probs = np.array([
        [0.9, 0.025, 0.025, 0.025, 0.025],
        [0.8, 0.05, 0.05, 0.05, 0.05],
        [0.6, 0.1, 0.1, 0.1, 0.1],
        [0.1125, 0.55, 0.1125, 0.1125, 0.1125],
    ])
    true = np.array([0, 0, 0, 0])  # the 0.55 prediction is wrong
    assert ece(probs, true, 2)[0] == pytest.approx(0.0375, abs=1e-12)
    assert ece(probs, true, 4)[0] == pytest.approx(0.1125, abs=1e-12)
    assert ece(probs, true, 2)[0] == pytest.approx(oracle_ece(probs, true, 2), abs=1e-12)
    assert ece(probs, true, 4)[0] == pytest.approx(oracle_ece(probs, true, 4), abs=1e-12)


def test_ece_bins_partition_and_empty_bins():
    rng = np.random.default_rng(73)
    probs = random_probs(rng, 40)
    true = rng.integers(0, 5, size=40)
    value, bins = ece(probs, true, 15)
    assert isinstance(bins, CalibrationBins)
    assert bins.counts.sum() == 40
    empty = bins.counts == 0
    assert (bins.accuracy[empty] == 0).all() and (bins.confidence[empty] == 0).all()
    assert value == pytest.approx(oracle_ece(probs, true, 15), abs=1e-12)


def test_ece_matches_oracle_on_random_sets():
    rng = np.random.default_rng(79)
    for _ in range(200):
        n = int(rng.integers(3, 80))
        m = int(rng.integers(1, 20))
        probs = random_probs(rng, n)
        true = rng.integers(0, 5, size=n)
        assert ece(probs, true, m)[0] == pytest.approx(oracle_ece(probs, true, m), abs=1e-12)


def test_ece_boundary_confidences_land_in_lower_bin():
    # conf exactly m/M belongs to bin m, not m+1
    probs = np.zeros((2, 5))
    probs[:, 0] = 0.5
    probs[:, 1:] = 0.125
    _, bins = ece(probs, np.array([0, 1]), 2)
    assert bins.counts[0] == 2 and bins.counts[1] == 0


# --------------------------------------------------------------- confidence


def test_mean_confidence_cases():
    one_hots = np.eye(5)[:3]
    assert mean_confidence(one_hots) == 1.0
    assert mean_confidence(np.full((4, 5), 0.2)) == pytest.approx(0.2)
    rng = np.random.default_rng(83)
    probs = random_probs(rng, 50)
    assert mean_confidence(probs) == pytest.approx(float(probs.max(axis=1).mean()))


# ---------------------------------------------------------------------- acs


def test_acs_self_similarity_is_one():
    rng = np.random.default_rng(89)
    probs = random_probs(rng, 30)
    assert acs(probs, probs) == pytest.approx(1.0, abs=1e-12)


def test_acs_orthogonal_and_hand_case():
    e_w = np.array([[1.0, 0, 0, 0, 0]])
    e_n1 = np.array([[0, 1.0, 0, 0, 0]])
    assert acs(e_w, e_n1) == pytest.approx(0.0, abs=1e-12)
    sc = np.array([[0.6, 0.2, 0.2, 0.0, 0.0]])
    assert acs(sc, e_w) == pytest.approx(0.6 / math.sqrt(0.44), abs=1e-9)


def test_acs_matches_oracle():
    rng = np.random.default_rng(97)
    for _ in range(100):
        n = int(rng.integers(2, 40))
        a, b = random_probs(rng, n), random_probs(rng, n)
        assert acs(a, b) == pytest.approx(oracle_acs(a, b), abs=1e-12)
        assert 0.0 <= acs(a, b) <= 1.0


def test_acs_rejects_zero_rows():
    with pytest.raises(ValidationError):
        acs(np.zeros((2, 5)), random_probs(np.random.default_rng(0), 2))


# ------------------------------------------------------------ aggregation


def test_aggregate_single_and_pair():
    row = compute_subject_metrics("s01", np.array([0, 1]),
                                  np.eye(5)[[0, 1]], np.eye(5)[[0, 1]])
    report = aggregate([row])
    assert report.mean["acs"] == pytest.approx(row.acs)
    assert report.std["acs"] == 0.0

    a = row
    b = compute_subject_metrics("s02", np.array([0, 1]),
                                np.eye(5)[[0, 1]], np.eye(5)[[0, 0]])
    rep = aggregate([a, b])
    for name in ("accuracy", "macro_f1", "ece", "acs"):
        vals = np.array([getattr(a, name), getattr(b, name)])
        assert rep.mean[name] == pytest.approx(vals.mean())
        assert rep.std[name] == pytest.approx(vals.std())


def test_aggregate_hand_std():
    # population std of {0.8, 0.9} is 0.05
    vals = np.array([0.8, 0.9])
    assert vals.std() == pytest.approx(0.05)


def test_compute_subject_metrics_consistency():
    rng = np.random.default_rng(101)
    true = rng.integers(0, 5, size=60)
    probs = random_probs(rng, 60)
    sc = random_probs(rng, 60)
    row = compute_subject_metrics("s07", true, sc, probs, num_bins=10)
    cm = confusion(true, probs.argmax(axis=1))
    s = classification_scores(cm)
    assert row.accuracy == s.accuracy and row.kappa == s.kappa
    assert row.ece == ece(probs, true, 10)[0]
    assert row.confidence == mean_confidence(probs)
    assert row.acs == acs(sc, probs)


# ------------------------------------------------------------- paired test


def test_paired_identical_samples():
    assert paired_test([1.0, 2, 3, 4, 5], [1.0, 2, 3, 4, 5]) == 1.0


def test_paired_perfectly_ordered_n10():
    a = list(range(1, 11))
    b = [0.0] * 10
    assert paired_test(a, b) == pytest.approx(2 / 1024, abs=1e-15)


def test_paired_swap_symmetry():
    rng = np.random.default_rng(103)
    a = rng.normal(size=12).tolist()
    b = rng.normal(size=12).tolist()
    assert paired_test(a, b) == pytest.approx(paired_test(b, a), abs=1e-12)


def test_paired_needs_five_pairs():
    with pytest.raises(ValidationError):
        paired_test([1, 2, 3, 4], [0, 0, 0, 0])


def test_paired_exact_path_matches_enumeration():
    rng = np.random.default_rng(107)
    for _ in range(60):
        n = int(rng.integers(5, 12))
        a = rng.integers(-4, 5, size=n).astype(float)
        b = rng.integers(-4, 5, size=n).astype(float)
        expected = oracle_signed_rank_p(a.tolist(), b.tolist())
        assert paired_test(a, b) == pytest.approx(expected, abs=1e-12)


def test_paired_normal_path_behaves():
    rng = np.random.default_rng(109)
    base = rng.normal(size=60)
    shifted = base + 0.8
    p_strong = paired_test(shifted, base)
    assert 0.0 < p_strong < 1e-6
    noisy = base + rng.normal(scale=2.0, size=60)
    assert paired_test(noisy, base) > p_strong
    assert paired_test(base, shifted) == pytest.approx(p_strong, abs=1e-12)


def test_paired_normal_path_close_to_null_distribution():
    # n=26 takes the normal approximation; check it against a Monte-Carlo
    # estimate of the exact signed-rank null
    rng = np.random.default_rng(113)
    a = rng.normal(size=26)
    b = a - np.concatenate([np.full(13, 0.5), np.full(13, -0.2)])
    approx = paired_test(a, b)
    d = a - b
    mags = np.abs(d)
    order = mags.argsort()
    ranks = np.empty(26)
    ranks[order] = np.arange(1, 27)  # all magnitudes distinct here
    w_obs = ranks[d > 0].sum()
    signs = rng.random(size=(200_000, 26)) < 0.5
    w_null = (signs * ranks).sum(axis=1)
    mc = min(1.0, 2 * min((w_null <= w_obs).mean(), (w_null >= w_obs).mean()))
    assert approx == pytest.approx(mc, abs=0.02)
