"""Evaluation metrics: classification scores, calibration, and vote agreement.

Everything consumes integer stage codes (0..4, never NC) and row-stochastic
probability matrices. Per-subject results aggregate across a cohort as mean
plus population standard deviation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InternalConsistencyError, ValidationError
from .records import NUM_STAGES

DEFAULT_BINS = 10


@dataclass(frozen=True)
class ConfusionMatrix:
    """counts[i, j] = epochs with true stage i predicted as stage j."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64)
        if c.shape != (NUM_STAGES, NUM_STAGES) or (c < 0).any():
            raise ValidationError("confusion matrix must be 5x5 with nonnegative counts")
        object.__setattr__(self, "counts", c)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class Scores:
    accuracy: float
    per_class_f1: np.ndarray
    macro_f1: float
    weighted_f1: float
    kappa: float


@dataclass(frozen=True)
class CalibrationBins:
    """Equal-width confidence bins ((m-1)/M, m/M] over (0, 1]."""

    counts: np.ndarray
    accuracy: np.ndarray
    confidence: np.ndarray


@dataclass(frozen=True)
class SubjectMetrics:
    subject_id: str
    accuracy: float
    per_class_f1: np.ndarray
    macro_f1: float
    weighted_f1: float
    kappa: float
    ece: float
    confidence: float
    acs: float


_SCALAR_FIELDS = ("accuracy", "macro_f1", "weighted_f1", "kappa", "ece", "confidence", "acs")


@dataclass(frozen=True)
class MetricsReport:
    rows: tuple
    mean: dict
    std: dict


def _check_codes(codes, name: str) -> np.ndarray:
    codes = np.asarray(codes, dtype=np.int64)
    if codes.ndim != 1:
        raise ValidationError(f"{name} must be one-dimensional")
    if codes.size == 0:
        raise ValidationError(f"{name} is empty")
    if codes.min() < 0 or codes.max() >= NUM_STAGES:
        raise ValidationError(f"{name} contains codes outside 0..{NUM_STAGES - 1}")
    return codes


def _check_probs(probs) -> np.ndarray:
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] != NUM_STAGES:
        raise ValidationError("probabilities must be an N x 5 matrix")
    if not np.isfinite(p).all() or (p < 0).any() or np.abs(p.sum(axis=1) - 1.0).max() > 1e-6:
        raise ValidationError("probability rows must be distributions")
    return p


def confusion(true_codes, pred_codes) -> ConfusionMatrix:
    t = _check_codes(true_codes, "true codes")
    p = _check_codes(pred_codes, "predicted codes")
    if t.shape != p.shape:
        raise ValidationError("true and predicted code lengths differ")
    counts = np.bincount(t * NUM_STAGES + p, minlength=NUM_STAGES * NUM_STAGES)
    return ConfusionMatrix(counts.reshape(NUM_STAGES, NUM_STAGES))


def classification_scores(cm: ConfusionMatrix) -> Scores:
    """Accuracy, per-class/macro/weighted F1, and Cohen's kappa from one tally.

    A class absent from both truth and prediction scores F1 = 0 and still
    counts toward the macro average.
    """
    c = cm.counts.astype(np.float64)
    total = c.sum()
    if total == 0:
        raise ValidationError("empty confusion matrix")
    diag = np.diag(c)
    true_tot = c.sum(axis=1)
    pred_tot = c.sum(axis=0)
    accuracy = diag.sum() / total
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(pred_tot > 0, diag / pred_tot, 0.0)
        recall = np.where(true_tot > 0, diag / true_tot, 0.0)
        pr = precision + recall
        f1 = np.where(pr > 0, 2.0 * precision * recall / np.where(pr > 0, pr, 1.0), 0.0)
    p_e = float((true_tot * pred_tot).sum()) / (total * total)
    if p_e >= 1.0:
        kappa = 1.0 if accuracy == 1.0 else 0.0
    else:
        kappa = (accuracy - p_e) / (1.0 - p_e)
    return Scores(
        accuracy=float(accuracy),
        per_class_f1=f1,
        macro_f1=float(f1.mean()),
        weighted_f1=float((true_tot / total * f1).sum()),
        kappa=float(kappa),
    )


def ece(probs, true_codes, num_bins: int = DEFAULT_BINS):
    """Expected calibration error over equal-width max-probability bins.

    Confidence is the winning probability; sample m lands in the bin
    ((m-1)/M, m/M]. Empty bins contribute nothing. Returns the scalar and
    the per-bin breakdown.
    """
    p = _check_probs(probs)
    t = _check_codes(true_codes, "true codes")
    if p.shape[0] != t.shape[0]:
        raise ValidationError("probability and label counts differ")
    if num_bins < 1:
        raise ValidationError("need at least one calibration bin")
    conf = p.max(axis=1)
    correct = (p.argmax(axis=1) == t).astype(np.float64)
    edges = np.array([m / num_bins for m in range(1, num_bins)])
    idx = np.digitize(conf, edges, right=True)
    counts = np.bincount(idx, minlength=num_bins).astype(np.int64)
    acc_sum = np.bincount(idx, weights=correct, minlength=num_bins)
    conf_sum = np.bincount(idx, weights=conf, minlength=num_bins)
    filled = counts > 0
    acc = np.zeros(num_bins)
    avg_conf = np.zeros(num_bins)
    acc[filled] = acc_sum[filled] / counts[filled]
    avg_conf[filled] = conf_sum[filled] / counts[filled]
    value = float((counts[filled] / t.shape[0] * np.abs(acc[filled] - avg_conf[filled])).sum())
    return value, CalibrationBins(counts, acc, avg_conf)


def mean_confidence(probs) -> float:
    """Average winning probability."""
    return float(_check_probs(probs).max(axis=1).mean())


def acs(sc_values, probs) -> float:
    """Mean per-epoch cosine similarity between scorer vote rows and model rows."""
    sc = _check_probs(sc_values)
    p = _check_probs(probs)
    if sc.shape != p.shape:
        raise ValidationError("vote matrix and probability matrix shapes differ")
    sc_norm = np.linalg.norm(sc, axis=1)
    p_norm = np.linalg.norm(p, axis=1)
    if (sc_norm == 0).any() or (p_norm == 0).any():
        raise InternalConsistencyError("zero-norm distribution row")
    return float(((sc * p).sum(axis=1) / (sc_norm * p_norm)).mean())


def compute_subject_metrics(
    subject_id: str, true_codes, sc_values, probs, num_bins: int = DEFAULT_BINS
) -> SubjectMetrics:
    """Bundle every per-subject metric for one evaluated subject."""
    t = _check_codes(true_codes, "true codes")
    p = _check_probs(probs)
    pred = p.argmax(axis=1)
    scores = classification_scores(confusion(t, pred))
    ece_value, _ = ece(p, t, num_bins)
    return SubjectMetrics(
        subject_id=subject_id,
        accuracy=scores.accuracy,
        per_class_f1=scores.per_class_f1,
        macro_f1=scores.macro_f1,
        weighted_f1=scores.weighted_f1,
        kappa=scores.kappa,
        ece=ece_value,
        confidence=mean_confidence(p),
        acs=acs(sc_values, p),
    )


def aggregate(rows) -> MetricsReport:
    """Cohort view: mean and population standard deviation per metric."""
    rows = tuple(rows)
    if not rows:
        raise ValidationError("no per-subject rows to aggregate")
    mean: dict = {}
    std: dict = {}
    for name in _SCALAR_FIELDS:
        vals = np.array([getattr(r, name) for r in rows], dtype=np.float64)
        mean[name] = float(vals.mean())
        std[name] = float(vals.std())
    per_class = np.stack([r.per_class_f1 for r in rows])
    mean["per_class_f1"] = per_class.mean(axis=0)
    std["per_class_f1"] = per_class.std(axis=0)
    return MetricsReport(rows, mean, std)


def paired_test(sample_a, sample_b) -> float:
    """Two-sided Wilcoxon signed-rank p-value for paired samples.

    Zero differences drop out; if everything cancels the samples are
    indistinguishable and p = 1. Up to 25 informative pairs the null
    distribution is enumerated exactly (midranks included); larger samples
    use the normal approximation with tie correction and continuity
    correction.
    """
    a = np.asarray(sample_a, dtype=np.float64)
    b = np.asarray(sample_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValidationError("paired samples must be equal-length vectors")
    if a.shape[0] < 5:
        raise ValidationError("paired test needs at least five pairs")
    d = a - b
    d = d[d != 0.0]
    n = d.shape[0]
    if n == 0:
        return 1.0
    ranks = _midranks(np.abs(d))
    w = float(ranks[d > 0].sum())
    if n <= 25:
        return _exact_signed_rank_p(ranks, w)
    return _normal_signed_rank_p(ranks, w)


def _midranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.shape[0], dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    while i < sorted_vals.shape[0]:
        j = i
        while j + 1 < sorted_vals.shape[0] and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def _exact_signed_rank_p(ranks: np.ndarray, w: float) -> float:
    # midranks are multiples of 1/2; doubling gives an integer lattice walk
    doubled = np.rint(ranks * 2.0).astype(np.int64)
    dist = np.zeros(int(doubled.sum()) + 1, dtype=np.float64)
    dist[0] = 1.0
    for r in doubled:
        shifted = np.zeros_like(dist)
        shifted[r:] = dist[: dist.shape[0] - r]
        dist = dist + shifted
    w2 = int(np.rint(w * 2.0))
    total = 2.0 ** ranks.shape[0]
    p_low = dist[: w2 + 1].sum() / total
    p_high = dist[w2:].sum() / total
    return float(min(1.0, 2.0 * min(p_low, p_high)))


def _normal_signed_rank_p(ranks: np.ndarray, w: float) -> float:
    n = ranks.shape[0]
    mean = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    var -= float((tie_counts.astype(np.float64) ** 3 - tie_counts).sum()) / 48.0
    if var <= 0:
        return 1.0
    delta = w - mean
    if delta == 0:
        return 1.0
    z = (delta - 0.5 * np.sign(delta)) / math.sqrt(var)
    return float(math.erfc(abs(z) / math.sqrt(2.0)))
