"""Synthetic multi-scorer cohorts with a tunable level of disagreement.

Each subject gets a latent stage sequence from a first-order Markov chain
(started in W), per-scorer annotations drawn through scorer-specific
confusion matrices, and gaussian features around per-stage means. Subjects
are generated from independent Philox streams keyed by (seed, subject,
stream), so cohorts are reproducible across runs and platforms and subjects
can be produced in any order.

calibrate_agreement tunes a shared confusion diagonal until a pilot cohort's
mean soft-agreement hits a requested level, which is how the IS-RC-like
(about 0.69) and DOD-H-like (about 0.89) regimes are produced.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .consensus import soft_agreement
from .errors import CalibrationError, ValidationError
from .records import NUM_STAGES, FeatureMatrix, Hypnogram, MultiScoredRecord

_STREAM_LATENT = 0
_STREAM_LABELS = 1
_STREAM_FEATURES = 2

DEFAULT_TRANSITION = np.array(
    [
        # W     N1     N2     N3     R
        [0.920, 0.060, 0.010, 0.005, 0.005],
        [0.040, 0.800, 0.120, 0.010, 0.030],
        [0.010, 0.040, 0.880, 0.050, 0.020],
        [0.005, 0.010, 0.060, 0.920, 0.005],
        [0.020, 0.030, 0.020, 0.005, 0.925],
    ]
)


def uniform_confusion(diagonal: float) -> np.ndarray:
    """Confusion with a shared diagonal and the remainder spread evenly."""
    if not 0.0 <= diagonal <= 1.0:
        raise ValidationError("confusion diagonal must lie in [0, 1]")
    off = (1.0 - diagonal) / (NUM_STAGES - 1)
    m = np.full((NUM_STAGES, NUM_STAGES), off)
    np.fill_diagonal(m, diagonal)
    return m


def default_class_means(feature_dim: int, scale: float = 1.0) -> np.ndarray:
    """Stage means on scaled unit axes (needs at least five feature dims)."""
    if feature_dim < NUM_STAGES:
        raise ValidationError("default class means need feature_dim >= 5")
    means = np.zeros((NUM_STAGES, feature_dim))
    means[:, :NUM_STAGES] = np.eye(NUM_STAGES) * scale
    return means


def _check_stochastic_rows(m: np.ndarray, what: str) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if (m < 0).any() or np.abs(m.sum(axis=-1) - 1.0).max() > 1e-12:
        raise ValidationError(f"{what} rows must sum to 1")
    return m


@dataclass(frozen=True)
class GeneratorSpec:
    num_subjects: int
    num_epochs: int
    num_scorers: int
    feature_dim: int
    transition: np.ndarray
    scorer_confusions: np.ndarray
    class_means: np.ndarray
    noise_scale: float
    seed: int

    def __post_init__(self):
        if self.num_subjects < 1 or self.num_epochs < 1:
            raise ValidationError("need at least one subject and one epoch")
        if self.num_scorers < 2:
            raise ValidationError("need at least two scorers")
        if self.feature_dim < 1:
            raise ValidationError("feature_dim must be positive")
        if self.noise_scale < 0:
            raise ValidationError("noise_scale must be nonnegative")
        tr = _check_stochastic_rows(self.transition, "transition")
        if tr.shape != (NUM_STAGES, NUM_STAGES):
            raise ValidationError("transition must be 5x5")
        conf = _check_stochastic_rows(self.scorer_confusions, "confusion")
        if conf.shape != (self.num_scorers, NUM_STAGES, NUM_STAGES):
            raise ValidationError("need one 5x5 confusion per scorer")
        means = np.asarray(self.class_means, dtype=np.float64)
        if means.shape != (NUM_STAGES, self.feature_dim):
            raise ValidationError("class_means must be 5 x feature_dim")
        object.__setattr__(self, "transition", tr)
        object.__setattr__(self, "scorer_confusions", conf)
        object.__setattr__(self, "class_means", means)

    @classmethod
    def default(
        cls,
        num_subjects: int = 40,
        num_epochs: int = 960,
        num_scorers: int = 5,
        feature_dim: int = 8,
        diagonal: float = 0.8,
        mean_scale: float = 1.0,
        noise_scale: float = 1.0,
        seed: int = 0,
    ) -> "GeneratorSpec":
        return cls(
            num_subjects=num_subjects,
            num_epochs=num_epochs,
            num_scorers=num_scorers,
            feature_dim=feature_dim,
            transition=DEFAULT_TRANSITION.copy(),
            scorer_confusions=np.stack([uniform_confusion(diagonal)] * num_scorers),
            class_means=default_class_means(feature_dim, mean_scale),
            noise_scale=noise_scale,
            seed=seed,
        )

    def with_diagonal(self, diagonal: float) -> "GeneratorSpec":
        return replace(
            self, scorer_confusions=np.stack([uniform_confusion(diagonal)] * self.num_scorers)
        )


def subject_id(index: int) -> str:
    return f"s{index + 1:02d}"


def _subject_rng(spec: GeneratorSpec, index: int, stream: int) -> np.random.Generator:
    key = np.array([spec.seed, index * 4 + stream], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _draw_rows(cum_rows: np.ndarray, u: np.ndarray) -> np.ndarray:
    # (cum <= u) counts how many bin edges u clears: an inverse-cdf draw
    return np.minimum((cum_rows <= u[:, None]).sum(axis=1), NUM_STAGES - 1)


def gen_latent_hypnogram(spec: GeneratorSpec, index: int) -> Hypnogram:
    """Markov stage sequence, always starting awake."""
    rng = _subject_rng(spec, index, _STREAM_LATENT)
    cum = spec.transition.cumsum(axis=1)
    u = rng.random(spec.num_epochs - 1)
    stages = np.empty(spec.num_epochs, dtype=np.int8)
    stages[0] = 0
    prev = 0
    for t in range(1, spec.num_epochs):
        prev = int(min(np.searchsorted(cum[prev], u[t - 1], side="right"), NUM_STAGES - 1))
        stages[t] = prev
    return Hypnogram(subject_id(index), "latent", stages)


def gen_scorer_labels(spec: GeneratorSpec, index: int, latent: Hypnogram) -> MultiScoredRecord:
    """Independent per-scorer annotations drawn through each confusion matrix."""
    rng = _subject_rng(spec, index, _STREAM_LABELS)
    t = len(latent)
    grid = np.empty((spec.num_scorers, t), dtype=np.int8)
    for j in range(spec.num_scorers):
        cum_rows = spec.scorer_confusions[j].cumsum(axis=1)[latent.stages]
        grid[j] = _draw_rows(cum_rows, rng.random(t))
    ids = tuple(f"scorer_{j + 1}" for j in range(spec.num_scorers))
    return MultiScoredRecord(latent.subject_id, ids, grid)


def gen_features(spec: GeneratorSpec, index: int, latent: Hypnogram) -> FeatureMatrix:
    """Class-mean rows plus isotropic gaussian noise."""
    rng = _subject_rng(spec, index, _STREAM_FEATURES)
    noise = rng.standard_normal((len(latent), spec.feature_dim))
    return FeatureMatrix(latent.subject_id, spec.class_means[latent.stages] + spec.noise_scale * noise)


def gen_subject(spec: GeneratorSpec, index: int):
    latent = gen_latent_hypnogram(spec, index)
    return latent, gen_scorer_labels(spec, index, latent), gen_features(spec, index, latent)


def gen_cohort(spec: GeneratorSpec) -> list:
    """All subjects as (latent, record, features) triples."""
    return [gen_subject(spec, i) for i in range(spec.num_subjects)]


def mean_soft_agreement(spec: GeneratorSpec, num_subjects: int | None = None) -> float:
    """Cohort mean soft-agreement over subjects and scorers."""
    n = spec.num_subjects if num_subjects is None else min(num_subjects, spec.num_subjects)
    values = []
    for i in range(n):
        latent = gen_latent_hypnogram(spec, i)
        record = gen_scorer_labels(spec, i, latent)
        values.extend(soft_agreement(record, j) for j in range(record.num_scorers))
    return float(np.mean(values))


def calibrate_agreement(
    target: float,
    template: GeneratorSpec,
    tolerance: float = 0.02,
    pilot_subjects: int = 10,
    max_rounds: int = 40,
) -> GeneratorSpec:
    """Binary-search a shared confusion diagonal until the pilot cohort's mean
    soft-agreement lands within ``tolerance`` of ``target``.

    The search moves the diagonal inside [0.2, 1.0] (0.2 is stage-blind
    scoring). Targets outside the achievable band raise CalibrationError
    naming the band.
    """
    if not 0.0 < target <= 1.0:
        raise ValidationError("target soft-agreement must lie in (0, 1]")
    if target == 1.0:
        return template.with_diagonal(1.0)
    lo, hi = 0.2, 1.0
    pilot = min(pilot_subjects, template.num_subjects)
    sa_lo = mean_soft_agreement(template.with_diagonal(lo), pilot)
    if target < sa_lo - tolerance:
        raise CalibrationError(
            f"target {target} below the achievable band [{sa_lo:.3f}, 1.0]"
        )
    if abs(sa_lo - target) <= tolerance:
        return template.with_diagonal(lo)
    for _ in range(max_rounds):
        mid = 0.5 * (lo + hi)
        sa_mid = mean_soft_agreement(template.with_diagonal(mid), pilot)
        if abs(sa_mid - target) <= tolerance:
            return template.with_diagonal(mid)
        if sa_mid < target:
            lo = mid
        else:
            hi = mid
    raise CalibrationError(
        f"calibration did not converge to {target} within {max_rounds} rounds"
    )


def format_latent_csv(hypnograms) -> str:
    from .records import stage_token

    lines = ["subject,epoch,stage"]
    for h in hypnograms:
        for t, code in enumerate(h.stages):
            lines.append(f"{h.subject_id},{t},{stage_token(int(code))}")
    return "\n".join(lines) + "\n"
