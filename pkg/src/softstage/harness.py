"""Cross-validated experiment harness comparing training-target arms.

Three arms share one data pipeline and one classifier: "base" trains on
one-hot consensus labels, "ls_u" smooths them uniformly, "ls_sc" smooths
them toward each epoch's scorer vote distribution. Folds split at the
subject level; within a fold the model sees training and validation
subjects only, and every test subject is scored against its own
independently derived consensus. Smoothing strengths come from fixed grids
selected on mean validation macro-F1.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .consensus import majority_vote, rank_scorers, soft_consensus
from .errors import SoftstageError, ValidationError
from .fileio import atomic_write_text, fmt_float
from .metrics import SubjectMetrics, aggregate, compute_subject_metrics, paired_test
from .model import TrainConfig, forward, init_model, mc_dropout_predict, train, with_context
from .records import check_alignment, drop_unclassified, parse_features, parse_labels
from .smoothing import one_hot, smooth_matrix

ARM_ORDER = ("base", "ls_u", "ls_sc")
ARM_LABELS = {"base": "base", "ls_u": "base+LS_U", "ls_sc": "base+LS_SC"}
ALPHA_GRIDS = {
    "ls_u": tuple(i / 10 for i in range(1, 6)),
    "ls_sc": tuple(i / 10 for i in range(1, 11)),
}
ARM_MODES = {"base": "none", "ls_u": "uniform", "ls_sc": "soft-consensus"}


@dataclass(frozen=True)
class SubjectData:
    """Everything the harness needs about one subject."""

    subject_id: str
    features: np.ndarray
    consensus: np.ndarray
    sc: np.ndarray
    tiebreak_flags: np.ndarray


@dataclass(frozen=True)
class Fold:
    train_ids: tuple
    val_ids: tuple
    test_ids: tuple


@dataclass(frozen=True)
class FoldPlan:
    k: int
    seed: int
    folds: tuple


@dataclass(frozen=True)
class ExperimentConfig:
    arms: tuple = ARM_ORDER
    alpha: float | None = None  # None = grid search per smoothing arm
    k: int = 5
    val_count: int = 8
    test_count: int = 8
    seeds: tuple = (0,)
    hidden_width: int = 32
    dropout_rate: float = 0.3
    learning_rate: float = 1e-3
    batch_size: int = 128
    max_iterations: int = 100
    patience: int = 10
    context: bool = False
    mc_passes: int = 0
    num_bins: int = 10
    plot_subjects: int = 2

    def __post_init__(self):
        for arm in self.arms:
            if arm not in ARM_ORDER:
                raise ValidationError(f"unknown arm {arm!r}")
        if len(set(self.arms)) != len(self.arms):
            raise ValidationError("duplicate arms")
        if self.alpha is not None:
            for arm in self.arms:
                grid = ALPHA_GRIDS.get(arm)
                if grid and not grid[0] <= self.alpha <= grid[-1]:
                    raise ValidationError(
                        f"alpha {self.alpha} outside the {ARM_LABELS[arm]} range "
                        f"[{grid[0]}, {grid[-1]}]"
                    )
        if not self.seeds:
            raise ValidationError("need at least one seed")

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            max_iterations=self.max_iterations,
            patience=self.patience,
            seed=seed,
        )


@dataclass(frozen=True)
class ArmRun:
    """One arm at one smoothing strength, over every fold of one seed."""

    arm: str
    alpha: float | None
    seed: int
    rows: tuple  # SubjectMetrics per test subject
    mc_rows: tuple
    val_score: float
    errors: tuple
    sample_probs: dict


@dataclass(frozen=True)
class ExperimentResult:
    config: ExperimentConfig
    subject_ids: tuple
    runs: dict  # arm -> (ArmRun per seed)
    grid_runs: dict  # arm -> (ArmRun per seed per alpha)
    pvalues: dict  # (metric, arm_a, arm_b) -> p


def build_dataset(records, feature_matrices) -> dict:
    """Pair label records with features and precompute consensus artifacts."""
    features_by_id = {fm.subject_id: fm for fm in feature_matrices}
    dataset: dict = {}
    for record in records:
        if record.subject_id not in features_by_id:
            raise ValidationError(f"no features for subject {record.subject_id}")
        record = drop_unclassified(record)
        fm = features_by_id[record.subject_id]
        check_alignment(record, fm)
        ranking = rank_scorers(record)
        cons = majority_vote(record, ranking)
        sc = soft_consensus(record)
        dataset[record.subject_id] = SubjectData(
            record.subject_id,
            fm.values,
            cons.stages.astype(np.int64),
            sc.values,
            cons.tiebreak_flags,
        )
    extra = set(features_by_id) - set(dataset)
    if extra:
        raise ValidationError(f"features without label records: {sorted(extra)}")
    return dict(sorted(dataset.items()))


def build_dataset_from_cohort(cohort) -> dict:
    return build_dataset([rec for _, rec, _ in cohort], [fm for _, _, fm in cohort])


def load_dataset(directory) -> dict:
    directory = Path(directory)
    labels = directory / "labels.csv"
    features = directory / "features.csv"
    for path in (labels, features):
        if not path.is_file():
            raise ValidationError(f"dataset file not found: {path}")
    return build_dataset(parse_labels(labels), parse_features(features))


def make_folds(subject_ids, k: int, val_count: int, test_count: int, seed: int) -> FoldPlan:
    """Shuffle subjects and cut k test chunks of ~test_count that exhaust the
    cohort; validation subjects rotate in after each chunk."""
    ids = list(subject_ids)
    n = len(ids)
    if k < 1 or test_count < 1 or val_count < 1:
        raise ValidationError("k, test_count, and val_count must be positive")
    spare = n - k * test_count
    if spare < 0:
        raise ValidationError(f"{k} folds of {test_count} test subjects need {k * test_count}, have {n}")
    if k > 1 and spare >= k:
        raise ValidationError(f"test_count {test_count} too small to exhaust {n} subjects over {k} folds")
    if k == 1:
        spare = 0  # a single fold is a plain split; the remainder is the pool
    rng = np.random.default_rng(seed)
    shuffled = [ids[i] for i in rng.permutation(n)]
    folds = []
    start = 0
    for i in range(k):
        size = test_count + (1 if i < spare else 0)
        test = shuffled[start : start + size]
        pool = shuffled[start + size :] + shuffled[:start]
        if val_count + 1 > len(pool):
            raise ValidationError(
                f"fold {i}: {val_count} validation subjects leave no training subjects"
            )
        val = pool[:val_count]
        train_ids = pool[val_count:]
        folds.append(Fold(tuple(train_ids), tuple(val), tuple(test)))
        start += size
    return FoldPlan(k, seed, tuple(folds))


def _subject_features(cfg: ExperimentConfig, data: SubjectData) -> np.ndarray:
    return with_context(data.features) if cfg.context else data.features


def _fold_tensors(dataset: dict, fold: Fold, cfg: ExperimentConfig, arm: str, alpha):
    """Training and validation tensors built from train/val subjects only."""
    xs, ts = [], []
    for sid in fold.train_ids:
        data = dataset[sid]
        onehots = one_hot(data.consensus)
        ts.append(smooth_matrix(onehots, ARM_MODES[arm], 0.0 if alpha is None else alpha, data.sc))
        xs.append(_subject_features(cfg, data))
    vx, vy = [], []
    for sid in fold.val_ids:
        data = dataset[sid]
        vx.append(_subject_features(cfg, data))
        vy.append(data.consensus)
    return np.vstack(xs), np.vstack(ts), np.vstack(vx), np.concatenate(vy)


def _fold_seed(seed: int, fold_index: int) -> int:
    return seed * 8191 + fold_index


def run_fold(dataset: dict, fold: Fold, fold_index: int, arm: str, alpha, cfg: ExperimentConfig, seed: int):
    """Train on one fold, return per-test-subject metrics and the val score."""
    x, targets, vx, vy = _fold_tensors(dataset, fold, cfg, arm, alpha)
    sub_seed = _fold_seed(seed, fold_index)
    model = init_model(x.shape[1], cfg.hidden_width, cfg.dropout_rate, seed=sub_seed)
    trained, history = train(model, x, targets, vx, vy, cfg.train_config(sub_seed))
    rows, mc_rows, probs_by_subject = [], [], {}
    for sid in fold.test_ids:
        data = dataset[sid]
        probs = forward(trained, _subject_features(cfg, data))
        probs_by_subject[sid] = probs
        rows.append(
            compute_subject_metrics(sid, data.consensus, data.sc, probs, cfg.num_bins)
        )
        if cfg.mc_passes > 0:
            mc = mc_dropout_predict(trained, _subject_features(cfg, data), cfg.mc_passes, sub_seed)
            mc_rows.append(compute_subject_metrics(sid, data.consensus, data.sc, mc, cfg.num_bins))
    best_val = max(history.val_scores)
    return rows, mc_rows, best_val, probs_by_subject


def run_arm(dataset: dict, plan: FoldPlan, arm: str, alpha, cfg: ExperimentConfig, seed: int) -> ArmRun:
    """All folds of one arm. A failing fold is skipped and reported."""
    if arm == "base":
        alpha = None
    rows, mc_rows, val_scores, errors = [], [], [], []
    sample_probs = {}
    wanted = set()
    if cfg.plot_subjects > 0 and plan.folds:
        wanted = set(plan.folds[0].test_ids[: cfg.plot_subjects])
    for i, fold in enumerate(plan.folds):
        try:
            fold_rows, fold_mc, val, probs = run_fold(dataset, fold, i, arm, alpha, cfg, seed)
        except SoftstageError as exc:
            errors.append(f"fold {i}: {exc}")
            continue
        rows.extend(fold_rows)
        mc_rows.extend(fold_mc)
        val_scores.append(val)
        for sid in wanted & set(fold.test_ids):
            sample_probs[sid] = probs[sid]
    val_score = float(np.mean(val_scores)) if val_scores else float("nan")
    return ArmRun(arm, alpha, seed, tuple(rows), tuple(mc_rows), val_score, tuple(errors), sample_probs)


def grid_search_alpha(dataset: dict, plan: FoldPlan, arm: str, cfg: ExperimentConfig, seed: int):
    """Run the arm's whole grid; pick the alpha with the best mean validation
    macro-F1 (ties go to the smaller alpha). Returns (chosen, all runs)."""
    if arm not in ALPHA_GRIDS:
        raise ValidationError(f"arm {arm!r} has no smoothing grid")
    runs = [run_arm(dataset, plan, arm, a, cfg, seed) for a in ALPHA_GRIDS[arm]]
    scored = [r for r in runs if np.isfinite(r.val_score)]
    if not scored:
        raise ValidationError(f"every fold failed for arm {arm!r}")
    best = max(scored, key=lambda r: r.val_score)  # max keeps the first on ties
    return best, tuple(runs)


def run_experiment(dataset: dict, cfg: ExperimentConfig) -> ExperimentResult:
    subject_ids = tuple(sorted(dataset))
    plans = {
        seed: make_folds(subject_ids, cfg.k, cfg.val_count, cfg.test_count, seed)
        for seed in cfg.seeds
    }
    runs: dict = {}
    grid_runs: dict = {}
    for arm in cfg.arms:
        arm_runs, arm_grid = [], []
        for seed in cfg.seeds:
            plan = plans[seed]
            if arm == "base" or cfg.alpha is not None:
                arm_runs.append(run_arm(dataset, plan, arm, cfg.alpha, cfg, seed))
            else:
                best, everything = grid_search_alpha(dataset, plan, arm, cfg, seed)
                arm_runs.append(best)
                arm_grid.extend(everything)
        runs[arm] = tuple(arm_runs)
        grid_runs[arm] = tuple(arm_grid)
    pvalues = _paired_pvalues(cfg.arms, runs)
    return ExperimentResult(cfg, subject_ids, runs, grid_runs, pvalues)


def pooled_rows(result: ExperimentResult, arm: str) -> list:
    """Per-subject rows pooled over seeds, ordered by (seed, subject)."""
    rows = []
    for run in result.runs[arm]:
        rows.extend(sorted(run.rows, key=lambda r: r.subject_id))
    return rows


def _paired_pvalues(arms, runs: dict) -> dict:
    pvalues: dict = {}
    for i, arm_a in enumerate(arms):
        for arm_b in arms[i + 1 :]:
            rows_a = _keyed_rows(runs[arm_a])
            rows_b = _keyed_rows(runs[arm_b])
            keys = sorted(set(rows_a) & set(rows_b))
            if len(keys) < 5:
                continue
            for metric in ("acs", "macro_f1", "ece", "accuracy"):
                a = [getattr(rows_a[k], metric) for k in keys]
                b = [getattr(rows_b[k], metric) for k in keys]
                pvalues[(metric, arm_a, arm_b)] = paired_test(a, b)
    return pvalues


def _keyed_rows(arm_runs) -> dict:
    return {(run.seed, row.subject_id): row for run in arm_runs for row in run.rows}


def _report_line(label: str, alpha_text: str, report) -> str:
    mean = report.mean
    cells = [
        label,
        alpha_text,
        fmt_float(mean["accuracy"]),
        fmt_float(mean["macro_f1"]),
        fmt_float(mean["kappa"]),
        fmt_float(mean["weighted_f1"]),
    ]
    cells.extend(fmt_float(v) for v in mean["per_class_f1"])
    cells.extend(
        [
            fmt_float(mean["ece"]),
            fmt_float(mean["confidence"]),
            fmt_float(mean["acs"]),
            fmt_float(report.std["acs"]),
        ]
    )
    return ",".join(cells)


REPORT_HEADER = (
    "arm,alpha,acc,mf1,kappa,f1,f1_W,f1_N1,f1_N2,f1_N3,f1_R,ece,conf,acs_mean,acs_std"
)


def _alpha_text(arm_runs) -> str:
    alphas = [run.alpha for run in arm_runs if run.alpha is not None]
    if not alphas:
        return ""
    uniq = sorted(set(alphas))
    if len(uniq) == 1:
        return fmt_float(uniq[0])
    return ";".join(fmt_float(a) for a in (run.alpha for run in arm_runs))


def format_report(result: ExperimentResult) -> str:
    lines = [REPORT_HEADER]
    for arm in result.config.arms:
        rows = pooled_rows(result, arm)
        if rows:
            lines.append(_report_line(ARM_LABELS[arm], _alpha_text(result.runs[arm]), aggregate(rows)))
        mc = [row for run in result.runs[arm] for row in run.mc_rows]
        if mc:
            lines.append(
                _report_line(ARM_LABELS[arm] + " w/ MC", _alpha_text(result.runs[arm]), aggregate(mc))
            )
    return "\n".join(lines) + "\n"


def format_per_subject(result: ExperimentResult) -> str:
    lines = ["arm,seed,subject,alpha,acc,mf1,kappa,wf1,ece,conf,acs"]
    for arm in result.config.arms:
        for run in result.runs[arm]:
            alpha_text = "" if run.alpha is None else fmt_float(run.alpha)
            for row in sorted(run.rows, key=lambda r: r.subject_id):
                cells = [
                    ARM_LABELS[arm],
                    str(run.seed),
                    row.subject_id,
                    alpha_text,
                    fmt_float(row.accuracy),
                    fmt_float(row.macro_f1),
                    fmt_float(row.kappa),
                    fmt_float(row.weighted_f1),
                    fmt_float(row.ece),
                    fmt_float(row.confidence),
                    fmt_float(row.acs),
                ]
                lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def format_per_alpha(result: ExperimentResult) -> str:
    lines = ["arm,seed,alpha,val_mf1,acc,mf1,kappa,ece,conf,acs_mean,acs_std"]
    for arm in result.config.arms:
        for run in result.grid_runs.get(arm, ()):
            if not run.rows:
                continue
            report = aggregate(run.rows)
            cells = [
                ARM_LABELS[arm],
                str(run.seed),
                fmt_float(run.alpha),
                fmt_float(run.val_score),
                fmt_float(report.mean["accuracy"]),
                fmt_float(report.mean["macro_f1"]),
                fmt_float(report.mean["kappa"]),
                fmt_float(report.mean["ece"]),
                fmt_float(report.mean["confidence"]),
                fmt_float(report.mean["acs"]),
                fmt_float(report.std["acs"]),
            ]
            lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def format_pvalues(result: ExperimentResult) -> str:
    lines = ["metric,arm_a,arm_b,p_value"]
    for (metric, arm_a, arm_b), p in result.pvalues.items():
        lines.append(f"{metric},{ARM_LABELS[arm_a]},{ARM_LABELS[arm_b]},{fmt_float(p)}")
    return "\n".join(lines) + "\n"


def emit_report(result: ExperimentResult, out_dir) -> dict:
    """Write the report tables atomically; returns the paths written."""
    out_dir = Path(out_dir)
    paths = {"report": out_dir / "report.csv", "per_subject": out_dir / "per_subject.csv"}
    atomic_write_text(paths["report"], format_report(result))
    atomic_write_text(paths["per_subject"], format_per_subject(result))
    if any(result.grid_runs.get(arm) for arm in result.config.arms):
        paths["per_alpha"] = out_dir / "per_alpha.csv"
        atomic_write_text(paths["per_alpha"], format_per_alpha(result))
    if result.pvalues:
        paths["pvalues"] = out_dir / "pvalues.csv"
        atomic_write_text(paths["pvalues"], format_pvalues(result))
    return paths
