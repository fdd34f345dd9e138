"""softstage: multi-scorer consensus and calibrated training for sleep staging.

The package turns several imperfect manual scorings of the same nights into
per-scorer reliability scores, consensus hypnograms, and per-epoch stage
vote distributions; trains a reference classifier on consensus targets
smoothed either uniformly or toward the vote distributions; and measures
how well the resulting probabilities track scorer agreement (calibration
error and cosine agreement), with a synthetic-cohort generator and a
cross-validated experiment harness around it all.
"""

__version__ = "0.1.0"

from .consensus import (
    ConsensusHypnogram,
    LeaveOneOutConsensus,
    ScorerRanking,
    SoftConsensusMatrix,
    leave_one_out_consensus,
    majority_vote,
    rank_scorers,
    soft_agreement,
    soft_consensus,
)
from .errors import (
    AlignmentError,
    CalibrationError,
    DataError,
    InternalConsistencyError,
    ParseError,
    SoftstageError,
    TrainingError,
    UndefinedAgreementError,
    ValidationError,
)
from .harness import (
    ExperimentConfig,
    ExperimentResult,
    Fold,
    FoldPlan,
    build_dataset,
    build_dataset_from_cohort,
    emit_report,
    grid_search_alpha,
    load_dataset,
    make_folds,
    run_arm,
    run_experiment,
)
from .metrics import (
    CalibrationBins,
    ConfusionMatrix,
    MetricsReport,
    Scores,
    SubjectMetrics,
    acs,
    aggregate,
    classification_scores,
    compute_subject_metrics,
    confusion,
    ece,
    mean_confidence,
    paired_test,
)
from .model import (
    AdamState,
    ReferenceModel,
    TrainConfig,
    TrainHistory,
    adam_step,
    forward,
    init_model,
    load_model,
    loss_and_grads,
    mc_dropout_predict,
    save_model,
    train,
    with_context,
)
from .records import (
    EPOCH_SECONDS,
    NC,
    NUM_STAGES,
    STAGE_NAMES,
    FeatureMatrix,
    Hypnogram,
    MultiScoredRecord,
    SleepStage,
    check_alignment,
    drop_unclassified,
    parse_features,
    parse_labels,
    stage_token,
    write_features,
    write_labels,
)
from .smoothing import (
    SmoothedTarget,
    cross_entropy,
    cross_entropy_grad,
    one_hot,
    sc_smooth,
    smooth_matrix,
    softmax,
    uniform_smooth,
)
from .synthgen import (
    GeneratorSpec,
    calibrate_agreement,
    gen_cohort,
    gen_features,
    gen_latent_hypnogram,
    gen_scorer_labels,
    gen_subject,
    mean_soft_agreement,
    uniform_confusion,
)
from .viz import HypnodensitySeries, STAGE_COLORS, emit_hypnodensity, emit_hypnogram
