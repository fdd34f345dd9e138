"""Consensus building across scorers.

Given a multi-scored record, this module derives per-scorer reliability
(soft-agreement against a leave-one-out probabilistic consensus), a ranked
scorer list, a majority-vote consensus hypnogram whose ties are resolved by
the most reliable scorer, and the per-epoch soft-consensus distribution used
as a smoothing prior. NC annotations never vote.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import InternalConsistencyError, UndefinedAgreementError, ValidationError
from .records import NC, NUM_STAGES, MultiScoredRecord, stage_token
from .fileio import fmt_float

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LeaveOneOutConsensus:
    """Probabilistic consensus of everyone but one scorer.

    ``z`` holds one row per retained epoch; each row is the per-stage vote
    count of the other scorers divided by the row maximum, so the majority
    stage (and every stage tied with it) scores exactly 1. Epochs where no
    other scorer committed to a stage are all-zero rows.
    """

    scorer_id: str
    z: np.ndarray

    @property
    def no_vote_mask(self) -> np.ndarray:
        return ~self.z.any(axis=1)


@dataclass(frozen=True)
class ScorerRanking:
    """Scorers ordered by descending soft-agreement, ties by scorer index."""

    subject_id: str
    entries: tuple  # ((scorer_id, soft_agreement), ...) in rank order
    indices: tuple  # scorer positions in the record, same order


@dataclass(frozen=True)
class ConsensusHypnogram:
    subject_id: str
    stages: np.ndarray
    tiebreak_flags: np.ndarray


@dataclass(frozen=True)
class SoftConsensusMatrix:
    """Per-epoch stage distribution: vote share among non-NC annotations."""

    subject_id: str
    values: np.ndarray


def _vote_counts(votes: np.ndarray) -> np.ndarray:
    """Stage-vote tallies, one row per epoch, ignoring NC."""
    counts = np.zeros((votes.shape[1], NUM_STAGES), dtype=np.int64)
    epochs = np.arange(votes.shape[1])
    for row in votes:
        valid = row != NC
        counts[epochs[valid], row[valid]] += 1
    return counts


def _require_multiscorer(record: MultiScoredRecord) -> np.ndarray:
    if record.num_scorers < 2:
        raise ValidationError("consensus needs at least two scorers")
    return record.retained


def leave_one_out_consensus(record: MultiScoredRecord, j: int) -> LeaveOneOutConsensus:
    """Consensus of all scorers except scorer ``j``, normalised by the top count."""
    votes = _require_multiscorer(record)
    if not 0 <= j < record.num_scorers:
        raise ValidationError(f"scorer index {j} out of range")
    others = np.delete(votes, j, axis=0)
    counts = _vote_counts(others)
    top = counts.max(axis=1)
    z = np.zeros(counts.shape, dtype=np.float64)
    has_votes = top > 0
    z[has_votes] = counts[has_votes] / top[has_votes, None]
    if not has_votes.all():
        log.warning(
            "subject %s: %d epochs have no annotation besides scorer %s",
            record.subject_id,
            int((~has_votes).sum()),
            record.scorer_ids[j],
        )
    return LeaveOneOutConsensus(record.scorer_ids[j], z)


def soft_agreement(record: MultiScoredRecord, j: int) -> float:
    """Mean leave-one-out consensus mass on scorer ``j``'s own choices.

    Epochs scorer ``j`` marked NC are skipped. Always lands in [0, 1]; a
    scorer with no committed epochs has no defined agreement.
    """
    z = leave_one_out_consensus(record, j).z
    chosen = _require_multiscorer(record)[j]
    valid = chosen != NC
    if not valid.any():
        raise UndefinedAgreementError(
            f"scorer {record.scorer_ids[j]} marked every retained epoch NC"
        )
    return float(z[valid, chosen[valid]].mean())


def rank_scorers(record: MultiScoredRecord) -> ScorerRanking:
    """Rank scorers by soft-agreement, most reliable first; ties keep record order."""
    scores = [soft_agreement(record, j) for j in range(record.num_scorers)]
    order = sorted(range(record.num_scorers), key=lambda j: (-scores[j], j))
    entries = tuple((record.scorer_ids[j], scores[j]) for j in order)
    return ScorerRanking(record.subject_id, entries, tuple(order))


def majority_vote(record: MultiScoredRecord, ranking: ScorerRanking) -> ConsensusHypnogram:
    """Most-voted stage per epoch; ties go to the highest-ranked scorer who
    voted for one of the tied stages."""
    votes = _require_multiscorer(record)
    counts = _vote_counts(votes)
    top = counts.max(axis=1)
    if (top == 0).any():
        raise ValidationError(
            f"subject {record.subject_id}: retained epoch with no annotations; "
            "drop unclassified epochs first"
        )
    stages = counts.argmax(axis=1).astype(np.int8)
    tied = (counts == top[:, None]).sum(axis=1) > 1
    flags = np.zeros(votes.shape[1], dtype=bool)
    for t in np.flatnonzero(tied):
        tie_set = np.flatnonzero(counts[t] == top[t])
        for j in ranking.indices:
            if votes[j, t] in tie_set:
                stages[t] = votes[j, t]
                break
        else:
            raise InternalConsistencyError(
                f"no ranked scorer voted for a tied stage at epoch {t}"
            )
        flags[t] = True
    return ConsensusHypnogram(record.subject_id, stages, flags)


def soft_consensus(record: MultiScoredRecord) -> SoftConsensusMatrix:
    """Per-epoch vote shares: stage count over the number of non-NC annotations."""
    votes = _require_multiscorer(record)
    counts = _vote_counts(votes)
    committed = counts.sum(axis=1)
    if (committed == 0).any():
        raise ValidationError(
            f"subject {record.subject_id}: retained epoch with no annotations; "
            "drop unclassified epochs first"
        )
    return SoftConsensusMatrix(record.subject_id, counts / committed[:, None])


def format_consensus_csv(consensuses) -> str:
    lines = ["subject,epoch,stage,tiebreak"]
    for cons in consensuses:
        for t, code in enumerate(cons.stages):
            tb = int(cons.tiebreak_flags[t])
            lines.append(f"{cons.subject_id},{t},{stage_token(int(code))},{tb}")
    return "\n".join(lines) + "\n"


def format_soft_consensus_csv(matrices) -> str:
    header = "subject,epoch," + ",".join(f"p_{n}" for n in ("W", "N1", "N2", "N3", "R"))
    lines = [header]
    for sc in matrices:
        for t, row in enumerate(sc.values):
            cells = ",".join(fmt_float(v) for v in row)
            lines.append(f"{sc.subject_id},{t},{cells}")
    return "\n".join(lines) + "\n"
