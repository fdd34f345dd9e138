"""Stage vocabulary and containers for multi-scorer sleep annotations.

The on-disk label format is a UTF-8 comma-separated table with header
``subject,epoch,<scorer>,...`` and one row per 30-second epoch. Stage cells
use the uppercase tokens W, N1, N2, N3, R; epochs a scorer did not commit to
are written as NC (an empty cell is read the same way). Several subjects may
share one file; each subject's epochs must appear in order starting at 0.

Features travel in a second table with header ``subject,epoch,x1,...,xD``
holding one numeric row per retained epoch of the paired label record.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .errors import AlignmentError, ParseError, ValidationError
from .fileio import atomic_write_text, fmt_float, read_text


class SleepStage(IntEnum):
    """AASM stage alphabet. Values double as class indices; NC has none."""

    NC = -1
    W = 0
    N1 = 1
    N2 = 2
    N3 = 3
    R = 4


STAGE_NAMES = ("W", "N1", "N2", "N3", "R")
NUM_STAGES = 5
NC = int(SleepStage.NC)
EPOCH_SECONDS = 30.0

_TOKEN_TO_CODE = {name: i for i, name in enumerate(STAGE_NAMES)}
_TOKEN_TO_CODE["NC"] = NC
_TOKEN_TO_CODE[""] = NC


def stage_token(code: int) -> str:
    """Token for an integer stage code (NC included)."""
    if code == NC:
        return "NC"
    return STAGE_NAMES[code]


def _as_code_array(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.int8)
    if arr.size and (arr.min() < NC or arr.max() >= NUM_STAGES):
        raise ValidationError(f"{name} contains codes outside the stage alphabet")
    return arr


@dataclass(frozen=True)
class Hypnogram:
    """One scorer's stage sequence for one subject (integer stage codes)."""

    subject_id: str
    scorer_id: str
    stages: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "stages", _as_code_array(self.stages, "stages"))
        if self.stages.ndim != 1:
            raise ValidationError("stages must be one-dimensional")

    def __len__(self) -> int:
        return int(self.stages.shape[0])


@dataclass(frozen=True)
class MultiScoredRecord:
    """All scorers' annotations for one subject.

    ``annotations`` is a J x T grid of stage codes with NC = -1.
    ``epoch_mask`` marks the retained epochs; parsing retains everything,
    :func:`drop_unclassified` masks epochs out. Downstream consensus code
    sees only the retained view.
    """

    subject_id: str
    scorer_ids: tuple
    annotations: np.ndarray
    epoch_mask: np.ndarray = None

    def __post_init__(self):
        ann = _as_code_array(self.annotations, "annotations")
        if ann.ndim != 2:
            raise ValidationError("annotations must be a J x T grid")
        object.__setattr__(self, "annotations", ann)
        object.__setattr__(self, "scorer_ids", tuple(self.scorer_ids))
        if len(self.scorer_ids) != ann.shape[0]:
            raise AlignmentError(
                f"{len(self.scorer_ids)} scorer ids for {ann.shape[0]} annotation rows"
            )
        if len(set(self.scorer_ids)) != len(self.scorer_ids):
            raise ValidationError("scorer ids must be unique")
        mask = self.epoch_mask
        mask = np.ones(ann.shape[1], dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
        if mask.shape != (ann.shape[1],):
            raise AlignmentError("epoch_mask length does not match the epoch count")
        object.__setattr__(self, "epoch_mask", mask)

    @property
    def num_scorers(self) -> int:
        return int(self.annotations.shape[0])

    @property
    def num_epochs(self) -> int:
        return int(self.annotations.shape[1])

    @property
    def num_retained(self) -> int:
        return int(self.epoch_mask.sum())

    @property
    def retained(self) -> np.ndarray:
        """J x T_retained view of the annotation grid."""
        return self.annotations[:, self.epoch_mask]

    def scorer_hypnogram(self, j: int) -> Hypnogram:
        return Hypnogram(self.subject_id, self.scorer_ids[j], self.retained[j])


@dataclass(frozen=True)
class FeatureMatrix:
    """Per-epoch feature rows for one subject."""

    subject_id: str
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 2:
            raise ValidationError("feature values must be a T x D matrix")
        if not np.isfinite(vals).all():
            raise ValidationError(f"non-finite feature value for subject {self.subject_id}")
        object.__setattr__(self, "values", vals)

    @property
    def num_epochs(self) -> int:
        return int(self.values.shape[0])

    @property
    def dim(self) -> int:
        return int(self.values.shape[1])


def _rows_by_subject(text: str, what: str):
    """Split a csv body into (header, {subject: [(line_no, epoch, cells), ...]})."""
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError(f"empty {what} table", line=1)
    header = [h.strip() for h in header]
    if len(header) < 3 or header[0] != "subject" or header[1] != "epoch":
        raise ParseError(
            f"{what} header must start with 'subject,epoch' and name at least one column",
            line=1,
        )
    groups: dict = {}
    for line_no, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise AlignmentError(
                f"line {line_no}: expected {len(header)} cells, found {len(row)}"
            )
        subject = row[0].strip()
        if not subject:
            raise ParseError("empty subject id", line=line_no)
        try:
            epoch = int(row[1])
        except ValueError:
            raise ParseError(f"epoch index {row[1]!r} is not an integer", line=line_no)
        cells = [c.strip() for c in row[2:]]
        bucket = groups.setdefault(subject, [])
        if epoch != len(bucket):
            raise AlignmentError(
                f"line {line_no}: subject {subject} epoch {epoch} out of order "
                f"(expected {len(bucket)})"
            )
        bucket.append((line_no, cells))
    if not groups:
        raise ParseError(f"{what} table has a header but no rows", line=2)
    return header, groups


def parse_labels(source) -> list:
    """Parse a multi-scorer label table into one record per subject.

    Raises ParseError for unknown stage tokens (naming the line) and
    AlignmentError for ragged or out-of-order rows.
    """
    header, groups = _rows_by_subject(read_text(source), "label")
    scorer_ids = tuple(header[2:])
    records = []
    for subject, rows in groups.items():
        grid = np.empty((len(scorer_ids), len(rows)), dtype=np.int8)
        for t, (line_no, cells) in enumerate(rows):
            for j, tok in enumerate(cells):
                try:
                    grid[j, t] = _TOKEN_TO_CODE[tok]
                except KeyError:
                    raise ParseError(f"unknown stage token {tok!r}", line=line_no)
        records.append(MultiScoredRecord(subject, scorer_ids, grid))
    return records


def format_labels(records) -> str:
    """Inverse of :func:`parse_labels`; writes the full grid, masks are not stored."""
    records = list(records)
    if not records:
        raise ValidationError("no records to write")
    scorer_ids = records[0].scorer_ids
    for rec in records[1:]:
        if rec.scorer_ids != scorer_ids:
            raise AlignmentError("records in one table must share scorer ids")
    lines = ["subject,epoch," + ",".join(scorer_ids)]
    for rec in records:
        for t in range(rec.num_epochs):
            toks = ",".join(stage_token(int(c)) for c in rec.annotations[:, t])
            lines.append(f"{rec.subject_id},{t},{toks}")
    return "\n".join(lines) + "\n"


def write_labels(records, path) -> None:
    atomic_write_text(path, format_labels(records))


def parse_features(source) -> list:
    """Parse a feature table into one FeatureMatrix per subject."""
    header, groups = _rows_by_subject(read_text(source), "feature")
    dim = len(header) - 2
    matrices = []
    for subject, rows in groups.items():
        vals = np.empty((len(rows), dim), dtype=np.float64)
        for t, (line_no, cells) in enumerate(rows):
            try:
                vals[t] = [float(c) for c in cells]
            except ValueError:
                raise ParseError("non-numeric feature cell", line=line_no)
        if not np.isfinite(vals).all():
            raise ParseError(f"non-finite feature value for subject {subject}")
        matrices.append(FeatureMatrix(subject, vals))
    return matrices


def format_features(matrices) -> str:
    matrices = list(matrices)
    if not matrices:
        raise ValidationError("no feature matrices to write")
    dim = matrices[0].dim
    lines = ["subject,epoch," + ",".join(f"x{i + 1}" for i in range(dim))]
    for fm in matrices:
        if fm.dim != dim:
            raise AlignmentError("feature matrices in one table must share one width")
        for t in range(fm.num_epochs):
            row = ",".join(fmt_float(v) for v in fm.values[t])
            lines.append(f"{fm.subject_id},{t},{row}")
    return "\n".join(lines) + "\n"


def write_features(matrices, path) -> None:
    atomic_write_text(path, format_features(matrices))


def drop_unclassified(record: MultiScoredRecord, policy: str = "all-nc") -> MultiScoredRecord:
    """Mask out unclassified epochs; returns a new record.

    policy "all-nc" drops epochs every scorer marked NC (partially annotated
    epochs stay in); "any-nc" drops epochs with any NC at all. Idempotent.
    """
    if policy == "all-nc":
        keep = (record.annotations != NC).any(axis=0)
    elif policy == "any-nc":
        keep = (record.annotations != NC).all(axis=0)
    else:
        raise ValidationError(f"unknown NC policy {policy!r}")
    return MultiScoredRecord(
        record.subject_id,
        record.scorer_ids,
        record.annotations,
        record.epoch_mask & keep,
    )


def check_alignment(record: MultiScoredRecord, features: FeatureMatrix) -> None:
    """Features must carry exactly one row per retained epoch of the record."""
    if record.subject_id != features.subject_id:
        raise AlignmentError(
            f"record {record.subject_id} paired with features for {features.subject_id}"
        )
    if features.num_epochs != record.num_retained:
        raise AlignmentError(
            f"subject {record.subject_id}: {features.num_epochs} feature rows "
            f"for {record.num_retained} retained epochs"
        )
