"""Parsing, containers, and NC-epoch handling."""

import io

import numpy as np
import pytest

from softstage.errors import AlignmentError, ParseError, ValidationError
from softstage.records import (
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
    format_features,
    format_labels,
    parse_features,
    parse_labels,
    stage_token,
    write_labels,
)

LABELS = """subject,epoch,a,b
s01,0,W,W
s01,1,W,N1
s01,2,N1,N1
"""


def parse_one(text):
    records = parse_labels(io.StringIO(text))
    assert len(records) == 1
    return records[0]


def test_stage_alphabet():
    # six distinct values, NC outside the K=5 class set
    codes = {int(s) for s in SleepStage}
    assert len(codes) == 6
    assert NC == -1 and NC not in range(NUM_STAGES)
    assert STAGE_NAMES == ("W", "N1", "N2", "N3", "R")
    for i, name in enumerate(STAGE_NAMES):
        assert stage_token(i) == name
    assert stage_token(NC) == "NC"
    assert EPOCH_SECONDS == 30.0


def test_parse_two_scorer_file():
    rec = parse_one(LABELS)
    assert rec.subject_id == "s01"
    assert rec.scorer_ids == ("a", "b")
    assert rec.num_epochs == 3 and rec.num_scorers == 2
    np.testing.assert_array_equal(rec.annotations, [[0, 0, 1], [0, 1, 1]])


def test_labels_round_trip():
    rec = parse_one(LABELS)
    again = parse_one(format_labels([rec]))
    np.testing.assert_array_equal(again.annotations, rec.annotations)
    assert again.scorer_ids == rec.scorer_ids


def test_unknown_token_names_token_and_line():
    bad = LABELS.replace("N1,N1", "N4,N1")
    with pytest.raises(ParseError, match="N4") as err:
        parse_one(bad)
    assert "line 4" in str(err.value)


def test_ragged_row_is_alignment_error():
    bad = "subject,epoch,a,b\ns01,0,W,W\ns01,1,W\n"
    with pytest.raises(AlignmentError, match="line 3"):
        parse_one(bad)


def test_out_of_order_epochs_rejected():
    bad = "subject,epoch,a,b\ns01,0,W,W\ns01,2,W,W\n"
    with pytest.raises(AlignmentError, match="out of order"):
        parse_one(bad)


def test_empty_cell_reads_as_nc():
    rec = parse_one("subject,epoch,a,b\ns01,0,W,\n")
    assert rec.annotations[1, 0] == NC


def test_header_must_name_columns():
    with pytest.raises(ParseError):
        parse_one("epoch,subject,a\n")
    with pytest.raises(ParseError):
        parse_one("subject,epoch,a\n")  # header but no rows


def test_multiple_subjects_in_one_file():
    text = LABELS + "s02,0,R,R\ns02,1,R,NC\n"
    records = parse_labels(io.StringIO(text))
    assert [r.subject_id for r in records] == ["s01", "s02"]
    assert records[1].num_epochs == 2
    assert records[1].annotations[1, 1] == NC


def test_drop_all_nc_epoch():
    rec = parse_one("subject,epoch,a,b,c\ns01,0,W,W,W\ns01,1,NC,NC,NC\ns01,2,N2,NC,N2\n")
    kept = drop_unclassified(rec)
    assert kept.num_retained == 2
    np.testing.assert_array_equal(kept.retained[0], [0, 2])
    # partially scored epoch stays, with 2 observations
    assert (kept.retained[:, 1] == NC).sum() == 1


def test_drop_any_nc_policy():
    rec = parse_one("subject,epoch,a,b\ns01,0,W,W\ns01,1,W,NC\n")
    strict = drop_unclassified(rec, policy="any-nc")
    assert strict.num_retained == 1
    with pytest.raises(ValidationError):
        drop_unclassified(rec, policy="bogus")


def test_drop_is_identity_without_nc():
    rec = parse_one(LABELS)
    kept = drop_unclassified(rec)
    assert kept.num_retained == rec.num_epochs
    np.testing.assert_array_equal(kept.retained, rec.annotations)


def test_scorer_hypnogram_view():
    rec = parse_one(LABELS)
    hyp = rec.scorer_hypnogram(1)
    assert isinstance(hyp, Hypnogram)
    assert hyp.scorer_id == "b"
    np.testing.assert_array_equal(hyp.stages, [0, 1, 1])


def test_record_validation():
    with pytest.raises(ValidationError):
        MultiScoredRecord("s", ("a",), [[9, 0]])
    with pytest.raises(AlignmentError):
        MultiScoredRecord("s", ("a", "b"), [[0, 0]])
    with pytest.raises(ValidationError):
        MultiScoredRecord("s", ("a", "a"), [[0], [0]])


def test_parse_features_table():
    mats = parse_features(io.StringIO("subject,epoch,x1,x2\ns01,0,1.5,2\ns01,1,0,-3.25\n"))
    assert len(mats) == 1
    assert mats[0].num_epochs == 2 and mats[0].dim == 2
    np.testing.assert_array_equal(mats[0].values, [[1.5, 2.0], [0.0, -3.25]])


def test_feature_cell_must_be_numeric():
    with pytest.raises(ParseError, match="line 2"):
        parse_features(io.StringIO("subject,epoch,x1\ns01,0,abc\n"))
    with pytest.raises(ParseError):
        parse_features(io.StringIO("subject,epoch,x1\ns01,0,inf\n"))


def test_feature_matrix_rejects_non_finite():
    with pytest.raises(ValidationError):
        FeatureMatrix("s01", [[np.nan, 1.0]])


def test_features_round_trip(tmp_path):
    rng = np.random.default_rng(7)
    mats = [FeatureMatrix("s01", rng.normal(size=(4, 3))),
            FeatureMatrix("s02", rng.normal(size=(2, 3)))]
    text = format_features(mats)
    again = parse_features(io.StringIO(text))
    for a, b in zip(mats, again):
        assert a.subject_id == b.subject_id
        np.testing.assert_array_equal(a.values, b.values)


def test_check_alignment():
    rec = drop_unclassified(parse_one("subject,epoch,a,b\ns01,0,W,W\ns01,1,NC,NC\ns01,2,N1,W\n"))
    check_alignment(rec, FeatureMatrix("s01", np.zeros((2, 4))))
    with pytest.raises(AlignmentError):
        check_alignment(rec, FeatureMatrix("s01", np.zeros((3, 4))))


def test_write_labels_file(tmp_path):
    rec = parse_one(LABELS)
    path = tmp_path / "labels.csv"
    write_labels([rec], path)
    assert parse_labels(path)[0].scorer_ids == ("a", "b")
    # same grid twice gives identical bytes
    write_labels([rec], tmp_path / "again.csv")
    assert path.read_bytes() == (tmp_path / "again.csv").read_bytes()
