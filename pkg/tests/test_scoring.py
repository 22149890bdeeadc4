import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mcdock.errors import ConfigError, SchemaError, ValidationError
from mcdock.scoring import (LabelMatrix, PerformanceRecord, PerformanceTable, ScoreConfig,
                            build_label_matrix, composite_score, composite_scores, pb_score,
                            pb_valid_from_checks, rmsd_score, rmsd_scores)

from oracles import rmsd_score_mp

# (e^2 - e) / (e^2 - 1), 50-digit mpmath
RMSD_1_M2 = 0.7310585786300048792511592418218362743651

tolerances = st.floats(min_value=1e-3, max_value=20.0, allow_nan=False)


def test_rmsd_score_examples():
    assert rmsd_score(0.0, 2.0) == 1.0
    assert rmsd_score(2.0, 2.0) == 0.0
    assert rmsd_score(3.0, 2.0) == 0.0
    assert abs(rmsd_score(1.0, 2.0) - RMSD_1_M2) < 1e-15


@pytest.mark.parametrize("x,m", [(0.3, 1.0), (1.7, 2.0), (2.0, math.log(11)), (4.2, 5.0), (0.01, 0.02)])
def test_rmsd_score_matches_mpmath(x, m):
    assert rmsd_score(x, m) == pytest.approx(float(rmsd_score_mp(x, m)), abs=1e-13)


@pytest.mark.parametrize("bad", [-0.1, float("nan"), float("inf")])
def test_rmsd_score_rejects_bad_rmsd(bad):
    with pytest.raises(ValidationError):
        rmsd_score(bad, 2.0)


@pytest.mark.parametrize("bad", [0.0, -1.0, 25.0, float("nan")])
def test_rmsd_score_rejects_bad_tolerance(bad):
    with pytest.raises(ConfigError):
        rmsd_score(1.0, bad)


@given(tolerances)
def test_boundaries_exact(m):
    assert rmsd_score(0.0, m) == 1.0
    assert rmsd_score(m, m) == 0.0


@given(tolerances, st.floats(0, 1), st.floats(0, 1))
def test_monotone_on_zero_to_m(m, u1, u2):
    x1, x2 = sorted((u1 * m, u2 * m))
    if x2 - x1 < 1e-6:
        return
    assert rmsd_score(x1, m) > rmsd_score(x2, m)


@given(tolerances)
def test_continuous_at_tolerance(m):
    left = rmsd_score(m * (1 - 1e-9), m)
    assert 0.0 <= left < 1e-6


@given(st.floats(0, 30), tolerances, st.booleans(), st.floats(0, 1))
def test_composite_in_unit_interval(x, m, valid, alpha):
    rec = PerformanceRecord("i", "a", x, valid)
    for cfg in (ScoreConfig("add", m, alpha), ScoreConfig("mul", m)):
        assert 0.0 <= composite_score(rec, cfg) <= 1.0


@given(st.floats(0, 30), tolerances)
def test_multiplicative_gated_by_validity(x, m):
    assert composite_score(PerformanceRecord("i", "a", x, False), ScoreConfig("mul", m)) == 0.0


@given(st.floats(0, 30), tolerances, st.booleans())
def test_additive_endpoints(x, m, valid):
    rec = PerformanceRecord("i", "a", x, valid)
    assert composite_score(rec, ScoreConfig("add", m, 1.0)) == rmsd_score(x, m)
    assert composite_score(rec, ScoreConfig("add", m, 0.0)) == pb_score(valid)


def test_composite_examples():
    assert composite_score(PerformanceRecord("i", "a", 1.5, False), ScoreConfig("mul", 2.0)) == 0.0
    add = composite_score(PerformanceRecord("i", "a", 1.0, True), ScoreConfig("add", 2.0, 0.5))
    assert add == pytest.approx(0.8655292893150024396, abs=1e-15)
    for cfg in (ScoreConfig("add", 2.0, 0.3), ScoreConfig("mul", 2.0)):
        assert composite_score(PerformanceRecord("i", "a", 0.0, True), cfg) == 1.0


def test_missing_pose_scores_zero():
    assert composite_score(None, ScoreConfig()) == 0.0
    assert composite_score(PerformanceRecord("i", "a", None, True), ScoreConfig("add", 2, 0.0)) == 0.0
    assert pb_score(None) == 0
    assert pb_score(True) == 1 and pb_score(False) == 0


def test_pb_checks_conjoined():
    assert pb_valid_from_checks([True] * 18)
    assert not pb_valid_from_checks([True] * 17 + [False])


def test_score_config_validation():
    with pytest.raises(ConfigError):
        ScoreConfig("add", 2.0, 1.2)
    with pytest.raises(ConfigError):
        ScoreConfig("sum", 2.0)
    assert ScoreConfig().tolerance_m == pytest.approx(math.log(11))


def test_vectorised_matches_scalar():
    rng = np.random.default_rng(3)
    x = rng.uniform(0, 6, size=(20, 5))
    x[rng.random(x.shape) < 0.1] = np.nan
    valid = rng.random(x.shape) < 0.7
    for cfg in (ScoreConfig("add", 2.5, 0.3), ScoreConfig("mul", 1.0)):
        got = composite_scores(x, valid, cfg)
        for i, j in np.ndindex(x.shape):
            r = None if np.isnan(x[i, j]) else x[i, j]
            rec = PerformanceRecord("i", "a", r, valid[i, j])
            assert got[i, j] == composite_score(rec, cfg)
    assert rmsd_scores(np.array([0.0, 2.0, np.nan]), 2.0).tolist() == [1.0, 0.0, 0.0]


def test_build_label_matrix_entries():
    recs = [PerformanceRecord("b", "x", 0.5, True), PerformanceRecord("b", "y", 1.0, False),
            PerformanceRecord("a", "x", 3.0, True), PerformanceRecord("a", "y", 1.0, True)]
    cfg = ScoreConfig("add", 2.0, 0.5)
    lm = build_label_matrix(recs, ["x", "y"], cfg)
    assert lm.instance_ids == ["a", "b"]
    assert lm.algorithm_ids == ["x", "y"]
    for i, iid in enumerate(lm.instance_ids):
        for j, alg in enumerate(lm.algorithm_ids):
            rec = next(r for r in recs if r.instance_id == iid and r.algorithm == alg)
            s = 0.0 if rec.rmsd > 2 else float(rmsd_score_mp(rec.rmsd, 2.0))
            assert lm.scores[i, j] == pytest.approx(0.5 * s + 0.5 * rec.pb_valid, abs=1e-14)


def test_build_label_matrix_missing_and_empty():
    lm = build_label_matrix([], ["x", "y"], ScoreConfig(), instance_ids=["a", "b"])
    assert lm.scores.tolist() == [[0.0, 0.0], [0.0, 0.0]]
    lm = build_label_matrix([PerformanceRecord("a", "x", 0.0, True)], ["x", "y"], ScoreConfig())
    assert lm.scores.tolist() == [[1.0, 0.0]]


def test_build_label_matrix_schema_errors():
    dup = [PerformanceRecord("a", "x", 1.0, True), PerformanceRecord("a", "x", 2.0, True)]
    with pytest.raises(SchemaError):
        build_label_matrix(dup, ["x"], ScoreConfig())
    with pytest.raises(SchemaError):
        build_label_matrix([PerformanceRecord("a", "z", 1.0, True)], ["x"], ScoreConfig())


def test_record_validation():
    with pytest.raises(ValidationError):
        PerformanceRecord("a", "x", -1.0, True)
    with pytest.raises(ValidationError):
        PerformanceRecord("a", "x", float("inf"), True)


def test_label_matrix_slicing():
    lm = LabelMatrix(np.arange(6.0).reshape(3, 2), ["a", "b", "c"], ["x", "y"])
    assert lm.rows(["c", "a"]).scores.tolist() == [[4, 5], [0, 1]]
    assert lm.columns(["y"]).scores.tolist() == [[1], [3], [5]]
    with pytest.raises(SchemaError):
        LabelMatrix(np.zeros((2, 2)), ["a"], ["x", "y"])
    table = PerformanceTable([PerformanceRecord("a", "x", 1.0, True)])
    assert len(table) == 1 and table.get("a", "y") is None
