"""Tests for `app/query_io.py`."""

from pathlib import Path

import numpy as np
import pytest

from app.errors import GraphFormatError
from app.evaluation.queries import EvalQuery
from app.query.structure import catalog, parse_structure
from app.query_io import (
    read_eval_queries,
    read_sampled_queries,
    write_eval_queries,
    write_sampled_queries,
)
from app.sampler.grounding import GroundedQuery

CATALOG = catalog()


def test_sampled_file_layout(tmp_path: Path) -> None:
    """One tab-separated line per query; ids comma-separated."""
    gq = GroundedQuery(CATALOG["2i"], (3, 9), (0, 1), 4)
    write_sampled_queries(tmp_path / "q.tsv", [(gq, np.array([4, 7]))])
    assert (tmp_path / "q.tsv").read_text().splitlines() == ["2i\t3,9\t0,1\t4,7"]
    [(back, answers)] = read_sampled_queries(tmp_path / "q.tsv")
    assert back == gq
    assert answers.tolist() == [4, 7]


def test_expression_structures_and_empty_answer_sets(tmp_path: Path) -> None:
    q = parse_structure("(i (p (p (a))) (p (a)) (n (p (a))))")
    gq = GroundedQuery(q, (1, 2, 3), (0, 0, 1, 1), 5)
    eq = EvalQuery(gq, np.array([], dtype=np.int64), np.array([5]), np.array([5, 6]))
    write_eval_queries(tmp_path / "e.tsv", [eq])
    [back] = read_eval_queries(tmp_path / "e.tsv")
    assert back.query.structure == q
    assert back.query.anchors == (1, 2, 3)
    assert back.answers_train.tolist() == []
    assert back.answers_test.tolist() == [5, 6]
    assert back.missing("test").tolist() == [6]


def test_wrong_slot_count_is_rejected(tmp_path: Path) -> None:
    (tmp_path / "q.tsv").write_text("2i\t3\t0,1\t4\n")
    with pytest.raises(GraphFormatError, match=":1:"):
        read_sampled_queries(tmp_path / "q.tsv")


def test_unknown_structure_is_rejected(tmp_path: Path) -> None:
    (tmp_path / "q.tsv").write_text("1p\t0\t0\t1\n9z\t0\t0\t1\n")
    with pytest.raises(GraphFormatError, match=":2:"):
        read_sampled_queries(tmp_path / "q.tsv")


def test_wrong_field_count_is_rejected(tmp_path: Path) -> None:
    (tmp_path / "q.tsv").write_text("1p\t0\t0\t1\n")
    with pytest.raises(GraphFormatError, match="expected 6 fields"):
        read_eval_queries(tmp_path / "q.tsv")


def test_empty_file_reads_empty(tmp_path: Path) -> None:
    (tmp_path / "q.tsv").write_text("")
    assert read_sampled_queries(tmp_path / "q.tsv") == []
