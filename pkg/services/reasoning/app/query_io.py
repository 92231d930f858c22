"""Line-delimited query files.

One query per line, tab-separated, id lists comma-separated:

    structure  anchors  relations  answers                                 (sampled queries)
    structure  anchors  relations  answers_train  answers_valid  answers_test   (eval sets)

`structure` is a catalog name or a DSL expression.
"""

from pathlib import Path

import numpy as np
import pandas as pd

from app.errors import GraphFormatError, StructureError
from app.evaluation.queries import EvalQuery
from app.query.structure import resolve_structure
from app.sampler.grounding import GroundedQuery

SAMPLED_COLUMNS = ["structure", "anchors", "relations", "answers"]
EVAL_COLUMNS = ["structure", "anchors", "relations", "answers_train", "answers_valid", "answers_test"]


def _ids(values) -> str:
    return ",".join(str(int(v)) for v in values)


def _parse_ids(text: str) -> np.ndarray:
    text = (text or "").strip()
    if not text:
        return np.empty(0, dtype=np.int64)
    return np.array([int(x) for x in text.split(",")], dtype=np.int64)


def _read(path: str | Path, columns: list[str]) -> pd.DataFrame:
    try:
        df = pd.read_csv(
            path, sep="\t", header=None, dtype=str, keep_default_na=False, quoting=3
        )
    except pd.errors.EmptyDataError:
        return pd.DataFrame(columns=columns)
    except pd.errors.ParserError as e:
        raise GraphFormatError(f"{path}: malformed query file: {e}") from e
    if df.shape[1] != len(columns):
        raise GraphFormatError(f"{path}: expected {len(columns)} fields, found {df.shape[1]}")
    df.columns = columns
    return df


def _grounded(row: pd.Series, positive: int, path: str | Path, lineno: int) -> GroundedQuery:
    try:
        q = resolve_structure(row["structure"])
    except StructureError as e:
        raise GraphFormatError(f"{path}:{lineno}: {e}") from e
    anchors, relations = _parse_ids(row["anchors"]), _parse_ids(row["relations"])
    if len(anchors) != len(q.anchors) or len(relations) != len(q.projections):
        raise GraphFormatError(f"{path}:{lineno}: slot counts do not match {q.label}")
    return GroundedQuery(q, tuple(int(a) for a in anchors), tuple(int(r) for r in relations), positive)


def write_sampled_queries(
    path: str | Path, queries: list[tuple[GroundedQuery, np.ndarray]]
) -> None:
    rows = [
        [gq.structure.label, _ids(gq.anchors), _ids(gq.relations), _ids(answers)]
        for gq, answers in queries
    ]
    pd.DataFrame(rows, columns=SAMPLED_COLUMNS).to_csv(path, sep="\t", header=False, index=False)


def read_sampled_queries(path: str | Path) -> list[tuple[GroundedQuery, np.ndarray]]:
    out = []
    for i, row in enumerate(_read(path, SAMPLED_COLUMNS).itertuples(index=False), start=1):
        row = pd.Series(row._asdict())
        answers = _parse_ids(row["answers"])
        positive = int(answers[0]) if len(answers) else -1
        out.append((_grounded(row, positive, path, i), answers))
    return out


def write_eval_queries(path: str | Path, queries: list[EvalQuery]) -> None:
    rows = [
        [
            eq.structure_name,
            _ids(eq.query.anchors),
            _ids(eq.query.relations),
            _ids(eq.answers_train),
            _ids(eq.answers_valid),
            _ids(eq.answers_test),
        ]
        for eq in queries
    ]
    pd.DataFrame(rows, columns=EVAL_COLUMNS).to_csv(path, sep="\t", header=False, index=False)


def read_eval_queries(path: str | Path) -> list[EvalQuery]:
    out = []
    for i, row in enumerate(_read(path, EVAL_COLUMNS).itertuples(index=False), start=1):
        row = pd.Series(row._asdict())
        test = _parse_ids(row["answers_test"])
        positive = int(test[0]) if len(test) else -1
        out.append(
            EvalQuery(
                _grounded(row, positive, path, i),
                _parse_ids(row["answers_train"]),
                _parse_ids(row["answers_valid"]),
                test,
            )
        )
    return out
