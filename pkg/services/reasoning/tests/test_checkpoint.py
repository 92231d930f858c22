"""Tests for `app/models/checkpoint.py`."""

from pathlib import Path

import pytest
import torch

from app.errors import CheckpointError
from app.models.checkpoint import load_checkpoint, save_checkpoint
from app.models.reasoners import build_model


def _save(path: Path, kind: str = "BetaE") -> None:
    model = build_model(kind, 6, 10, seed=3)
    entities, relations = model.init_tables(9, 2, seed=4)
    entities.adam_m.fill_(0.25)
    save_checkpoint(path, model, entities, relations, step=11, metadata={"note": "x"})


@pytest.mark.parametrize("kind", ["GQE", "Q2B", "BetaE", "TransE", "RotatE-m", "DistMult-m", "ComplEx-m"])
def test_round_trip_every_kind(tmp_path: Path, kind: str) -> None:
    """Kind, sizes, tables, moments and dense parameters survive a reload."""
    model = build_model(kind, 6, 10, seed=3, gamma=4.0)
    entities, relations = model.init_tables(9, 2, seed=4)
    save_checkpoint(tmp_path / "m.smck", model, entities, relations, step=5)
    ckpt = load_checkpoint(tmp_path / "m.smck")
    assert ckpt.model.kind.value == kind
    assert ckpt.model.gamma == 4.0
    assert ckpt.model.hidden == 10
    assert ckpt.step == 5
    assert torch.equal(ckpt.entities.rows, entities.rows)
    assert torch.equal(ckpt.relations.rows, relations.rows)
    for a, b in zip(ckpt.model.state_dict().values(), model.state_dict().values(), strict=True):
        assert torch.equal(a, b)


def test_metadata_sidecar(tmp_path: Path) -> None:
    _save(tmp_path / "m.smck")
    ckpt = load_checkpoint(tmp_path / "m.smck")
    assert ckpt.metadata["note"] == "x"
    assert ckpt.metadata["model_kind"] == "BetaE"
    assert float(ckpt.entities.adam_m[0, 0]) == 0.25


def test_bad_magic(tmp_path: Path) -> None:
    _save(tmp_path / "m.smck")
    data = bytearray((tmp_path / "m.smck").read_bytes())
    data[:4] = b"XXXX"
    (tmp_path / "m.smck").write_bytes(bytes(data))
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(tmp_path / "m.smck")


def test_truncated_and_trailing(tmp_path: Path) -> None:
    _save(tmp_path / "m.smck")
    data = (tmp_path / "m.smck").read_bytes()
    (tmp_path / "cut.smck").write_bytes(data[: len(data) // 2])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "cut.smck")
    (tmp_path / "long.smck").write_bytes(data + b"\0\0\0\0")
    with pytest.raises(CheckpointError, match="trailing"):
        load_checkpoint(tmp_path / "long.smck")
