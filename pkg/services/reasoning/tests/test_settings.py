"""Tests for `app/settings.py`."""

from pathlib import Path

import pytest

from app.errors import ConfigError
from app.models.kinds import ModelKind
from app.settings import EvalSettings, load_config, parse_schedule


def test_parse_schedule() -> None:
    """Weights default to 1 and blank items are skipped."""
    assert parse_schedule("1p:2, 2p ,,2i:0.5") == [("1p", 2.0), ("2p", 1.0), ("2i", 0.5)]


@pytest.mark.parametrize(
    ("text", "message"),
    [("7z:1", "unknown structure"), ("1p:0", "must be > 0"), (" , ", "empty")],
)
def test_parse_schedule_errors(text: str, message: str) -> None:
    with pytest.raises(ValueError, match=message):
        parse_schedule(text)


def test_file_overrides_env(tmp_path: Path, monkeypatch) -> None:
    """Config file beats KGR_ env vars, which beat the defaults."""
    monkeypatch.setenv("KGR_DIM", "16")
    monkeypatch.setenv("KGR_BATCH_SIZE", "7")
    cfg = tmp_path / "train.cfg"
    cfg.write_text("# comment\ndim=8\n\nmodel=BetaE  # trailing\n")
    config = load_config(cfg)
    assert config.dim == 8
    assert config.batch_size == 7
    assert config.model is ModelKind.BETAE
    assert config.steps == 100


def test_overrides_beat_file(tmp_path: Path) -> None:
    cfg = tmp_path / "train.cfg"
    cfg.write_text("steps=50\nworkers=2\n")
    config = load_config(cfg, steps=3, workers=None)
    assert (config.steps, config.workers) == (3, 2)


def test_unknown_key_rejected(tmp_path: Path) -> None:
    cfg = tmp_path / "train.cfg"
    cfg.write_text("dimension=8\n")
    with pytest.raises(ConfigError, match="dimension"):
        load_config(cfg)


def test_malformed_line(tmp_path: Path) -> None:
    cfg = tmp_path / "train.cfg"
    cfg.write_text("dim=8\njust words\n")
    with pytest.raises(ConfigError, match=":2: expected key=value"):
        load_config(cfg)


def test_odd_dim_for_paired_model() -> None:
    with pytest.raises(ConfigError, match="dim must be even"):
        load_config(model="RotatE-m", dim=7)


def test_bad_schedule_is_config_error() -> None:
    with pytest.raises(ConfigError, match="structure_schedule"):
        load_config(structure_schedule="1p:-1")


def test_schedule_and_width() -> None:
    config = load_config(dim=12, structure_schedule="1p:3,ip")
    assert config.schedule == [("1p", 3.0), ("ip", 1.0)]
    assert config.width == 12
    assert load_config(dim=12, hidden_dim=20).width == 20


def test_eval_settings_env(monkeypatch) -> None:
    monkeypatch.setenv("KGR_EVAL_NEGATIVES", "25")
    settings = EvalSettings(workers=2)
    assert (settings.negatives, settings.workers, settings.seed) == (25, 2, 0)
