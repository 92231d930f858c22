"""Checkpoint files.

Layout (little-endian):

    magic "SMCK" | version u32 | kind tag 16 bytes (utf-8, NUL padded)
    dim u64 | num_entities u64 | num_relations u64 | relation width u64
    entity rows, adam_m, adam_v      f32[num_entities * dim] each
    relation rows, adam_m, adam_v    f32[num_relations * width] each
    manifest length u64 | manifest JSON (names and shapes of the dense
    parameters, gamma, alpha, beta_floor, hidden, adam step)
    dense parameters                 f32, concatenated in manifest order

A `<checkpoint>.json` sidecar carries run metadata (kind, config, final loss,
timings) for humans and tooling.
"""

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from app.errors import CheckpointError
from app.logging_utils import get_logger
from app.models.embeddings import EmbeddingTable
from app.models.kinds import ModelKind
from app.models.reasoners import ReasoningModel, build_model

log = get_logger(__name__)

MAGIC = b"SMCK"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sI16sQQQQ")
_LEN = struct.Struct("<Q")


@dataclass
class Checkpoint:
    model: ReasoningModel
    entities: EmbeddingTable
    relations: EmbeddingTable
    step: int = 0
    metadata: dict = field(default_factory=dict)


def metadata_path(path: str | Path) -> Path:
    return Path(f"{path}.json")


def _f32(t: torch.Tensor) -> bytes:
    return t.detach().to(torch.float32).contiguous().numpy().astype("<f4").tobytes()


def save_checkpoint(
    path: str | Path,
    model: ReasoningModel,
    entities: EmbeddingTable,
    relations: EmbeddingTable,
    step: int = 0,
    metadata: dict | None = None,
) -> None:
    """Write the binary checkpoint and its JSON sidecar."""
    state = model.state_dict()
    manifest = {
        "params": [{"name": k, "shape": list(v.shape)} for k, v in state.items()],
        "gamma": model.gamma,
        "alpha": model.alpha,
        "beta_floor": model.beta_floor,
        "hidden": model.hidden,
        "adam_step": int(step),
    }
    blob = json.dumps(manifest).encode("utf-8")
    with open(path, "wb") as f:
        f.write(
            _HEADER.pack(
                MAGIC,
                FORMAT_VERSION,
                model.kind.value.encode("utf-8"),
                model.dim,
                entities.num_rows,
                relations.num_rows,
                relations.width,
            )
        )
        for table in (entities, relations):
            for arr in (table.rows, table.adam_m, table.adam_v):
                f.write(_f32(arr))
        f.write(_LEN.pack(len(blob)))
        f.write(blob)
        for tensor in state.values():
            f.write(_f32(tensor))

    meta = {
        "model_kind": model.kind.value,
        "dim": model.dim,
        "num_entities": entities.num_rows,
        "num_relations": relations.num_rows,
        "step": int(step),
        "checkpoint_path": str(path),
        **(metadata or {}),
    }
    with open(metadata_path(path), "w", encoding="utf-8") as f:
        json.dump(meta, f, indent=2, default=str)
    log.info("wrote checkpoint %s (%s, dim=%d, step=%d)", path, model.kind.value, model.dim, step)


def load_checkpoint(path: str | Path) -> Checkpoint:
    """Read a checkpoint written by `save_checkpoint`.

    Raises:
        CheckpointError: bad magic, unsupported version, or a size mismatch.
    """
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise CheckpointError(f"{path}: truncated checkpoint")
    magic, version, tag, dim, n_ent, n_rel, width = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    try:
        kind = ModelKind(tag.rstrip(b"\0").decode("utf-8"))
    except ValueError as e:
        raise CheckpointError(f"{path}: unknown model kind tag {tag!r}") from e

    pos = _HEADER.size

    def take(count: int) -> np.ndarray:
        nonlocal pos
        end = pos + 4 * count
        if end > len(data):
            raise CheckpointError(f"{path}: truncated array at byte {pos}")
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=pos).astype(np.float32)
        pos = end
        return arr

    tables = []
    for rows, cols in ((n_ent, dim), (n_rel, width)):
        table = EmbeddingTable(rows, cols)
        table.rows = torch.from_numpy(take(rows * cols).reshape(rows, cols))
        table.adam_m = torch.from_numpy(take(rows * cols).reshape(rows, cols))
        table.adam_v = torch.from_numpy(take(rows * cols).reshape(rows, cols))
        tables.append(table)

    if pos + _LEN.size > len(data):
        raise CheckpointError(f"{path}: missing manifest")
    (length,) = _LEN.unpack_from(data, pos)
    pos += _LEN.size
    try:
        manifest = json.loads(data[pos : pos + length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: unreadable manifest") from e
    pos += length

    model = build_model(
        kind,
        int(dim),
        manifest.get("hidden"),
        gamma=manifest["gamma"],
        alpha=manifest["alpha"],
        beta_floor=manifest["beta_floor"],
    )
    if tables[1].width != model.relation_width:
        raise CheckpointError(f"{path}: relation width {width} does not fit {kind.value}")
    state = {}
    for entry in manifest["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        state[entry["name"]] = torch.from_numpy(take(count).reshape(shape))
    if pos != len(data):
        raise CheckpointError(f"{path}: {len(data) - pos} trailing bytes")
    try:
        model.load_state_dict(state)
    except RuntimeError as e:
        raise CheckpointError(f"{path}: dense parameters do not match {kind.value}: {e}") from e

    meta_file = metadata_path(path)
    metadata = json.loads(meta_file.read_text(encoding="utf-8")) if meta_file.exists() else {}
    return Checkpoint(model, tables[0], tables[1], int(manifest.get("adam_step", 0)), metadata)
