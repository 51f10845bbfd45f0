"""
SPCKPT 1 checkpoint files

Layout (ASCII header, then binary payload)::

    SPCKPT 1
    meta {"config": {...}}
    params 2
    encoder.down0.conv1.weight 16,1,3,3 0
    encoder.down0.conv1.bias 16 576
    end
    <little-endian float32 payload>

Offsets count bytes from the start of the payload. Parameters are written in
sorted name order so identical models produce identical files.
"""
import json
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple

import numpy as np
import structlog

from src.core.exceptions import CheckpointError

logger = structlog.get_logger(__name__)

MAGIC = "SPCKPT 1"
_DTYPE = np.dtype("<f4")


def _shape_text(shape) -> str:
    return ",".join(str(int(d)) for d in shape) if shape else "scalar"


def _parse_shape(text: str) -> Tuple[int, ...]:
    if text == "scalar":
        return ()
    return tuple(int(d) for d in text.split(","))


def save_checkpoint(path: Path | str, state: Mapping[str, np.ndarray], meta: Optional[Dict[str, Any]] = None) -> None:
    path = Path(path)
    lines = [MAGIC, "meta " + json.dumps(meta or {}, sort_keys=True, separators=(",", ":")), f"params {len(state)}"]
    chunks = []
    offset = 0
    for name in sorted(state):
        if any(c.isspace() for c in name):
            raise CheckpointError(f"parameter name {name!r} contains whitespace")
        array = np.asarray(state[name])
        if not np.all(np.isfinite(array)):
            raise CheckpointError(f"parameter {name} holds non-finite values")
        data = array.astype(_DTYPE).tobytes(order="C")
        lines.append(f"{name} {_shape_text(array.shape)} {offset}")
        chunks.append(data)
        offset += len(data)
    lines.append("end")
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as f:
        f.write(("\n".join(lines) + "\n").encode("ascii"))
        for chunk in chunks:
            f.write(chunk)
    logger.info("checkpoint_saved", path=str(path), params=len(state), payload_bytes=offset)


def _readline(f, path: Path) -> str:
    raw = f.readline()
    if not raw:
        raise CheckpointError(f"{path}: truncated header")
    try:
        return raw.decode("utf-8").rstrip("\n")
    except UnicodeDecodeError as e:
        raise CheckpointError(f"{path}: header is not text") from e


def load_checkpoint(path: Path | str) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    """Return (name -> float32 array, meta)"""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    with path.open("rb") as f:
        if _readline(f, path) != MAGIC:
            raise CheckpointError(f"{path}: not an {MAGIC} file")
        meta_line = _readline(f, path)
        if not meta_line.startswith("meta "):
            raise CheckpointError(f"{path}: missing meta line")
        try:
            meta = json.loads(meta_line[len("meta "):])
        except json.JSONDecodeError as e:
            raise CheckpointError(f"{path}: meta is not valid JSON") from e
        count_line = _readline(f, path).split()
        if len(count_line) != 2 or count_line[0] != "params" or not count_line[1].isdigit():
            raise CheckpointError(f"{path}: expected 'params N'")
        entries = []
        for _ in range(int(count_line[1])):
            fields = _readline(f, path).split()
            if len(fields) != 3:
                raise CheckpointError(f"{path}: malformed manifest line {fields}")
            try:
                entries.append((fields[0], _parse_shape(fields[1]), int(fields[2])))
            except ValueError as e:
                raise CheckpointError(f"{path}: bad shape or offset in {fields}") from e
        if _readline(f, path) != "end":
            raise CheckpointError(f"{path}: manifest not terminated by 'end'")
        payload = f.read()

    state: Dict[str, np.ndarray] = {}
    for name, shape, offset in entries:
        nbytes = int(np.prod(shape, dtype=np.int64)) * _DTYPE.itemsize
        if offset < 0 or offset + nbytes > len(payload):
            raise CheckpointError(f"{path}: parameter {name} runs past the payload")
        state[name] = np.frombuffer(payload, dtype=_DTYPE, count=nbytes // _DTYPE.itemsize,
                                    offset=offset).reshape(shape).astype(np.float32)
    logger.debug("checkpoint_loaded", path=str(path), params=len(state))
    return state, meta
