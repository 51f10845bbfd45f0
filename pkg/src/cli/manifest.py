"""
Run manifests

Every command writes its manifest before doing any heavy work and rewrites it
with output checksums once the outputs exist.
"""
import hashlib
from pathlib import Path
from typing import Dict, List, Optional

import structlog
from pydantic import BaseModel, Field

logger = structlog.get_logger(__name__)


class RunManifest(BaseModel):
    command: str
    argv: List[str]
    config: Dict[str, object] = Field(default_factory=dict)
    inputs: List[str] = Field(default_factory=list)
    outputs: List[str] = Field(default_factory=list)
    seed: Optional[int] = None
    workers: int = 1
    precision: str = "float32"
    notes: List[str] = Field(default_factory=list)
    checksums: Dict[str, str] = Field(default_factory=dict)


def sha256_file(path: Path | str) -> str:
    digest = hashlib.sha256()
    with Path(path).open("rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def manifest_path(out: Path | str, is_dir: bool) -> Path:
    """``DIR/manifest.json`` for directory outputs, ``<out>.manifest.json`` otherwise"""
    out = Path(out)
    return out / "manifest.json" if is_dir else out.parent / f"{out.name}.manifest.json"


def write_manifest(path: Path, manifest: RunManifest) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(manifest.model_dump_json(indent=2), encoding="utf-8")


def finalize_manifest(path: Path, manifest: RunManifest, outputs: List[Path]) -> RunManifest:
    existing = [Path(p) for p in outputs if Path(p).is_file()]
    final = manifest.model_copy(update={
        "outputs": [str(p) for p in existing],
        "checksums": {str(p): sha256_file(p) for p in existing},
    })
    write_manifest(path, final)
    logger.info("manifest_written", path=str(path), outputs=len(existing))
    return final
