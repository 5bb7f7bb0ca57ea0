"""
Run directories, artifact writers and the checksum manifest.

Every file a run writes goes through :class:`RunDirectory`, which records its
SHA-256; ``write_manifest`` lists them all. JSON is written with sorted keys
and full float precision so identical results give identical bytes.
"""
import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Iterable, Union

import pandas as pd
from pydantic import BaseModel

from src.pinning.models import ShiftScanRecord

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"


def sha256_file(path: Union[str, Path]) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for block in iter(lambda: handle.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()


def _jsonable(payload: Any) -> Any:
    if isinstance(payload, BaseModel):
        return payload.model_dump(mode="json")
    if isinstance(payload, (list, tuple)):
        return [_jsonable(item) for item in payload]
    if isinstance(payload, dict):
        return {key: _jsonable(value) for key, value in payload.items()}
    return payload


class RunDirectory:
    """<root>/run-<first 12 hex digits of the config hash>"""

    def __init__(self, root: Union[str, Path], config_hash: str):
        self.config_hash = config_hash
        self.path = Path(root) / f"run-{config_hash[:12]}"
        self.path.mkdir(parents=True, exist_ok=True)
        self.artifacts: dict[str, str] = {}

    def _register(self, path: Path) -> Path:
        self.artifacts[path.name] = sha256_file(path)
        logger.info(f"💾 Wrote {path}")
        return path

    def file(self, name: str) -> Path:
        return self.path / name

    def write_json(self, name: str, payload: Any) -> Path:
        path = self.file(name)
        path.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")
        return self._register(path)

    def write_frame(self, name: str, frame: pd.DataFrame) -> Path:
        path = self.file(name)
        frame.to_csv(path, index=False, float_format="%.17g")
        return self._register(path)

    def write_text(self, name: str, text: str) -> Path:
        path = self.file(name)
        path.write_text(text)
        return self._register(path)

    def adopt(self, path: Union[str, Path]) -> Path:
        """Register a file some other writer created inside the run directory."""
        return self._register(Path(path))

    def write_manifest(self) -> Path:
        manifest = {
            "config_hash": self.config_hash,
            "artifacts": [{"name": name, "sha256": self.artifacts[name]} for name in sorted(self.artifacts)],
        }
        path = self.file(MANIFEST_NAME)
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        return path


def verify_manifest(run_dir: Union[str, Path]) -> list[str]:
    """Names of artifacts whose checksum no longer matches, plus files missing from the manifest."""
    run_dir = Path(run_dir)
    manifest = json.loads((run_dir / MANIFEST_NAME).read_text())
    listed = {entry["name"]: entry["sha256"] for entry in manifest["artifacts"]}
    problems = [name for name, digest in listed.items()
                if not (run_dir / name).exists() or sha256_file(run_dir / name) != digest]
    problems += [p.name for p in run_dir.iterdir() if p.name != MANIFEST_NAME and p.name not in listed]
    return problems


def load_scan_records(path: Union[str, Path]) -> list[ShiftScanRecord]:
    data = json.loads(Path(path).read_text())
    return [ShiftScanRecord.model_validate(row) for row in data]


def dat_lines(columns: Iterable[str], rows: Iterable[Iterable[float]]) -> str:
    """Whitespace-separated plot data with a commented header."""
    lines = ["# " + " ".join(columns)]
    lines += [" ".join(f"{value:.12g}" for value in row) for row in rows]
    return "\n".join(lines) + "\n"


__all__ = [
    "MANIFEST_NAME",
    "sha256_file",
    "RunDirectory",
    "verify_manifest",
    "load_scan_records",
    "dat_lines",
]
