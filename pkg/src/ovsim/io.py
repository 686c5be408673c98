"""Snapshot files: binary scalar fields, the fibre vector-field export and a
checksummed manifest per stage."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .fibre import write_vector_field

MAGIC = "OVSIM1"
HEADER_BYTES = 32
SNAPSHOT_FIELDS = ("c", "i", "E", "F", "e", "v", "mask")


class SnapshotError(IOError):
    pass


def encode_field(values: np.ndarray, name: str) -> bytes:
    values = np.asarray(values, dtype="<f8")
    if values.ndim != 2:
        raise ValueError("field must be two-dimensional")
    header = f"{MAGIC} {values.shape[0]} {values.shape[1]} {name}"
    if len(header) > HEADER_BYTES or " " in name or not name:
        raise ValueError(f"field name {name!r} does not fit the {HEADER_BYTES}-byte header")
    return header.ljust(HEADER_BYTES).encode("ascii") + np.ascontiguousarray(values).tobytes()


def decode_field(blob: bytes) -> tuple[str, np.ndarray]:
    head = blob[:HEADER_BYTES].decode("ascii", errors="replace").split()
    if len(head) != 4 or head[0] != MAGIC:
        raise SnapshotError("not an OVSIM1 field file")
    n0, n1 = int(head[1]), int(head[2])
    body = blob[HEADER_BYTES:]
    if len(body) != 8 * n0 * n1:
        raise SnapshotError(f"field payload has {len(body)} bytes, expected {8 * n0 * n1}")
    return head[3], np.frombuffer(body, dtype="<f8").reshape(n0, n1).copy()


def write_field(path: str | os.PathLike, values: np.ndarray, name: str) -> None:
    path = Path(path)
    try:
        path.write_bytes(encode_field(values, name))
    except OSError as exc:
        raise SnapshotError(f"cannot write field file {path}: {exc}") from exc


def read_field(path: str | os.PathLike) -> tuple[str, np.ndarray]:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise SnapshotError(f"cannot read field file {path}: {exc}") from exc
    return decode_field(blob)


def sha256(path: str | os.PathLike) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class SnapshotManifest:
    stage: int
    files: dict[str, str] = field(default_factory=dict)
    checksums: dict[str, str] = field(default_factory=dict)
    path: str = ""

    def verify(self) -> list[str]:
        """Names of files that are missing or fail their checksum."""
        base = Path(self.path).parent
        bad = []
        for name, rel in self.files.items():
            p = base / rel
            if not p.exists() or sha256(p) != self.checksums.get(name):
                bad.append(name)
        return bad

    @classmethod
    def load(cls, path: str | os.PathLike) -> "SnapshotManifest":
        data = json.loads(Path(path).read_text())
        return cls(stage=data["stage"], files=data["files"], checksums=data["checksums"], path=str(path))


def write_snapshot(out_dir: str | os.PathLike, stage: int, fields: dict[str, np.ndarray],
                   fibre_rows: np.ndarray | None = None) -> SnapshotManifest:
    """Write ``fields`` (and the fibre vector field) under
    ``out_dir/stage_NNNN`` and a manifest listing their checksums."""
    stage_dir = Path(out_dir) / f"stage_{stage:04d}"
    try:
        stage_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise SnapshotError(f"cannot create snapshot directory {stage_dir}: {exc}") from exc
    manifest = SnapshotManifest(stage=stage, path=str(stage_dir / "manifest.json"))
    for name, values in fields.items():
        p = stage_dir / f"{name}.bin"
        write_field(p, values, name)
        manifest.files[name] = p.name
        manifest.checksums[name] = sha256(p)
    if fibre_rows is not None:
        p = stage_dir / "fibres.csv"
        try:
            write_vector_field(p, fibre_rows)
        except OSError as exc:
            raise SnapshotError(f"cannot write vector field {p}: {exc}") from exc
        manifest.files["fibres"] = p.name
        manifest.checksums["fibres"] = sha256(p)
    data = asdict(manifest)
    data.pop("path")
    Path(manifest.path).write_text(json.dumps(data, indent=1, sort_keys=True))
    return manifest
