"""Run manifests: enough provenance to re-run a command bit-identically."""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path


def fingerprint_dir(path) -> str:
    """SHA-256 over a directory's file names and contents, order-independent."""
    h = hashlib.sha256()
    root = Path(path)
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    argv: list[str]
    config: dict
    seeds: dict
    dataset_fingerprint: str | None
    code_version: str
    timings: dict = field(default_factory=dict)

    @classmethod
    def start(cls, command: str, config: dict, seeds: dict,
              dataset_dir=None) -> "RunManifest":
        from . import __version__

        return cls(
            command=command,
            argv=list(sys.argv[1:]),
            config=config,
            seeds=seeds,
            dataset_fingerprint=fingerprint_dir(dataset_dir) if dataset_dir else None,
            code_version=__version__,
        )

    def write(self, out_dir) -> Path:
        path = Path(out_dir) / "manifest.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True, default=str)
            fh.write("\n")
        return path
