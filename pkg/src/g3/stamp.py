"""Reproducibility stamps for artifact-writing commands."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

from . import __version__


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, ensure_ascii=False, default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def write_stamp(
    path: str | Path,
    command: str,
    config: dict,
    inputs: dict[str, str | Path],
    outputs: list[str | Path],
    seed: int | None = None,
) -> None:
    body = {
        "command": command,
        "version": __version__,
        "seed": seed,
        "config": config,
        "config_hash": config_hash(config),
        "inputs": {
            name: {"path": str(p), "sha256": sha256_file(p)}
            for name, p in inputs.items()
        },
        "outputs": [str(p) for p in outputs],
    }
    Path(path).write_text(
        json.dumps(body, ensure_ascii=False, indent=1, sort_keys=True) + "\n",
        encoding="utf-8",
    )
