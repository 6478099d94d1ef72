"""Export jobs: read pipeline inputs, run an encoder, write .geb stores.

A job is described by the encoder name, the ordered input list (clue
texts in id order, or image paths in manifest order), the output path,
and a batch size; all validation happens before the first byte is
written.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .encoders import resolve_image_encoder, resolve_text_encoder
from .store import write_store

IMAGE_EXTENSIONS = (".jpg", ".jpeg", ".png", ".bmp", ".webp")


class IdMismatchError(ValueError):
    """Input ids do not line up with the pipeline files."""


def read_clues(path: str | Path) -> list[tuple[str, str]]:
    """(id, text) pairs in clue-id order; ids must be dense 0..n-1."""
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                pairs.append((int(rec["id"]), rec["text"]))
    ids = [i for i, _ in pairs]
    if ids != list(range(len(ids))):
        raise IdMismatchError(
            f"{path}: clue ids must be dense 0..n-1, got {ids[:5]}..."
        )
    return [(str(i), text) for i, text in pairs]


def read_manifest_image_ids(path: str | Path) -> list[str]:
    ids = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                image_id = json.loads(line)["image_id"]
                if image_id in seen:
                    raise IdMismatchError(f"{path}: duplicate image id {image_id}")
                seen.add(image_id)
                ids.append(image_id)
    return ids


def locate_images(image_dir: str | Path, image_ids: list[str]) -> list[Path]:
    """One file per id, searched as <dir>/<id><ext>; all must exist before
    any write happens."""
    image_dir = Path(image_dir)
    paths, missing = [], []
    for image_id in image_ids:
        for ext in IMAGE_EXTENSIONS:
            candidate = image_dir / f"{image_id}{ext}"
            if candidate.exists():
                paths.append(candidate)
                break
        else:
            missing.append(image_id)
    if missing:
        raise IdMismatchError(
            f"{len(missing)} manifest images missing under {image_dir}: "
            + ", ".join(missing[:5])
        )
    return paths


def export_text_embeddings(
    clues_path: str | Path,
    encoder_name: str,
    output_path: str | Path,
    batch_size: int = 32,
) -> tuple[int, int]:
    """Encode clue sentences in id order; returns (rows, dim)."""
    pairs = read_clues(clues_path)
    encoder = resolve_text_encoder(encoder_name, batch_size=batch_size)
    texts = [text for _, text in pairs]
    data = (
        encoder.encode(texts)
        if texts
        else np.zeros((0, getattr(encoder, "dim", 256)), dtype=np.float32)
    )
    write_store([i for i, _ in pairs], data, output_path)
    return data.shape


def export_image_embeddings(
    manifest_path: str | Path,
    image_dir: str | Path,
    encoder_name: str,
    output_path: str | Path,
    batch_size: int = 16,
) -> tuple[int, int]:
    """Encode manifest images in manifest order; returns (rows, dim)."""
    image_ids = read_manifest_image_ids(manifest_path)
    paths = locate_images(image_dir, image_ids)
    encoder = resolve_image_encoder(encoder_name, batch_size=batch_size)
    data = (
        encoder.encode_paths(paths)
        if paths
        else np.zeros((0, getattr(encoder, "dim", 256)), dtype=np.float32)
    )
    write_store(image_ids, data, output_path)
    return data.shape
