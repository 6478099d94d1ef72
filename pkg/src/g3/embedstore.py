"""Dense embedding matrices with a bit-exact on-disk format.

File layout (``.geb``):

    magic   4 bytes  b"GEB1"
    n_rows  u32 little-endian
    dim     u32 little-endian
    data    n_rows * dim IEEE-754 binary32 little-endian, row-major

Row identifiers live in a JSON sidecar at ``<path>.ids.json`` holding a
plain list of strings, one per row, in row order.

The module also provides a deterministic synthetic embedding generator so
the full train/eval pipeline can run at desk scale without any pretrained
encoder: each country gets a unit prototype direction per embedding space,
and images/clues are noisy mixtures of the prototypes they belong to.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .rng import STREAM_SYNTH, make_rng

MAGIC = b"GEB1"


class StoreError(Exception):
    """Base class for embedding store I/O failures."""


class BadMagicError(StoreError):
    """File does not start with the GEB1 magic bytes."""


class TruncatedStoreError(StoreError):
    """File ends before the declared payload is complete."""


class IdCountMismatchError(StoreError):
    """Sidecar id list length disagrees with the row count."""


@dataclass
class EmbeddingMatrix:
    """Row-addressable float32 matrix with one string id per row."""

    ids: list[str]
    data: np.ndarray  # (n_rows, dim) float32

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim != 2:
            raise ValueError(f"data must be 2-D, got shape {self.data.shape}")
        if len(self.ids) != self.data.shape[0]:
            raise ValueError(
                f"{len(self.ids)} ids for {self.data.shape[0]} rows"
            )
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("row ids must be unique")
        if self.data.size and not np.isfinite(self.data).all():
            raise ValueError("embedding values must be finite")

    @property
    def n_rows(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def row_index(self) -> dict[str, int]:
        return {rid: i for i, rid in enumerate(self.ids)}

    def rows_for(self, ids: Sequence[str]) -> np.ndarray:
        """Gather rows by id, in the order given."""
        index = self.row_index()
        try:
            sel = [index[i] for i in ids]
        except KeyError as exc:
            raise KeyError(f"id not in store: {exc.args[0]!r}") from None
        return self.data[sel]


def _ids_path(path: Path) -> Path:
    return path.with_name(path.name + ".ids.json")


def write_store(matrix: EmbeddingMatrix, path: str | Path) -> None:
    path = Path(path)
    payload = np.ascontiguousarray(matrix.data, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(np.array([matrix.n_rows, matrix.dim], dtype="<u4").tobytes())
        fh.write(payload.tobytes())
    with open(_ids_path(path), "w", encoding="utf-8") as fh:
        json.dump(matrix.ids, fh, ensure_ascii=False)
        fh.write("\n")


def read_store(path: str | Path) -> EmbeddingMatrix:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 12 or raw[:4] != MAGIC:
        raise BadMagicError(f"{path}: not a GEB1 store")
    n_rows = int(np.frombuffer(raw, dtype="<u4", count=1, offset=4)[0])
    dim = int(np.frombuffer(raw, dtype="<u4", count=1, offset=8)[0])
    expected = 12 + 4 * n_rows * dim
    if len(raw) < expected:
        raise TruncatedStoreError(
            f"{path}: expected {expected} bytes, found {len(raw)}"
        )
    data = np.frombuffer(raw, dtype="<f4", count=n_rows * dim, offset=12)
    data = data.reshape(n_rows, dim).copy()
    ids_file = _ids_path(path)
    if not ids_file.exists():
        raise IdCountMismatchError(f"{ids_file}: id sidecar missing")
    ids = json.loads(ids_file.read_text(encoding="utf-8"))
    if not isinstance(ids, list) or len(ids) != n_rows:
        raise IdCountMismatchError(
            f"{ids_file}: {len(ids) if isinstance(ids, list) else '??'} ids "
            f"for {n_rows} rows"
        )
    return EmbeddingMatrix(ids=[str(i) for i in ids], data=data)


@dataclass
class SyntheticWorldConfig:
    """Knobs for the synthetic embedding world.

    feature_signal is the fraction of the country prototype mixed into the
    feature embedding; the remainder is a per-image nuisance direction, so
    feature embeddings are deliberately weaker evidence than query
    embeddings at feature_signal < 1.
    """

    n_countries: int
    dim_query: int = 16
    dim_feature: int = 16
    dim_clue: int = 16
    noise_image: float = 0.3
    noise_clue: float = 0.3
    feature_signal: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.n_countries < 2:
            raise ValueError("n_countries must be >= 2")
        for name in ("dim_query", "dim_feature", "dim_clue"):
            if getattr(self, name) < 2:
                raise ValueError(f"{name} must be >= 2")
        if self.noise_image < 0 or self.noise_clue < 0:
            raise ValueError("noise levels must be >= 0")
        if not 0.0 <= self.feature_signal <= 1.0:
            raise ValueError("feature_signal must be in [0, 1]")

    @classmethod
    def from_json(cls, path: str | Path) -> "SyntheticWorldConfig":
        return cls(**json.loads(Path(path).read_text(encoding="utf-8")))


def _unit_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return x / norms


@dataclass
class SyntheticWorld:
    """Generated stores plus the prototypes that produced them."""

    countries: list[str]
    prototypes_query: np.ndarray
    prototypes_feature: np.ndarray
    prototypes_clue: np.ndarray
    query: EmbeddingMatrix
    feature: EmbeddingMatrix
    clue: EmbeddingMatrix
    config: SyntheticWorldConfig = field(repr=False, default=None)


def synth_generate(cfg: SyntheticWorldConfig, clues, manifest) -> SyntheticWorld:
    """Generate query/feature/clue stores for a manifest and clue list.

    Draw order (fixed; part of the seeded contract): country prototypes for
    the query, feature, then clue spaces; per-image nuisance directions;
    per-image query noise; per-image feature noise; per-clue noise. All
    draws come from the Philox stream (seed, STREAM_SYNTH) in bulk,
    float64, and rows are unit-normalized before the float32 store cast.
    """
    records = list(manifest.records)
    if not records:
        raise ValueError("manifest has no records")
    countries = sorted({r.country for r in records})
    if len(countries) != cfg.n_countries:
        raise ValueError(
            f"manifest has {len(countries)} countries, "
            f"config says {cfg.n_countries}"
        )
    country_idx = {c: i for i, c in enumerate(countries)}
    n_images = len(records)
    clue_list = list(clues)

    rng = make_rng(cfg.seed, STREAM_SYNTH)
    proto_q = _unit_rows(rng.standard_normal((cfg.n_countries, cfg.dim_query)))
    proto_f = _unit_rows(rng.standard_normal((cfg.n_countries, cfg.dim_feature)))
    proto_g = _unit_rows(rng.standard_normal((cfg.n_countries, cfg.dim_clue)))
    nuisance = _unit_rows(rng.standard_normal((n_images, cfg.dim_feature)))
    noise_q = rng.standard_normal((n_images, cfg.dim_query))
    noise_f = rng.standard_normal((n_images, cfg.dim_feature))
    noise_g = rng.standard_normal((len(clue_list), cfg.dim_clue))

    labels = np.array([country_idx[r.country] for r in records])
    query = _unit_rows(proto_q[labels] + cfg.noise_image * noise_q)
    feature = _unit_rows(
        cfg.feature_signal * proto_f[labels]
        + (1.0 - cfg.feature_signal) * nuisance
        + cfg.noise_image * noise_f
    )

    clue_rows = np.empty((len(clue_list), cfg.dim_clue))
    for j, clue in enumerate(clue_list):
        hits = sorted(set(clue.countries) & set(countries))
        if hits:
            base = proto_g[[country_idx[c] for c in hits]].mean(axis=0)
            clue_rows[j] = base + cfg.noise_clue * noise_g[j]
        else:
            clue_rows[j] = noise_g[j]
    clue_rows = _unit_rows(clue_rows)

    image_ids = [r.image_id for r in records]
    clue_ids = [str(c.id) for c in clue_list]
    return SyntheticWorld(
        countries=countries,
        prototypes_query=proto_q,
        prototypes_feature=proto_f,
        prototypes_clue=proto_g,
        query=EmbeddingMatrix(ids=image_ids, data=query),
        feature=EmbeddingMatrix(ids=image_ids, data=feature),
        clue=EmbeddingMatrix(ids=clue_ids, data=clue_rows),
        config=cfg,
    )


def check_clue_alignment(store: EmbeddingMatrix, clues) -> None:
    """Require clue store rows to sit in clue-id order."""
    expected = [str(c.id) for c in clues]
    if store.ids != expected:
        raise ValueError(
            "clue store rows are not aligned with clue ids "
            f"(store has {len(store.ids)} rows, corpus has {len(expected)} clues)"
        )
