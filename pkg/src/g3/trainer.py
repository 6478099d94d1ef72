"""Mini-batch SGD training with per-group learning rates.

The attention tensors (linear map, bias, and the batch norm feeding them)
train at ``lr_attn``; the classifier tensors at ``lr_main``. Batches are
drawn by a seeded shuffle each epoch; a trailing batch of one sample is
merged into the previous batch so train-mode batch norm always sees at
least two samples whenever the data allows it.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .dataset import DatasetManifest
from .embedstore import EmbeddingMatrix
from .evalsuite import topk_accuracy
from .geoparse import PseudoLabelMatrix
from .model import (
    G3Params,
    LossConfig,
    ModelConfig,
    backward,
    batch_losses,
    forward,
    init_params,
)
from .rng import STREAM_SHUFFLE, make_rng

DEFAULT_KS = (1, 5, 10)


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int, batch: int, total: float, country: float, attn: float):
        super().__init__(
            f"non-finite loss at epoch {epoch}, batch {batch}: "
            f"total={total}, country={country}, attn={attn}"
        )
        self.epoch = epoch
        self.batch = batch


@dataclass
class TrainConfig:
    lr_main: float = 1e-2
    lr_attn: float = 1e-3
    batch_size: int = 128
    epochs: int = 15
    alpha: float = 0.75
    seed: int = 0
    momentum: float = 0.0
    shuffle: bool = True
    pos_weight_mode: str | float = "auto"

    def __post_init__(self):
        # Zero learning rates are legal (no-op updates); negatives are not.
        if self.lr_main < 0 or self.lr_attn < 0:
            raise ValueError("learning rates must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")

    def to_dict(self) -> dict:
        return {
            "lr_main": self.lr_main,
            "lr_attn": self.lr_attn,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "alpha": self.alpha,
            "seed": self.seed,
            "momentum": self.momentum,
            "shuffle": self.shuffle,
            "pos_weight_mode": self.pos_weight_mode,
        }


ATTN_GROUP = ("attn_weight", "attn_bias", "bn_attn.gamma", "bn_attn.beta")


@dataclass
class TrainData:
    """Aligned manifest, embedding stores, and pseudo-label targets."""

    manifest: DatasetManifest
    query: EmbeddingMatrix
    feature: EmbeddingMatrix
    clue: EmbeddingMatrix | None = None
    pseudo: PseudoLabelMatrix | None = None
    countries: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.countries:
            self.countries = self.manifest.countries()
        self._country_idx = {c: i for i, c in enumerate(self.countries)}
        missing = set(self.manifest.countries()) - set(self.countries)
        if missing:
            raise ValueError(f"manifest countries not in label set: {missing}")
        query_ids = set(self.query.ids)
        feature_ids = set(self.feature.ids)
        for r in self.manifest.records:
            if r.image_id not in query_ids or r.image_id not in feature_ids:
                raise ValueError(f"image {r.image_id} missing from a store")
        if self.clue is not None:
            if self.pseudo is None:
                raise ValueError("clue store given without pseudo labels")
            if self.clue.n_rows != self.pseudo.n_clues:
                raise ValueError(
                    f"clue store has {self.clue.n_rows} rows, pseudo labels "
                    f"cover {self.pseudo.n_clues} clues"
                )
            self._targets = np.stack(
                [self.pseudo.target_vector(c) for c in self.countries]
            )
            self._clue_matrix = self.clue.data.astype(np.float64)
        else:
            self._targets = None
            self._clue_matrix = None

    @property
    def n_clues(self) -> int:
        return 0 if self.clue is None else self.clue.n_rows

    @property
    def clue_matrix(self) -> np.ndarray | None:
        return self._clue_matrix

    def label_index(self, country: str) -> int:
        return self._country_idx[country]

    def split_arrays(self, split: str) -> tuple[np.ndarray, np.ndarray, np.ndarray, list[str]]:
        records = self.manifest.by_split(split)
        ids = [r.image_id for r in records]
        q = self.query.rows_for(ids).astype(np.float64)
        f = self.feature.rows_for(ids).astype(np.float64)
        y = np.array([self._country_idx[r.country] for r in records], dtype=int)
        return q, f, y, ids

    def targets_for(self, label_indices: np.ndarray) -> np.ndarray:
        if self._targets is None:
            return np.zeros((len(label_indices), 0))
        return self._targets[label_indices]

    def model_config(
        self, attn_relu: bool = True, summary_normalize: str = "count"
    ) -> ModelConfig:
        return ModelConfig(
            d_query=self.query.dim,
            d_feature=self.feature.dim,
            d_clue=self.clue.dim if self.clue is not None else 0,
            n_clues=self.n_clues,
            n_classes=len(self.countries),
            attn_relu=attn_relu,
            summary_normalize=summary_normalize,
        )


@dataclass
class TrainRunRecord:
    config: dict
    seed: int
    epochs: list[dict]
    wall_time_s: float

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "seed": self.seed,
            "epochs": self.epochs,
            "wall_time_s": self.wall_time_s,
        }

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_dict(), ensure_ascii=False, indent=1, sort_keys=True)
            + "\n",
            encoding="utf-8",
        )


def _weights_vector(manifest: DatasetManifest, countries: list[str]) -> np.ndarray:
    """Inverse-frequency weights over countries present in train.

    Label-set countries with no train records get weight 1; the value is
    never consumed because no train sample carries that label.
    """
    counts = manifest.count_by_country("train")
    if not counts:
        raise ValueError("manifest has no train records")
    n = sum(counts.values())
    c = len(counts)
    return np.array(
        [n / (c * counts[country]) if country in counts else 1.0
         for country in countries]
    )


def _batches(order: np.ndarray, batch_size: int) -> list[np.ndarray]:
    chunks = [order[i : i + batch_size] for i in range(0, len(order), batch_size)]
    if len(chunks) >= 2 and len(chunks[-1]) == 1:
        chunks[-2] = np.concatenate([chunks[-2], chunks[-1]])
        chunks.pop()
    return chunks


def predict_logits(
    params: G3Params,
    data: TrainData,
    split: str,
    batch_size: int = 512,
) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Eval-mode class logits for every record of a split."""
    q, f, y, ids = data.split_arrays(split)
    clue_matrix = data.clue_matrix if params.config.n_clues else None
    chunks = []
    for i in range(0, len(y), batch_size):
        trace = forward(
            params, q[i : i + batch_size], f[i : i + batch_size], clue_matrix, "eval"
        )
        chunks.append(trace.class_logits)
    logits = np.concatenate(chunks) if chunks else np.zeros((0, len(data.countries)))
    return logits, y, ids


def evaluate_split(
    params: G3Params, data: TrainData, split: str, ks=DEFAULT_KS
) -> dict[int, float]:
    logits, labels, _ = predict_logits(params, data, split)
    usable = [k for k in ks if k <= len(data.countries)]
    return topk_accuracy(logits, labels, usable)


def train(
    config: TrainConfig,
    params_init: G3Params,
    data: TrainData,
    ks=DEFAULT_KS,
    val_split: str = "val",
    epoch_callback=None,
) -> tuple[G3Params, TrainRunRecord]:
    start = time.perf_counter()
    params = params_init.copy()
    weights_vec = _weights_vector(data.manifest, data.countries)
    loss_cfg = LossConfig(
        alpha=config.alpha,
        pos_weight_mode=config.pos_weight_mode,
        class_weights=weights_vec,
    )
    q, f, y, _ = data.split_arrays("train")
    n_train = len(y)
    if n_train == 0:
        raise ValueError("no train records")
    clue_matrix = data.clue_matrix if params.config.n_clues else None

    rng = make_rng(config.seed, STREAM_SHUFFLE)
    velocities = {
        name: np.zeros_like(params.tensor(name))
        for name in params.trainable_names()
    }
    epochs: list[dict] = []
    for epoch in range(config.epochs):
        order = rng.permutation(n_train) if config.shuffle else np.arange(n_train)
        sums = np.zeros(3)
        for batch_idx, batch in enumerate(_batches(order, config.batch_size)):
            trace = forward(params, q[batch], f[batch], clue_matrix, "train")
            if not (
                np.isfinite(trace.class_logits).all()
                and np.isfinite(trace.attn_logits).all()
            ):
                raise TrainingDivergedError(
                    epoch, batch_idx, float("nan"), float("nan"), float("nan")
                )
            labels = y[batch]
            targets = data.targets_for(labels)
            total, country, attn = batch_losses(trace, labels, targets, loss_cfg)
            if not np.isfinite(total):
                raise TrainingDivergedError(epoch, batch_idx, total, country, attn)
            grads = backward(params, trace, labels, targets, loss_cfg).by_name()
            for name in params.trainable_names():
                v = velocities[name]
                v *= config.momentum
                v += grads[name]
                lr = config.lr_attn if name in ATTN_GROUP else config.lr_main
                params.set_tensor(name, params.tensor(name) - lr * v)
            sums += len(batch) * np.array([total, country, attn])
        mean_total, mean_country, mean_attn = sums / n_train
        entry = {
            "epoch": epoch,
            "loss_total": mean_total,
            "loss_country": mean_country,
            "loss_attn": mean_attn,
        }
        if data.manifest.by_split(val_split):
            entry["val_topk"] = {
                str(k): v
                for k, v in evaluate_split(params, data, val_split, ks).items()
            }
        epochs.append(entry)
        if epoch_callback is not None:
            epoch_callback(epoch, params)

    record = TrainRunRecord(
        config=config.to_dict(),
        seed=config.seed,
        epochs=epochs,
        wall_time_s=time.perf_counter() - start,
    )
    return params, record


def grid_search_alpha(
    config: TrainConfig,
    grid: list[float],
    data: TrainData,
    attn_relu: bool = True,
) -> tuple[float, dict[float, float]]:
    """Train once per alpha with the same seed; pick the best val Top-1.

    Ties break toward the larger alpha (more attention supervision).
    """
    if not grid:
        raise ValueError("alpha grid is empty")
    for a in grid:
        if not 0.0 <= a <= 1.0:
            raise ValueError(f"alpha grid value out of [0, 1]: {a}")
    results: dict[float, float] = {}
    for a in grid:
        cfg = replace(config, alpha=a)
        params = init_params(data.model_config(attn_relu=attn_relu), seed=cfg.seed)
        trained, _ = train(cfg, params, data)
        results[a] = evaluate_split(trained, data, "val", ks=(1,))[1]
    best = max(results, key=lambda a: (results[a], a))
    return best, results


def multi_seed(
    config: TrainConfig,
    seeds: list[int],
    data: TrainData,
    ks=DEFAULT_KS,
    split: str = "test",
    attn_relu: bool = True,
) -> dict:
    """Train and evaluate per seed; aggregate as mean and population std."""
    if not seeds:
        raise ValueError("need at least one seed")
    per_seed = []
    for seed in seeds:
        cfg = replace(config, seed=seed)
        params = init_params(data.model_config(attn_relu=attn_relu), seed=seed)
        trained, record = train(cfg, params, data)
        metrics = evaluate_split(trained, data, split, ks)
        per_seed.append({"seed": seed, "topk": metrics, "record": record})
    usable = sorted(per_seed[0]["topk"])
    aggregated = {
        k: {
            "mean": float(np.mean([r["topk"][k] for r in per_seed])),
            "std": float(np.std([r["topk"][k] for r in per_seed])),
        }
        for k in usable
    }
    return {"per_seed": per_seed, "aggregated": aggregated, "split": split}
