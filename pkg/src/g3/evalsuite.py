"""Top-k metrics, baselines, ablation grid, and attention explanations.

Country rankings break ties by ascending country index everywhere, so
reports are reproducible down to the byte. The ablation grid mirrors a
feature-by-text-by-supervision table: image features alone or concatenated
with the query embedding, crossed with no text, signal-free random text,
and guidebook text with attention supervision off or on.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .embedstore import EmbeddingMatrix
from .model import G3Params, forward
from .rng import STREAM_RANDOM_TEXT, make_rng


def rank_countries(logits: np.ndarray) -> np.ndarray:
    """Country indices in score-descending order, ties by ascending index."""
    logits = np.atleast_2d(logits)
    return np.argsort(-logits, axis=1, kind="stable")


def topk_accuracy(
    class_logits: np.ndarray, labels: np.ndarray, ks
) -> dict[int, float]:
    logits = np.atleast_2d(np.asarray(class_logits))
    labels = np.atleast_1d(labels)
    if logits.shape[0] == 0:
        raise ValueError("empty evaluation set")
    n_classes = logits.shape[1]
    for k in ks:
        if k > n_classes:
            raise ValueError(f"k={k} exceeds {n_classes} classes")
    order = rank_countries(logits)
    hits = order == labels[:, None]
    return {
        int(k): float(hits[:, :k].any(axis=1).mean()) for k in ks
    }


def nearest_neighbor_baseline(
    train_store: EmbeddingMatrix,
    train_labels: list[str],
    eval_store: EmbeddingMatrix,
    eval_labels: list[str],
    ks,
) -> dict[int, float]:
    """Rank countries by their most cosine-similar training exemplar."""
    if train_store.dim != eval_store.dim:
        raise ValueError(
            f"store dims differ: {train_store.dim} vs {eval_store.dim}"
        )
    if train_store.n_rows != len(train_labels):
        raise ValueError("one label per training row required")
    countries = sorted(set(train_labels))
    country_idx = {c: i for i, c in enumerate(countries)}

    def unit(x):
        return x / np.linalg.norm(x, axis=1, keepdims=True)

    sims = unit(eval_store.data.astype(np.float64)) @ unit(
        train_store.data.astype(np.float64)
    ).T
    scores = np.full((eval_store.n_rows, len(countries)), -np.inf)
    cols = np.array([country_idx[c] for c in train_labels])
    for ci in range(len(countries)):
        mask = cols == ci
        if mask.any():
            scores[:, ci] = sims[:, mask].max(axis=1)
    labels = np.array([country_idx[c] for c in eval_labels])
    return topk_accuracy(scores, labels, ks)


@dataclass
class ExplainEntry:
    clue_id: int
    text: str
    weight: float
    countries: list[str]


def explain(
    params: G3Params,
    query: np.ndarray,
    feature: np.ndarray,
    clue_matrix: np.ndarray,
    clues,
    k: int = 10,
) -> list[ExplainEntry]:
    """Top-k clues by attention weight for one image, ties by clue id.

    Asking for more clues than exist returns all of them.
    """
    trace = forward(
        params, np.atleast_2d(query), np.atleast_2d(feature), clue_matrix, "eval"
    )
    weights = trace.attn_weights[0]
    order = np.argsort(-weights, kind="stable")
    clue_list = list(clues)
    k = min(k, len(clue_list))
    return [
        ExplainEntry(
            clue_id=int(i),
            text=clue_list[i].text,
            weight=float(weights[i]),
            countries=sorted(clue_list[i].countries),
        )
        for i in order[:k]
    ]


@dataclass
class EvalReport:
    rows: list[dict]
    ks: list[int]
    predictions: list[dict] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def validate(self) -> None:
        for row in self.rows:
            means = [row["topk"][str(k)]["mean"] for k in self.ks if str(k) in row["topk"]]
            if any(not 0.0 <= m <= 1.0 for m in means):
                raise ValueError(f"accuracy out of [0,1] in row {row['model_label']}")
            if any(b < a - 1e-12 for a, b in zip(means, means[1:])):
                raise ValueError(
                    f"top-k accuracy not monotone in k for {row['model_label']}"
                )

    def to_dict(self) -> dict:
        return {
            "ks": self.ks,
            "rows": self.rows,
            "predictions": self.predictions,
            "meta": self.meta,
        }

    def write_json(self, path: str | Path) -> None:
        self.validate()
        Path(path).write_text(
            json.dumps(self.to_dict(), ensure_ascii=False, indent=1, sort_keys=True)
            + "\n",
            encoding="utf-8",
        )

    def write_tsv(self, path: str | Path) -> None:
        lines = ["model\tattn_supervision\tk\tmean\tstd"]
        for row in self.rows:
            for k in self.ks:
                cell = row["topk"].get(str(k))
                if cell is not None:
                    lines.append(
                        f"{row['model_label']}\t{row['attn_supervision']}\t{k}"
                        f"\t{cell['mean']:.6f}\t{cell['std']:.6f}"
                    )
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    def text_table(self) -> str:
        header = ["Model", "Attn Supervision"] + [f"Top-{k}" for k in self.ks]
        body = []
        for row in self.rows:
            cells = [row["model_label"], row["attn_supervision"]]
            for k in self.ks:
                cell = row["topk"].get(str(k))
                cells.append(
                    f"{cell['mean']:.4f} ± {cell['std']:.4f}" if cell else "-"
                )
            body.append(cells)
        widths = [
            max(len(r[i]) for r in [header] + body) for i in range(len(header))
        ]
        fmt = "  ".join(f"{{:<{w}}}" for w in widths)
        rule = "-" * (sum(widths) + 2 * (len(widths) - 1))
        lines = [fmt.format(*header), rule]
        lines += [fmt.format(*r) for r in body]
        return "\n".join(lines)

    @classmethod
    def read_json(cls, path: str | Path) -> "EvalReport":
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        report = cls(
            rows=d["rows"],
            ks=[int(k) for k in d["ks"]],
            predictions=d.get("predictions", []),
            meta=d.get("meta", {}),
        )
        report.validate()
        return report


def validate_report_dict(d: dict) -> None:
    """Schema check for report.json files."""
    for key in ("ks", "rows"):
        if key not in d:
            raise ValueError(f"report missing key {key!r}")
    for row in d["rows"]:
        for key in ("model_label", "attn_supervision", "topk"):
            if key not in row:
                raise ValueError(f"report row missing key {key!r}")
        for k, cell in row["topk"].items():
            if "mean" not in cell or "std" not in cell:
                raise ValueError(f"topk cell {k} missing mean/std")
    EvalReport(
        rows=d["rows"], ks=[int(k) for k in d["ks"]],
        predictions=d.get("predictions", []), meta=d.get("meta", {}),
    ).validate()


def per_image_predictions(
    params: G3Params,
    data,
    split: str,
    max_rank: int = 10,
    top_clues: int = 10,
) -> list[dict]:
    """Ranked countries and top attended clues for every image of a split."""
    q, f, _, ids = data.split_arrays(split)
    clue_matrix = data.clue_matrix if params.config.n_clues else None
    out = []
    for i, image_id in enumerate(ids):
        trace = forward(params, q[i : i + 1], f[i : i + 1], clue_matrix, "eval")
        order = rank_countries(trace.class_logits)[0]
        entry = {
            "image_id": image_id,
            "ranked_countries": [
                data.countries[j] for j in order[: min(max_rank, len(order))]
            ],
        }
        if clue_matrix is not None:
            weights = trace.attn_weights[0]
            clue_order = np.argsort(-weights, kind="stable")
            entry["top_clues"] = [
                {"clue_id": int(j), "weight": float(weights[j])}
                for j in clue_order[: min(top_clues, len(weights))]
            ]
        out.append(entry)
    return out


def random_text_store(like: EmbeddingMatrix, seed: int) -> EmbeddingMatrix:
    """Signal-free clue rows: same count and dim, unit norm, pure noise."""
    rng = make_rng(seed, STREAM_RANDOM_TEXT)
    rows = rng.standard_normal((like.n_rows, like.dim))
    rows /= np.linalg.norm(rows, axis=1, keepdims=True)
    return EmbeddingMatrix(ids=list(like.ids), data=rows)


def _concat_stores(a: EmbeddingMatrix, b: EmbeddingMatrix) -> EmbeddingMatrix:
    if a.ids != b.ids:
        raise ValueError("stores to concatenate must share ids and order")
    return EmbeddingMatrix(ids=list(a.ids), data=np.hstack([a.data, b.data]))


GRID_CELLS = (
    # (label, feature_mode, clue_mode, supervision)
    ("image-only", "image", "none", "n.a."),
    ("image-only + random text", "image", "random", "n.a."),
    ("image-only + guidebook", "image", "guidebook", "no"),
    ("image-only + guidebook", "image", "guidebook", "yes"),
    ("image+aux", "image+aux", "none", "n.a."),
    ("image+aux + random text", "image+aux", "random", "n.a."),
    ("image+aux + guidebook", "image+aux", "guidebook", "no"),
    ("image+aux + guidebook", "image+aux", "guidebook", "yes"),
)


def make_cell_data(data, feature_mode: str, clue_mode: str, seed: int):
    """TrainData for one grid cell.

    With image features alone the attention query is the feature embedding
    itself, so text cells add parameters but no second information source
    (keeping the random-text control meaningful); with the auxiliary
    embedding concatenated, the query embedding both joins the classifier
    input and drives attention.
    """
    from .trainer import TrainData

    if feature_mode == "image":
        query, feature = data.feature, data.feature
    elif feature_mode == "image+aux":
        query, feature = data.query, _concat_stores(data.feature, data.query)
    else:
        raise ValueError(f"unknown feature mode {feature_mode!r}")
    if clue_mode == "none":
        clue, pseudo = None, None
    elif clue_mode == "guidebook":
        if data.clue is None:
            raise ValueError("grid cell needs a clue store")
        clue, pseudo = data.clue, data.pseudo
    elif clue_mode == "random":
        if data.clue is None:
            raise ValueError("grid cell needs a clue store to mirror")
        clue, pseudo = random_text_store(data.clue, seed), data.pseudo
    else:
        raise ValueError(f"unknown clue mode {clue_mode!r}")
    return TrainData(
        manifest=data.manifest,
        query=query,
        feature=feature,
        clue=clue,
        pseudo=pseudo,
        countries=list(data.countries),
    )


def ablation_grid(
    data,
    train_config,
    seeds: list[int],
    ks=(1, 5, 10),
    split: str = "test",
    include_nearest_neighbor: bool = True,
    cells=GRID_CELLS,
) -> EvalReport:
    """Train and evaluate every grid cell over the given seeds."""
    from .trainer import multi_seed

    usable_ks = [k for k in ks if k <= len(data.countries)]
    rows = []
    if include_nearest_neighbor:
        train_recs = data.manifest.by_split("train")
        eval_recs = data.manifest.by_split(split)
        nn = nearest_neighbor_baseline(
            EmbeddingMatrix(
                ids=[r.image_id for r in train_recs],
                data=data.query.rows_for([r.image_id for r in train_recs]),
            ),
            [r.country for r in train_recs],
            EmbeddingMatrix(
                ids=[r.image_id for r in eval_recs],
                data=data.query.rows_for([r.image_id for r in eval_recs]),
            ),
            [r.country for r in eval_recs],
            usable_ks,
        )
        rows.append(
            {
                "model_label": "nearest neighbor (query)",
                "attn_supervision": "n.a.",
                "topk": {
                    str(k): {"mean": v, "std": 0.0} for k, v in nn.items()
                },
            }
        )
    for label, feature_mode, clue_mode, supervision in cells:
        cell_data = make_cell_data(data, feature_mode, clue_mode, train_config.seed)
        alpha = train_config.alpha if supervision == "yes" else 0.0
        cfg = replace(train_config, alpha=alpha)
        result = multi_seed(cfg, seeds, cell_data, ks=usable_ks, split=split)
        rows.append(
            {
                "model_label": label,
                "attn_supervision": supervision,
                "topk": {
                    str(k): cell for k, cell in result["aggregated"].items()
                },
            }
        )
    report = EvalReport(
        rows=rows,
        ks=usable_ks,
        meta={"seeds": list(seeds), "split": split},
    )
    report.validate()
    return report
