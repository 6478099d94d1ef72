"""Command-line entry point.

Subcommands cover the whole pipeline: ``corpus extract``, ``geoparse
build-labels``, ``dataset split``, ``synth generate``, ``train``, ``eval``,
``ablate``, ``explain``, and ``stats``. Outputs of one stage are valid
inputs of the next. Configuration precedence is defaults < config file <
flags; every artifact-writing command drops a ``*.stamp.json`` with input
hashes, the resolved configuration, and the seed.
"""

from __future__ import annotations

import argparse
import difflib
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, corpus, dataset, evalsuite, figures, model, trainer
from .embedstore import (
    SyntheticWorldConfig,
    check_clue_alignment,
    read_store,
    synth_generate,
    write_store,
)
from .geoparse import CountryLexicon, PseudoLabelMatrix, build_pseudo_labels
from .stamp import write_stamp

logger = logging.getLogger("g3")

COMMANDS = (
    "corpus extract",
    "geoparse build-labels",
    "dataset split",
    "synth generate",
    "train",
    "eval",
    "ablate",
    "explain",
    "stats",
)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        if "invalid choice" in message:
            bad = message.split("invalid choice: ")[1].split(" ")[0].strip("'\"")
            close = difflib.get_close_matches(
                bad, [c.split()[0] for c in COMMANDS], n=1
            )
            if close:
                message += f" (did you mean {close[0]!r}?)"
        super().error(message)


def _load_cli_config(path: str | None) -> dict:
    if not path:
        return {}
    return json.loads(Path(path).read_text(encoding="utf-8"))


def _resolve(args: argparse.Namespace, section: dict, defaults: dict) -> dict:
    """Apply precedence defaults < config file < flags for every option."""
    resolved = {}
    for key, default in defaults.items():
        flag = getattr(args, key, None)
        resolved[key] = flag if flag is not None else section.get(key, default)
    return resolved


def _data_path(p: str | Path, data_dir: str | None) -> Path:
    path = Path(p)
    if not path.is_absolute() and data_dir and not path.exists():
        candidate = Path(data_dir) / path
        if candidate.exists():
            return candidate
    return path


def _load_lexicon(path: str | None) -> CountryLexicon:
    if path:
        return CountryLexicon.from_json(path)
    return CountryLexicon.bundled()


def _read_label_set(path: str | None) -> list[str] | None:
    if not path:
        return None
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [ln.strip() for ln in lines if ln.strip() and not ln.startswith("#")]


def _parse_ks(text: str) -> list[int]:
    return [int(k) for k in str(text).split(",") if str(k).strip()]


# ---------------------------------------------------------------------------
# subcommand implementations


def _cmd_corpus_extract(args, section, data_dir) -> int:
    opts = _resolve(args, section, {
        "guide": None, "lexicon": None, "out": "clues.jsonl",
        "heading_map": None, "places": None,
    })
    if not opts["guide"]:
        raise SystemExit("corpus extract: --guide is required")
    logger.info("effective config: %s", opts)
    guide_path = _data_path(opts["guide"], data_dir)
    lexicon = _load_lexicon(opts["lexicon"])
    heading_map = (
        corpus.HeadingMap.from_file(opts["heading_map"])
        if opts["heading_map"] else None
    )
    places = (
        corpus.PlaceList.from_file(opts["places"]) if opts["places"] else None
    )
    guidebook = corpus.RawGuidebook.from_file(guide_path)
    clues = corpus.extract_clues(
        guidebook, lexicon, places=places, heading_map=heading_map
    )
    corpus.write_clues_jsonl(clues, opts["out"])
    stats = corpus.compute_corpus_stats(clues)
    print(
        f"{stats.n_clues} clues, mean {stats.mean_words:.1f} words, "
        f"{stats.unique_words} unique words, "
        f"{stats.unique_normalized_forms} normalized forms"
    )
    inputs = {"guide": guide_path}
    for name in ("lexicon", "heading_map", "places"):
        if opts[name]:
            inputs[name] = opts[name]
    write_stamp(str(opts["out"]) + ".stamp.json", "corpus extract", opts,
                inputs, [opts["out"]])
    return 0


def _cmd_geoparse_build_labels(args, section, data_dir) -> int:
    opts = _resolve(args, section, {
        "clues": None, "lexicon": None, "out": "pseudo_labels.json",
        "label_set": None,
    })
    if not opts["clues"]:
        raise SystemExit("geoparse build-labels: --clues is required")
    logger.info("effective config: %s", opts)
    clues_path = _data_path(opts["clues"], data_dir)
    clues = corpus.read_clues_jsonl(clues_path)
    lexicon = _load_lexicon(opts["lexicon"])
    labels = _read_label_set(opts["label_set"])
    matrix = build_pseudo_labels(clues, lexicon, label_set=labels)
    matrix.to_json(opts["out"])
    summary = matrix.summary()
    print(json.dumps(summary, indent=1, sort_keys=True))
    inputs = {"clues": clues_path}
    if opts["lexicon"]:
        inputs["lexicon"] = opts["lexicon"]
    if opts["label_set"]:
        inputs["label_set"] = opts["label_set"]
    write_stamp(str(opts["out"]) + ".stamp.json", "geoparse build-labels",
                opts, inputs, [opts["out"]])
    return 0


def _cmd_dataset_split(args, section, data_dir) -> int:
    opts = _resolve(args, section, {
        "panoramas": None, "ratios": "0.9,0.05,0.05",
        "test_per_country": None, "seed": 0, "out": "manifest.jsonl",
    })
    if not opts["panoramas"]:
        raise SystemExit("dataset split: --panoramas is required")
    logger.info("effective config: %s", opts)
    panos_path = _data_path(opts["panoramas"], data_dir)
    panos = dataset.read_panoramas_jsonl(panos_path)
    ratios = tuple(float(x) for x in str(opts["ratios"]).split(","))
    manifest = dataset.split_panoramas(
        panos,
        ratios=ratios,
        seed=int(opts["seed"]),
        test_per_country=(
            int(opts["test_per_country"])
            if opts["test_per_country"] is not None else None
        ),
    )
    manifest.write_jsonl(opts["out"])
    for split in dataset.SPLITS:
        print(f"{split}: {len(manifest.by_split(split))} records")
    write_stamp(str(opts["out"]) + ".stamp.json", "dataset split", opts,
                {"panoramas": panos_path}, [opts["out"]], seed=int(opts["seed"]))
    return 0


def _cmd_synth_generate(args, section, data_dir) -> int:
    opts = _resolve(args, section, {
        "config": None, "clues": None, "manifest": None, "out_dir": "synth",
    })
    for key in ("config", "clues", "manifest"):
        if not opts[key]:
            raise SystemExit(f"synth generate: --{key} is required")
    logger.info("effective config: %s", opts)
    cfg = SyntheticWorldConfig.from_json(_data_path(opts["config"], data_dir))
    clues = corpus.read_clues_jsonl(_data_path(opts["clues"], data_dir))
    manifest = dataset.DatasetManifest.read_jsonl(
        _data_path(opts["manifest"], data_dir)
    )
    world = synth_generate(cfg, clues, manifest)
    out_dir = Path(opts["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = []
    for name, store in (
        ("query.geb", world.query),
        ("feature.geb", world.feature),
        ("clue.geb", world.clue),
    ):
        write_store(store, out_dir / name)
        outputs += [out_dir / name, out_dir / (name + ".ids.json")]
    print(
        f"wrote {world.query.n_rows} image rows and {world.clue.n_rows} "
        f"clue rows to {out_dir}"
    )
    write_stamp(out_dir / "stamp.json", "synth generate", opts, {
        "config": _data_path(opts["config"], data_dir),
        "clues": _data_path(opts["clues"], data_dir),
        "manifest": _data_path(opts["manifest"], data_dir),
    }, outputs, seed=cfg.seed)
    return 0


def _load_train_data(paths: dict, data_dir) -> trainer.TrainData:
    manifest = dataset.DatasetManifest.read_jsonl(
        _data_path(paths["manifest"], data_dir)
    )
    feature = read_store(_data_path(paths["feature_store"], data_dir))
    # single-backbone runs reuse the feature embedding as the attention query
    if paths.get("query_store"):
        query = read_store(_data_path(paths["query_store"], data_dir))
    else:
        query = feature
    clue = pseudo = None
    if paths.get("clue_store"):
        clue = read_store(_data_path(paths["clue_store"], data_dir))
        if paths.get("clues"):
            clue_list = corpus.read_clues_jsonl(_data_path(paths["clues"], data_dir))
            check_clue_alignment(clue, clue_list)
        if not paths.get("pseudo"):
            raise SystemExit("--pseudo is required when --clue-store is given")
        labels = _read_label_set(paths.get("label_set"))
        pseudo = PseudoLabelMatrix.from_json(
            _data_path(paths["pseudo"], data_dir),
            label_set=set(labels) if labels else None,
        )
        for country in manifest.countries():
            if country not in pseudo.country_to_clues:
                pseudo.country_to_clues[country] = []
                pseudo.trainable_codes.add(country)
    countries = _read_label_set(paths.get("label_set")) or manifest.countries()
    return trainer.TrainData(
        manifest=manifest, query=query, feature=feature,
        clue=clue, pseudo=pseudo, countries=sorted(countries),
    )


def _cmd_train(args, section, data_dir) -> int:
    opts = _resolve(args, section, {
        "manifest": None, "query_store": None, "feature_store": None,
        "clue_store": None, "pseudo": None, "clues": None, "label_set": None,
        "alpha": 0.75, "lr": 1e-2, "lr_attn": 1e-3, "batch": 128,
        "epochs": 15, "seed": 0, "momentum": 0.0, "pos_weight": "auto",
        "no_attn_relu": False, "no_shuffle": False, "ks": "1,5,10",
        "out": "run",
    })
    for key in ("manifest", "feature_store"):
        if not opts[key]:
            raise SystemExit(f"train: --{key.replace('_', '-')} is required")
    logger.info("effective config: %s", opts)
    data = _load_train_data(opts, data_dir)
    config = trainer.TrainConfig(
        lr_main=float(opts["lr"]),
        lr_attn=float(opts["lr_attn"]),
        batch_size=int(opts["batch"]),
        epochs=int(opts["epochs"]),
        alpha=float(opts["alpha"]),
        seed=int(opts["seed"]),
        momentum=float(opts["momentum"]),
        shuffle=not opts["no_shuffle"],
        pos_weight_mode=(
            "auto" if opts["pos_weight"] == "auto" else float(opts["pos_weight"])
        ),
    )
    model_config = data.model_config(attn_relu=not opts["no_attn_relu"])
    params = model.init_params(model_config, seed=config.seed)
    run_dir = Path(opts["out"])
    run_dir.mkdir(parents=True, exist_ok=True)
    ks = _parse_ks(opts["ks"])

    def save_epoch(epoch, p):
        model.save_checkpoint(
            p, run_dir / f"epoch_{epoch:03d}.ckpt",
            alpha=config.alpha, seed=config.seed, epoch=epoch,
        )

    trained, record = trainer.train(
        config, params, data, ks=ks, epoch_callback=save_epoch
    )
    model.save_checkpoint(
        trained, run_dir / "final.ckpt",
        alpha=config.alpha, seed=config.seed, epoch=config.epochs - 1,
    )
    run_info = {
        "train_record": record.to_dict(),
        "data_paths": {
            k: str(opts[k]) for k in
            ("manifest", "query_store", "feature_store", "clue_store",
             "pseudo", "clues", "label_set")
            if opts[k]
        },
        "countries": data.countries,
        "model_config": model_config.to_dict(),
        "ks": ks,
    }
    (run_dir / "record.json").write_text(
        json.dumps(run_info, ensure_ascii=False, indent=1, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    figures.save_loss_curves(record, run_dir / "loss_curves.png")
    inputs = {
        k: _data_path(opts[k], data_dir) for k in
        ("manifest", "query_store", "feature_store", "clue_store", "pseudo")
        if opts[k]
    }
    write_stamp(run_dir / "stamp.json", "train", opts, inputs,
                [run_dir / "final.ckpt", run_dir / "record.json"],
                seed=config.seed)
    last = record.epochs[-1]
    print(
        f"trained {config.epochs} epochs; final train loss "
        f"{last['loss_total']:.4f}; val top-k {last.get('val_topk', {})}"
    )
    return 0


def _load_run(run_dir: Path, data_dir):
    info = json.loads((run_dir / "record.json").read_text(encoding="utf-8"))
    params, header = model.load_checkpoint(run_dir / "final.ckpt")
    data = _load_train_data(info["data_paths"], data_dir)
    return info, params, data


def _cmd_eval(args, section, data_dir) -> int:
    opts = _resolve(args, section, {
        "run": None, "split": "test", "ks": "1,5,10", "out": "report.json",
        "label": "g3", "top_clues": 10,
    })
    if not opts["run"]:
        raise SystemExit("eval: --run is required")
    logger.info("effective config: %s", opts)
    run_dir = Path(opts["run"])
    info, params, data = _load_run(run_dir, data_dir)
    ks = [k for k in _parse_ks(opts["ks"]) if k <= len(data.countries)]
    metrics = trainer.evaluate_split(params, data, opts["split"], ks)
    predictions = evalsuite.per_image_predictions(
        params, data, opts["split"],
        max_rank=max(ks), top_clues=int(opts["top_clues"]),
    )
    report = evalsuite.EvalReport(
        rows=[{
            "model_label": opts["label"],
            "attn_supervision": (
                "n.a." if not params.config.n_clues
                else "yes" if info["train_record"]["config"]["alpha"] > 0
                else "no"
            ),
            "topk": {str(k): {"mean": v, "std": 0.0} for k, v in metrics.items()},
        }],
        ks=ks,
        predictions=predictions,
        meta={"run": str(run_dir), "split": opts["split"]},
    )
    out = Path(opts["out"])
    report.write_json(out)
    report.write_tsv(out.with_suffix(".tsv"))
    figures.save_topk_bars(report, out.with_suffix(".png"))
    print(report.text_table())
    write_stamp(str(out) + ".stamp.json", "eval", opts,
                {"checkpoint": run_dir / "final.ckpt"},
                [out, out.with_suffix(".tsv"), out.with_suffix(".png")])
    return 0


def _cmd_ablate(args, section, data_dir) -> int:
    opts = _resolve(args, section, {
        "config": None, "seeds": 5, "seed": 0, "out": "report.json",
        "split": None,
    })
    if not opts["config"]:
        raise SystemExit("ablate: --config is required")
    logger.info("effective config: %s", opts)
    grid_cfg = json.loads(
        _data_path(opts["config"], data_dir).read_text(encoding="utf-8")
    )
    data = _load_train_data(grid_cfg, data_dir)
    train_section = grid_cfg.get("train", {})
    config = trainer.TrainConfig(
        lr_main=float(train_section.get("lr", 1e-2)),
        lr_attn=float(train_section.get("lr_attn", 1e-3)),
        batch_size=int(train_section.get("batch", 128)),
        epochs=int(train_section.get("epochs", 15)),
        alpha=float(train_section.get("alpha", 0.75)),
        seed=int(opts["seed"]),
    )
    seeds = grid_cfg.get("seeds") or [
        int(opts["seed"]) + i for i in range(int(opts["seeds"]))
    ]
    split = opts["split"] or grid_cfg.get("split", "test")
    report = evalsuite.ablation_grid(
        data, config, seeds=seeds,
        ks=_parse_ks(grid_cfg.get("ks", "1,5,10"))
        if isinstance(grid_cfg.get("ks"), str) else grid_cfg.get("ks", [1, 5, 10]),
        split=split,
    )
    out = Path(opts["out"])
    report.write_json(out)
    report.write_tsv(out.with_suffix(".tsv"))
    figures.save_topk_bars(report, out.with_suffix(".png"))
    print(report.text_table())
    write_stamp(str(out) + ".stamp.json", "ablate", opts,
                {"config": _data_path(opts["config"], data_dir)},
                [out, out.with_suffix(".tsv"), out.with_suffix(".png")],
                seed=int(opts["seed"]))
    return 0


def _cmd_explain(args, section, data_dir) -> int:
    opts = _resolve(args, section, {
        "run": None, "image_id": None, "k": 10, "out": None,
    })
    if not opts["run"] or not opts["image_id"]:
        raise SystemExit("explain: --run and --image-id are required")
    logger.info("effective config: %s", opts)
    run_dir = Path(opts["run"])
    info, params, data = _load_run(run_dir, data_dir)
    if not params.config.n_clues:
        raise SystemExit("explain: this run was trained without clues")
    clues_path = info["data_paths"].get("clues")
    if clues_path:
        clue_list = corpus.read_clues_jsonl(_data_path(clues_path, data_dir))
    else:
        clue_list = [
            corpus.Clue(id=i, text=f"(clue {i})")
            for i in range(params.config.n_clues)
        ]
    image_id = opts["image_id"]
    query = data.query.rows_for([image_id]).astype(np.float64)
    feature = data.feature.rows_for([image_id]).astype(np.float64)
    entries = evalsuite.explain(
        params, query, feature, data.clue_matrix, clue_list, k=int(opts["k"])
    )
    for rank, e in enumerate(entries, start=1):
        countries = ",".join(e.countries) or "-"
        print(f"{rank:2d}. w={e.weight:.4f} [{countries}] {e.text}")
    if opts["out"]:
        Path(opts["out"]).write_text(
            json.dumps(
                [e.__dict__ for e in entries],
                ensure_ascii=False, indent=1, sort_keys=True,
            ) + "\n",
            encoding="utf-8",
        )
    return 0


def _cmd_stats(args, section, data_dir) -> int:
    opts = _resolve(args, section, {
        "clues": None, "pseudo": None, "manifest": None, "out_dir": "stats",
    })
    if not opts["clues"]:
        raise SystemExit("stats: --clues is required")
    logger.info("effective config: %s", opts)
    clues = corpus.read_clues_jsonl(_data_path(opts["clues"], data_dir))
    stats = corpus.compute_corpus_stats(clues)
    cue_counts = dict(sorted(stats.clues_per_cue_type.items()))

    if opts["pseudo"]:
        matrix = PseudoLabelMatrix.from_json(_data_path(opts["pseudo"], data_dir))
        country_counts = {
            c: len(ids) for c, ids in sorted(matrix.country_to_clues.items())
        }
    else:
        country_counts = {}
        for clue in clues:
            for code in clue.countries:
                country_counts[code] = country_counts.get(code, 0) + 1
        country_counts = dict(sorted(country_counts.items()))

    out_dir = Path(opts["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    body = {
        "corpus": stats.to_dict(),
        "clues_per_cue_type": cue_counts,
        "clues_per_country": country_counts,
    }
    if opts["manifest"]:
        manifest = dataset.DatasetManifest.read_jsonl(
            _data_path(opts["manifest"], data_dir)
        )
        body["images_per_split"] = {
            s: len(manifest.by_split(s)) for s in dataset.SPLITS
        }
    (out_dir / "stats.json").write_text(
        json.dumps(body, ensure_ascii=False, indent=1, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    figures.save_histogram(
        cue_counts, out_dir / "clues_per_cue_type.png",
        "Clues per visual cue type", ylabel="clues",
    )
    if country_counts:
        figures.save_histogram(
            country_counts, out_dir / "clues_per_country.png",
            "Clues per country", ylabel="clues", rotate=True,
        )
    print("Clues per cue type:")
    print(figures.text_bar_chart(cue_counts))
    if country_counts:
        print("\nClues per country:")
        print(figures.text_bar_chart(country_counts))
    inputs = {"clues": _data_path(opts["clues"], data_dir)}
    if opts["pseudo"]:
        inputs["pseudo"] = _data_path(opts["pseudo"], data_dir)
    write_stamp(out_dir / "stats.json.stamp.json", "stats", opts, inputs,
                [out_dir / "stats.json"])
    return 0


# ---------------------------------------------------------------------------
# argument wiring


def build_parser() -> _Parser:
    parser = _Parser(prog="g3", description=__doc__)
    parser.add_argument("--version", action="version", version=f"g3 {__version__}")
    parser.add_argument("--config", help="JSON config file with per-command sections")
    parser.add_argument(
        "--data-dir",
        help="base directory for relative input paths (default: $G3_DATA_DIR)",
    )
    parser.add_argument("--log-level", default=None, help="logging level name")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    corpus_p = sub.add_parser("corpus", help="guidebook ingestion")
    corpus_sub = corpus_p.add_subparsers(dest="subcommand", metavar="SUBCOMMAND")
    extract = corpus_sub.add_parser("extract", help="extract clues from a guidebook")
    extract.add_argument("--guide")
    extract.add_argument("--lexicon")
    extract.add_argument("--out")
    extract.add_argument("--heading-map", dest="heading_map")
    extract.add_argument("--places")

    geo_p = sub.add_parser("geoparse", help="country pseudo-labels")
    geo_sub = geo_p.add_subparsers(dest="subcommand", metavar="SUBCOMMAND")
    build_labels = geo_sub.add_parser("build-labels", help="match clues to countries")
    build_labels.add_argument("--clues")
    build_labels.add_argument("--lexicon")
    build_labels.add_argument("--out")
    build_labels.add_argument("--label-set", dest="label_set")

    ds_p = sub.add_parser("dataset", help="manifest construction")
    ds_sub = ds_p.add_subparsers(dest="subcommand", metavar="SUBCOMMAND")
    split = ds_sub.add_parser("split", help="split panoramas into train/val/test")
    split.add_argument("--panoramas")
    split.add_argument("--ratios")
    split.add_argument("--test-per-country", dest="test_per_country", type=int)
    split.add_argument("--seed", type=int)
    split.add_argument("--out")

    synth_p = sub.add_parser("synth", help="synthetic embeddings")
    synth_sub = synth_p.add_subparsers(dest="subcommand", metavar="SUBCOMMAND")
    generate = synth_sub.add_parser("generate", help="generate synthetic stores")
    generate.add_argument("--config")
    generate.add_argument("--clues")
    generate.add_argument("--manifest")
    generate.add_argument("--out-dir", dest="out_dir")

    train_p = sub.add_parser("train", help="train the attention classifier")
    train_p.add_argument("--manifest")
    train_p.add_argument("--query-store", dest="query_store")
    train_p.add_argument("--feature-store", dest="feature_store")
    train_p.add_argument("--clue-store", dest="clue_store")
    train_p.add_argument("--pseudo")
    train_p.add_argument("--clues")
    train_p.add_argument("--label-set", dest="label_set")
    train_p.add_argument("--alpha", type=float)
    train_p.add_argument("--lr", type=float)
    train_p.add_argument("--lr-attn", dest="lr_attn", type=float)
    train_p.add_argument("--batch", type=int)
    train_p.add_argument("--epochs", type=int)
    train_p.add_argument("--seed", type=int)
    train_p.add_argument("--momentum", type=float)
    train_p.add_argument("--pos-weight", dest="pos_weight")
    train_p.add_argument("--no-attn-relu", dest="no_attn_relu",
                         action="store_const", const=True)
    train_p.add_argument("--no-shuffle", dest="no_shuffle",
                         action="store_const", const=True)
    train_p.add_argument("--ks")
    train_p.add_argument("--out")

    eval_p = sub.add_parser("eval", help="evaluate a trained run")
    eval_p.add_argument("--run")
    eval_p.add_argument("--split")
    eval_p.add_argument("--ks")
    eval_p.add_argument("--out")
    eval_p.add_argument("--label")
    eval_p.add_argument("--top-clues", dest="top_clues", type=int)

    ablate_p = sub.add_parser("ablate", help="run the ablation grid")
    ablate_p.add_argument("--config", dest="config_grid")
    ablate_p.add_argument("--seeds", type=int)
    ablate_p.add_argument("--seed", type=int)
    ablate_p.add_argument("--split")
    ablate_p.add_argument("--out")

    explain_p = sub.add_parser("explain", help="top attended clues for an image")
    explain_p.add_argument("--run")
    explain_p.add_argument("--image-id", dest="image_id")
    explain_p.add_argument("--k", type=int)
    explain_p.add_argument("--out")

    stats_p = sub.add_parser("stats", help="corpus and label histograms")
    stats_p.add_argument("--clues")
    stats_p.add_argument("--pseudo")
    stats_p.add_argument("--manifest")
    stats_p.add_argument("--out-dir", dest="out_dir")

    return parser


def dispatch(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    cli_config = _load_cli_config(getattr(args, "config", None))
    data_dir = (
        args.data_dir or cli_config.get("data_dir") or os.environ.get("G3_DATA_DIR")
    )
    level = args.log_level or cli_config.get("log_level") or "INFO"
    logging.basicConfig(
        level=getattr(logging, str(level).upper(), logging.INFO),
        format="%(levelname)s %(name)s: %(message)s",
    )

    command = getattr(args, "command", None)
    if command is None:
        parser.print_help()
        return 2
    subcommand = getattr(args, "subcommand", None)
    full = f"{command} {subcommand}" if subcommand else command
    section = cli_config.get(full, {})

    handlers = {
        "corpus extract": _cmd_corpus_extract,
        "geoparse build-labels": _cmd_geoparse_build_labels,
        "dataset split": _cmd_dataset_split,
        "synth generate": _cmd_synth_generate,
        "train": _cmd_train,
        "eval": _cmd_eval,
        "ablate": _cmd_ablate,
        "explain": _cmd_explain,
        "stats": _cmd_stats,
    }
    handler = handlers.get(full)
    if handler is None:
        parser.error(f"missing subcommand for {command!r}")
    if full == "ablate":
        # --config on ablate names the grid file, not the CLI config file
        args.config = getattr(args, "config_grid", None)
    return handler(args, section, data_dir)


def main(argv: list[str] | None = None) -> int:
    try:
        return dispatch(argv)
    except SystemExit as exc:
        if isinstance(exc.code, str):
            print(f"error: {exc.code}", file=sys.stderr)
            return 2
        return exc.code if exc.code is not None else 0
    except BrokenPipeError:
        return 1
    except Exception as exc:  # runtime failures exit 1, structured to stderr
        logger.debug("unhandled failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
