"""Image manifest: panorama-level splits, cuts, and class weights.

A panorama yields four disjoint cut images. Splitting happens at the
panorama level so no visual content leaks across splits: train panoramas
contribute all four cuts, validation and test panoramas exactly one
seeded-random cut. The test split is exactly balanced per country; the
validation split is balanced up to a seeded remainder.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .rng import STREAM_SPLIT, make_rng

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
CUTS_PER_PANORAMA = 4

# Collection-scale sufficiency threshold; desk-scale fixtures sit far below
# it, so shortfalls only warn.
MIN_PANORAMAS_WARN = 426


class SplitError(ValueError):
    """Requested split is infeasible for the given panorama counts."""


@dataclass(frozen=True)
class ManifestRecord:
    image_id: str
    panorama_id: str
    cut_index: int
    country: str
    split: str

    def to_dict(self) -> dict:
        return {
            "image_id": self.image_id,
            "panorama_id": self.panorama_id,
            "cut_index": self.cut_index,
            "country": self.country,
            "split": self.split,
        }


@dataclass
class DatasetManifest:
    records: list[ManifestRecord]

    def validate(self) -> None:
        image_ids = [r.image_id for r in self.records]
        if len(set(image_ids)) != len(image_ids):
            raise ValueError("image_ids must be unique")
        pano_cut = [(r.panorama_id, r.cut_index) for r in self.records]
        if len(set(pano_cut)) != len(pano_cut):
            raise ValueError("(panorama_id, cut_index) pairs must be unique")
        per_pano: dict[str, list[ManifestRecord]] = {}
        for r in self.records:
            if r.split not in SPLITS:
                raise ValueError(f"unknown split {r.split!r}")
            if not 0 <= r.cut_index < CUTS_PER_PANORAMA:
                raise ValueError(f"cut_index out of range: {r.cut_index}")
            per_pano.setdefault(r.panorama_id, []).append(r)
        for pano, recs in per_pano.items():
            if len({(r.country, r.split) for r in recs}) != 1:
                raise ValueError(f"panorama {pano}: mixed country or split")
            split = recs[0].split
            if split == "train" and len(recs) != CUTS_PER_PANORAMA:
                raise ValueError(
                    f"panorama {pano}: train needs {CUTS_PER_PANORAMA} cuts, "
                    f"found {len(recs)}"
                )
            if split in ("val", "test") and len(recs) != 1:
                raise ValueError(f"panorama {pano}: {split} needs exactly 1 cut")
        test_counts = self.count_by_country("test")
        if test_counts and len(set(test_counts.values())) > 1:
            raise ValueError(f"test split is not balanced: {test_counts}")

    def by_split(self, split: str) -> list[ManifestRecord]:
        return [r for r in self.records if r.split == split]

    def countries(self) -> list[str]:
        return sorted({r.country for r in self.records})

    def count_by_country(self, split: str) -> dict[str, int]:
        counts: dict[str, int] = {}
        for r in self.by_split(split):
            counts[r.country] = counts.get(r.country, 0) + 1
        return counts

    def write_jsonl(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for r in self.records:
                fh.write(json.dumps(r.to_dict(), ensure_ascii=False))
                fh.write("\n")

    @classmethod
    def read_jsonl(cls, path: str | Path) -> "DatasetManifest":
        records = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    d = json.loads(line)
                    records.append(
                        ManifestRecord(
                            image_id=d["image_id"],
                            panorama_id=d["panorama_id"],
                            cut_index=int(d["cut_index"]),
                            country=d["country"],
                            split=d["split"],
                        )
                    )
        manifest = cls(records=records)
        manifest.validate()
        return manifest


def read_panoramas_jsonl(path: str | Path) -> list[tuple[str, str]]:
    panos = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                d = json.loads(line)
                panos.append((d["panorama_id"], d["country"]))
    return panos


def split_panoramas(
    panoramas: list[tuple[str, str]],
    ratios: tuple[float, float, float] = (0.9, 0.05, 0.05),
    seed: int = 0,
    test_per_country: int | None = None,
) -> DatasetManifest:
    """Assign panoramas to train/val/test and expand cuts.

    Draw order from the Philox stream (seed, STREAM_SPLIT), fixed as part
    of the seeded contract:

    1. one permutation of the sorted country list (chooses which countries
       absorb the validation remainder),
    2. per country in sorted order: a permutation of that country's
       panoramas (sorted by id), then one cut draw per test panorama, then
       one cut draw per val panorama, in permuted panorama order.

    Per country, the first ``test_k`` permuted panoramas go to test, the
    next ``val_c`` to val, the rest to train.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise SplitError(f"ratios must sum to 1, got {ratios}")
    by_country: dict[str, list[str]] = {}
    for pano_id, country in panoramas:
        by_country.setdefault(country, []).append(pano_id)
    countries = sorted(by_country)
    if not countries:
        raise SplitError("no panoramas given")
    n_total = len(panoramas)
    n_countries = len(countries)

    if test_per_country is None:
        test_total = round(n_total * ratios[2])
        if test_total % n_countries:
            raise SplitError(
                f"test size {test_total} from ratios is not divisible by "
                f"{n_countries} countries; pass test_per_country explicitly"
            )
        test_k = test_total // n_countries
    else:
        test_k = test_per_country
    if test_k < 1:
        raise SplitError("test split needs at least 1 panorama per country")

    val_total = round(n_total * ratios[1])
    val_base = val_total // n_countries
    val_remainder = val_total % n_countries

    rng = make_rng(seed, STREAM_SPLIT)
    remainder_order = rng.permutation(n_countries)
    extra_val = {countries[i] for i in remainder_order[:val_remainder]}

    deficient = []
    for country in countries:
        need = test_k + val_base + (1 if country in extra_val else 0) + 1
        if len(by_country[country]) < need:
            deficient.append(
                f"{country} (have {len(by_country[country])}, need {need})"
            )
    if deficient:
        raise SplitError(
            "not enough panoramas for the requested split: "
            + "; ".join(deficient)
        )

    short = [
        c for c in countries if len(by_country[c]) < MIN_PANORAMAS_WARN
    ]
    if short:
        logger.warning(
            "%d of %d countries have fewer than %d panoramas",
            len(short), n_countries, MIN_PANORAMAS_WARN,
        )

    records: list[ManifestRecord] = []
    for country in countries:
        panos = sorted(by_country[country])
        perm = rng.permutation(len(panos))
        val_c = val_base + (1 if country in extra_val else 0)
        test_ids = [panos[i] for i in perm[:test_k]]
        val_ids = [panos[i] for i in perm[test_k : test_k + val_c]]
        train_ids = [panos[i] for i in perm[test_k + val_c :]]
        for pano in test_ids:
            cut = int(rng.integers(CUTS_PER_PANORAMA))
            records.append(
                ManifestRecord(f"{pano}_{cut}", pano, cut, country, "test")
            )
        for pano in val_ids:
            cut = int(rng.integers(CUTS_PER_PANORAMA))
            records.append(
                ManifestRecord(f"{pano}_{cut}", pano, cut, country, "val")
            )
        for pano in train_ids:
            for cut in range(CUTS_PER_PANORAMA):
                records.append(
                    ManifestRecord(f"{pano}_{cut}", pano, cut, country, "train")
                )

    manifest = DatasetManifest(records=records)
    manifest.validate()
    return manifest


@dataclass
class ClassWeights:
    """Inverse-frequency loss weights: w_c = N_train / (C * count_c)."""

    weights: dict[str, float]

    def as_vector(self, countries: list[str]) -> np.ndarray:
        return np.array([self.weights[c] for c in countries])


def class_weights(manifest: DatasetManifest) -> ClassWeights:
    counts = manifest.count_by_country("train")
    if not counts:
        raise ValueError("manifest has no train records")
    zero = sorted(set(manifest.countries()) - set(counts))
    if zero:
        raise ValueError(f"countries with no train records: {', '.join(zero)}")
    n = sum(counts.values())
    c = len(counts)
    return ClassWeights(
        weights={country: n / (c * count) for country, count in counts.items()}
    )
