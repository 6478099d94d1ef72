import json
from pathlib import Path

import pytest

from g3.corpus import read_clues_jsonl
from g3.dataset import read_panoramas_jsonl, split_panoramas
from g3.embedstore import SyntheticWorldConfig, synth_generate
from g3.geoparse import CountryLexicon, build_pseudo_labels
from g3.trainer import TrainData

FIXTURES = Path(__file__).parent / "fixtures"

# Split ratios for the 130-panorama fixture: 50 train / 40 val / 40 test.
SYNTH_RATIOS = (50 / 130, 40 / 130, 40 / 130)
SYNTH_SPLIT_SEED = 7
SYNTH_TEST_PER_COUNTRY = 4


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def miniguide_path() -> Path:
    return FIXTURES / "miniguide.txt"


@pytest.fixture(scope="session")
def lexicon() -> CountryLexicon:
    return CountryLexicon.bundled()


@pytest.fixture(scope="session")
def synth_countries() -> list[str]:
    lines = (FIXTURES / "synth_countries.txt").read_text().splitlines()
    return [ln.strip() for ln in lines if ln.strip()]


@pytest.fixture(scope="session")
def synth_clues(lexicon, synth_countries):
    clues = read_clues_jsonl(FIXTURES / "synth_clues.jsonl")
    build_pseudo_labels(clues, lexicon, label_set=synth_countries)
    return clues


@pytest.fixture(scope="session")
def synth_pseudo(lexicon, synth_countries):
    clues = read_clues_jsonl(FIXTURES / "synth_clues.jsonl")
    return build_pseudo_labels(clues, lexicon, label_set=synth_countries)


@pytest.fixture(scope="session")
def synth_manifest():
    panos = read_panoramas_jsonl(FIXTURES / "synth_panos.jsonl")
    return split_panoramas(
        panos,
        ratios=SYNTH_RATIOS,
        seed=SYNTH_SPLIT_SEED,
        test_per_country=SYNTH_TEST_PER_COUNTRY,
    )


@pytest.fixture(scope="session")
def synth_config() -> SyntheticWorldConfig:
    return SyntheticWorldConfig.from_json(FIXTURES / "synth_config.json")


@pytest.fixture(scope="session")
def synth_world(synth_config, synth_clues, synth_manifest):
    return synth_generate(synth_config, synth_clues, synth_manifest)


@pytest.fixture(scope="session")
def synth_data(synth_manifest, synth_world, synth_pseudo, synth_countries):
    return TrainData(
        manifest=synth_manifest,
        query=synth_world.query,
        feature=synth_world.feature,
        clue=synth_world.clue,
        pseudo=synth_pseudo,
        countries=list(synth_countries),
    )


def write_jsonl(path: Path, records: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
