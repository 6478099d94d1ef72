"""Guidebook ingestion: sentence segmentation and clue selection.

A guidebook arrives as UTF-8 text with optional section headings on lines
starting with ``# ``. Section bodies are segmented into sentences by a
rule-based splitter, and a sentence is kept as a clue when it mentions at
least one country term (lexicon) or one well-known non-country place
(supplementary place list). Kept clues get dense 0-based ids in document
order and a visual-cue tag derived from their section heading.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .geoparse import CountryLexicon, TermMatcher, match_countries

CUE_TYPES = (
    "driving_side",
    "road_lines",
    "license_plates",
    "signage",
    "language_script",
    "architecture",
    "vegetation",
    "soil",
    "bollards",
    "utility_poles",
    "flags",
    "camera_car",
    "other",
)
UNKNOWN_CUE = "unknown"

# Tokens that end with '.' but do not end a sentence. Compared lowercased.
ABBREVIATIONS = frozenset(
    {
        "e.g.", "i.e.", "etc.", "cf.", "vs.", "approx.", "no.", "nos.",
        "st.", "mt.", "ft.", "mr.", "mrs.", "ms.", "dr.", "prof.",
        "jr.", "sr.", "km.", "mi.", "a.m.", "p.m.",
    }
)

_TERMINAL_RE = re.compile(r"[.!?]+(?=\s|$)")


@dataclass
class RawGuidebook:
    source_id: str
    sections: list[tuple[str, str]]  # (heading, body), input order

    def __post_init__(self):
        for heading, _ in self.sections:
            if not heading.strip():
                raise ValueError("section headings must be non-empty")

    @classmethod
    def from_text(cls, text: str, source_id: str = "guidebook") -> "RawGuidebook":
        """Parse '# ' heading markers; text before the first heading gets
        the synthetic heading '(preamble)'."""
        sections: list[tuple[str, list[str]]] = []
        current = "(preamble)"
        buf: list[str] = []
        for line in text.splitlines():
            if line.startswith("# "):
                sections.append((current, buf))
                current = line[2:].strip() or "(unnamed section)"
                buf = []
            else:
                buf.append(line)
        sections.append((current, buf))
        merged = [(h, "\n".join(b).strip()) for h, b in sections]
        if merged and merged[0][0] == "(preamble)" and not merged[0][1]:
            merged = merged[1:]
        return cls(source_id=source_id, sections=merged)

    @classmethod
    def from_file(cls, path: str | Path) -> "RawGuidebook":
        path = Path(path)
        return cls.from_text(path.read_text(encoding="utf-8"), source_id=path.name)


@dataclass
class Clue:
    id: int
    text: str
    cue_type: str = UNKNOWN_CUE
    countries: set[str] = field(default_factory=set)

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError("clue text must be non-empty")

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "text": self.text,
            "cue_type": self.cue_type,
            "countries": sorted(self.countries),
        }

    @classmethod
    def from_record(cls, rec: dict) -> "Clue":
        return cls(
            id=int(rec["id"]),
            text=rec["text"],
            cue_type=rec.get("cue_type", UNKNOWN_CUE),
            countries=set(rec.get("countries", ())),
        )


def split_sentences(body: str) -> list[str]:
    """Split text into sentences at terminal punctuation.

    Splits after runs of [.!?] followed by whitespace unless the preceding
    token is a known abbreviation. Whitespace inside a sentence is
    collapsed to single spaces; no non-whitespace content is dropped.
    """
    sentences: list[str] = []
    start = 0
    for m in _TERMINAL_RE.finditer(body):
        chunk = body[start : m.end()]
        last_token = chunk.rsplit(None, 1)[-1] if chunk.split() else ""
        if last_token.lower() in ABBREVIATIONS:
            continue
        if chunk.strip():
            sentences.append(" ".join(chunk.split()))
        start = m.end()
    tail = body[start:]
    if tail.strip():
        sentences.append(" ".join(tail.split()))
    return sentences


class PlaceList:
    """Supplementary non-country place terms for clue selection."""

    def __init__(self, terms: list[str]):
        self.terms = [t for t in (s.strip() for s in terms) if t]
        self._matcher = TermMatcher({t: t for t in self.terms})

    def mentions_place(self, text: str) -> bool:
        return bool(self._matcher.find(text))

    @classmethod
    def from_file(cls, path: str | Path) -> "PlaceList":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls([ln for ln in lines if not ln.startswith("#")])

    @classmethod
    def bundled(cls) -> "PlaceList":
        text = resources.files("g3.data").joinpath("places.txt").read_text("utf-8")
        return cls([ln for ln in text.splitlines() if not ln.startswith("#")])


class HeadingMap:
    """Ordered keyword -> cue-type map applied to section headings."""

    def __init__(self, keyword_to_tag: dict[str, str]):
        for keyword, tag in keyword_to_tag.items():
            if tag not in CUE_TYPES:
                raise ValueError(f"unknown cue type {tag!r} for keyword {keyword!r}")
        self.keyword_to_tag = {k.lower(): v for k, v in keyword_to_tag.items()}

    def tag_for(self, heading: str) -> str:
        lowered = heading.lower()
        for keyword, tag in self.keyword_to_tag.items():
            if keyword in lowered:
                return tag
        return UNKNOWN_CUE

    @classmethod
    def from_file(cls, path: str | Path) -> "HeadingMap":
        return cls(json.loads(Path(path).read_text(encoding="utf-8")))

    @classmethod
    def bundled(cls) -> "HeadingMap":
        raw = resources.files("g3.data").joinpath("heading_map.json").read_text("utf-8")
        return cls(json.loads(raw))


def filter_location_sentences(
    sentences: list[str],
    lexicon: CountryLexicon,
    places: PlaceList | None = None,
    cue_type: str = UNKNOWN_CUE,
    start_id: int = 0,
) -> list[Clue]:
    """Keep sentences that mention a country or a listed place.

    Country matches are written into the clue immediately; place-only
    sentences stay in the corpus with an empty country set.
    """
    clues = []
    next_id = start_id
    for sentence in sentences:
        codes = match_countries(sentence, lexicon)
        if not codes and not (places is not None and places.mentions_place(sentence)):
            continue
        clues.append(
            Clue(id=next_id, text=sentence, cue_type=cue_type, countries=set(codes))
        )
        next_id += 1
    return clues


def extract_clues(
    guidebook: RawGuidebook,
    lexicon: CountryLexicon,
    places: PlaceList | None = None,
    heading_map: HeadingMap | None = None,
) -> list[Clue]:
    if places is None:
        places = PlaceList.bundled()
    if heading_map is None:
        heading_map = HeadingMap.bundled()
    clues: list[Clue] = []
    for heading, body in guidebook.sections:
        sentences = split_sentences(body)
        clues.extend(
            filter_location_sentences(
                sentences,
                lexicon,
                places=places,
                cue_type=heading_map.tag_for(heading),
                start_id=len(clues),
            )
        )
    return clues


@dataclass
class CorpusStats:
    n_clues: int
    mean_words: float
    unique_words: int
    unique_normalized_forms: int
    clues_per_cue_type: dict[str, int]

    def to_dict(self) -> dict:
        return {
            "n_clues": self.n_clues,
            "mean_words": self.mean_words,
            "unique_words": self.unique_words,
            "unique_normalized_forms": self.unique_normalized_forms,
            "clues_per_cue_type": dict(sorted(self.clues_per_cue_type.items())),
        }


def _strip_punct(token: str) -> str:
    return token.strip(".,;:!?\"'()[]{}<>«»“”‘’…—–-")


def compute_corpus_stats(clues: list[Clue]) -> CorpusStats:
    """Corpus-level counts over whitespace tokens.

    unique_words counts case-preserved punctuation-stripped tokens;
    unique_normalized_forms lowercases them first, collapsing inflectional
    case variants the way a crude lemma count would.
    """
    if not clues:
        return CorpusStats(0, 0.0, 0, 0, {})
    total_tokens = 0
    words: set[str] = set()
    normalized: set[str] = set()
    per_cue: Counter[str] = Counter()
    for clue in clues:
        tokens = clue.text.split()
        total_tokens += len(tokens)
        for tok in tokens:
            stripped = _strip_punct(tok)
            if stripped:
                words.add(stripped)
                normalized.add(stripped.lower())
        per_cue[clue.cue_type] += 1
    return CorpusStats(
        n_clues=len(clues),
        mean_words=total_tokens / len(clues),
        unique_words=len(words),
        unique_normalized_forms=len(normalized),
        clues_per_cue_type=dict(per_cue),
    )


def write_clues_jsonl(clues: list[Clue], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for clue in clues:
            fh.write(json.dumps(clue.to_record(), ensure_ascii=False))
            fh.write("\n")


def read_clues_jsonl(path: str | Path) -> list[Clue]:
    clues = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                clues.append(Clue.from_record(json.loads(line)))
    ids = [c.id for c in clues]
    if ids != list(range(len(ids))):
        raise ValueError(f"{path}: clue ids must be dense 0..n-1")
    return clues
