"""Lexical geoparsing: map sentences to country codes.

Matching is gazetteer-based over country names, demonyms, and aliases.
Terms match case-insensitively at token boundaries; multi-word terms are
tried before shorter ones and matched spans are consumed, so "Papua New
Guinea" never also yields Guinea and "South Sudan" never also yields
Sudan. Ambiguous demonyms are pinned by the alias table in the shipped
lexicon rather than resolved heuristically ("American" means the United
States, "Dominican" the Dominican Republic).
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

_ALPHA3_RE = re.compile(r"^[A-Z]{3}$")


@dataclass(frozen=True)
class LexiconEntry:
    canonical_name: str
    names: tuple[str, ...]
    demonyms: tuple[str, ...]
    aliases: tuple[str, ...]

    def terms(self) -> tuple[str, ...]:
        seen = {}
        for term in (self.canonical_name, *self.names, *self.demonyms, *self.aliases):
            seen.setdefault(term.lower(), term)
        return tuple(seen.values())


class TermMatcher:
    """Longest-first token-boundary matcher with span consumption.

    Built once from (term, key) pairs; find(text) returns the set of keys
    whose terms occur in the text. A span claimed by a longer term blocks
    shorter terms from matching inside it.
    """

    def __init__(self, term_keys: dict[str, str]):
        ordered = sorted(
            term_keys.items(), key=lambda kv: (-len(kv[0]), kv[0].lower())
        )
        self._patterns = [
            (re.compile(r"(?<!\w)" + re.escape(term) + r"(?!\w)", re.IGNORECASE), key)
            for term, key in ordered
        ]

    def find(self, text: str) -> set[str]:
        claimed: list[tuple[int, int]] = []
        found: set[str] = set()
        for pattern, key in self._patterns:
            for m in pattern.finditer(text):
                span = (m.start(), m.end())
                if any(span[0] < c[1] and c[0] < span[1] for c in claimed):
                    continue
                claimed.append(span)
                found.add(key)
        return found


@dataclass
class CountryLexicon:
    """Country code -> surface forms used for lexical matching."""

    entries: dict[str, LexiconEntry]
    _matcher: TermMatcher = field(init=False, repr=False)

    def __post_init__(self):
        term_keys: dict[str, str] = {}
        for code, entry in self.entries.items():
            if not _ALPHA3_RE.match(code):
                raise ValueError(f"country code must be ISO alpha-3: {code!r}")
            for term in entry.terms():
                if not term.strip():
                    raise ValueError(f"{code}: empty term in lexicon")
                prior = term_keys.get(term.lower())
                if prior is not None and prior != code:
                    raise ValueError(
                        f"term {term!r} claimed by both {prior} and {code}"
                    )
                term_keys[term.lower()] = code
        self._matcher = TermMatcher(
            {term: code for term, code in term_keys.items()}
        )

    @classmethod
    def from_json(cls, path: str | Path) -> "CountryLexicon":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls._from_dict(raw)

    @classmethod
    def bundled(cls) -> "CountryLexicon":
        raw = json.loads(
            resources.files("g3.data").joinpath("lexicon.json").read_text("utf-8")
        )
        return cls._from_dict(raw)

    @classmethod
    def _from_dict(cls, raw: dict) -> "CountryLexicon":
        entries = {}
        for code, body in raw.items():
            entries[code] = LexiconEntry(
                canonical_name=body["canonical_name"],
                names=tuple(body.get("names", ())),
                demonyms=tuple(body.get("demonyms", ())),
                aliases=tuple(body.get("aliases", ())),
            )
        return cls(entries=entries)

    def codes(self) -> set[str]:
        return set(self.entries)

    def validate_covers(self, labels) -> None:
        missing = sorted(set(labels) - self.codes())
        if missing:
            raise ValueError(
                f"lexicon is missing {len(missing)} label-set countries: "
                + ", ".join(missing)
            )


def match_countries(text: str, lexicon: CountryLexicon) -> set[str]:
    """Country codes whose names/demonyms/aliases occur in the sentence."""
    return lexicon._matcher.find(text)


@dataclass
class PseudoLabelMatrix:
    """Clue <-> country incidence used to supervise attention.

    country_to_clues carries every country in the label set (possibly with
    an empty list) plus any matchable non-label territory; trainable_codes
    records which keys are in the label set.
    """

    n_clues: int
    country_to_clues: dict[str, list[int]]
    clue_to_countries: dict[int, set[str]]
    trainable_codes: set[str]

    def target_vector(self, country: str) -> np.ndarray:
        if country not in self.country_to_clues:
            raise KeyError(f"unknown country code: {country!r}")
        vec = np.zeros(self.n_clues)
        ids = self.country_to_clues[country]
        if ids:
            vec[np.asarray(ids)] = 1.0
        return vec

    def summary(self) -> dict:
        sizes = {c: len(ids) for c, ids in self.country_to_clues.items()}
        trainable = [sizes[c] for c in sorted(self.trainable_codes)]
        mean_clues = float(np.mean(trainable)) if trainable else 0.0
        return {
            "n_clues": self.n_clues,
            "n_countries": len(self.country_to_clues),
            "n_trainable_countries": len(self.trainable_codes),
            "mean_clues_per_trainable_country": mean_clues,
            "mean_fraction_of_corpus": (
                mean_clues / self.n_clues if self.n_clues else 0.0
            ),
        }

    def to_json(self, path: str | Path) -> None:
        body = {
            "n_clues": self.n_clues,
            "country_to_clues": {
                c: self.country_to_clues[c] for c in sorted(self.country_to_clues)
            },
        }
        Path(path).write_text(
            json.dumps(body, ensure_ascii=False, indent=1) + "\n", encoding="utf-8"
        )

    @classmethod
    def from_json(
        cls, path: str | Path, label_set: set[str] | None = None
    ) -> "PseudoLabelMatrix":
        body = json.loads(Path(path).read_text(encoding="utf-8"))
        country_to_clues = {
            c: sorted(int(i) for i in ids)
            for c, ids in body["country_to_clues"].items()
        }
        clue_to_countries: dict[int, set[str]] = {}
        for code, ids in country_to_clues.items():
            for i in ids:
                clue_to_countries.setdefault(i, set()).add(code)
        trainable = (
            set(label_set) if label_set is not None else set(country_to_clues)
        )
        return cls(
            n_clues=int(body["n_clues"]),
            country_to_clues=country_to_clues,
            clue_to_countries=clue_to_countries,
            trainable_codes=trainable,
        )


def target_vector(matrix: PseudoLabelMatrix, country: str) -> np.ndarray:
    return matrix.target_vector(country)


def build_pseudo_labels(
    clues,
    lexicon: CountryLexicon,
    label_set=None,
) -> PseudoLabelMatrix:
    """Match every clue against the lexicon and build both incidence maps.

    Fills ``clue.countries`` in place. Every label-set country gets an
    entry even when no clue mentions it; matched territories outside the
    label set stay in the maps but are flagged non-trainable.
    """
    clue_list = list(clues)
    ids = [c.id for c in clue_list]
    if ids != list(range(len(ids))):
        raise ValueError("clue ids must be dense and ordered 0..n-1")
    labels = set(label_set) if label_set is not None else None
    if labels is not None:
        lexicon.validate_covers(labels)

    country_to_clues: dict[str, list[int]] = {
        c: [] for c in (labels or set())
    }
    clue_to_countries: dict[int, set[str]] = {}
    for clue in clue_list:
        codes = match_countries(clue.text, lexicon)
        clue.countries = set(codes)
        clue_to_countries[clue.id] = set(codes)
        for code in codes:
            country_to_clues.setdefault(code, []).append(clue.id)
    for code in country_to_clues:
        country_to_clues[code].sort()

    return PseudoLabelMatrix(
        n_clues=len(clue_list),
        country_to_clues=country_to_clues,
        clue_to_countries=clue_to_countries,
        trainable_codes=labels if labels is not None else set(country_to_clues),
    )
