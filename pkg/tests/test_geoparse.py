import re
import string

import numpy as np
import pytest
from hypothesis import given, strategies as st

from g3.corpus import Clue, extract_clues, RawGuidebook
from g3.geoparse import (
    CountryLexicon,
    PseudoLabelMatrix,
    build_pseudo_labels,
    match_countries,
    target_vector,
)


def brute_force_maps(clues, lexicon):
    """Oracle: triple loop over (clue, country, term) with plain regex."""
    country_to_clues = {}
    clue_to_countries = {}
    for clue in clues:
        hits = set()
        for code, entry in lexicon.entries.items():
            for term in entry.terms():
                if re.search(
                    r"(?<!\w)" + re.escape(term) + r"(?!\w)", clue.text, re.IGNORECASE
                ):
                    hits.add(code)
        # drop codes whose every match sits inside a longer match of
        # another code (mirrors span consumption, e.g. South Sudan / Sudan)
        survivors = set()
        for code in hits:
            for term in lexicon.entries[code].terms():
                for m in re.finditer(
                    r"(?<!\w)" + re.escape(term) + r"(?!\w)", clue.text, re.IGNORECASE
                ):
                    covered = False
                    for other in hits:
                        if other == code:
                            continue
                        for oterm in lexicon.entries[other].terms():
                            if len(oterm) <= len(term):
                                continue
                            for om in re.finditer(
                                r"(?<!\w)" + re.escape(oterm) + r"(?!\w)",
                                clue.text,
                                re.IGNORECASE,
                            ):
                                if om.start() <= m.start() and m.end() <= om.end():
                                    covered = True
                    if not covered:
                        survivors.add(code)
        for code in survivors:
            country_to_clues.setdefault(code, []).append(clue.id)
        clue_to_countries[clue.id] = survivors
    return {c: sorted(v) for c, v in country_to_clues.items()}, clue_to_countries


class TestMatchCountries:
    def test_nordic_sentence(self, lexicon):
        text = (
            "Dashed white lines on the edges of roads are quite common in "
            "the countries of Denmark, Norway, Iceland and Sweden"
        )
        assert match_countries(text, lexicon) == {"DNK", "NOR", "ISL", "SWE"}

    def test_demonym(self, lexicon):
        assert match_countries("a clue that mentions Japanese", lexicon) == {"JPN"}

    def test_no_country(self, lexicon):
        assert (
            match_countries(
                "Birch trees are only found north of the 40th parallel", lexicon
            )
            == set()
        )

    def test_longest_match_consumes_span(self, lexicon):
        assert match_countries("Papua New Guinea has red soil", lexicon) == {"PNG"}
        assert match_countries("South Sudan has new plates", lexicon) == {"SSD"}

    def test_overlapping_countries_both_count(self, lexicon):
        assert match_countries("Sudan and South Sudan differ", lexicon) == {
            "SDN",
            "SSD",
        }

    def test_substring_not_matched(self, lexicon):
        assert match_countries("Nigeria drives on the right", lexicon) == {"NGA"}
        assert match_countries("Niger has desert roads", lexicon) == {"NER"}

    def test_case_insensitive(self, lexicon):
        assert match_countries("SWEDEN and sweden and SwEdEn", lexicon) == {"SWE"}

    @given(
        code_term=st.sampled_from(
            [("SWE", "Sweden"), ("JPN", "Japanese"), ("NLD", "Dutch"), ("DEU", "Germany")]
        ),
        prefix=st.sampled_from(["", '"', "(", "...", "'"]),
        suffix=st.sampled_from(["", ".", ",", "!", '")', ";"]),
        upper=st.booleans(),
    )
    def test_punctuation_and_case_invariance(
        self, lexicon, code_term, prefix, suffix, upper
    ):
        code, term = code_term
        term = term.upper() if upper else term.lower()
        text = f"signs near {prefix}{term}{suffix} differ"
        assert code in match_countries(text, lexicon)


class TestLexicon:
    def test_bundled_loads(self, lexicon):
        assert len(lexicon.entries) > 150
        for entry in lexicon.entries.values():
            assert len(entry.terms()) >= 1

    def test_ambiguous_demonyms_pinned(self, lexicon):
        assert match_countries("American trucks", lexicon) == {"USA"}
        assert match_countries("Dominican rooftops", lexicon) == {"DOM"}

    def test_at_least_two_surface_forms_per_country(self, lexicon):
        few = [c for c, e in lexicon.entries.items() if len(e.terms()) < 2]
        assert few == []

    def test_bad_code_rejected(self):
        with pytest.raises(ValueError, match="alpha-3"):
            CountryLexicon._from_dict(
                {"sw": {"canonical_name": "Sweden", "names": ["Sweden"]}}
            )

    def test_empty_term_rejected(self):
        with pytest.raises(ValueError, match="empty term"):
            CountryLexicon._from_dict(
                {"SWE": {"canonical_name": "Sweden", "names": [" "]}}
            )

    def test_validate_covers(self, lexicon):
        lexicon.validate_covers(["SWE", "JPN"])
        with pytest.raises(ValueError, match="ZZZ"):
            lexicon.validate_covers(["SWE", "ZZZ"])


class TestPseudoLabels:
    def test_single_clue(self, lexicon):
        clues = [Clue(0, "Japan has blue signs")]
        matrix = build_pseudo_labels(clues, lexicon)
        assert matrix.country_to_clues["JPN"] == [0]
        assert clues[0].countries == {"JPN"}

    def test_label_country_without_clues_present(self, lexicon):
        clues = [Clue(0, "Japan has blue signs")]
        matrix = build_pseudo_labels(clues, lexicon, label_set=["JPN", "SWE"])
        assert matrix.country_to_clues["SWE"] == []

    def test_missing_lexicon_country_fails(self, lexicon):
        with pytest.raises(ValueError, match="XYZ"):
            build_pseudo_labels(
                [Clue(0, "Japan")], lexicon, label_set=["JPN", "XYZ"]
            )

    def test_non_dense_ids_fail(self, lexicon):
        with pytest.raises(ValueError, match="dense"):
            build_pseudo_labels([Clue(3, "Japan")], lexicon)

    def test_territory_matchable_but_non_trainable(self, lexicon):
        clues = [Clue(0, "Greenland has ice roads")]
        matrix = build_pseudo_labels(clues, lexicon, label_set=["JPN"])
        assert matrix.country_to_clues["GRL"] == [0]
        assert "GRL" not in matrix.trainable_codes

    def test_miniguide_equals_brute_force(self, miniguide_path, lexicon):
        clues = extract_clues(RawGuidebook.from_file(miniguide_path), lexicon)
        matrix = build_pseudo_labels(clues, lexicon)
        oracle_c2c, oracle_inv = brute_force_maps(clues, lexicon)
        got = {c: ids for c, ids in matrix.country_to_clues.items() if ids}
        assert got == oracle_c2c
        assert matrix.clue_to_countries == oracle_inv

    def test_inverse_map_consistency(self, miniguide_path, lexicon):
        clues = extract_clues(RawGuidebook.from_file(miniguide_path), lexicon)
        matrix = build_pseudo_labels(clues, lexicon)
        for code, ids in matrix.country_to_clues.items():
            for i in ids:
                assert code in matrix.clue_to_countries[i]
        for i, codes in matrix.clue_to_countries.items():
            for code in codes:
                assert i in matrix.country_to_clues[code]

    def test_json_round_trip(self, tmp_path, miniguide_path, lexicon):
        clues = extract_clues(RawGuidebook.from_file(miniguide_path), lexicon)
        matrix = build_pseudo_labels(clues, lexicon)
        path = tmp_path / "pseudo.json"
        matrix.to_json(path)
        back = PseudoLabelMatrix.from_json(path)
        assert back.n_clues == matrix.n_clues
        assert back.country_to_clues == {
            c: ids for c, ids in sorted(matrix.country_to_clues.items())
        }

    def test_summary_fraction(self, lexicon):
        clues = [Clue(0, "Japan"), Clue(1, "Japan again"), Clue(2, "no match here")]
        matrix = build_pseudo_labels(clues, lexicon, label_set=["JPN"])
        s = matrix.summary()
        assert s["mean_clues_per_trainable_country"] == 2.0
        assert s["mean_fraction_of_corpus"] == pytest.approx(2 / 3)


class TestTargetVector:
    def test_country_with_no_clues(self, lexicon):
        matrix = build_pseudo_labels(
            [Clue(0, "Japan")], lexicon, label_set=["JPN", "SWE"]
        )
        assert target_vector(matrix, "SWE").tolist() == [0.0]

    def test_explicit_positions(self):
        matrix = PseudoLabelMatrix(
            n_clues=3,
            country_to_clues={"JPN": [0, 2]},
            clue_to_countries={0: {"JPN"}, 2: {"JPN"}},
            trainable_codes={"JPN"},
        )
        assert target_vector(matrix, "JPN").tolist() == [1.0, 0.0, 1.0]

    def test_unknown_code_names_code(self):
        matrix = PseudoLabelMatrix(1, {}, {}, set())
        with pytest.raises(KeyError, match="QQQ"):
            target_vector(matrix, "QQQ")

    def test_popcount_matches_map(self, miniguide_path, lexicon):
        clues = extract_clues(RawGuidebook.from_file(miniguide_path), lexicon)
        matrix = build_pseudo_labels(clues, lexicon)
        for code, ids in matrix.country_to_clues.items():
            assert int(target_vector(matrix, code).sum()) == len(ids)

    def test_fixture_vectors_match_oracle(self, miniguide_path, lexicon):
        clues = extract_clues(RawGuidebook.from_file(miniguide_path), lexicon)
        matrix = build_pseudo_labels(clues, lexicon)
        oracle_c2c, _ = brute_force_maps(clues, lexicon)
        for code, ids in oracle_c2c.items():
            vec = target_vector(matrix, code)
            expected = np.zeros(len(clues))
            expected[ids] = 1.0
            assert np.array_equal(vec, expected)
