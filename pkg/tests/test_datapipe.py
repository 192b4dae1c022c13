import math
from pathlib import Path

import numpy as np
import pytest

from wincel.datapipe.gbif import OccurrenceRecord, filter_gbif, read_gbif_tsv
from wincel.datapipe.manifest import SentenceBank, TileRecord, read_manifest, write_manifest
from wincel.datapipe.sentences import (
    extract_text_sets,
    filter_keyword_sentences,
    load_keywords,
    split_sentences,
)
from wincel.datapipe.tiles import (
    assign_tiles,
    block_split,
    project_lonlat,
    rebalance_eunis,
    resolve_merges,
    tile_index,
)
from wincel.datapipe.wiki import (
    WikiArticle,
    parse_speciesbox,
    read_wiki_pages,
    select_habitat_sections,
    split_sections,
    strip_markup,
)
from wincel.errors import MalformedTemplate, MergeCycle, OutOfExtent, TooFewBlocks

GOLDEN = Path(__file__).parent / "data" / "golden"


class TestSpeciesbox:
    def test_extracts_binomial(self):
        page = "{{Speciesbox | genus = Arnica | species = montana | authority = L.}}\nBody text."
        binomial, body = parse_speciesbox(page)
        assert binomial == "Arnica montana"
        assert "Body text." in body

    def test_non_species_page(self):
        assert parse_speciesbox("Just an article about [[geography]].") is None

    def test_missing_species_param(self):
        with pytest.raises(MalformedTemplate):
            parse_speciesbox("{{Speciesbox | genus = Arnica }}")

    def test_nested_template_in_params(self):
        page = "{{Speciesbox\n| genus = Poa\n| species = alpina\n| status = {{IUCN|LC}}\n}}"
        binomial, _ = parse_speciesbox(page)
        assert binomial == "Poa alpina"


class TestStripMarkup:
    def test_link_label(self):
        assert strip_markup("grows in [[meadow|meadows]]") == "grows in meadows"

    def test_plain_link(self):
        assert strip_markup("found in [[Europe]]") == "found in Europe"

    def test_ref_removed(self):
        assert strip_markup("text<ref>cite</ref> more") == "text more"

    def test_nested_constructs(self):
        src = "A [[plant|plants]]<ref>see {{cite|x}} and [[y]]</ref> grows {{convert|5|m}} tall."
        assert strip_markup(src) == "A plants grows tall."

    def test_unbalanced_template_closed_at_end(self):
        assert strip_markup("before {{broken and more text") == "before"

    def test_table_removed(self):
        src = "above\n{| class=x\n|-\n| cell\n|}\nbelow"
        assert strip_markup(src) == "above\n\nbelow"

    def test_headings_preserved(self):
        src = "lead\n== Habitat ==\nbody ''italic'' text"
        out = strip_markup(src)
        assert "== Habitat ==" in out
        assert "italic" in out and "''" not in out

    def test_file_links_dropped(self):
        src = "text [[File:Photo.jpg|thumb|A [[caption]] here]] more"
        assert strip_markup(src) == "text more"


class TestSplitSections:
    def test_drop_list(self):
        text = "lead text\n== Habitat ==\nhabitat body\n== See also ==\nlinks\n== References ==\nrefs"
        sections = split_sections(text)
        titles = [t for t, _ in sections]
        assert titles == ["", "Habitat"]

    def test_no_headings(self):
        assert split_sections("just some text") == [("", "just some text")]

    def test_order_preserved(self):
        text = "== A ==\na\n== Gallery ==\ng\n== B ==\nb\n== C ==\nc"
        assert [t for t, _ in split_sections(text)] == ["A", "B", "C"]


class TestHabitatSelection:
    def test_keyword_titles(self):
        sections = [
            ("Distribution and habitat", "kept1"),
            ("Taxonomy", "dropped"),
            ("Geographic range", "kept2"),
            ("Cultivation", "kept3"),
            ("Ecology", "kept4"),
        ]
        out = select_habitat_sections(sections)
        assert out.split("\n") == ["kept1", "kept2", "kept3", "kept4"]


class TestSplitSentences:
    def test_two_sentences(self):
        assert split_sentences("It grows here today. It flowers in May.") == [
            "It grows here today.",
            "It flowers in May.",
        ]

    def test_initial_protected(self):
        out = split_sentences("S. aucuparia appears north of the boreal forest")
        assert out == ["S. aucuparia appears north of the boreal forest"]

    def test_numbers_protected(self):
        out = split_sentences("It grows up to 2,200 metres (7,200 ft) above sea level.")
        assert len(out) == 1

    def test_abbreviations_protected(self):
        out = split_sentences("Related taxa, e.g. the red variety, occur there too.")
        assert len(out) == 1

    def test_short_fragments_dropped(self):
        assert split_sentences("Too short. This sentence is long enough.") == [
            "This sentence is long enough."
        ]

    def test_split_before_digit(self):
        out = split_sentences("The count was taken in summer. 2000 plants were found there.")
        assert len(out) == 2


class TestKeywordFilter:
    def test_calcareous_kept(self):
        keywords = load_keywords()
        assert filter_keyword_sentences(["It prefers calcareous soils."], keywords) == [
            "It prefers calcareous soils."
        ]

    def test_no_keyword_dropped(self):
        keywords = load_keywords()
        assert filter_keyword_sentences(["It was named in 1753."], keywords) == []

    def test_empty_list(self):
        assert filter_keyword_sentences([], load_keywords()) == []

    def test_whole_word_matching(self):
        # "eco" must not fire inside "economy"; "rock" not inside "rocket".
        keywords = ["eco", "rock"]
        kept = filter_keyword_sentences(
            ["The economy grew fast.", "A rocket launched.", "A rock fell down."], keywords
        )
        assert kept == ["A rock fell down."]

    def test_case_insensitive(self):
        assert filter_keyword_sentences(["ALPINE zones are cold."], ["alpine"]) == [
            "ALPINE zones are cold."
        ]


class TestExtractTextSets:
    def _article(self, sections):
        return WikiArticle(binomial="Testus species", sections=sections)

    def test_no_habitat_section_flagged(self):
        art = self._article([("Taxonomy", "It was described by Linnaeus in 1758.")])
        sets = extract_text_sets(art, load_keywords())
        assert not sets.has_habitat
        assert sets.habitat == []
        assert len(sets.random) == 1

    def test_subset_chain_on_random_articles(self, rng):
        keywords = load_keywords()
        topics = ["forest", "alpine", "water", "dry", "nothing", "taxonomy"]
        for trial in range(50):
            sections = []
            for s in range(int(rng.integers(1, 5))):
                title = ["Habitat", "Ecology", "Taxonomy", "Uses"][int(rng.integers(0, 4))]
                n_sent = int(rng.integers(1, 5))
                body = " ".join(
                    f"The {topics[int(rng.integers(0, 6))]} context sentence number {int(rng.integers(0, 9))} appears here."
                    for _ in range(n_sent)
                )
                sections.append((title, body))
            sets = extract_text_sets(self._article(sections), keywords)
            assert set(sets.habitat) <= set(sets.random)
            assert set(sets.keywords) <= set(sets.random)

    def test_species_name_set(self):
        art = self._article([("Habitat", "It grows in forests near water.")])
        sets = extract_text_sets(art, load_keywords())
        assert sets.by_type("species_name") == ["Testus species"]


class TestGbifFilter:
    def _rec(self, **kw):
        base = dict(
            species="Arnica montana",
            lat=46.0,
            lon=7.0,
            coord_uncertainty_m=50.0,
            basis_of_record="HUMAN_OBSERVATION",
            year=2020,
            issue_flags=[],
            taxon_kingdom="Plantae",
        )
        base.update(kw)
        return OccurrenceRecord(**base)

    def test_uncertainty_rejected(self):
        kept, counts = filter_gbif([self._rec(coord_uncertainty_m=150.0)], lambda s: True)
        assert kept == [] and counts["uncertainty"] == 1

    def test_missing_uncertainty_rejected(self):
        kept, counts = filter_gbif([self._rec(coord_uncertainty_m=None)], lambda s: True)
        assert counts["uncertainty"] == 1

    def test_valid_kept(self):
        kept, counts = filter_gbif([self._rec()], lambda s: True)
        assert len(kept) == 1 and sum(counts.values()) == 0

    def test_dedup(self):
        kept, counts = filter_gbif([self._rec(), self._rec()], lambda s: True)
        assert len(kept) == 1 and counts["duplicate"] == 1

    def test_rounded_flag(self):
        kept, counts = filter_gbif(
            [self._rec(issue_flags=["COORDINATE_ROUNDED"]), self._rec(issue_flags=["COORDINATE ROUNDED"])],
            lambda s: True,
        )
        assert counts["coordinate_rounded"] == 2

    def test_kingdom(self):
        kept, counts = filter_gbif([self._rec(taxon_kingdom="Fungi")], lambda s: True)
        assert counts["kingdom"] == 1

    def test_no_article(self):
        kept, counts = filter_gbif([self._rec()], lambda s: False)
        assert counts["no_wikipedia_habitat"] == 1

    def test_counts_sum_to_dropped(self, rng):
        records = []
        for i in range(100):
            records.append(
                self._rec(
                    species=None if i % 7 == 0 else f"Sp n{i % 11}",
                    coord_uncertainty_m=float(rng.uniform(0, 200)),
                    lat=46.0 + (i % 5) * 1e-4,
                    taxon_kingdom="Plantae" if i % 3 else "Bacteria",
                )
            )
        kept, counts = filter_gbif(records, lambda s: hash(s) % 2 == 0)
        assert len(kept) + sum(counts.values()) == 100


class TestTiles:
    def test_corner_ownership(self):
        assert tile_index(0.0, 0.0) == (0, 0)
        assert tile_index(100.0, 0.0) == (1, 0)
        assert tile_index(99.999, 99.999) == (0, 0)
        assert tile_index(-0.001, 0.0) == (-1, 0)

    def test_two_species_same_cell(self):
        tiles = assign_tiles([("A sp", 10.0, 10.0), ("B sp", 40.0, 10.0)])
        assert tiles == {"0_0": ["A sp", "B sp"]}

    def test_adjacent_cells_distinct(self):
        tiles = assign_tiles([("A sp", 10.0, 10.0), ("A sp", 110.0, 10.0)])
        assert sorted(tiles) == ["0_0", "1_0"]

    def test_partition(self, rng):
        pts = [("S sp", float(rng.uniform(0, 1000)), float(rng.uniform(0, 1000))) for _ in range(200)]
        tiles = assign_tiles(pts)
        assert sum(len(v) >= 1 for v in tiles.values()) == len(tiles)
        # Every point maps to exactly one tile.
        total = 0
        for tid, species in tiles.items():
            ix, iy = (int(p) for p in tid.split("_"))
            for sp, e, n in pts:
                if ix * 100 <= e < (ix + 1) * 100 and iy * 100 <= n < (iy + 1) * 100:
                    total += 1
                    assert sp in species
        assert total == 200

    def test_out_of_extent(self):
        with pytest.raises(OutOfExtent):
            assign_tiles([("A sp", 5000.0, 0.0)], extent=(0, 0, 1000, 1000))


class TestRebalance:
    def test_explicit_remove(self, rng):
        labels = {f"t{i}": "A" for i in range(50)}
        labels.update({f"u{i}": "B" for i in range(10)})
        kept, classes, stats = rebalance_eunis(
            labels, min_count=1, cap=100, merge_map={"A": "REMOVE"}, rng=rng
        )
        assert classes == ["B"] and len(kept) == 10

    def test_cap_subsampling(self, rng):
        labels = {f"t{i}": "A" for i in range(120)}
        labels.update({f"u{i}": "B" for i in range(20)})
        kept, classes, stats = rebalance_eunis(labels, min_count=1, cap=100, rng=rng)
        counts = {c: sum(1 for v in kept.values() if v == c) for c in classes}
        assert counts == {"A": 100, "B": 20}

    def test_min_count_removal(self, rng):
        labels = {f"t{i}": ("A" if i < 99 else "B") for i in range(150)}
        kept, classes, _ = rebalance_eunis(labels, min_count=100, cap=1000, rng=rng)
        assert classes == []  # A has 99, B has 51: both below 100

    def test_noop_when_within_bounds(self, rng):
        labels = {f"t{i}": ("A" if i % 2 else "B") for i in range(300)}
        kept, classes, _ = rebalance_eunis(labels, min_count=100, cap=10000, rng=rng)
        assert kept == labels and classes == ["A", "B"]

    def test_counts_in_bounds_property(self, rng):
        labels = {}
        for c in range(6):
            for i in range(int(rng.integers(1, 400))):
                labels[f"c{c}_t{i}"] = f"C{c}"
        kept, classes, _ = rebalance_eunis(labels, min_count=50, cap=200, rng=rng)
        for c in classes:
            count = sum(1 for v in kept.values() if v == c)
            assert 50 <= count <= 200

    def test_merge_then_threshold(self, rng):
        labels = {f"a{i}": "A1" for i in range(60)}
        labels.update({f"b{i}": "A2" for i in range(60)})
        kept, classes, _ = rebalance_eunis(
            labels, min_count=100, cap=1000, merge_map={"A1": "A", "A2": "A"}, rng=rng
        )
        assert classes == ["A"] and len(kept) == 120

    def test_merge_cycle(self):
        with pytest.raises(MergeCycle):
            resolve_merges({"A": "B", "B": "A"})


class TestBlockSplit:
    def test_too_few_blocks(self):
        with pytest.raises(TooFewBlocks):
            block_split([("t1", 10.0, 10.0), ("t2", 50.0, 50.0)])

    def test_same_block_same_split(self, rng):
        tiles = [("t1", 100.0, 100.0), ("t2", 200.0, 100.0)]
        tiles += [(f"x{i}", 25000.0 + i, 100.0) for i in range(3)]
        tiles += [(f"y{i}", 100.0, 45000.0 + i) for i in range(3)]
        assign = block_split(tiles, seed=1)
        assert assign.split_of(100.0, 100.0) == assign.split_of(200.0, 100.0)

    def test_fractions_within_two_percent(self, rng):
        tiles = []
        for bx in range(40):
            for by in range(25):
                e = bx * 20000.0 + 5000.0
                n = by * 20000.0 + 5000.0
                tiles.append((f"t{bx}_{by}", e, n))
        assign = block_split(tiles, seed=3)
        counts = {"train": 0, "val": 0, "test": 0}
        for _, e, n in tiles:
            counts[assign.split_of(e, n)] += 1
        total = len(tiles)
        assert abs(counts["train"] / total - 0.6) <= 0.02
        assert abs(counts["val"] / total - 0.1) <= 0.02
        assert abs(counts["test"] / total - 0.3) <= 0.02

    def test_block_purity(self, rng):
        tiles = [(f"t{i}", float(rng.uniform(0, 400_000)), float(rng.uniform(0, 400_000))) for i in range(2000)]
        assign = block_split(tiles, seed=5)
        by_block = {}
        for tid, e, n in tiles:
            key = (math.floor(e / 20000), math.floor(n / 20000))
            by_block.setdefault(key, set()).add(assign.split_of(e, n))
        assert all(len(v) == 1 for v in by_block.values())


class TestManifestIO:
    def test_roundtrip(self, tmp_path):
        records = [
            TileRecord("0_0", 0.0, 0.0, ["A sp"], [0, 1], 0, "train"),
            TileRecord("1_0", 100.0, 0.0, ["B sp"], [1], 1, "test"),
        ]
        path = str(tmp_path / "m.jsonl")
        write_manifest(records, path)
        back = read_manifest(path)
        assert back == records

    def test_bank_dedup_and_roundtrip(self, tmp_path):
        bank = SentenceBank()
        assert bank.add("one sentence") == 0
        assert bank.add("another one") == 1
        assert bank.add("one sentence") == 0
        path = str(tmp_path / "b.jsonl")
        bank.save(path)
        assert SentenceBank.load(path).texts == ["one sentence", "another one"]


class TestGoldenCorpus:
    def test_read_pages(self):
        pages = list(read_wiki_pages(str(GOLDEN / "wiki.xml")))
        assert len(pages) == 5
        assert pages[0][0] == "Arnica montana"

    def test_gbif_fixture_parses_clean(self):
        records, malformed = read_gbif_tsv(str(GOLDEN / "gbif.tsv"))
        assert len(records) == 12 and malformed == []

    def test_verbatim_habitat_sentence_extracted(self):
        for title, text in read_wiki_pages(str(GOLDEN / "wiki.xml")):
            if title != "Arnica montana":
                continue
            binomial, body = parse_speciesbox(text)
            art = WikiArticle(binomial=binomial, sections=split_sections(strip_markup(body)))
            sets = extract_text_sets(art, load_keywords())
            assert "Arnica montana grows in nutrient-poor siliceous meadows or clay soils." in sets.habitat
            assert set(sets.habitat) <= set(sets.random)
            assert set(sets.keywords) <= set(sets.random)
