"""Dataset construction: occurrence filtering, article parsing, sentence
extraction, tile assignment, class rebalancing, spatial splits, and the
triplet manifest."""

from .gbif import OccurrenceRecord, filter_gbif, read_gbif_tsv  # noqa: F401
from .manifest import SentenceBank, TileRecord, build_manifest  # noqa: F401
from .sentences import (  # noqa: F401
    SentenceSets,
    extract_text_sets,
    filter_keyword_sentences,
    load_keywords,
    split_sentences,
)
from .tiles import SplitAssignment, assign_tiles, block_split, rebalance_eunis  # noqa: F401
from .wiki import (  # noqa: F401
    WikiArticle,
    parse_speciesbox,
    read_wiki_pages,
    select_habitat_sections,
    split_sections,
    strip_markup,
)
