"""Sentence extraction: rule-based splitting and the four text sets.

The splitting rules are pinned by the golden-corpus fixtures: sentences end
at ., ! or ? followed by whitespace and an uppercase letter or digit;
newlines are hard boundaries; single-letter initials ("S. aucuparia") and a
small abbreviation list never split; fragments under 3 words are dropped.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from importlib import resources

from .wiki import WikiArticle, is_habitat_title, select_habitat_sections

# Periods in these never end a sentence.
PROTECTED_ABBREVIATIONS = ("subsp.", "e.g.", "i.e.", "etc.", "var.", "sp.", "cf.", "ca.")

MIN_SENTENCE_WORDS = 3

_PLACEHOLDER = "\x00"
_INITIAL_RE = re.compile(r"\b([A-Z])\.")
_ABBREV_RE = re.compile(
    "(" + "|".join(re.escape(a) for a in PROTECTED_ABBREVIATIONS) + ")",
    re.IGNORECASE,
)
_SPLIT_RE = re.compile(r"(?<=[.!?])\s+(?=[A-Z0-9])")


def split_sentences(text: str) -> list[str]:
    """Split plain text into sentences; fragments under 3 words are dropped."""
    sentences: list[str] = []
    for line in text.split("\n"):
        masked = _ABBREV_RE.sub(lambda m: m.group(1).replace(".", _PLACEHOLDER), line)
        masked = _INITIAL_RE.sub(lambda m: m.group(1) + _PLACEHOLDER, masked)
        for chunk in _SPLIT_RE.split(masked):
            sentence = chunk.replace(_PLACEHOLDER, ".").strip()
            if len(sentence.split()) >= MIN_SENTENCE_WORDS:
                sentences.append(sentence)
    return sentences


def load_keywords(path: str | None = None) -> list[str]:
    """Ecology keyword list, one per line; ships with the package."""
    if path is None:
        text = resources.files("wincel").joinpath("data/keywords.txt").read_text("utf-8")
    else:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    seen = []
    for line in text.splitlines():
        word = line.strip()
        if word and word not in seen:
            seen.append(word)
    return seen


def filter_keyword_sentences(sentences: list[str], keyword_list: list[str]) -> list[str]:
    """Sentences containing at least one keyword (whole word, case-insensitive).

    Whole-word matching is deliberate: the list contains common short words
    and substring matching would over-fire (e.g. "rock" inside "rocket").
    """
    if not keyword_list:
        raise ValueError("keyword list must be nonempty")
    pattern = re.compile(
        r"\b(?:" + "|".join(re.escape(k) for k in keyword_list) + r")\b",
        re.IGNORECASE,
    )
    return [s for s in sentences if pattern.search(s)]


@dataclass
class SentenceSets:
    """The four text sets extracted from one species article.

    ``has_habitat`` records whether any habitat-like section existed; when
    False the species is excluded by the occurrence filter downstream.
    """

    habitat: list[str] = field(default_factory=list)
    keywords: list[str] = field(default_factory=list)
    random: list[str] = field(default_factory=list)
    species_name: str = ""
    has_habitat: bool = False

    def by_type(self, text_type: str) -> list[str]:
        if text_type == "habitat":
            return self.habitat
        if text_type == "keywords":
            return self.keywords
        if text_type == "random":
            return self.random
        if text_type == "species_name":
            return [self.species_name]
        raise ValueError(f"unknown text type {text_type!r}")


TEXT_TYPES = ("habitat", "keywords", "random", "species_name")


def extract_text_sets(article: WikiArticle, keyword_list: list[str]) -> SentenceSets:
    """habitat / keywords / random / species-name sets for one article.

    habitat sentences come from habitat-like sections only, random from all
    kept sections, keywords filters random; habitat and keywords are both
    subsets of random by construction.
    """
    habitat = split_sentences(select_habitat_sections(article.sections))
    randoms: list[str] = []
    for _, body in article.sections:
        randoms.extend(split_sentences(body))
    kw = filter_keyword_sentences(randoms, keyword_list)
    has_habitat = any(is_habitat_title(t) for t, _ in article.sections)
    return SentenceSets(
        habitat=habitat,
        keywords=kw,
        random=randoms,
        species_name=article.binomial,
        has_habitat=has_habitat,
    )
