"""Wikitext handling: species infobox detection, markup stripping, sections.

Implements only the stripping subset the pipeline needs, not a general
wikitext renderer. Unbalanced markup is closed at end of text, best-effort.
"""

from __future__ import annotations

import html
import os
import re
import xml.etree.ElementTree as etree
from dataclasses import dataclass

from ..errors import MalformedTemplate, ValidationError

# Section titles dropped outright (case-insensitive exact match).
DROPPED_SECTIONS = {
    "see also",
    "gallery",
    "bibliography",
    "references",
    "external links",
    "further reading",
    "notes",
    "cited texts",
}

# A section is habitat-like when its title contains one of these words.
HABITAT_TITLE_WORDS = ("habitat", "distribution", "cultivation", "ecology", "range")

_SPECIESBOX_RE = re.compile(r"\{\{\s*[Ss]peciesbox\b")
_HEADING_RE = re.compile(r"^\s*(={2,6})\s*(.+?)\s*\1\s*$")


@dataclass
class WikiArticle:
    """A species page reduced to its binomial name and ordered sections."""

    binomial: str
    sections: list[tuple[str, str]]

    def __post_init__(self):
        parts = self.binomial.split()
        if len(parts) != 2 or not parts[0][:1].isupper():
            raise ValidationError(f"binomial must be 'Genus species', got {self.binomial!r}")


def _balanced_span(text: str, start: int, open_tok: str, close_tok: str) -> int:
    """End index (exclusive) of the balanced region opening at ``start``.

    Falls back to end of text when the markup never closes.
    """
    depth = 0
    i = start
    n = len(text)
    lo, lc = len(open_tok), len(close_tok)
    while i < n:
        if text.startswith(open_tok, i):
            depth += 1
            i += lo
        elif text.startswith(close_tok, i):
            depth -= 1
            i += lc
            if depth == 0:
                return i
        else:
            i += 1
    return n


def _split_template_params(body: str) -> dict[str, str]:
    """Split a template body on top-level pipes into a key -> value map."""
    params: dict[str, str] = {}
    depth_brace = depth_brack = 0
    current: list[str] = []
    parts: list[str] = []
    i = 0
    while i < len(body):
        two = body[i : i + 2]
        if two == "{{":
            depth_brace += 1
            current.append(two)
            i += 2
        elif two == "}}":
            depth_brace -= 1
            current.append(two)
            i += 2
        elif two == "[[":
            depth_brack += 1
            current.append(two)
            i += 2
        elif two == "]]":
            depth_brack -= 1
            current.append(two)
            i += 2
        elif body[i] == "|" and depth_brace == 0 and depth_brack == 0:
            parts.append("".join(current))
            current = []
            i += 1
        else:
            current.append(body[i])
            i += 1
    parts.append("".join(current))
    for part in parts[1:]:  # parts[0] is the template name
        if "=" not in part:
            continue
        key, value = part.split("=", 1)
        params[key.strip().lower()] = value.strip()
    return params


def parse_speciesbox(page_wikitext: str):
    """Detect a species infobox and build the binomial name from it.

    Returns ``(binomial, body_wikitext)`` or None for pages without the
    template. Raises :class:`MalformedTemplate` when the template is present
    but genus/species are unusable.
    """
    match = _SPECIESBOX_RE.search(page_wikitext)
    if match is None:
        return None
    end = _balanced_span(page_wikitext, match.start(), "{{", "}}")
    inner = page_wikitext[match.start() + 2 : end - 2]
    params = _split_template_params(inner)
    genus = params.get("genus", "")
    species = params.get("species", "")
    if not genus or not species:
        raise MalformedTemplate("Speciesbox lacks usable genus/species parameters")
    if len(genus.split()) != 1 or len(species.split()) != 1:
        raise MalformedTemplate(f"genus/species must be single tokens: {genus!r}, {species!r}")
    binomial = genus[0].upper() + genus[1:] + " " + species.lower()
    return binomial, page_wikitext


def _remove_balanced(text: str, open_tok: str, close_tok: str, opener_re: re.Pattern) -> str:
    """Delete every balanced region whose opener matches ``opener_re``."""
    out = []
    pos = 0
    while True:
        match = opener_re.search(text, pos)
        if match is None:
            out.append(text[pos:])
            break
        out.append(text[pos : match.start()])
        pos = _balanced_span(text, match.start(), open_tok, close_tok)
    return "".join(out)


_COMMENT_RE = re.compile(r"<!--.*?(?:-->|\Z)", re.DOTALL)
_REF_PAIR_RE = re.compile(r"<ref\b[^>/]*>.*?(?:</ref\s*>|\Z)", re.DOTALL | re.IGNORECASE)
_REF_SELF_RE = re.compile(r"<ref\b[^>]*/\s*>", re.IGNORECASE)
_TAG_RE = re.compile(r"</?[a-zA-Z][^>]*>")
_FILE_LINK_RE = re.compile(r"\[\[\s*(?:File|Image|Category)\s*:", re.IGNORECASE)
_LINK_RE = re.compile(r"\[\[([^\[\]|]*)(?:\|([^\[\]]*))?\]\]")
_EXT_LINK_RE = re.compile(r"\[(?:https?|ftp)://[^\s\]]*\s*([^\]]*)\]")
_QUOTES_RE = re.compile(r"'{2,}")


def strip_markup(wikitext: str) -> str:
    """Reduce wikitext to plain text, preserving ``== Title ==`` heading lines.

    Drops comments, ref tags with their content, templates (nested), tables,
    file/image/category links, and HTML tags; rewrites wiki and external
    links to their labels; removes bold/italic quoting; collapses runs of
    blank lines.
    """
    text = _COMMENT_RE.sub("", wikitext)
    text = _REF_PAIR_RE.sub(" ", text)
    text = _REF_SELF_RE.sub(" ", text)
    text = _remove_balanced(text, "{|", "|}", re.compile(r"\{\|"))
    text = _remove_balanced(text, "{{", "}}", re.compile(r"\{\{"))
    text = _remove_balanced(text, "[[", "]]", _FILE_LINK_RE)
    # Innermost-first so nested links resolve.
    while True:
        new = _LINK_RE.sub(lambda m: m.group(2) if m.group(2) is not None else m.group(1), text)
        if new == text:
            break
        text = new
    text = _EXT_LINK_RE.sub(lambda m: m.group(1), text)
    text = _TAG_RE.sub(" ", text)
    text = _QUOTES_RE.sub("", text)
    text = html.unescape(text)
    text = re.sub(r"[ \t]+", " ", text)
    lines = [line.strip() for line in text.split("\n")]
    text = "\n".join(lines)
    text = re.sub(r"\n{3,}", "\n\n", text)
    return text.strip()


def split_sections(text: str) -> list[tuple[str, str]]:
    """Cut plain text at ``== Title ==`` lines and drop boilerplate sections.

    Leading untitled text becomes a ("", body) section; survivors keep
    their original order.
    """
    sections: list[tuple[str, str]] = []
    title = ""
    body: list[str] = []
    for line in text.split("\n"):
        match = _HEADING_RE.match(line)
        if match:
            sections.append((title, "\n".join(body).strip()))
            title = match.group(2).strip()
            body = []
        else:
            body.append(line)
    sections.append((title, "\n".join(body).strip()))
    if sections and sections[0] == ("", ""):
        sections = sections[1:]
    return [(t, b) for t, b in sections if t.strip().lower() not in DROPPED_SECTIONS]


def is_habitat_title(title: str) -> bool:
    low = title.lower()
    return any(word in low for word in HABITAT_TITLE_WORDS)


def select_habitat_sections(sections: list[tuple[str, str]]) -> str:
    """Concatenate bodies of sections whose title looks ecological."""
    return "\n".join(body for title, body in sections if is_habitat_title(title))


def _iter_xml_pages(path: str):
    """Stream (title, wikitext) from a MediaWiki XML export, bounded memory."""
    title = None
    for _, elem in etree.iterparse(path, events=("end",)):
        tag = elem.tag.rsplit("}", 1)[-1]
        if tag == "title":
            title = elem.text or ""
        elif tag == "page":
            text = ""
            for t in elem.iter():
                if t.tag.rsplit("}", 1)[-1] == "text" and t.text:
                    text = t.text
                    break
            if text and not text.lstrip().startswith("#REDIRECT"):
                yield title or "", text
            elem.clear()


def read_wiki_pages(path: str):
    """Yield (title, wikitext) from an XML export file or a directory of
    ``.txt``/``.wiki`` wikitext files (title = file stem, sorted order)."""
    if os.path.isdir(path):
        names = sorted(
            n for n in os.listdir(path) if n.endswith((".txt", ".wiki"))
        )
        for name in names:
            with open(os.path.join(path, name), "r", encoding="utf-8") as fh:
                yield os.path.splitext(name)[0].replace("_", " "), fh.read()
    else:
        yield from _iter_xml_pages(path)
