"""Closed word lists and suffix rules the converters depend on.

Lists live in plain-text files (one lowercase lemma per line, ``#`` for
comments), one file per LexiconSet field, optionally remapped through a
``manifest.json`` in the lexicon directory. A packaged seed set is
shipped under ``uccatk/data/lexicons``; users can point at their own
directory to substitute exact list versions.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, fields
from functools import lru_cache
from importlib import resources
from pathlib import Path

log = logging.getLogger(__name__)

_SET_FIELDS = (
    "kinship_terms", "occupation_terms", "aspectual_verbs", "quantity_adjectives",
    "locative_proadverbs", "discourse_words", "part_of_day_nouns", "temporal_adverbs",
    "secondary_verbs", "quantity_species_nouns", "demonstrative_determiners",
    "quantifier_determiners",
)


@dataclass(frozen=True)
class LexiconSet:
    relational_suffixes: tuple[str, ...] = ()
    kinship_terms: frozenset[str] = frozenset()
    occupation_terms: frozenset[str] = frozenset()
    aspectual_verbs: frozenset[str] = frozenset()
    quantity_adjectives: frozenset[str] = frozenset()
    locative_proadverbs: frozenset[str] = frozenset()
    discourse_words: frozenset[str] = frozenset()
    part_of_day_nouns: frozenset[str] = frozenset()
    temporal_adverbs: frozenset[str] = frozenset()
    secondary_verbs: frozenset[str] = frozenset()
    quantity_species_nouns: frozenset[str] = frozenset()
    demonstrative_determiners: frozenset[str] = frozenset()
    quantifier_determiners: frozenset[str] = frozenset()


def field_names() -> tuple[str, ...]:
    return tuple(f.name for f in fields(LexiconSet))


def _read_list(path: Path) -> list[str]:
    entries = []
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            entries.append(line.lower())
    return entries


def load(directory: str | Path) -> LexiconSet:
    """Load a LexiconSet from a directory of list files.

    A missing list file yields an empty set and a logged warning; an
    unreadable file raises OSError.
    """
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    manifest: dict[str, str] = {}
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    values: dict[str, object] = {}
    for name in field_names():
        path = directory / manifest.get(name, f"{name}.txt")
        if not path.exists():
            log.warning("lexicon file %s missing; %s left empty", path, name)
            entries: list[str] = []
        else:
            entries = _read_list(path)
        if name == "relational_suffixes":
            values[name] = tuple(entries)
        else:
            values[name] = frozenset(entries)
    return LexiconSet(**values)


@lru_cache(maxsize=1)
def default_lexicons() -> LexiconSet:
    """The packaged seed lexicons."""
    return load(resources.files("uccatk").joinpath("data", "lexicons"))


def lexicon_hashes(directory: str | Path | None = None) -> dict[str, str]:
    """SHA-256 of each list file, for reproducibility manifests."""
    if directory is None:
        directory = Path(str(resources.files("uccatk").joinpath("data", "lexicons")))
    directory = Path(directory)
    hashes = {}
    for path in sorted(directory.glob("*.txt")):
        hashes[path.name] = hashlib.sha256(path.read_bytes()).hexdigest()
    return hashes


def _lemma(value: str | None) -> str:
    return (value or "").lower()


def has_relational_suffix(lemma: str, lex: LexiconSet) -> bool:
    lemma = _lemma(lemma)
    return any(lemma.endswith(suffix) and len(lemma) > len(suffix) for suffix in lex.relational_suffixes)


def is_relational_noun(lemma: str, ss: str | None, lex: LexiconSet) -> bool:
    """A person/group noun denoting a habitual-scene participant (teacher, friend)."""
    if _lemma(ss) not in ("n.person", "n.group"):
        return False
    lemma = _lemma(lemma)
    return lemma in lex.kinship_terms or lemma in lex.occupation_terms or has_relational_suffix(lemma, lex)


def relational_categories(lemma: str, lex: LexiconSet) -> tuple[str, str]:
    """Kinship terms evoke states (A|S); occupations and suffix matches, processes (A|P)."""
    if _lemma(lemma) in lex.kinship_terms:
        return ("A", "S")
    return ("A", "P")


def is_aspectual(lemma: str, lex: LexiconSet) -> bool:
    return _lemma(lemma) in lex.aspectual_verbs


def is_quantity_adj(lemma: str, lex: LexiconSet) -> bool:
    return _lemma(lemma) in lex.quantity_adjectives


def is_locative_proadverb(lemma: str, lex: LexiconSet) -> bool:
    return _lemma(lemma) in lex.locative_proadverbs


def is_part_of_day(lemma: str, lex: LexiconSet) -> bool:
    return _lemma(lemma) in lex.part_of_day_nouns


def is_temporal_word(lemma: str, lex: LexiconSet) -> bool:
    return _lemma(lemma) in lex.temporal_adverbs


def is_discourse_word(lemma: str, lex: LexiconSet) -> bool:
    return _lemma(lemma) in lex.discourse_words


def is_secondary_head(lemma: str, lex: LexiconSet) -> bool:
    return _lemma(lemma) in lex.secondary_verbs


def is_quantity_species_noun(lemma: str, lex: LexiconSet) -> bool:
    return _lemma(lemma) in lex.quantity_species_nouns
