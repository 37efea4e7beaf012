"""Blocklist safety check applied to human turns and candidate vetting."""

from __future__ import annotations

from dataclasses import dataclass

from .text import tokenize


@dataclass
class Blocklist:
    """Normalized unigrams and phrases; matching runs on tokenized text.

    A phrase matches as a contiguous token subsequence. Casing and spacing
    differences don't defeat a match; an interposed punctuation token does,
    since punctuation tokenizes to its own token.
    """

    unigrams: frozenset[str]
    phrases: tuple[tuple[str, ...], ...]

    @classmethod
    def from_terms(cls, terms: list[str]) -> "Blocklist":
        unigrams = set()
        phrases = []
        for term in terms:
            tokens = tuple(tokenize(term))
            if not tokens:
                continue
            if len(tokens) == 1:
                unigrams.add(tokens[0])
            else:
                phrases.append(tokens)
        return cls(unigrams=frozenset(unigrams), phrases=tuple(phrases))

    @classmethod
    def load(cls, path: str) -> "Blocklist":
        """One term per line; blank lines and #-comments skipped."""
        terms = []
        with open(path, encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if line and not line.startswith("#"):
                    terms.append(line)
        return cls.from_terms(terms)

    def blocks(self, text: str) -> bool:
        tokens = tokenize(text)
        if any(t in self.unigrams for t in tokens):
            return True
        for phrase in self.phrases:
            n = len(phrase)
            for i in range(len(tokens) - n + 1):
                if tuple(tokens[i : i + n]) == phrase:
                    return True
        return False

    def allows(self, text: str) -> bool:
        return not self.blocks(text)


EMPTY_BLOCKLIST = Blocklist(unigrams=frozenset(), phrases=())
