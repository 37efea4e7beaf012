"""Tokenization, vocabulary/IDF construction, specificity, and corpus comparisons."""

from __future__ import annotations

import csv
import io
import math
from collections import Counter
from dataclasses import dataclass, field

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
SEP_TOKEN = "<sep>"
RESERVED_TOKENS = (PAD_TOKEN, UNK_TOKEN, SEP_TOKEN)

PAD_ID = 0
UNK_ID = 1
SEP_ID = 2


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, and split punctuation off as its own tokens.

    Any non-alphanumeric character counts as punctuation, so "Hello, traveler!"
    becomes ["hello", ",", "traveler", "!"].
    """
    tokens: list[str] = []
    for chunk in text.lower().split():
        word = ""
        for ch in chunk:
            if ch.isalnum():
                word += ch
            else:
                if word:
                    tokens.append(word)
                    word = ""
                tokens.append(ch)
        if word:
            tokens.append(word)
    return tokens


@dataclass
class Vocabulary:
    """Token ids plus per-token document frequencies over the build corpus.

    Ids are dense: 0=<pad>, 1=<unk>, 2=<sep>, then corpus tokens. Document
    frequency is the number of corpus documents containing the token at least
    once; idf(t) = ln(num_documents / df(t)). df >= 1 holds by construction
    for every non-reserved token.
    """

    token_to_id: dict[str, int]
    id_to_token: list[str]
    document_frequency: dict[str, int]
    num_documents: int
    _idf_min: float = field(default=0.0, repr=False)
    _idf_max: float = field(default=0.0, repr=False)

    def __post_init__(self) -> None:
        idfs = [self.idf(t) for t in self.document_frequency]
        self._idf_min = min(idfs) if idfs else 0.0
        self._idf_max = max(idfs) if idfs else 0.0

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def id_of(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def ids(self, tokens: list[str]) -> list[int]:
        get = self.token_to_id.get
        return [get(t, UNK_ID) for t in tokens]

    def idf(self, token: str) -> float:
        df = self.document_frequency.get(token)
        if df is None:
            return 0.0
        return math.log(self.num_documents / df)

    def nidf(self, token: str) -> float:
        """Min-max normalized idf in [0, 1]; tokens unseen at build time get 1.0."""
        if token not in self.document_frequency:
            return 1.0
        if self._idf_max == self._idf_min:
            return 0.0
        return (self.idf(token) - self._idf_min) / (self._idf_max - self._idf_min)

    def specificity(self, text: str) -> float:
        """Mean nidf over the text's tokens; 0.0 for empty text."""
        tokens = tokenize(text)
        if not tokens:
            return 0.0
        return sum(self.nidf(t) for t in tokens) / len(tokens)


def build_vocab(corpus: list[str], min_freq: int = 1) -> Vocabulary:
    """Build a vocabulary over tokenized documents.

    Tokens whose total corpus frequency is below min_freq are left out of the
    id map (they resolve to <unk>) and carry no document frequency, so they
    read as maximally specific under nidf.
    """
    if not corpus:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    totals: Counter[str] = Counter()
    doc_freq: Counter[str] = Counter()
    for doc in corpus:
        tokens = tokenize(doc)
        totals.update(tokens)
        doc_freq.update(set(tokens))
    kept = sorted(
        (t for t, c in totals.items() if c >= min_freq),
        key=lambda t: (-totals[t], t),
    )
    id_to_token = list(RESERVED_TOKENS) + kept
    token_to_id = {t: i for i, t in enumerate(id_to_token)}
    return Vocabulary(
        token_to_id=token_to_id,
        id_to_token=id_to_token,
        document_frequency={t: doc_freq[t] for t in kept},
        num_documents=len(corpus),
    )


@dataclass
class OverexpressionReport:
    """Relative word frequencies of corpus A against corpus B."""

    rows: list[tuple[str, float, int, int]]  # (word, ratio, count_a, count_b)
    direction: str  # "over" | "under"

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["word", "ratio", "count_a", "count_b"])
        for word, ratio, count_a, count_b in self.rows:
            writer.writerow([word, f"{ratio:.6g}", count_a, count_b])
        return buf.getvalue()


def expression_ratios(
    corpus_a: list[str],
    corpus_b: list[str],
    min_count: int = 20,
    top_k: int = 70,
    direction: str = "over",
) -> OverexpressionReport:
    """Rank words by how much more (or less) often corpus A uses them than B.

    ratio(w) = (count_a(w) / total_a) / (count_b(w) / total_b), computed only
    for words with at least min_count occurrences in each corpus. "over"
    returns the top_k largest ratios, "under" the top_k smallest.
    """
    if not corpus_a or not corpus_b:
        raise ValueError("both corpora must be non-empty")
    if direction not in ("over", "under"):
        raise ValueError(f"unknown direction {direction!r}")
    counts_a: Counter[str] = Counter()
    counts_b: Counter[str] = Counter()
    for doc in corpus_a:
        counts_a.update(tokenize(doc))
    for doc in corpus_b:
        counts_b.update(tokenize(doc))
    total_a = sum(counts_a.values())
    total_b = sum(counts_b.values())
    rows = []
    for word, ca in counts_a.items():
        cb = counts_b.get(word, 0)
        if ca < min_count or cb < min_count:
            continue
        ratio = (ca / total_a) / (cb / total_b)
        rows.append((word, ratio, ca, cb))
    reverse = direction == "over"
    rows.sort(key=lambda r: (-r[1], r[0]) if reverse else (r[1], r[0]))
    return OverexpressionReport(rows=rows[:top_k], direction=direction)
