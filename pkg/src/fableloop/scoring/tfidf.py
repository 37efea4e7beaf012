"""TF-IDF retrieval baseline: cosine over idf-weighted bag vectors."""

from __future__ import annotations

import weakref
from collections import Counter

import numpy as np

from ..text import Vocabulary, build_vocab, tokenize
from .bank import CandidateBank


class TfIdfModel:
    """Untrained baseline scorer sharing the retrieval interface.

    score(context, candidate) is the cosine similarity between idf-weighted
    token-count vectors. A zero-norm side (all tokens unseen or idf 0) scores
    0 against everything.
    """

    def __init__(self, vocab: Vocabulary, max_context_tokens: int = 128):
        self.vocab = vocab
        self.max_context_tokens = max_context_tokens
        self._idf = np.array(
            [vocab.idf(t) for t in vocab.id_to_token], dtype=np.float64
        )
        self._bank_cache: "weakref.WeakKeyDictionary[CandidateBank, np.ndarray]" = (
            weakref.WeakKeyDictionary()
        )

    @classmethod
    def fit(cls, corpus: list[str], max_context_tokens: int = 128) -> "TfIdfModel":
        return cls(build_vocab(corpus), max_context_tokens=max_context_tokens)

    def get_params(self) -> dict:
        return {
            "max_context_tokens": self.max_context_tokens,
            "vocab_size": len(self.vocab),
        }

    def _vector(self, tokens: list[str]) -> np.ndarray:
        v = np.zeros(len(self.vocab), dtype=np.float64)
        for tok, count in Counter(tokens).items():
            tid = self.vocab.id_of(tok)
            v[tid] += count * self._idf[tid]
        return v

    def _unit(self, tokens: list[str]) -> np.ndarray:
        v = self._vector(tokens)
        norm = np.linalg.norm(v)
        return v / norm if norm > 0 else v

    def encode_context(self, context_tokens: list[str]) -> np.ndarray:
        return self._unit(context_tokens)

    def bank_matrix(self, bank: CandidateBank) -> np.ndarray:
        cached = self._bank_cache.get(bank)
        if cached is None:
            cached = np.zeros((len(bank), len(self.vocab)), dtype=np.float64)
            for i, toks in enumerate(bank.tokens):
                cached[i] = self._unit(toks)
            self._bank_cache[bank] = cached
        return cached

    def scores_for_bank(
        self, state: np.ndarray, bank: CandidateBank, indices=None
    ) -> np.ndarray:
        matrix = self.bank_matrix(bank)
        if indices is not None:
            matrix = matrix[indices]
        return matrix @ state

    def scores_for_texts(self, state: np.ndarray, texts: list[str]) -> np.ndarray:
        return np.array([self._unit(tokenize(t)) @ state for t in texts])

    def score(self, context_tokens: list[str], candidate_text: str) -> float:
        state = self.encode_context(context_tokens)
        return float(self.scores_for_texts(state, [candidate_text])[0])
