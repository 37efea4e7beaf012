"""Candidate bank: the fixed utterance set a retrieval model picks from."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable

from ..text import tokenize


@dataclass(eq=False)
class CandidateBank:
    """Deduplicated candidate utterances with stable ids.

    Candidates are stored as token strings rather than vocab ids so one bank
    can be scored by models with different vocabularies (eval banks outlive
    any single training round). vetted means every candidate passed the
    safety check the bank was built with.
    """

    candidate_ids: list[str]
    texts: list[str]
    tokens: list[list[str]]
    vetted: bool = False

    def __post_init__(self) -> None:
        if len(set(self.candidate_ids)) != len(self.candidate_ids):
            raise ValueError("candidate ids must be unique")

    def __len__(self) -> int:
        return len(self.texts)

    @classmethod
    def build(
        cls,
        texts: Iterable[str],
        vet: Callable[[str], bool] | None = None,
    ) -> "CandidateBank":
        """Dedup exact strings (first occurrence wins) and assign dense ids.

        When a vet predicate is given, failing candidates are dropped and the
        bank is marked vetted.
        """
        seen: set[str] = set()
        kept: list[str] = []
        for text in texts:
            if not text or text in seen:
                continue
            seen.add(text)
            if vet is not None and not vet(text):
                continue
            kept.append(text)
        return cls(
            candidate_ids=[f"c{i:06d}" for i in range(len(kept))],
            texts=kept,
            tokens=[tokenize(t) for t in kept],
            vetted=vet is not None,
        )

    def index_of_text(self, text: str) -> int | None:
        # Linear scan is fine at desk scale; callers that care cache the map.
        try:
            return self.texts.index(text)
        except ValueError:
            return None
