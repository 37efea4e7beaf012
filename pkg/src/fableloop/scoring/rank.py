"""Candidate ranking with the optional specificity rescale."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Collection

import math

from .bank import CandidateBank


@dataclass(frozen=True)
class DecodingControl:
    """final_score = raw score + alpha * specificity(candidate); alpha 0 = off."""

    alpha: float = 0.0

    def __post_init__(self) -> None:
        if not math.isfinite(self.alpha):
            raise ValueError("alpha must be finite")


@dataclass(frozen=True)
class ScoredCandidate:
    candidate_id: str
    text: str
    score: float
    final_score: float


def rank_candidates(
    model,
    context_tokens: list[str],
    bank: CandidateBank,
    control: DecodingControl | None = None,
    exclude: Collection[str] = (),
) -> list[ScoredCandidate]:
    """Score the bank against the context, highest final score first.

    Ties break by candidate_id ascending. Candidates whose id is in exclude
    are omitted (the engine passes the episode's already-used candidates).
    """
    if not bank.vetted:
        raise ValueError("bank must be vetted before ranking")
    excluded = set(exclude)
    indices = [i for i, cid in enumerate(bank.candidate_ids) if cid not in excluded]
    if not indices:
        raise ValueError("no candidates")
    state = model.encode_context(context_tokens)
    raw = model.scores_for_bank(state, bank, indices)
    alpha = control.alpha if control is not None else 0.0
    scored = []
    for pos, i in enumerate(indices):
        final = float(raw[pos])
        if alpha != 0.0:
            final += alpha * model.vocab.specificity(bank.texts[i])
        scored.append(
            ScoredCandidate(
                candidate_id=bank.candidate_ids[i],
                text=bank.texts[i],
                score=float(raw[pos]),
                final_score=final,
            )
        )
    scored.sort(key=lambda c: (-c.final_score, c.candidate_id))
    return scored
