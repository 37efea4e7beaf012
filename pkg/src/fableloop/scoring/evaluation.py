"""Hits@1/20 evaluation against seeded random distractors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import TrainingPair, serialize_context
from .bank import CandidateBank

NUM_DISTRACTORS = 19


@dataclass(frozen=True)
class EvalReport:
    hits_at_1_of_20: float
    num_examples: int
    seed: int

    def __post_init__(self) -> None:
        if self.num_examples < 1:
            raise ValueError("report needs at least one example")
        if not 0.0 <= self.hits_at_1_of_20 <= 1.0:
            raise ValueError("hit rate outside [0, 1]")


def evaluate_hits(
    model, eval_pairs: list[TrainingPair], bank: CandidateBank, seed: int
) -> EvalReport:
    """Mean of per-example hits: gold must outscore 19 sampled distractors.

    Distractors are distinct bank entries, never the gold text, drawn with
    one generator so the whole report is reproducible from the seed. A hit
    requires the gold strictly above every distractor; ties count as misses,
    so a constant scorer gets 0, not luck.
    """
    if len(bank) < NUM_DISTRACTORS + 1:
        raise ValueError(f"bank must hold at least {NUM_DISTRACTORS + 1} candidates")
    if not eval_pairs:
        raise ValueError("no eval pairs")
    rng = np.random.default_rng(seed)
    text_to_index = {t: i for i, t in enumerate(bank.texts)}
    hits = 0
    for pair in eval_pairs:
        gold_at = text_to_index.get(pair.target)
        allowed = np.arange(len(bank))
        if gold_at is not None:
            allowed = np.delete(allowed, gold_at)
        picked = rng.choice(len(allowed), size=NUM_DISTRACTORS, replace=False)
        distractors = allowed[picked]
        context_tokens = serialize_context(pair.context, model.max_context_tokens)
        state = model.encode_context(context_tokens)
        gold_score = float(model.scores_for_texts(state, [pair.target])[0])
        distractor_scores = model.scores_for_bank(state, bank, distractors)
        if gold_score > distractor_scores.max():
            hits += 1
    return EvalReport(
        hits_at_1_of_20=hits / len(eval_pairs),
        num_examples=len(eval_pairs),
        seed=seed,
    )
