"""The dungeon master: rank-based star scoring, badges, and the leaderboard.

The human's utterance is scored as one extra candidate against the whole
bank; its rank converts to 1..4 stars, stars sum to episode quality, and
quality thresholds award badges.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .core import ContextBundle, Episode, Speaker, serialize_context
from .scoring.bank import CandidateBank

REFERENCE_BANK_SIZE = 110_877


@dataclass(frozen=True)
class StarThresholds:
    """Rank cutoffs for 4/3/2 stars; ranks past two_star_rank earn 1.

    proportional_mode rescales the cutoffs by bank_size/reference_bank_size,
    because the absolute defaults assume a reference-scale bank and would
    otherwise hand 4 stars to every rank in a small bank.
    """

    four_star_rank: int = 100
    three_star_rank: int = 1000
    two_star_rank: int = 2000
    proportional_mode: bool = False
    reference_bank_size: int = REFERENCE_BANK_SIZE

    def __post_init__(self) -> None:
        if not 0 < self.four_star_rank < self.three_star_rank < self.two_star_rank:
            raise ValueError("star thresholds must be strictly increasing")
        if self.reference_bank_size < 1:
            raise ValueError("reference_bank_size must be positive")

    def effective(self, bank_size: int) -> tuple[int, int, int]:
        """Cutoffs in effect for a bank of the given size, strictly ordered."""
        if not self.proportional_mode:
            return (self.four_star_rank, self.three_star_rank, self.two_star_rank)
        ratio = bank_size / self.reference_bank_size
        four = max(1, round(self.four_star_rank * ratio))
        three = max(four + 1, round(self.three_star_rank * ratio))
        two = max(three + 1, round(self.two_star_rank * ratio))
        return (four, three, two)


@dataclass(frozen=True)
class BadgeRule:
    one_badge_points: int = 11
    two_badge_points: int = 16

    def __post_init__(self) -> None:
        if not 0 < self.one_badge_points < self.two_badge_points:
            raise ValueError("badge thresholds must be increasing")


def stars_for_rank(rank: int, thresholds: StarThresholds, bank_size: int) -> int:
    four, three, two = thresholds.effective(bank_size)
    if rank <= four:
        return 4
    if rank <= three:
        return 3
    if rank <= two:
        return 2
    return 1


def acting_score(
    model,
    context: ContextBundle,
    human_text: str,
    bank: CandidateBank,
    thresholds: StarThresholds,
) -> tuple[int, int]:
    """Stars and 1-based rank of the human utterance among the bank.

    The human response loses ties: rank = 1 + count(candidates scoring >=
    the human's score), so copying a bank candidate verbatim cannot land
    above it.
    """
    if not bank.vetted:
        raise ValueError("bank must be vetted")
    if len(bank) == 0:
        raise ValueError("bank is empty")
    if not human_text.strip():
        return 1, len(bank) + 1
    context_tokens = serialize_context(context, model.max_context_tokens)
    state = model.encode_context(context_tokens)
    human_score = float(model.scores_for_texts(state, [human_text])[0])
    bank_scores = model.scores_for_bank(state, bank)
    rank = 1 + int((bank_scores >= human_score).sum())
    return stars_for_rank(rank, thresholds, len(bank)), rank


def episode_quality(episode: Episode) -> int:
    """Sum of stars over scored human turns; 0 when nothing was scored."""
    return sum(
        t.stars for t in episode.turns if t.speaker is Speaker.HUMAN and t.stars is not None
    )


def award_badges(quality: int, rule: BadgeRule = BadgeRule()) -> int:
    if quality < 0:
        raise ValueError("quality must be >= 0")
    if quality >= rule.two_badge_points:
        return 2
    if quality >= rule.one_badge_points:
        return 1
    return 0


@dataclass
class Leaderboard:
    """Cumulative star totals per player; ties rank by earliest join."""

    totals: dict[str, int] = field(default_factory=dict)
    join_order: dict[str, int] = field(default_factory=dict)

    def update(self, player_id: str, stars_delta: int) -> None:
        if stars_delta < 0:
            raise ValueError("stars_delta must be >= 0")
        if player_id not in self.totals:
            self.join_order[player_id] = len(self.join_order)
            self.totals[player_id] = 0
        self.totals[player_id] += stars_delta

    def standings(self, top_n: int | None = None) -> list[tuple[str, int]]:
        ordered = sorted(
            self.totals.items(), key=lambda kv: (-kv[1], self.join_order[kv[0]])
        )
        return ordered[:top_n] if top_n is not None else ordered

    def total_for(self, player_id: str) -> int:
        return self.totals.get(player_id, 0)

    def position_of(self, player_id: str) -> int | None:
        """1-based position, None for players never seen."""
        for pos, (pid, _) in enumerate(self.standings(), start=1):
            if pid == player_id:
                return pos
        return None


class DungeonMaster:
    """Bundles the scorer, bank, and rules the engine consults per turn."""

    def __init__(
        self,
        model,
        bank: CandidateBank,
        thresholds: StarThresholds = StarThresholds(),
        badge_rule: BadgeRule = BadgeRule(),
    ):
        if not bank.vetted:
            raise ValueError("bank must be vetted")
        self.model = model
        self.bank = bank
        self.thresholds = thresholds
        self.badge_rule = badge_rule

    def score_turn(self, context: ContextBundle, human_text: str) -> tuple[int, int]:
        return acting_score(self.model, context, human_text, self.bank, self.thresholds)

    def badges(self, quality: int) -> int:
        return award_badges(quality, self.badge_rule)
