"""Synthetic players that drive the game over the engine API.

A sim player either speaks in persona (a wild-style line built around its
character's keyword) or emits noise, controlled by quality_level. Its urge
to keep playing grows with how in-persona the model's replies were, judged
by a fixed keyword-match oracle so that measuring a trained model's
continue rate is never circular with the model itself.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Protocol, Sequence

import numpy as np

from .core import (
    CONTINUE_CHOICES,
    ContextBundle,
    GameChoice,
    Speaker,
    Utterance,
    context_for_turn,
)
from .engine import GameRuntime, Phase
from .text import tokenize
from .worldgen import NOISE_VOCAB, WILD_REPLY_TEMPLATES, keyword_of


@dataclass(frozen=True)
class SimPlayerPolicy:
    quality_level: float = 1.0
    base_continue_prob: float = 0.5
    engagement_slope: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.quality_level <= 1.0:
            raise ValueError("quality_level must be in [0, 1]")
        if not 0.0 <= self.base_continue_prob <= 1.0:
            raise ValueError("base_continue_prob must be in [0, 1]")
        if not np.isfinite(self.engagement_slope):
            raise ValueError("engagement_slope must be finite")


class _EpisodeLike(Protocol):
    turns: Sequence[Utterance]
    model_character: object


def keyword_match_quality(episode: _EpisodeLike) -> float:
    """Fraction of model turns that mention the model character's keyword.

    Works on anything carrying .turns and .model_character (a stored Episode
    or a live session at the end screen).
    """
    kw = keyword_of(episode.model_character.persona)
    model_turns = [t for t in episode.turns if t.speaker is Speaker.MODEL]
    if not model_turns:
        return 0.0
    return sum(1 for t in model_turns if kw in tokenize(t.text)) / len(model_turns)


class SimPlayer:
    """One synthetic player: a policy plus its own random stream."""

    def __init__(self, policy: SimPlayerPolicy, rng: np.random.Generator | None = None):
        self.policy = policy
        self.rng = rng if rng is not None else np.random.default_rng(policy.seed)

    def turn_text(self, context: ContextBundle) -> str:
        if self.rng.random() < self.policy.quality_level:
            kw = keyword_of(context.self_persona)
            template = WILD_REPLY_TEMPLATES[int(self.rng.integers(len(WILD_REPLY_TEMPLATES)))]
            return template.format(kw=kw)
        picks = self.rng.integers(len(NOISE_VOCAB), size=4)
        return " ".join(NOISE_VOCAB[int(i)] for i in picks)

    def end_choice(
        self,
        episode: _EpisodeLike,
        oracle: Callable[[_EpisodeLike], float] = keyword_match_quality,
    ) -> GameChoice:
        p = self.policy.base_continue_prob + self.policy.engagement_slope * oracle(episode)
        p = min(1.0, max(0.0, p))
        if self.rng.random() < p:
            return CONTINUE_CHOICES[int(self.rng.integers(len(CONTINUE_CHOICES)))]
        return GameChoice.END_GAME


def run_sim_players(
    runtime: GameRuntime,
    num_episodes: int,
    policy: SimPlayerPolicy,
    seed: int = 0,
    oracle: Callable[[_EpisodeLike], float] = keyword_match_quality,
    player_prefix: str = "sim",
) -> int:
    """Drive the runtime with sim players until num_episodes more are stored.

    Players join one at a time and play until they choose end_game; then the
    next player joins. The session left open when the target is reached is
    disconnected, which may flush one trailing incomplete episode. Returns
    the number of episodes stored by this call.
    """
    if num_episodes < 1:
        raise ValueError("num_episodes must be >= 1")
    start_count = len(runtime.episodes)
    target = start_count + num_episodes
    player_index = 0
    while len(runtime.episodes) < target:
        player = SimPlayer(policy, rng=np.random.default_rng([seed, policy.seed, player_index]))
        session = runtime.open_session(f"{player_prefix}{player_index:05d}")
        player_index += 1
        runtime.start_episode(session)
        while len(runtime.episodes) < target and session.phase is not Phase.CLOSED:
            if session.phase is Phase.IN_EPISODE:
                context = session_context(session)
                runtime.submit_human_turn(session, player.turn_text(context))
            else:  # EPISODE_END
                runtime.end_choice(session, player.end_choice(session, oracle))
        if session.phase is not Phase.CLOSED:
            runtime.disconnect(session)
    return len(runtime.episodes) - start_count


def session_context(session) -> ContextBundle:
    """The bundle a human player would be looking at mid-episode."""
    return context_for_turn(
        session.turns,
        session.turn_index,
        Speaker.HUMAN,
        session.location,
        session.human_character,
        session.model_character,
    )
