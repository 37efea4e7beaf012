"""The mini-game state machine.

A session moves Lobby -> InEpisode -> EpisodeEnd and either loops back into
a new episode (per the player's end-of-episode choice) or reaches Closed.
The partner is always a model: it opens every episode, replies to each
accepted human turn, and never speaks after the final human turn, so a
complete episode is exactly six turns a side with the model first.

One session is one strictly sequential message stream. Many sessions may
run against the same runtime; the shared pieces (episode counter, rng,
pool counters, leaderboard, episode sink) are serialized behind a lock,
while model scoring happens outside it.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np

from .catalog import Catalog
from .core import (
    TURNS_PER_EPISODE,
    Character,
    Episode,
    GameChoice,
    Location,
    Speaker,
    Utterance,
    context_for_turn,
    scored_quality,
    serialize_context,
)
from .dm import DungeonMaster, Leaderboard
from .pool import ModelPool
from .safety import EMPTY_BLOCKLIST, Blocklist
from .scoring import CandidateBank, rank_candidates


class ProtocolError(Exception):
    """The client sent something the current session state cannot accept."""


class Phase(str, Enum):
    LOBBY = "lobby"
    IN_EPISODE = "in_episode"
    EPISODE_END = "episode_end"
    CLOSED = "closed"


@dataclass
class GameSession:
    player_id: str
    phase: Phase = Phase.LOBBY
    awaiting: Speaker | None = None
    episode_id: str | None = None
    variant_id: str | None = None
    location: Location | None = None
    human_character: Character | None = None
    model_character: Character | None = None
    turns: list[Utterance] = field(default_factory=list)
    used_candidate_ids: set[str] = field(default_factory=set)
    safety_rejections: int = 0
    # continuation state set by end_choice, consumed by the next episode
    retained_character: Character | None = None
    retained_location: Location | None = None
    prior_partner_id: str | None = None
    prior_location_id: str | None = None

    @property
    def turn_index(self) -> int:
        """Accepted turns so far; also the index of the next turn."""
        return len(self.turns)


@dataclass(frozen=True)
class EpisodeStart:
    episode_id: str
    variant_id: str
    location: Location
    human_character: Character
    model_character: Character
    model_turn: Utterance
    turn_index: int


@dataclass(frozen=True)
class TurnOutcome:
    """What came back for one submitted human turn.

    accepted=False means the blocklist rejected the text: nothing was
    stored and turn_index did not move. On the final turn of an episode
    model_turn is None and the quality/badge fields are filled in.
    """

    accepted: bool
    turn_index: int
    stars: int | None = None
    rank: int | None = None
    model_turn: Utterance | None = None
    episode_over: bool = False
    quality: int | None = None
    badges: int | None = None


class GameRuntime:
    def __init__(
        self,
        catalog: Catalog,
        pool: ModelPool,
        dm: DungeonMaster,
        bank: CandidateBank,
        blocklist: Blocklist = EMPTY_BLOCKLIST,
        round_id: int = 1,
        seed: int = 0,
        on_episode: Callable[[Episode], None] | None = None,
        max_history: int | None = None,
        first_episode_number: int = 0,
    ):
        if not catalog.vetted:
            raise ValueError("catalog must be vetted before serving")
        if not bank.vetted:
            raise ValueError("reply bank must be vetted before serving")
        # six model turns per episode, each excluding the ones before it
        if len(bank.candidate_ids) <= TURNS_PER_EPISODE // 2:
            raise ValueError("reply bank too small to serve a full episode")
        self.catalog = catalog
        self.pool = pool
        self.dm = dm
        self.bank = bank
        self.blocklist = blocklist
        self.round_id = round_id
        self.leaderboard = Leaderboard()
        self.episodes: list[Episode] = []
        self.safety_rejections = 0
        self.max_history = max_history
        self._on_episode = on_episode
        self._rng = np.random.default_rng(seed)
        self._episode_counter = first_episode_number
        self._lock = threading.Lock()

    # -- session lifecycle --------------------------------------------------

    def open_session(self, player_id: str) -> GameSession:
        return GameSession(player_id=player_id)

    def start_episode(self, session: GameSession) -> EpisodeStart:
        if session.phase is not Phase.LOBBY:
            raise ProtocolError(f"cannot start an episode from {session.phase.value}")
        return self._begin_episode(session)

    def submit_human_turn(self, session: GameSession, text: str) -> TurnOutcome:
        if session.phase is not Phase.IN_EPISODE or session.awaiting is not Speaker.HUMAN:
            raise ProtocolError("not awaiting a human turn")
        trimmed = text.strip()
        if not trimmed:
            raise ProtocolError("turn text is empty")
        if self.blocklist.blocks(trimmed):
            session.safety_rejections += 1
            with self._lock:
                self.safety_rejections += 1
            return TurnOutcome(accepted=False, turn_index=session.turn_index)

        context = context_for_turn(
            session.turns,
            session.turn_index,
            Speaker.HUMAN,
            session.location,
            session.human_character,
            session.model_character,
            max_history=self.max_history,
        )
        stars, rank = self.dm.score_turn(context, trimmed)
        session.turns.append(
            Utterance(speaker=Speaker.HUMAN, text=trimmed, ts=session.turn_index, stars=stars)
        )

        if session.turn_index == TURNS_PER_EPISODE:
            quality = scored_quality(session.turns)
            assert quality is not None
            session.phase = Phase.EPISODE_END
            session.awaiting = None
            with self._lock:
                self.leaderboard.update(session.player_id, quality)
            return TurnOutcome(
                accepted=True,
                turn_index=session.turn_index,
                stars=stars,
                rank=rank,
                episode_over=True,
                quality=quality,
                badges=self.dm.badges(quality),
            )

        model_turn = self._model_turn(session)
        return TurnOutcome(
            accepted=True,
            turn_index=session.turn_index,
            stars=stars,
            rank=rank,
            model_turn=model_turn,
        )

    def end_choice(self, session: GameSession, choice: GameChoice | str) -> EpisodeStart | None:
        if session.phase is not Phase.EPISODE_END:
            raise ProtocolError("no episode end to choose from")
        if not isinstance(choice, GameChoice):
            try:
                choice = GameChoice(choice)
            except ValueError:
                raise ProtocolError(f"invalid choice {choice!r}") from None

        variant_id = session.variant_id
        self._store_episode(session, complete=True, end_choice=choice)
        self.pool.record_outcome(variant_id, choice.continues)

        if choice is GameChoice.END_GAME:
            self._reset_episode_fields(session)
            session.phase = Phase.CLOSED
            return None
        if choice is GameChoice.WAIT_NEW_PARTNER:
            session.retained_character = session.human_character
            session.retained_location = session.location
            session.prior_partner_id = session.model_character.id
        elif choice is GameChoice.MOVE_LOCATION:
            session.retained_character = session.human_character
            session.retained_location = None
            session.prior_partner_id = session.model_character.id
            session.prior_location_id = session.location.id
        else:  # NEW_PAIR: nothing carries over
            session.retained_character = None
            session.retained_location = None
            session.prior_partner_id = None
            session.prior_location_id = None
        self._reset_episode_fields(session)
        session.phase = Phase.LOBBY
        return self._begin_episode(session)

    def disconnect(self, session: GameSession) -> None:
        """Store whatever the session was holding and close it.

        Mid-episode: the partial episode is stored complete=False. At the
        end screen: the finished episode is stored without an end_choice.
        Both count as a non-continue for the serving variant.
        """
        if session.phase is Phase.IN_EPISODE:
            variant_id = session.variant_id
            self._store_episode(session, complete=False, end_choice=None)
            self.pool.record_outcome(variant_id, False)
        elif session.phase is Phase.EPISODE_END:
            variant_id = session.variant_id
            self._store_episode(session, complete=True, end_choice=None)
            self.pool.record_outcome(variant_id, False)
        self._reset_episode_fields(session)
        session.phase = Phase.CLOSED
        session.awaiting = None

    # -- internals ----------------------------------------------------------

    def _begin_episode(self, session: GameSession) -> EpisodeStart:
        with self._lock:
            variant = self.pool.assign(self._rng)
            human, partner = self._sample_characters(session)
            location = self._sample_location(session)
            episode_id = f"r{self.round_id:02d}e{self._episode_counter:06d}"
            self._episode_counter += 1
        session.episode_id = episode_id
        session.variant_id = variant.variant_id
        session.location = location
        session.human_character = human
        session.model_character = partner
        session.turns = []
        session.used_candidate_ids = set()
        session.retained_character = None
        session.retained_location = None
        session.prior_partner_id = None
        session.prior_location_id = None
        session.phase = Phase.IN_EPISODE
        session.awaiting = Speaker.HUMAN
        opening = self._model_turn(session)
        return EpisodeStart(
            episode_id=episode_id,
            variant_id=variant.variant_id,
            location=location,
            human_character=human,
            model_character=partner,
            model_turn=opening,
            turn_index=session.turn_index,
        )

    def _sample_characters(self, session: GameSession) -> tuple[Character, Character]:
        chars = self.catalog.characters
        if session.retained_character is not None:
            human = session.retained_character
            fresh = [
                c for c in chars if c.id != human.id and c.id != session.prior_partner_id
            ]
            if not fresh:  # two-character catalog: the old partner is the only option
                fresh = [c for c in chars if c.id != human.id]
            partner = fresh[int(self._rng.integers(len(fresh)))]
            return human, partner
        pick = self._rng.choice(len(chars), size=2, replace=False)
        return chars[int(pick[0])], chars[int(pick[1])]

    def _sample_location(self, session: GameSession) -> Location:
        if session.retained_location is not None:
            return session.retained_location
        options = [l for l in self.catalog.locations if l.id != session.prior_location_id]
        if not options:
            options = list(self.catalog.locations)
        return options[int(self._rng.integers(len(options)))]

    def _model_turn(self, session: GameSession) -> Utterance:
        variant = self.pool.variant(session.variant_id)
        context = context_for_turn(
            session.turns,
            session.turn_index,
            Speaker.MODEL,
            session.location,
            session.human_character,
            session.model_character,
            max_history=self.max_history,
        )
        tokens = serialize_context(context, variant.model.max_context_tokens)
        ranked = rank_candidates(
            variant.model,
            tokens,
            self.bank,
            control=variant.control,
            exclude=session.used_candidate_ids,
        )
        top = ranked[0]
        utterance = Utterance(
            speaker=Speaker.MODEL,
            text=top.text,
            ts=session.turn_index,
            candidate_id=top.candidate_id,
        )
        session.turns.append(utterance)
        session.used_candidate_ids.add(top.candidate_id)
        return utterance

    def _store_episode(
        self, session: GameSession, complete: bool, end_choice: GameChoice | None
    ) -> None:
        episode = Episode(
            episode_id=session.episode_id,
            round_id=self.round_id,
            variant_id=session.variant_id,
            location=session.location,
            human_character=session.human_character,
            model_character=session.model_character,
            player_id=session.player_id,
            turns=tuple(session.turns),
            complete=complete,
            end_choice=end_choice,
            quality=scored_quality(session.turns),
        )
        with self._lock:
            self.episodes.append(episode)
        if self._on_episode is not None:
            self._on_episode(episode)

    def _reset_episode_fields(self, session: GameSession) -> None:
        session.episode_id = None
        session.variant_id = None
        session.location = None
        session.human_character = None
        session.model_character = None
        session.turns = []
        session.used_candidate_ids = set()
        session.awaiting = None
