"""Domain types shared by the game, the trainer, and the data pipeline.

Everything here is an immutable value object; the canonical JSON record
shape produced by ``Episode.to_record`` is what the episode log stores and
what every offline tool reads back.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Any, Iterable

from .text import SEP_TOKEN, tokenize

SCHEMA_VERSION = 1

# One mini-game is a fixed-length exchange: six turns per side.
TURNS_PER_SPEAKER = 6
TURNS_PER_EPISODE = 2 * TURNS_PER_SPEAKER

MIN_STARS = 1
MAX_STARS = 4


class Speaker(str, enum.Enum):
    HUMAN = "human"
    MODEL = "model"

    def other(self) -> "Speaker":
        return Speaker.MODEL if self is Speaker.HUMAN else Speaker.HUMAN


class GameChoice(str, enum.Enum):
    """What the player picked on the end-of-episode screen."""

    MOVE_LOCATION = "move_location"
    WAIT_NEW_PARTNER = "wait_new_partner"
    NEW_PAIR = "new_pair"
    END_GAME = "end_game"

    @property
    def continues(self) -> bool:
        return self is not GameChoice.END_GAME


CONTINUE_CHOICES = (
    GameChoice.MOVE_LOCATION,
    GameChoice.WAIT_NEW_PARTNER,
    GameChoice.NEW_PAIR,
)


class PairSource(str, enum.Enum):
    SEED_CORPUS = "seed_corpus"
    WILD = "wild"


@dataclass(frozen=True)
class Character:
    id: str
    name: str
    persona: str

    def __post_init__(self) -> None:
        if not self.persona.strip():
            raise ValueError(f"character {self.id!r} has an empty persona")

    def to_record(self) -> dict[str, Any]:
        return {"id": self.id, "name": self.name, "persona": self.persona}

    @classmethod
    def from_record(cls, rec: dict[str, Any]) -> "Character":
        return cls(id=rec["id"], name=rec["name"], persona=rec["persona"])


@dataclass(frozen=True)
class Location:
    id: str
    name: str
    description: str

    def __post_init__(self) -> None:
        if not self.description.strip():
            raise ValueError(f"location {self.id!r} has an empty description")

    def to_record(self) -> dict[str, Any]:
        return {"id": self.id, "name": self.name, "description": self.description}

    @classmethod
    def from_record(cls, rec: dict[str, Any]) -> "Location":
        return cls(id=rec["id"], name=rec["name"], description=rec["description"])


@dataclass(frozen=True)
class Utterance:
    """One turn of dialogue.

    ``stars`` is set on human turns once the dungeon master has scored them;
    ``candidate_id`` is set on model turns and names the bank candidate the
    model emitted. ``ts`` is the turn's position in the episode (a monotonic
    tick, not wall-clock time).
    """

    speaker: Speaker
    text: str
    ts: int
    stars: int | None = None
    candidate_id: str | None = None

    def __post_init__(self) -> None:
        if self.speaker is Speaker.MODEL and self.stars is not None:
            raise ValueError("model turns are not star-scored")
        if self.speaker is Speaker.HUMAN and self.candidate_id is not None:
            raise ValueError("human turns carry no candidate_id")
        if self.stars is not None and not MIN_STARS <= self.stars <= MAX_STARS:
            raise ValueError(f"stars {self.stars} outside {MIN_STARS}..{MAX_STARS}")

    def to_record(self) -> dict[str, Any]:
        return {
            "speaker": self.speaker.value,
            "text": self.text,
            "stars": self.stars,
            "candidate_id": self.candidate_id,
            "ts": self.ts,
        }

    @classmethod
    def from_record(cls, rec: dict[str, Any]) -> "Utterance":
        return cls(
            speaker=Speaker(rec["speaker"]),
            text=rec["text"],
            ts=rec["ts"],
            stars=rec.get("stars"),
            candidate_id=rec.get("candidate_id"),
        )


def scored_quality(turns: Iterable[Utterance]) -> int | None:
    """Sum of stars over scored human turns; None when no turn was scored."""
    stars = [t.stars for t in turns if t.speaker is Speaker.HUMAN and t.stars is not None]
    if not stars:
        return None
    return sum(stars)


@dataclass(frozen=True)
class Episode:
    """One stored mini-game.

    ``quality`` is the sum of per-turn stars over scored human turns, or None
    for corpora that never went through dungeon-master scoring (e.g. the
    bundled seed dialogues). A complete, scored episode always has quality in
    [6, 24] because every turn earns at least one star.
    """

    episode_id: str
    round_id: int
    variant_id: str
    location: Location
    human_character: Character
    model_character: Character
    player_id: str
    turns: tuple[Utterance, ...]
    complete: bool
    end_choice: GameChoice | None = None
    quality: int | None = None

    def __post_init__(self) -> None:
        if len(self.turns) > TURNS_PER_EPISODE:
            raise ValueError(f"episode {self.episode_id} has more than {TURNS_PER_EPISODE} turns")
        for a, b in zip(self.turns, self.turns[1:]):
            if a.speaker is b.speaker:
                raise ValueError(f"episode {self.episode_id} has non-alternating turns")
        human_turns = sum(1 for t in self.turns if t.speaker is Speaker.HUMAN)
        is_full = len(self.turns) == TURNS_PER_EPISODE and human_turns == TURNS_PER_SPEAKER
        if self.complete != is_full:
            raise ValueError(
                f"episode {self.episode_id}: complete={self.complete} but "
                f"{len(self.turns)} turns / {human_turns} human turns"
            )
        expected = scored_quality(self.turns)
        if self.quality != expected:
            raise ValueError(
                f"episode {self.episode_id}: quality {self.quality} != recomputed {expected}"
            )
        if self.complete and self.quality is not None:
            if not TURNS_PER_SPEAKER * MIN_STARS <= self.quality <= TURNS_PER_SPEAKER * MAX_STARS:
                raise ValueError(f"episode {self.episode_id}: quality {self.quality} out of range")

    @property
    def human_turns(self) -> list[Utterance]:
        return [t for t in self.turns if t.speaker is Speaker.HUMAN]

    @property
    def model_turns(self) -> list[Utterance]:
        return [t for t in self.turns if t.speaker is Speaker.MODEL]

    def character_for(self, speaker: Speaker) -> Character:
        return self.human_character if speaker is Speaker.HUMAN else self.model_character

    def to_record(self) -> dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "episode_id": self.episode_id,
            "round_id": self.round_id,
            "variant_id": self.variant_id,
            "player_id": self.player_id,
            "location": self.location.to_record(),
            "human_character": self.human_character.to_record(),
            "model_character": self.model_character.to_record(),
            "turns": [t.to_record() for t in self.turns],
            "complete": self.complete,
            "end_choice": self.end_choice.value if self.end_choice else None,
            "quality": self.quality,
        }

    @classmethod
    def from_record(cls, rec: dict[str, Any]) -> "Episode":
        version = rec.get("schema_version")
        if version != SCHEMA_VERSION:
            raise ValueError(f"unsupported episode schema_version {version!r}")
        return cls(
            episode_id=rec["episode_id"],
            round_id=rec["round_id"],
            variant_id=rec["variant_id"],
            player_id=rec["player_id"],
            location=Location.from_record(rec["location"]),
            human_character=Character.from_record(rec["human_character"]),
            model_character=Character.from_record(rec["model_character"]),
            turns=tuple(Utterance.from_record(t) for t in rec["turns"]),
            complete=rec["complete"],
            end_choice=GameChoice(rec["end_choice"]) if rec.get("end_choice") else None,
            quality=rec.get("quality"),
        )


@dataclass(frozen=True)
class ContextBundle:
    """Everything a scorer sees when judging the next utterance.

    ``dialogue_history`` is (speaker_name, text) pairs, oldest first, already
    capped to the configured max_history.
    """

    location_description: str
    self_persona: str
    partner_name: str
    dialogue_history: tuple[tuple[str, str], ...] = ()

    def to_record(self) -> dict[str, Any]:
        return {
            "location_description": self.location_description,
            "self_persona": self.self_persona,
            "partner_name": self.partner_name,
            "dialogue_history": [list(h) for h in self.dialogue_history],
        }

    @classmethod
    def from_record(cls, rec: dict[str, Any]) -> "ContextBundle":
        return cls(
            location_description=rec["location_description"],
            self_persona=rec["self_persona"],
            partner_name=rec["partner_name"],
            dialogue_history=tuple((h[0], h[1]) for h in rec["dialogue_history"]),
        )


def serialize_context(bundle: ContextBundle, max_context_tokens: int | None = None) -> list[str]:
    """Flatten a bundle into the canonical token sequence.

    Layout: location tokens, <sep>, persona tokens, <sep>, then per history
    turn the speaker name, ':', and the turn text. When the sequence exceeds
    max_context_tokens, the front is dropped so the most recent history
    survives.
    """
    tokens = tokenize(bundle.location_description)
    tokens.append(SEP_TOKEN)
    tokens.extend(tokenize(bundle.self_persona))
    tokens.append(SEP_TOKEN)
    for speaker_name, text in bundle.dialogue_history:
        tokens.extend(tokenize(speaker_name))
        tokens.append(":")
        tokens.extend(tokenize(text))
    if max_context_tokens is not None and len(tokens) > max_context_tokens:
        tokens = tokens[-max_context_tokens:]
    return tokens


def context_for_turn(
    episode_turns: Iterable[Utterance],
    turn_index: int,
    perspective: Speaker,
    location: Location,
    human_character: Character,
    model_character: Character,
    max_history: int | None = None,
) -> ContextBundle:
    """Build the bundle seen by ``perspective`` just before turn ``turn_index``."""
    self_char = human_character if perspective is Speaker.HUMAN else model_character
    partner = model_character if perspective is Speaker.HUMAN else human_character
    names = {Speaker.HUMAN: human_character.name, Speaker.MODEL: model_character.name}
    history = [(names[t.speaker], t.text) for t in list(episode_turns)[:turn_index]]
    if max_history is not None and len(history) > max_history:
        history = history[-max_history:]
    return ContextBundle(
        location_description=location.description,
        self_persona=self_char.persona,
        partner_name=partner.name,
        dialogue_history=tuple(history),
    )


@dataclass(frozen=True)
class TrainingPair:
    """A (context, gold next utterance) example extracted from an episode."""

    context: ContextBundle
    target: str
    source: PairSource
    round_id: int
    quality: int | None
    target_author: Speaker
    episode_id: str

    def __post_init__(self) -> None:
        if not self.target:
            raise ValueError("training pair target must be non-empty")

    def to_record(self) -> dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "context": self.context.to_record(),
            "target": self.target,
            "source": self.source.value,
            "round_id": self.round_id,
            "quality": self.quality,
            "target_author": self.target_author.value,
            "episode_id": self.episode_id,
        }

    @classmethod
    def from_record(cls, rec: dict[str, Any]) -> "TrainingPair":
        return cls(
            context=ContextBundle.from_record(rec["context"]),
            target=rec["target"],
            source=PairSource(rec["source"]),
            round_id=rec["round_id"],
            quality=rec.get("quality"),
            target_author=Speaker(rec["target_author"]),
            episode_id=rec["episode_id"],
        )
