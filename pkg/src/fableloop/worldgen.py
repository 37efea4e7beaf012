"""Synthetic world construction for simulation and testing.

Each character owns one unique keyword; personas repeat it so an embedding
scorer can pick it out of a pooled context, and every scripted reply
mentions it. Two template families exist: "seed" (crowdsourced-corpus
style) and "wild" (deployed-game style) with partially disjoint filler
vocabulary, which is what makes seed-only training distribution-shifted
relative to live play.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .catalog import Catalog
from .core import (
    TURNS_PER_EPISODE,
    Character,
    Episode,
    Location,
    Speaker,
    Utterance,
    scored_quality,
)

KEYWORD_HEADS = (
    "bram", "crag", "dusk", "elm", "fern", "gale", "hazel", "iris",
    "juno", "kelp", "loam", "mire", "nock", "oris", "pell", "quill",
    "rime", "sorrel", "thorn", "umber", "vale", "wren", "yarrow", "zephyr",
)
KEYWORD_TAILS = ("berry", "root", "stone", "song", "fall", "mead", "wick", "fen", "moss", "vein")

FIRST_NAMES = (
    "Mara", "Tobin", "Serel", "Dag", "Ilsa", "Corin", "Petra", "Aldous",
    "Nyssa", "Brandt", "Ottile", "Gavric", "Hest", "Lyle", "Wenna", "Sorv",
    "Tamsin", "Ulric", "Vesna", "Piet", "Runa", "Edric", "Fenna", "Jorun",
)

LOCATION_ADJ = ("mossy", "sunken", "gilded", "windy", "quiet", "ashen", "briar", "salt")
LOCATION_NOUN = ("tavern", "orchard", "quay", "crypt", "meadow", "forge", "library", "mill")

PERSONA_TEMPLATES = (
    "keeper of {kw} . {kw} is my whole life .",
    "i trade in {kw} . nothing matters but {kw} .",
    "born to tend {kw} . i dream of {kw} nightly .",
    "the {kw} chose me . i serve the {kw} .",
)

SEED_REPLY_TEMPLATES = (
    "i adore my {kw} , truly i do",
    "the {kw} needs tending every morning",
    "have you ever beheld finer {kw} ?",
    "my {kw} is the pride of this land",
    "let me tell you of the old {kw} ways",
    "a humble life , but the {kw} sustains me",
)

WILD_REPLY_TEMPLATES = (
    "{kw} keeps me busy these days",
    "all my days are {kw} now",
    "folk come from far off for this {kw}",
    "hard season for {kw} but we manage",
    "you want stories ? i got {kw} stories",
    "nothing beats fresh {kw} , nothing",
)

NOISE_VOCAB = (
    "zzork", "vlurg", "qwup", "xanx", "grubble", "snerk", "plom", "yibber",
    "krunx", "fizzle", "woob", "glarp", "nixnax", "thwip", "zubzub", "crong",
    "mlep", "vrix", "quog", "blenk", "spliv", "drazz", "womp", "skree",
)


@dataclass(frozen=True)
class WorldSpec:
    num_characters: int = 24
    num_locations: int = 8
    seed: int = 0

    def __post_init__(self) -> None:
        if self.num_characters < 2:
            raise ValueError("need at least two characters")
        if self.num_characters > len(KEYWORD_HEADS) * len(KEYWORD_TAILS):
            raise ValueError("not enough keyword combinations")
        if self.num_locations < 1 or self.num_locations > len(LOCATION_ADJ) * len(LOCATION_NOUN):
            raise ValueError("bad num_locations")


ALL_KEYWORDS = frozenset(h + t for h in KEYWORD_HEADS for t in KEYWORD_TAILS)


def keyword_of(persona: str) -> str:
    """The unique keyword a worldgen persona is built around."""
    from .text import tokenize

    for tok in tokenize(persona):
        if tok in ALL_KEYWORDS:
            return tok
    raise ValueError(f"no keyword found in persona {persona!r}")


def build_world(spec: WorldSpec) -> Catalog:
    rng = np.random.default_rng(spec.seed)
    keyword_pool = [h + t for h in KEYWORD_HEADS for t in KEYWORD_TAILS]
    keywords = [keyword_pool[i] for i in rng.permutation(len(keyword_pool))[: spec.num_characters]]

    characters = []
    scripted: dict[str, dict[str, list[str]]] = {}
    for i, kw in enumerate(keywords):
        name = FIRST_NAMES[i % len(FIRST_NAMES)]
        if i >= len(FIRST_NAMES):
            name = f"{name} {i // len(FIRST_NAMES) + 1}"
        persona = PERSONA_TEMPLATES[int(rng.integers(len(PERSONA_TEMPLATES)))].format(kw=kw)
        cid = f"char{i:03d}"
        characters.append(Character(id=cid, name=name, persona=persona))
        scripted[cid] = {
            "seed": [t.format(kw=kw) for t in SEED_REPLY_TEMPLATES],
            "wild": [t.format(kw=kw) for t in WILD_REPLY_TEMPLATES],
        }

    loc_pool = [(a, n) for a in LOCATION_ADJ for n in LOCATION_NOUN]
    picks = rng.permutation(len(loc_pool))[: spec.num_locations]
    locations = []
    for j, p in enumerate(picks):
        adj, noun = loc_pool[p]
        locations.append(
            Location(id=f"loc{j:03d}", name=f"the {adj} {noun}", description=f"a {adj} {noun}")
        )

    return Catalog(
        locations=tuple(locations),
        characters=tuple(characters),
        scripted_replies=scripted,
        noise_vocab=NOISE_VOCAB,
    )


def scripted_reply(catalog: Catalog, character_id: str, style: str, rng: np.random.Generator) -> str:
    replies = catalog.replies_for(character_id, style)
    return replies[int(rng.integers(len(replies)))]


def noise_reply(catalog: Catalog, rng: np.random.Generator, length: int = 4) -> str:
    words = [
        catalog.noise_vocab[int(rng.integers(len(catalog.noise_vocab)))] for _ in range(length)
    ]
    return " ".join(words)


def seed_story_episodes(
    catalog: Catalog,
    num_episodes: int,
    seed: int,
    covered_character_ids: list[str] | None = None,
) -> list[Episode]:
    """Crowdsourced-style dialogues: both sides speak seed-style replies.

    covered_character_ids limits which characters appear (the human side and
    the partner side both), which is how a distribution-shifted seed corpus
    gets built: live play later draws from the whole roster.
    """
    rng = np.random.default_rng(seed)
    roster = list(catalog.characters)
    if covered_character_ids is not None:
        allowed = set(covered_character_ids)
        roster = [c for c in roster if c.id in allowed]
    if len(roster) < 2:
        raise ValueError("need at least two covered characters")
    episodes = []
    for e in range(num_episodes):
        pick = rng.choice(len(roster), size=2, replace=False)
        human_char, model_char = roster[pick[0]], roster[pick[1]]
        location = catalog.locations[int(rng.integers(len(catalog.locations)))]
        turns = []
        for t in range(TURNS_PER_EPISODE):
            speaker = Speaker.MODEL if t % 2 == 0 else Speaker.HUMAN
            char = model_char if speaker is Speaker.MODEL else human_char
            turns.append(
                Utterance(
                    speaker=speaker,
                    text=scripted_reply(catalog, char.id, "seed", rng),
                    ts=t,
                )
            )
        turns = tuple(turns)
        episodes.append(
            Episode(
                episode_id=f"seed{e:06d}",
                round_id=0,
                variant_id="seed_corpus",
                location=location,
                human_character=human_char,
                model_character=model_char,
                player_id=f"writer{int(rng.integers(200)):03d}",
                turns=turns,
                complete=True,
                end_choice=None,
                quality=scored_quality(turns),
            )
        )
    return episodes


def default_catalog() -> Catalog:
    return build_world(WorldSpec())
