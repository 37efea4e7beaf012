"""Game catalog: the locations, characters, and scripted reply banks.

The catalog is what the engine samples pairings from and what sim players
speak from. Everything in a vetted catalog has passed the blocklist.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

from .core import Character, Location
from .safety import Blocklist

REPLY_STYLES = ("seed", "wild")


@dataclass(frozen=True)
class Catalog:
    locations: tuple[Location, ...]
    characters: tuple[Character, ...]
    # character_id -> style -> scripted in-persona replies
    scripted_replies: dict[str, dict[str, list[str]]]
    noise_vocab: tuple[str, ...]
    vetted: bool = False

    def __post_init__(self) -> None:
        if not self.locations:
            raise ValueError("catalog needs at least one location")
        if len(self.characters) < 2:
            raise ValueError("catalog needs at least two characters (one pairing)")
        ids = [c.id for c in self.characters]
        if len(set(ids)) != len(ids):
            raise ValueError("character ids must be unique")
        for cid in ids:
            if cid not in self.scripted_replies:
                raise ValueError(f"character {cid} has no scripted replies")

    def character_by_id(self, cid: str) -> Character:
        for c in self.characters:
            if c.id == cid:
                return c
        raise KeyError(cid)

    def replies_for(self, character_id: str, style: str) -> list[str]:
        if style not in REPLY_STYLES:
            raise ValueError(f"unknown reply style {style!r}")
        return self.scripted_replies[character_id][style]

    def all_texts(self) -> list[str]:
        """Every text the catalog could put in front of a player."""
        texts = []
        for loc in self.locations:
            texts.append(loc.name)
            texts.append(loc.description)
        for ch in self.characters:
            texts.append(ch.name)
            texts.append(ch.persona)
        for styles in self.scripted_replies.values():
            for replies in styles.values():
                texts.extend(replies)
        return texts

    def vet(self, blocklist: Blocklist) -> "Catalog":
        """Return a vetted copy, or raise listing every blocked entry."""
        blocked = [t for t in self.all_texts() if blocklist.blocks(t)]
        if blocked:
            shown = "; ".join(blocked[:5])
            raise ValueError(f"{len(blocked)} catalog entries hit the blocklist: {shown}")
        return replace(self, vetted=True)

    def to_record(self) -> dict:
        return {
            "locations": [l.to_record() for l in self.locations],
            "characters": [c.to_record() for c in self.characters],
            "scripted_replies": self.scripted_replies,
            "noise_vocab": list(self.noise_vocab),
        }

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_record(), f, indent=1)

    @classmethod
    def from_record(cls, rec: dict) -> "Catalog":
        return cls(
            locations=tuple(Location.from_record(r) for r in rec["locations"]),
            characters=tuple(Character.from_record(r) for r in rec["characters"]),
            scripted_replies=rec["scripted_replies"],
            noise_vocab=tuple(rec["noise_vocab"]),
        )

    @classmethod
    def load(cls, path: str) -> "Catalog":
        with open(path, encoding="utf-8") as f:
            return cls.from_record(json.load(f))
