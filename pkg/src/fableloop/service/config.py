"""Flat INI configuration for the service process.

Every knob has a default here; the packaged example config states all of
them so an operator can copy it and edit.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from importlib import resources


@dataclass(frozen=True)
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8470
    episode_log: str = "episodes.jsonl"
    blocklist_path: str | None = None  # None = packaged default list
    round_id: int = 1
    seed: int = 0
    world_seed: int = 0
    num_characters: int = 24
    num_locations: int = 8
    max_history: int | None = None
    four_star_rank: int = 100
    three_star_rank: int = 1000
    two_star_rank: int = 2000
    proportional_stars: bool = True  # rescale cutoffs to the actual bank size
    first_badge_at: int = 11
    second_badge_at: int = 16
    # variant_id -> checkpoint path; empty means serve a tf-idf baseline
    variants: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.port < 1 or self.port > 65535:
            raise ValueError("port out of range")
        if self.round_id < 1:
            raise ValueError("round_id starts at 1")


def packaged_blocklist_path() -> str:
    return str(resources.files("fableloop").joinpath("data/blocklist.txt"))


def load_config(path: str) -> ServiceConfig:
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise FileNotFoundError(f"config file {path!r} not found")

    server = parser["server"] if parser.has_section("server") else {}
    game = parser["game"] if parser.has_section("game") else {}
    scoring = parser["scoring"] if parser.has_section("scoring") else {}
    paths = parser["paths"] if parser.has_section("paths") else {}
    variants = (
        dict(parser["variants"].items()) if parser.has_section("variants") else {}
    )

    defaults = ServiceConfig()

    def geti(section, key, fallback):
        raw = section.get(key)
        return fallback if raw is None else int(raw)

    max_history_raw = game.get("max_history", "")
    return ServiceConfig(
        host=server.get("host", defaults.host),
        port=geti(server, "port", defaults.port),
        episode_log=paths.get("episode_log", defaults.episode_log),
        blocklist_path=paths.get("blocklist") or None,
        round_id=geti(game, "round_id", defaults.round_id),
        seed=geti(game, "seed", defaults.seed),
        world_seed=geti(game, "world_seed", defaults.world_seed),
        num_characters=geti(game, "num_characters", defaults.num_characters),
        num_locations=geti(game, "num_locations", defaults.num_locations),
        max_history=int(max_history_raw) if max_history_raw else None,
        four_star_rank=geti(scoring, "four_star_rank", defaults.four_star_rank),
        three_star_rank=geti(scoring, "three_star_rank", defaults.three_star_rank),
        two_star_rank=geti(scoring, "two_star_rank", defaults.two_star_rank),
        proportional_stars=scoring.get("proportional_stars", "true").strip().lower()
        in ("1", "true", "yes", "on"),
        first_badge_at=geti(scoring, "first_badge_at", defaults.first_badge_at),
        second_badge_at=geti(scoring, "second_badge_at", defaults.second_badge_at),
        variants=variants,
    )
