"""Sim players speaking the gameplay protocol instead of the engine API.

The loopback client rebuilds its view of the episode purely from server
messages, exactly as the browser client must, which proves the protocol
carries everything needed to play.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from types import SimpleNamespace
from typing import Callable

import numpy as np

from ..core import ContextBundle, Speaker, Utterance
from ..engine import GameRuntime
from ..simulate import SimPlayer, SimPlayerPolicy, keyword_match_quality
from .protocol import GameplayHandler


@dataclass
class _ClientView:
    """What one connected player knows, reconstructed from messages."""

    location_description: str = ""
    self_name: str = ""
    self_persona: str = ""
    partner_name: str = ""
    partner_persona: str = ""
    history: list[tuple[str, str]] = field(default_factory=list)
    turns: list[Utterance] = field(default_factory=list)
    at_end_screen: bool = False
    game_over: bool = False
    pending_text: str | None = None

    def context(self) -> ContextBundle:
        return ContextBundle(
            location_description=self.location_description,
            self_persona=self.self_persona,
            partner_name=self.partner_name,
            dialogue_history=tuple(self.history),
        )

    def episode_like(self):
        return SimpleNamespace(
            turns=tuple(self.turns),
            model_character=SimpleNamespace(persona=self.partner_persona),
        )

    def apply(self, msg: dict) -> None:
        tag = msg["tag"]
        if tag == "assigned":
            self.location_description = msg["location"]["description"]
            self.self_name = msg["personas"]["human"]["name"]
            self.self_persona = msg["personas"]["human"]["persona"]
            self.partner_name = msg["partner_name"]
            self.partner_persona = msg["personas"]["partner"]["persona"]
            self.history = []
            self.turns = []
            self.at_end_screen = False
        elif tag == "model_turn":
            self.history.append((self.partner_name, msg["text"]))
            self.turns.append(
                Utterance(speaker=Speaker.MODEL, text=msg["text"], ts=len(self.turns))
            )
        elif tag == "stars":
            # our last submission was accepted
            if self.pending_text is not None:
                self.history.append((self.self_name, self.pending_text))
                self.turns.append(
                    Utterance(
                        speaker=Speaker.HUMAN,
                        text=self.pending_text,
                        ts=len(self.turns),
                        stars=msg["value"],
                    )
                )
                self.pending_text = None
        elif tag == "safety_rejected":
            self.pending_text = None
        elif tag == "episode_end":
            self.at_end_screen = True
        elif tag == "leaderboard":
            self.game_over = True
        elif tag == "error":
            raise RuntimeError(f"server rejected a sim message: {msg['detail']}")


def run_protocol_sim_players(
    runtime: GameRuntime,
    num_episodes: int,
    policy: SimPlayerPolicy,
    seed: int = 0,
    oracle: Callable = keyword_match_quality,
    player_prefix: str = "wire",
) -> int:
    """Like run_sim_players but every move crosses the message protocol."""
    if num_episodes < 1:
        raise ValueError("num_episodes must be >= 1")
    start_count = len(runtime.episodes)
    target = start_count + num_episodes
    player_index = 0
    while len(runtime.episodes) < target:
        player = SimPlayer(
            policy, rng=np.random.default_rng([seed, policy.seed, player_index])
        )
        handler = GameplayHandler(runtime, player_id=f"{player_prefix}{player_index:05d}")
        player_index += 1
        view = _ClientView()
        for msg in handler.handle({"tag": "join"}):
            view.apply(msg)
        while len(runtime.episodes) < target and not view.game_over:
            if view.at_end_screen:
                choice = player.end_choice(view.episode_like(), oracle)
                outbound = {"tag": "choice", "option": choice.value}
            else:
                view.pending_text = player.turn_text(view.context())
                outbound = {"tag": "turn", "text": view.pending_text}
            for msg in handler.handle(outbound):
                view.apply(msg)
        handler.disconnect()
    return len(runtime.episodes) - start_count
