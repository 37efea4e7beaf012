"""Wire format for gameplay sessions plus the per-connection handler.

Messages are tagged JSON objects. One connection is one ordered stream;
malformed input comes back as an error message, never an exception, so a
client can always resync.
"""

from __future__ import annotations

import json
import uuid
from typing import Any

from ..core import GameChoice
from ..engine import EpisodeStart, GameRuntime, Phase, ProtocolError, TurnOutcome

CLIENT_TAGS = ("join", "turn", "choice")
SERVER_TAGS = (
    "assigned",
    "model_turn",
    "stars",
    "episode_end",
    "safety_rejected",
    "leaderboard",
    "error",
)

END_SCREEN_OPTIONS = [c.value for c in GameChoice]


class MessageError(ValueError):
    def __init__(self, code: str, detail: str):
        super().__init__(detail)
        self.code = code
        self.detail = detail


def parse_client_message(raw: Any) -> dict:
    """Normalize one inbound frame; raises MessageError on anything off."""
    if isinstance(raw, (str, bytes)):
        try:
            msg = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise MessageError("bad_json", f"unparseable frame: {exc}") from exc
    else:
        msg = raw
    if not isinstance(msg, dict):
        raise MessageError("bad_message", "frame must be a JSON object")
    tag = msg.get("tag")
    if tag not in CLIENT_TAGS:
        raise MessageError("unknown_tag", f"unknown tag {tag!r}")
    if tag == "turn" and not isinstance(msg.get("text"), str):
        raise MessageError("bad_message", "turn needs a text string")
    if tag == "choice" and not isinstance(msg.get("option"), str):
        raise MessageError("bad_message", "choice needs an option string")
    return msg


def assigned_message(start: EpisodeStart) -> dict:
    return {
        "tag": "assigned",
        "location": start.location.to_record(),
        "personas": {
            "human": start.human_character.to_record(),
            "partner": start.model_character.to_record(),
        },
        "partner_name": start.model_character.name,
    }


def model_turn_message(text: str) -> dict:
    return {"tag": "model_turn", "text": text}


def stars_message(value: int, rank: int) -> dict:
    return {"tag": "stars", "value": value, "rank": rank}


def episode_end_message(quality: int, badges: int) -> dict:
    return {
        "tag": "episode_end",
        "quality": quality,
        "badges": badges,
        "options": list(END_SCREEN_OPTIONS),
    }


def safety_rejected_message() -> dict:
    return {"tag": "safety_rejected"}


def leaderboard_message(rows: list[dict]) -> dict:
    return {"tag": "leaderboard", "top_n": rows}


def error_message(code: str, detail: str) -> dict:
    return {"tag": "error", "code": code, "detail": detail}


def leaderboard_rows(runtime: GameRuntime, top_n: int = 10) -> list[dict]:
    return [
        {"player_id": pid, "stars": stars, "position": pos}
        for pos, (pid, stars) in enumerate(runtime.leaderboard.standings(top_n), start=1)
    ]


class GameplayHandler:
    """Binds one connection to one engine session.

    handle() returns the ordered server replies for one inbound message;
    the transport just ships them. Player ids are minted per connection
    unless a stable one is supplied.
    """

    def __init__(self, runtime: GameRuntime, player_id: str | None = None):
        self.runtime = runtime
        self.player_id = player_id or f"guest-{uuid.uuid4().hex[:10]}"
        self.session = None

    def handle_raw(self, raw: Any) -> list[dict]:
        try:
            msg = parse_client_message(raw)
        except MessageError as exc:
            return [error_message(exc.code, exc.detail)]
        return self.handle(msg)

    def handle(self, msg: dict) -> list[dict]:
        try:
            if msg["tag"] == "join":
                return self._join()
            if self.session is None:
                return [error_message("protocol", "join before playing")]
            if msg["tag"] == "turn":
                return self._turn(msg["text"])
            return self._choice(msg["option"])
        except ProtocolError as exc:
            return [error_message("protocol", str(exc))]

    def _join(self) -> list[dict]:
        if self.session is not None:
            return [error_message("protocol", "already joined")]
        self.session = self.runtime.open_session(self.player_id)
        start = self.runtime.start_episode(self.session)
        return self._episode_opening(start)

    def _turn(self, text: str) -> list[dict]:
        out: TurnOutcome = self.runtime.submit_human_turn(self.session, text)
        if not out.accepted:
            return [safety_rejected_message()]
        replies = [stars_message(out.stars, out.rank)]
        if out.episode_over:
            replies.append(episode_end_message(out.quality, out.badges))
        else:
            replies.append(model_turn_message(out.model_turn.text))
        return replies

    def _choice(self, option: str) -> list[dict]:
        start = self.runtime.end_choice(self.session, option)
        if start is None:  # end_game: farewell is the final standings
            return [leaderboard_message(leaderboard_rows(self.runtime))]
        return self._episode_opening(start)

    def _episode_opening(self, start: EpisodeStart) -> list[dict]:
        return [assigned_message(start), model_turn_message(start.model_turn.text)]

    def disconnect(self) -> None:
        """Transport dropped; flush any in-flight episode as incomplete."""
        if self.session is not None and self.session.phase is not Phase.CLOSED:
            self.runtime.disconnect(self.session)
