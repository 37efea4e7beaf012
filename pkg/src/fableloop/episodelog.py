"""Append-only JSON Lines episode log with crash-tolerant reads.

Every write is one fsync'd line, so after a crash the file holds complete
records plus at most one torn final line, which reads drop with a warning.
"""

from __future__ import annotations

import json
import os
import re
import threading
import warnings

from .core import Episode
from .dm import Leaderboard
from .pool import ModelPool


class EpisodeLog:
    """Serialized appender; safe to share across engine sessions."""

    def __init__(self, path: str):
        self.path = path
        self._f = open(path, "a", encoding="utf-8")
        self._lock = threading.Lock()

    def append(self, episode: Episode) -> None:
        line = json.dumps(episode.to_record(), ensure_ascii=False, separators=(",", ":"))
        with self._lock:
            self._f.write(line + "\n")
            self._f.flush()
            os.fsync(self._f.fileno())

    def close(self) -> None:
        with self._lock:
            if not self._f.closed:
                self._f.close()

    def __enter__(self) -> "EpisodeLog":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def read_episodes(path: str) -> list[Episode]:
    """Parse the log; a torn final line (mid-write crash) is dropped."""
    episodes = []
    with open(path, encoding="utf-8") as f:
        lines = [ln for ln in f.read().split("\n") if ln.strip()]
    for i, line in enumerate(lines):
        try:
            episodes.append(Episode.from_record(json.loads(line)))
        except (json.JSONDecodeError, KeyError):
            if i == len(lines) - 1:
                warnings.warn(f"{path}: dropping torn final line", stacklevel=2)
                break
            raise ValueError(f"{path}: corrupt record on line {i + 1}")
    return episodes


def rebuild_state(
    episodes: list[Episode],
    pool: ModelPool | None = None,
    leaderboard: Leaderboard | None = None,
    strict: bool = True,
) -> int:
    """Re-apply logged episodes to pool counters and the leaderboard.

    Mirrors what the engine did live: one served episode per record, a
    continue only for a continuing end_choice, stars credited for complete
    episodes. With strict=False, records for variants the pool no longer
    knows are skipped (an old log replayed into a newer deployment).
    """
    applied = 0
    for ep in episodes:
        if pool is not None:
            continued = ep.end_choice is not None and ep.end_choice.continues
            try:
                pool.replay(ep.variant_id, continued)
            except KeyError:
                if strict:
                    raise
                continue
        if leaderboard is not None and ep.complete and ep.quality is not None:
            leaderboard.update(ep.player_id, ep.quality)
        applied += 1
    return applied


_EPISODE_NUM = re.compile(r"e(\d+)$")


def next_episode_number(episodes: list[Episode]) -> int:
    """One past the highest engine-format episode number in the log."""
    best = -1
    for ep in episodes:
        m = _EPISODE_NUM.search(ep.episode_id)
        if m:
            best = max(best, int(m.group(1)))
    return best + 1
