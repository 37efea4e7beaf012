"""Batch transforms from logged episodes to training data and analyses.

Everything here is pure: lists in, lists out, no file IO. The CLI owns
reading the episode log and writing CSV/JSON artifacts.
"""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass
from typing import Iterable, Sequence

from .core import (
    Episode,
    PairSource,
    Speaker,
    TrainingPair,
    context_for_turn,
)
from .scoring import (
    CandidateBank,
    EvalReport,
    PolyLiteConfig,
    PolyLiteModel,
    evaluate_hits,
    train,
)
from .text import build_vocab, tokenize


def extract_pairs(
    episode: Episode, target_author: Speaker = Speaker.HUMAN
) -> list[TrainingPair]:
    """One (context, target) pair per turn spoken by target_author.

    The context is everything before the target turn, seen from the target
    speaker's perspective. Quality and round are copied from the episode;
    pairs from round 0 are tagged as seed-corpus data, everything later is
    wild.
    """
    source = PairSource.SEED_CORPUS if episode.round_id == 0 else PairSource.WILD
    pairs = []
    for i, turn in enumerate(episode.turns):
        if turn.speaker is not target_author:
            continue
        context = context_for_turn(
            episode.turns,
            i,
            target_author,
            episode.location,
            episode.human_character,
            episode.model_character,
        )
        pairs.append(
            TrainingPair(
                context=context,
                target=turn.text,
                source=source,
                round_id=episode.round_id,
                quality=episode.quality,
                target_author=target_author,
                episode_id=episode.episode_id,
            )
        )
    return pairs


@dataclass(frozen=True)
class QualityFilterConfig:
    C: int = 0
    enabled: bool = False

    def __post_init__(self) -> None:
        if self.C < 0:
            raise ValueError("C must be >= 0")


def filter_by_quality(
    pairs: Sequence[TrainingPair], cfg: QualityFilterConfig
) -> list[TrainingPair]:
    """Keep pairs whose episode quality is >= C; unscored counts as 0."""
    if not cfg.enabled:
        return list(pairs)
    return [p for p in pairs if (p.quality if p.quality is not None else 0) >= cfg.C]


QUALITY_BINS = ("≤5",) + tuple(str(q) for q in range(6, 16)) + ("≥16",)


def bin_quality(quality: int) -> str:
    """Bin label for an episode quality; the tails are pooled."""
    if quality < 0:
        raise ValueError("quality must be >= 0")
    if quality <= 5:
        return QUALITY_BINS[0]
    if quality >= 16:
        return QUALITY_BINS[-1]
    return str(quality)


def group_pairs_by_bin(episodes: Iterable[Episode]) -> dict[str, list[TrainingPair]]:
    """Human-target pairs from complete scored episodes, keyed by quality bin."""
    grouped: dict[str, list[TrainingPair]] = {label: [] for label in QUALITY_BINS}
    for ep in episodes:
        if not ep.complete or ep.quality is None:
            continue
        grouped[bin_quality(ep.quality)].extend(extract_pairs(ep))
    return grouped


def _episode_hash(episode_id: str) -> str:
    return hashlib.md5(episode_id.encode("utf-8")).hexdigest()


def build_eval_sets(
    episodes: Iterable[Episode],
    min_quality: int = 9,
    min_episodes: int = 2,
) -> tuple[list[TrainingPair], list[TrainingPair]]:
    """Frozen validation/test pairs from well-rated complete episodes.

    Eligible episodes are ordered by the hash of their id and split in half,
    so the assignment depends only on the episode set, never on log order.
    Callers must keep every returned episode_id out of training assemblies.
    """
    eligible = [
        ep
        for ep in episodes
        if ep.complete and ep.quality is not None and ep.quality >= min_quality
    ]
    if len(eligible) < max(min_episodes, 2):
        raise ValueError(
            f"only {len(eligible)} episodes are complete with quality >= {min_quality}; "
            f"need at least {max(min_episodes, 2)}"
        )
    eligible.sort(key=lambda ep: _episode_hash(ep.episode_id))
    half = len(eligible) // 2
    validation = [p for ep in eligible[:half] for p in extract_pairs(ep)]
    test = [p for ep in eligible[half:] for p in extract_pairs(ep)]
    return validation, test


def eval_episode_ids(*pair_sets: Sequence[TrainingPair]) -> frozenset[str]:
    return frozenset(p.episode_id for pairs in pair_sets for p in pairs)


@dataclass
class RoundDataset:
    round_id: int
    pairs: list[TrainingPair]
    manifest: dict


def assemble_round(
    round_id: int,
    seed_episodes: Sequence[Episode],
    wild_episodes: Sequence[Episode],
    cfg: QualityFilterConfig = QualityFilterConfig(),
    seed_version: str = "seed-v1",
    exclude_episode_ids: frozenset[str] = frozenset(),
) -> RoundDataset:
    """Cumulative training set for one round: seed corpus + all prior wild.

    Round 1 trains on the seed corpus alone; round k adds human-target pairs
    from complete wild episodes collected in rounds < k, quality-filtered per
    cfg. The seed corpus is never quality-filtered (it carries no scores).
    Episode inputs are deduplicated by id and sorted, so the result is
    independent of input order.
    """
    if round_id < 1:
        raise ValueError("round_id starts at 1")

    def ordered_unique(eps: Sequence[Episode]) -> list[Episode]:
        by_id = {ep.episode_id: ep for ep in eps}
        return [by_id[k] for k in sorted(by_id)]

    seed = ordered_unique(seed_episodes)
    seed_pairs = [p for ep in seed for p in extract_pairs(ep)]

    wild_used: list[Episode] = []
    if round_id > 1:
        wild_used = [
            ep
            for ep in ordered_unique(wild_episodes)
            if ep.complete
            and 1 <= ep.round_id < round_id
            and ep.episode_id not in exclude_episode_ids
        ]
    wild_pairs = filter_by_quality(
        [p for ep in wild_used for p in extract_pairs(ep)], cfg
    )

    pairs = seed_pairs + wild_pairs
    manifest = {
        "round_id": round_id,
        "seed_version": seed_version,
        "num_seed_episodes": len(seed),
        "num_seed_pairs": len(seed_pairs),
        "quality_filter": {"C": cfg.C, "enabled": cfg.enabled},
        "wild_episode_ids": [ep.episode_id for ep in wild_used],
        "num_wild_pairs": len(wild_pairs),
        "num_pairs": len(pairs),
        "excluded_episode_ids": sorted(exclude_episode_ids),
    }
    return RoundDataset(round_id=round_id, pairs=pairs, manifest=manifest)


@dataclass(frozen=True)
class DatasetStats:
    num_episodes: int
    num_utterances: int
    num_human_utterances: int
    unique_locations: int
    unique_characters: int
    unique_tokens: int
    avg_human_utterance_length: float
    num_players: int

    def to_record(self) -> dict:
        return {
            "num_episodes": self.num_episodes,
            "num_utterances": self.num_utterances,
            "num_human_utterances": self.num_human_utterances,
            "unique_locations": self.unique_locations,
            "unique_characters": self.unique_characters,
            "unique_tokens": self.unique_tokens,
            "avg_human_utterance_length": self.avg_human_utterance_length,
            "num_players": self.num_players,
        }


def dataset_stats(episodes: Sequence[Episode]) -> DatasetStats:
    if not episodes:
        raise ValueError("no episodes to summarize")
    locations = set()
    characters = set()
    players = set()
    tokens = set()
    num_utterances = 0
    human_lengths: list[int] = []
    for ep in episodes:
        locations.add(ep.location.id)
        characters.add(ep.human_character.id)
        characters.add(ep.model_character.id)
        players.add(ep.player_id)
        for turn in ep.turns:
            num_utterances += 1
            toks = tokenize(turn.text)
            tokens.update(toks)
            if turn.speaker is Speaker.HUMAN:
                human_lengths.append(len(toks))
    avg_len = sum(human_lengths) / len(human_lengths) if human_lengths else 0.0
    return DatasetStats(
        num_episodes=len(episodes),
        num_utterances=num_utterances,
        num_human_utterances=len(human_lengths),
        unique_locations=len(locations),
        unique_characters=len(characters),
        unique_tokens=len(tokens),
        avg_human_utterance_length=avg_len,
        num_players=len(players),
    )


# -- learning and cost curves ------------------------------------------------

STREAM_SPECS = ("wild_only", "seed_only", "mix_50_50")


@dataclass(frozen=True)
class CostModel:
    """Per-example collection cost; wild play is cheap relative to paid writing."""

    seed_cost: float = 1.0
    wild_cost: float = 0.2

    def cost_of(self, pair: TrainingPair) -> float:
        return self.wild_cost if pair.source is PairSource.WILD else self.seed_cost


def build_stream(
    stream_spec: str,
    seed_pairs: Sequence[TrainingPair],
    wild_pairs: Sequence[TrainingPair],
) -> list[TrainingPair]:
    """Training example stream for a curve run.

    mix_50_50 interleaves the sources example-by-example (seed first) while
    both last, then appends whatever remains, so every even-length prefix
    holds equally many of each.
    """
    if stream_spec == "wild_only":
        return list(wild_pairs)
    if stream_spec == "seed_only":
        return list(seed_pairs)
    if stream_spec == "mix_50_50":
        mixed: list[TrainingPair] = []
        for s, w in zip(seed_pairs, wild_pairs):
            mixed.append(s)
            mixed.append(w)
        shorter = min(len(seed_pairs), len(wild_pairs))
        mixed.extend(seed_pairs[shorter:])
        mixed.extend(wild_pairs[shorter:])
        return mixed
    raise ValueError(f"unknown stream spec {stream_spec!r}")


def corpus_texts(pairs: Sequence[TrainingPair]) -> list[str]:
    """Every text a model would see in these pairs, as vocabulary documents."""
    docs = []
    for p in pairs:
        docs.append(p.target)
        docs.append(p.context.location_description)
        docs.append(p.context.self_persona)
        docs.append(p.context.partner_name)
        for name, text in p.context.dialogue_history:
            docs.append(name)
            docs.append(text)
    return docs


@dataclass(frozen=True)
class CurvePoint:
    n: int
    cumulative_cost: float
    hits_at_1_of_20: float


def train_fresh(pairs: Sequence[TrainingPair], config: PolyLiteConfig) -> PolyLiteModel:
    """Init a model with a vocabulary from these pairs and train on them."""
    vocab = build_vocab(corpus_texts(pairs))
    model = PolyLiteModel.init(vocab, config)
    trained, _ = train(model, list(pairs))
    return trained


def learning_curve(
    stream_spec: str,
    seed_pairs: Sequence[TrainingPair],
    wild_pairs: Sequence[TrainingPair],
    eval_pairs: Sequence[TrainingPair],
    bank: CandidateBank,
    checkpoints: Sequence[int],
    config: PolyLiteConfig,
    cost_model: CostModel = CostModel(),
    eval_seed: int = 0,
) -> list[CurvePoint]:
    """Fresh-model evaluation at growing prefixes of a training stream.

    Checkpoints must be positive and ascending; any beyond the stream length
    collapse to the full stream (with a warning) rather than failing the run.
    """
    stream = build_stream(stream_spec, seed_pairs, wild_pairs)
    if not stream:
        raise ValueError("empty training stream")
    if list(checkpoints) != sorted(set(checkpoints)) or min(checkpoints) < 1:
        raise ValueError("checkpoints must be positive and strictly ascending")

    effective: list[int] = []
    for n in checkpoints:
        if n > len(stream):
            warnings.warn(
                f"checkpoint {n} exceeds stream length {len(stream)}; truncating",
                stacklevel=2,
            )
            n = len(stream)
        if n not in effective:
            effective.append(n)

    prefix_cost = [0.0]
    for pair in stream:
        prefix_cost.append(prefix_cost[-1] + cost_model.cost_of(pair))

    points = []
    for n in effective:
        model = train_fresh(stream[:n], config)
        report: EvalReport = evaluate_hits(model, list(eval_pairs), bank, eval_seed)
        points.append(
            CurvePoint(
                n=n,
                cumulative_cost=prefix_cost[n],
                hits_at_1_of_20=report.hits_at_1_of_20,
            )
        )
    return points


def curve_csv(points: Sequence[CurvePoint]) -> str:
    lines = ["n,cumulative_cost,hits_at_1_of_20"]
    for p in points:
        lines.append(f"{p.n},{p.cumulative_cost:.6f},{p.hits_at_1_of_20:.6f}")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class SweepPoint:
    C: int
    num_pairs: int
    hits_at_1_of_20: float


def sweep_quality_threshold(
    wild_episodes: Sequence[Episode],
    eval_pairs: Sequence[TrainingPair],
    bank: CandidateBank,
    config: PolyLiteConfig,
    thresholds: Sequence[int] = (0, 6, 9, 12),
    seed_pairs: Sequence[TrainingPair] = (),
    exclude_episode_ids: frozenset[str] = frozenset(),
    eval_seed: int = 0,
) -> tuple[int, list[SweepPoint]]:
    """Train once per candidate C and pick the one with the best val hits.

    Ties go to the smaller C (keep more data). Wild pairs come from complete
    episodes only, minus any excluded (eval) episode ids.
    """
    usable = [
        ep
        for ep in wild_episodes
        if ep.complete and ep.episode_id not in exclude_episode_ids
    ]
    all_wild = [p for ep in usable for p in extract_pairs(ep)]
    points = []
    for c in thresholds:
        kept = filter_by_quality(all_wild, QualityFilterConfig(C=c, enabled=True))
        pairs = list(seed_pairs) + kept
        if not pairs:
            points.append(SweepPoint(C=c, num_pairs=0, hits_at_1_of_20=0.0))
            continue
        model = train_fresh(pairs, config)
        report = evaluate_hits(model, list(eval_pairs), bank, eval_seed)
        points.append(
            SweepPoint(C=c, num_pairs=len(pairs), hits_at_1_of_20=report.hits_at_1_of_20)
        )
    best = max(points, key=lambda p: (p.hits_at_1_of_20, -p.C))
    return best.C, points
