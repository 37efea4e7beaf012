"""Round-based lifelong loop: deploy, collect, score, retrain, redeploy.

A round serves the currently deployed pool until enough episodes are
stored, freezes the wild eval sets the first time through, scores the
serving models, then trains the next pool on everything collected so far
and swaps it in. Training always goes through a checkpoint on disk and
back, so what gets deployed is exactly what a restart would load.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .catalog import Catalog
from .core import Episode, PairSource
from .dm import BadgeRule, DungeonMaster, StarThresholds
from .engine import GameRuntime
from .episodelog import EpisodeLog, next_episode_number
from .pipeline import (
    QualityFilterConfig,
    RoundDataset,
    assemble_round,
    build_eval_sets,
    corpus_texts,
    eval_episode_ids,
    extract_pairs,
)
from .pool import ModelPool, ModelVariant, VariantFactors
from .safety import EMPTY_BLOCKLIST, Blocklist
from .scoring import (
    CandidateBank,
    DecodingControl,
    PolyLiteConfig,
    PolyLiteModel,
    evaluate_hits,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .text import build_vocab

PlayerSource = Callable[[GameRuntime, int], object]


class RoundAborted(RuntimeError):
    """Training failed; the prior pool stays deployed."""


class RedeployError(RuntimeError):
    pass


@dataclass(frozen=True)
class RoundPlan:
    """One round's collection target plus the grid for the pool trained after it."""

    round_id: int
    target_episode_count: int
    factors: tuple[VariantFactors, ...] = (VariantFactors(train_data="seed+wild"),)
    train_config: PolyLiteConfig = PolyLiteConfig()
    quality_filter: QualityFilterConfig = QualityFilterConfig()
    decoding_alpha: float = 0.5
    seed: int = 0
    size_map: dict | None = None  # size_tag -> PolyLiteConfig; None = {"base": train_config}

    def __post_init__(self) -> None:
        if self.round_id < 1:
            raise ValueError("round_id starts at 1")
        if self.target_episode_count < 1:
            raise ValueError("target_episode_count must be >= 1")
        if not self.factors:
            raise ValueError("need at least one variant in the grid")
        sizes = self.size_map if self.size_map is not None else {"base": self.train_config}
        for f in self.factors:
            if f.size_tag not in sizes:
                raise ValueError(f"no train config for size tag {f.size_tag!r}")

    def config_for(self, factors: VariantFactors) -> PolyLiteConfig:
        sizes = self.size_map if self.size_map is not None else {"base": self.train_config}
        return sizes[factors.size_tag]


@dataclass(frozen=True)
class VariantSpec:
    variant_id: str
    checkpoint_path: str
    factors: VariantFactors = VariantFactors()
    control: DecodingControl = DecodingControl()


def smoke_test(model) -> None:
    state = model.encode_context(["hello", "there", "friend"])
    scores = model.scores_for_texts(state, ["a reply", "another reply"])
    if not np.all(np.isfinite(np.asarray(scores, dtype=float))):
        raise RedeployError("checkpoint produced non-finite scores")


def load_variants(specs: Sequence[VariantSpec]) -> list[ModelVariant]:
    """Load every checkpoint and smoke-test it; all-or-nothing."""
    variants = []
    for spec in specs:
        try:
            model = load_checkpoint(spec.checkpoint_path)
            smoke_test(model)
        except RedeployError:
            raise
        except Exception as exc:
            raise RedeployError(f"checkpoint {spec.checkpoint_path}: {exc}") from exc
        variants.append(
            ModelVariant(
                spec.variant_id,
                factors=spec.factors,
                checkpoint_path=spec.checkpoint_path,
                model=model,
                control=spec.control,
            )
        )
    return variants


def redeploy(pool: ModelPool, specs: Sequence[VariantSpec]) -> list[ModelVariant]:
    """Swap the pool to freshly loaded checkpoints.

    Any load or smoke failure raises before the pool is touched; in-flight
    episodes keep their retired variant (and so their old snapshot) because
    the registry never forgets it.
    """
    variants = load_variants(specs)
    pool.swap(variants)
    return variants


@dataclass
class RoundReport:
    round_id: int
    episodes_collected: int
    pairs_extracted: int
    eval_hits: dict
    continue_rates: dict
    checkpoints: dict
    manifest_path: str
    report_path: str

    def to_record(self) -> dict:
        return dataclasses.asdict(self)


class LifelongRun:
    """Owns the deployed pool, the frozen eval sets, and the artifact dir.

    The seed corpus is split once: a hash-chosen slice becomes the
    out-of-distribution eval set and never trains. Wild eval sets freeze
    after the first collection. The DM scorer follows the first variant of
    each newly deployed pool unless dm_follows_newest is off.
    """

    def __init__(
        self,
        workdir: str,
        catalog: Catalog,
        seed_episodes: Sequence[Episode],
        blocklist: Blocklist = EMPTY_BLOCKLIST,
        thresholds: StarThresholds = StarThresholds(),
        badge_rule: BadgeRule = BadgeRule(),
        seed_eval_fraction: float = 0.2,
        eval_min_quality: int = 9,
        min_eval_episodes: int = 4,
        dm_follows_newest: bool = True,
        eval_seed: int = 0,
        max_history: int | None = None,
    ):
        os.makedirs(workdir, exist_ok=True)
        self.workdir = workdir
        self.catalog = catalog if catalog.vetted else catalog.vet(blocklist)
        self.blocklist = blocklist
        self.thresholds = thresholds
        self.badge_rule = badge_rule
        self.eval_min_quality = eval_min_quality
        self.min_eval_episodes = min_eval_episodes
        self.dm_follows_newest = dm_follows_newest
        self.eval_seed = eval_seed
        self.max_history = max_history

        if not 0.0 < seed_eval_fraction < 1.0:
            raise ValueError("seed_eval_fraction must be in (0, 1)")
        ordered = sorted(
            seed_episodes,
            key=lambda ep: hashlib.md5(ep.episode_id.encode("utf-8")).hexdigest(),
        )
        n_eval = max(1, int(len(ordered) * seed_eval_fraction))
        if n_eval >= len(ordered):
            raise ValueError("seed corpus too small to split")
        self.seed_eval_pairs = [p for ep in ordered[:n_eval] for p in extract_pairs(ep)]
        self.seed_train_episodes = ordered[n_eval:]

        self.bank = CandidateBank.build(self.catalog.all_texts(), vet=self.blocklist.allows)
        self.wild_episodes: list[Episode] = []
        self.wild_val_pairs: list | None = None
        self.wild_test_pairs: list | None = None
        self.excluded_ids: frozenset[str] = frozenset()
        self.pool: ModelPool | None = None
        self.dm: DungeonMaster | None = None
        self.reports: list[RoundReport] = []
        self.log = EpisodeLog(os.path.join(workdir, "episodes.jsonl"))
        self._round_cursor = 1

    # -- deployment ----------------------------------------------------------

    def bootstrap(self, plan: RoundPlan) -> dict:
        """Train the round-1 pool from the seed corpus alone and deploy it."""
        if plan.round_id != 1:
            raise ValueError("bootstrap takes the round 1 plan")
        if self.pool is not None:
            raise RuntimeError("already bootstrapped")
        specs, _dataset, checkpoints = self._train_next_pool(1, plan)
        self.pool = ModelPool(load_variants(specs))
        first = self.pool.variant(specs[0].variant_id)
        self.dm = DungeonMaster(
            first.model, self.bank, thresholds=self.thresholds, badge_rule=self.badge_rule
        )
        return checkpoints

    def _train_next_pool(
        self, pool_round: int, plan: RoundPlan
    ) -> tuple[list[VariantSpec], RoundDataset, dict]:
        """Assemble the cumulative dataset and train one model per factor cell.

        Raises RoundAborted on training divergence, before any deploy step.
        """
        dataset = assemble_round(
            pool_round,
            self.seed_train_episodes,
            self.wild_episodes,
            cfg=plan.quality_filter,
            exclude_episode_ids=self.excluded_ids,
        )
        seed_only = [p for p in dataset.pairs if p.source is PairSource.SEED_CORPUS]
        specs: list[VariantSpec] = []
        checkpoints: dict[str, str] = {}
        for i, factors in enumerate(plan.factors):
            pairs = seed_only if factors.train_data == "seed" else dataset.pairs
            cfg = plan.config_for(factors)
            if not factors.negative_context:
                cfg = dataclasses.replace(cfg, history_negatives=0)
            vocab = build_vocab(corpus_texts(pairs))
            model = PolyLiteModel.init(vocab, cfg)
            try:
                trained, _trace = train(model, pairs)
            except RuntimeError as exc:
                raise RoundAborted(
                    f"training variant {i} for round {pool_round} failed: {exc}"
                ) from exc
            vid = f"r{pool_round:02d}v{i}"
            path = os.path.join(self.workdir, f"{vid}.ckpt")
            save_checkpoint(trained, path)
            control = DecodingControl(
                alpha=plan.decoding_alpha if factors.decoding_control else 0.0
            )
            specs.append(VariantSpec(vid, path, factors=factors, control=control))
            checkpoints[vid] = path

        manifest_path = os.path.join(self.workdir, f"round{pool_round:02d}_manifest.json")
        with open(manifest_path, "w", encoding="utf-8") as f:
            json.dump(dataset.manifest, f, indent=1)
        return specs, dataset, checkpoints

    # -- the round loop --------------------------------------------------

    def run_round(self, plan: RoundPlan, player_source: PlayerSource) -> RoundReport:
        if self.pool is None or self.dm is None:
            raise RuntimeError("bootstrap the round-1 pool first")
        if plan.round_id != self._round_cursor:
            raise ValueError(
                f"expected round {self._round_cursor}, got plan for {plan.round_id}"
            )

        runtime = GameRuntime(
            self.catalog,
            self.pool,
            self.dm,
            self.bank,
            self.blocklist,
            round_id=plan.round_id,
            seed=plan.seed,
            on_episode=self._store_episode,
            max_history=self.max_history,
            first_episode_number=next_episode_number(self.wild_episodes),
        )
        serving = [v.variant_id for v in self.pool.active_variants]
        player_source(runtime, plan.target_episode_count)
        collected = len(runtime.episodes)

        if self.wild_val_pairs is None:
            self.wild_val_pairs, self.wild_test_pairs = build_eval_sets(
                self.wild_episodes,
                min_quality=self.eval_min_quality,
                min_episodes=self.min_eval_episodes,
            )
            self.excluded_ids = eval_episode_ids(self.wild_val_pairs, self.wild_test_pairs)

        eval_sets = {
            "wild_validation": self.wild_val_pairs,
            "wild_test": self.wild_test_pairs,
            "seed_test": self.seed_eval_pairs,
        }
        eval_hits = {
            name: {
                vid: evaluate_hits(
                    self.pool.variant(vid).model, pairs, self.bank, self.eval_seed
                ).hits_at_1_of_20
                for vid in serving
            }
            for name, pairs in eval_sets.items()
        }
        continue_rates = {}
        for vid in serving:
            v = self.pool.variant(vid)
            if v.episodes_served > 0:
                est = self.pool.continue_rate(vid)
                continue_rates[vid] = {"rate": est.rate, "stderr": est.stderr, "n": est.n}
            else:
                continue_rates[vid] = {"rate": None, "stderr": None, "n": 0}

        specs, dataset, checkpoints = self._train_next_pool(plan.round_id + 1, plan)
        redeploy(self.pool, specs)
        if self.dm_follows_newest:
            self.dm.model = self.pool.variant(specs[0].variant_id).model

        report_path = os.path.join(self.workdir, f"round{plan.round_id:02d}_report.json")
        report = RoundReport(
            round_id=plan.round_id,
            episodes_collected=collected,
            pairs_extracted=dataset.manifest["num_pairs"],
            eval_hits=eval_hits,
            continue_rates=continue_rates,
            checkpoints=checkpoints,
            manifest_path=os.path.join(
                self.workdir, f"round{plan.round_id + 1:02d}_manifest.json"
            ),
            report_path=report_path,
        )
        with open(report_path, "w", encoding="utf-8") as f:
            json.dump(report.to_record(), f, indent=1)
        self.reports.append(report)
        self._round_cursor += 1
        return report

    def run_rounds(
        self, plans: Sequence[RoundPlan], player_source: PlayerSource
    ) -> list[RoundReport]:
        return [self.run_round(plan, player_source) for plan in plans]

    def _store_episode(self, episode: Episode) -> None:
        self.wild_episodes.append(episode)
        self.log.append(episode)

    def close(self) -> None:
        self.log.close()
