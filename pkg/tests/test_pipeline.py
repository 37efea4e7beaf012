import numpy as np
import pytest

from fableloop.core import Episode, PairSource, Speaker, Utterance, scored_quality
from fableloop.pipeline import (
    QUALITY_BINS,
    CostModel,
    QualityFilterConfig,
    assemble_round,
    bin_quality,
    build_eval_sets,
    build_stream,
    curve_csv,
    dataset_stats,
    eval_episode_ids,
    extract_pairs,
    filter_by_quality,
    group_pairs_by_bin,
    learning_curve,
    sweep_quality_threshold,
)
from fableloop.scoring import CandidateBank, PolyLiteConfig
from fableloop.text import tokenize
from fableloop.worldgen import WorldSpec, build_world, seed_story_episodes

CATALOG = build_world(WorldSpec(num_characters=8, num_locations=2, seed=0))

FAST = PolyLiteConfig(
    embed_dim=8,
    num_codes=2,
    max_context_tokens=48,
    learning_rate=0.5,
    batch_size=8,
    history_negatives=2,
    epochs=1,
    seed=0,
)


def wild_episode(
    eid,
    round_id=1,
    stars=4,
    human=0,
    model=1,
    loc=0,
    human_texts=None,
    num_turns=12,
    player="px",
):
    h, m = CATALOG.characters[human], CATALOG.characters[model]
    turns = []
    k = 0
    for t in range(num_turns):
        if t % 2 == 0:
            text = CATALOG.replies_for(m.id, "wild")[t % 6]
            turns.append(Utterance(speaker=Speaker.MODEL, text=text, ts=t))
        else:
            text = (
                human_texts[k] if human_texts else CATALOG.replies_for(h.id, "wild")[k % 6]
            )
            s = stars[k] if isinstance(stars, (list, tuple)) else stars
            turns.append(Utterance(speaker=Speaker.HUMAN, text=text, ts=t, stars=s))
            k += 1
    turns = tuple(turns)
    return Episode(
        episode_id=eid,
        round_id=round_id,
        variant_id="v0",
        location=CATALOG.locations[loc],
        human_character=h,
        model_character=m,
        player_id=player,
        turns=turns,
        complete=num_turns == 12,
        end_choice=None,
        quality=scored_quality(turns),
    )


class TestExtractPairs:
    def test_complete_episode_human_targets(self):
        ep = wild_episode("e1")
        pairs = extract_pairs(ep)
        assert len(pairs) == 6
        human_turns = [t for t in ep.turns if t.speaker is Speaker.HUMAN]
        assert [p.target for p in pairs] == [t.text for t in human_turns]
        for p in pairs:
            assert p.source is PairSource.WILD
            assert p.quality == ep.quality
            assert p.round_id == 1
            assert p.episode_id == "e1"

    def test_model_targets(self):
        pairs = extract_pairs(wild_episode("e1"), target_author=Speaker.MODEL)
        assert len(pairs) == 6
        assert all(p.target_author is Speaker.MODEL for p in pairs)

    def test_incomplete_five_turns(self):
        pairs = extract_pairs(wild_episode("e1", num_turns=5))
        assert len(pairs) == 2

    def test_context_is_everything_before_the_turn(self):
        ep = wild_episode("e1")
        pairs = extract_pairs(ep)
        names = {
            Speaker.HUMAN: ep.human_character.name,
            Speaker.MODEL: ep.model_character.name,
        }
        # the i-th human pair sees 2i+1 prior turns
        for i, p in enumerate(pairs):
            expect = [(names[t.speaker], t.text) for t in ep.turns[: 2 * i + 1]]
            assert list(p.context.dialogue_history) == expect
            assert p.context.self_persona == ep.human_character.persona
            assert p.context.partner_name == ep.model_character.name

    def test_model_perspective_swaps_sides(self):
        ep = wild_episode("e1")
        pairs = extract_pairs(ep, target_author=Speaker.MODEL)
        assert pairs[0].context.self_persona == ep.model_character.persona
        assert pairs[0].context.partner_name == ep.human_character.name
        assert pairs[0].context.dialogue_history == ()

    def test_seed_round_tags_source(self):
        seed_ep = seed_story_episodes(CATALOG, 1, seed=0)[0]
        assert all(p.source is PairSource.SEED_CORPUS for p in extract_pairs(seed_ep))


class TestQualityFilter:
    def test_threshold_drops_low_quality(self):
        pairs = extract_pairs(wild_episode("lo", stars=1))  # quality 6
        assert filter_by_quality(pairs, QualityFilterConfig(C=9, enabled=True)) == []

    def test_boundary_is_inclusive(self):
        pairs = extract_pairs(wild_episode("mid", stars=2))  # quality 12
        assert len(filter_by_quality(pairs, QualityFilterConfig(C=12, enabled=True))) == 6

    def test_c_zero_is_identity(self):
        seed_pairs = extract_pairs(seed_story_episodes(CATALOG, 1, seed=0)[0])
        assert seed_pairs[0].quality is None
        kept = filter_by_quality(seed_pairs, QualityFilterConfig(C=0, enabled=True))
        assert kept == seed_pairs

    def test_disabled_ignores_threshold(self):
        pairs = extract_pairs(wild_episode("lo", stars=1))
        assert filter_by_quality(pairs, QualityFilterConfig(C=99, enabled=False)) == pairs

    def test_stricter_threshold_gives_subset(self):
        pairs = [
            p
            for stars in (1, 2, 3, 4)
            for p in extract_pairs(wild_episode(f"e{stars}", stars=stars))
        ]
        prev = pairs
        for c in (0, 8, 14, 20, 30):
            kept = filter_by_quality(pairs, QualityFilterConfig(C=c, enabled=True))
            assert set(kept) <= set(prev)
            assert [p for p in pairs if p in set(kept)] == kept  # stable order
            prev = kept

    def test_negative_c_rejected(self):
        with pytest.raises(ValueError):
            QualityFilterConfig(C=-1, enabled=True)


class TestBins:
    def test_named_examples(self):
        assert bin_quality(3) == "≤5"
        assert bin_quality(6) == "6"
        assert bin_quality(15) == "15"
        assert bin_quality(16) == "≥16"
        assert bin_quality(20) == "≥16"

    def test_total_and_disjoint(self):
        for q in range(0, 41):
            label = bin_quality(q)
            assert label in QUALITY_BINS
            assert QUALITY_BINS.count(label) == 1

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            bin_quality(-1)

    def test_grouping_skips_unusable_episodes(self):
        eps = [
            wild_episode("a", stars=1),  # 6
            wild_episode("b", stars=4),  # 24
            wild_episode("c", num_turns=5),  # incomplete
            seed_story_episodes(CATALOG, 1, seed=0)[0],  # unscored
        ]
        grouped = group_pairs_by_bin(eps)
        assert len(grouped["6"]) == 6
        assert len(grouped["≥16"]) == 6
        assert sum(len(v) for v in grouped.values()) == 12


class TestEvalSets:
    def make_corpus(self):
        return [wild_episode(f"e{i:03d}", stars=2 + (i % 3)) for i in range(12)]

    def test_split_is_disjoint_and_complete(self):
        val, test = build_eval_sets(self.make_corpus(), min_quality=9)
        val_ids, test_ids = eval_episode_ids(val), eval_episode_ids(test)
        assert not (val_ids & test_ids)
        assert len(val_ids) == 6 and len(test_ids) == 6

    def test_quality_nine_boundary(self):
        nine = wild_episode("q9", stars=[1, 1, 1, 2, 2, 2])
        eight = wild_episode("q8", stars=[1, 1, 1, 1, 2, 2])
        assert (nine.quality, eight.quality) == (9, 8)
        val, test = build_eval_sets([nine, eight] + self.make_corpus(), min_quality=9)
        ids = eval_episode_ids(val, test)
        assert "q9" in ids and "q8" not in ids

    def test_incomplete_excluded(self):
        eps = self.make_corpus() + [wild_episode("part", num_turns=11)]
        ids = eval_episode_ids(*build_eval_sets(eps))
        assert "part" not in ids

    def test_too_few_raises_with_count(self):
        with pytest.raises(ValueError, match="only 1 episodes"):
            build_eval_sets([wild_episode("solo", stars=4)], min_episodes=4)

    def test_order_independent(self):
        eps = self.make_corpus()
        a = build_eval_sets(eps)
        b = build_eval_sets(list(reversed(eps)))
        assert a == b


class TestAssembleRound:
    def setup_method(self):
        self.seed_eps = seed_story_episodes(CATALOG, 4, seed=1)
        self.wild = [
            wild_episode(f"r1e{i}", round_id=1, stars=(i % 4) + 1) for i in range(6)
        ] + [wild_episode(f"r2e{i}", round_id=2, stars=(i % 4) + 1) for i in range(6)]

    def test_round_one_is_seed_only(self):
        ds = assemble_round(1, self.seed_eps, self.wild)
        assert all(p.source is PairSource.SEED_CORPUS for p in ds.pairs)
        assert len(ds.pairs) == 4 * 6
        assert ds.manifest["wild_episode_ids"] == []

    def test_cumulative_superset(self):
        r2 = assemble_round(2, self.seed_eps, self.wild)
        r3 = assemble_round(3, self.seed_eps, self.wild)
        assert set(r2.pairs) <= set(r3.pairs)
        assert len(r3.pairs) > len(r2.pairs)

    def test_round_k_uses_only_prior_rounds(self):
        r2 = assemble_round(2, self.seed_eps, self.wild)
        wild_rounds = {p.round_id for p in r2.pairs if p.source is PairSource.WILD}
        assert wild_rounds == {1}

    def test_quality_filter_applies_to_wild_only(self):
        cfg = QualityFilterConfig(C=100, enabled=True)
        ds = assemble_round(2, self.seed_eps, self.wild, cfg=cfg)
        assert len(ds.pairs) == 4 * 6  # all wild dropped, seed untouched

    def test_exclusions_respected(self):
        keep_out = frozenset({"r1e0", "r1e1"})
        ds = assemble_round(2, self.seed_eps, self.wild, exclude_episode_ids=keep_out)
        assert not (eval_episode_ids(ds.pairs) & keep_out)
        assert set(ds.manifest["excluded_episode_ids"]) == keep_out

    def test_order_insensitive_and_idempotent(self):
        rng = np.random.default_rng(0)
        a = assemble_round(3, self.seed_eps, self.wild)
        shuffled = list(self.wild)
        rng.shuffle(shuffled)
        b = assemble_round(3, list(reversed(self.seed_eps)), shuffled + shuffled)
        assert a.pairs == b.pairs
        assert a.manifest == b.manifest

    def test_incomplete_wild_never_trains(self):
        wild = self.wild + [wild_episode("drop", round_id=1, num_turns=7)]
        ds = assemble_round(2, self.seed_eps, wild)
        assert "drop" not in eval_episode_ids(ds.pairs)

    def test_manifest_recount_oracle(self):
        cfg = QualityFilterConfig(C=12, enabled=True)
        ds = assemble_round(3, self.seed_eps, self.wild, cfg=cfg)
        m = ds.manifest
        by_id = {ep.episode_id: ep for ep in self.wild}
        recount = m["num_seed_pairs"]
        for eid in m["wild_episode_ids"]:
            ep = by_id[eid]
            if ep.quality >= m["quality_filter"]["C"]:
                recount += sum(1 for t in ep.turns if t.speaker is Speaker.HUMAN)
        assert recount == m["num_pairs"] == len(ds.pairs)
        assert m["num_seed_pairs"] == sum(
            1 for ep in self.seed_eps for t in ep.turns if t.speaker is Speaker.HUMAN
        )

    def test_round_id_validated(self):
        with pytest.raises(ValueError):
            assemble_round(0, self.seed_eps, [])


class TestDatasetStats:
    def test_single_episode(self):
        stats = dataset_stats([wild_episode("e1")])
        assert stats.num_episodes == 1
        assert stats.num_utterances == 12
        assert stats.num_human_utterances == 6
        assert stats.num_players == 1

    def test_half_are_human_for_complete_corpora(self):
        eps = [wild_episode(f"e{i}", player=f"p{i % 2}") for i in range(5)]
        stats = dataset_stats(eps)
        assert stats.num_human_utterances == stats.num_utterances / 2
        assert stats.num_players == 2

    def test_shared_location_counted_once(self):
        eps = [wild_episode("a", loc=0), wild_episode("b", loc=0)]
        assert dataset_stats(eps).unique_locations == 1

    def test_token_and_length_recount(self):
        eps = [wild_episode(f"e{i}", human=i, model=i + 1) for i in range(3)]
        stats = dataset_stats(eps)
        toks = set()
        lengths = []
        for ep in eps:
            for t in ep.turns:
                toks.update(tokenize(t.text))
                if t.speaker is Speaker.HUMAN:
                    lengths.append(len(tokenize(t.text)))
        assert stats.unique_tokens == len(toks)
        assert stats.avg_human_utterance_length == pytest.approx(
            sum(lengths) / len(lengths)
        )
        assert stats.unique_characters == 4

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            dataset_stats([])


class TestStream:
    def test_single_source_streams(self):
        seed = extract_pairs(seed_story_episodes(CATALOG, 1, seed=0)[0])
        wild = extract_pairs(wild_episode("w"))
        assert build_stream("seed_only", seed, wild) == seed
        assert build_stream("wild_only", seed, wild) == wild

    def test_mix_alternates_example_by_example(self):
        seed = extract_pairs(seed_story_episodes(CATALOG, 2, seed=0)[0]) * 2  # 12
        wild = extract_pairs(wild_episode("w"))  # 6
        mixed = build_stream("mix_50_50", seed, wild)
        assert len(mixed) == 18
        for k in range(1, 7):
            prefix = mixed[: 2 * k]
            n_wild = sum(1 for p in prefix if p.source is PairSource.WILD)
            assert n_wild == k
        assert all(p.source is PairSource.SEED_CORPUS for p in mixed[12:])

    def test_unknown_spec(self):
        with pytest.raises(ValueError, match="stream spec"):
            build_stream("firehose", [], [])


def curve_fixture():
    train_eps = [wild_episode(f"t{i}", human=i % 6, model=(i + 1) % 6) for i in range(4)]
    eval_eps = [wild_episode("ev1", human=6, model=7), wild_episode("ev2", human=7, model=6)]
    wild_pairs = [p for ep in train_eps for p in extract_pairs(ep)]
    seed_pairs = [p for ep in seed_story_episodes(CATALOG, 4, seed=2) for p in extract_pairs(ep)]
    eval_pairs = [p for ep in eval_eps for p in extract_pairs(ep)]
    bank = CandidateBank.build(CATALOG.all_texts(), vet=lambda t: True)
    return seed_pairs, wild_pairs, eval_pairs, bank


class TestLearningCurve:
    def test_equal_costs_track_n(self):
        seed_pairs, wild_pairs, eval_pairs, bank = curve_fixture()
        points = learning_curve(
            "mix_50_50", seed_pairs, wild_pairs, eval_pairs, bank,
            checkpoints=(4, 8), config=FAST, cost_model=CostModel(1.0, 1.0),
        )
        assert [(p.n, p.cumulative_cost) for p in points] == [(4, 4.0), (8, 8.0)]

    def test_default_wild_discount(self):
        seed_pairs, wild_pairs, eval_pairs, bank = curve_fixture()
        points = learning_curve(
            "wild_only", seed_pairs, wild_pairs, eval_pairs, bank,
            checkpoints=(10,), config=FAST,
        )
        assert points[0].cumulative_cost == pytest.approx(10 * 0.2)

    def test_mixed_cost_is_per_source_sum(self):
        seed_pairs, wild_pairs, eval_pairs, bank = curve_fixture()
        points = learning_curve(
            "mix_50_50", seed_pairs, wild_pairs, eval_pairs, bank,
            checkpoints=(6,), config=FAST,
        )
        assert points[0].cumulative_cost == pytest.approx(3 * 1.0 + 3 * 0.2)

    def test_overlong_checkpoint_truncates_with_warning(self):
        seed_pairs, wild_pairs, eval_pairs, bank = curve_fixture()
        with pytest.warns(UserWarning, match="exceeds stream length"):
            points = learning_curve(
                "wild_only", seed_pairs, wild_pairs, eval_pairs, bank,
                checkpoints=(6, 999), config=FAST,
            )
        assert [p.n for p in points] == [6, len(wild_pairs)]

    def test_reproducible(self):
        seed_pairs, wild_pairs, eval_pairs, bank = curve_fixture()
        run = lambda: learning_curve(
            "seed_only", seed_pairs, wild_pairs, eval_pairs, bank,
            checkpoints=(6, 12), config=FAST,
        )
        assert run() == run()

    def test_checkpoints_must_ascend(self):
        seed_pairs, wild_pairs, eval_pairs, bank = curve_fixture()
        for bad in [(8, 4), (0, 4), (4, 4)]:
            with pytest.raises(ValueError, match="ascending"):
                learning_curve(
                    "wild_only", seed_pairs, wild_pairs, eval_pairs, bank,
                    checkpoints=bad, config=FAST,
                )

    def test_csv_format(self):
        from fableloop.pipeline import CurvePoint

        csv = curve_csv([CurvePoint(4, 0.8, 0.5)])
        assert csv == "n,cumulative_cost,hits_at_1_of_20\n4,0.800000,0.500000\n"


class TestSweep:
    def test_mechanics(self):
        _, _, eval_pairs, bank = curve_fixture()
        wild_eps = [wild_episode(f"s{i}", stars=(i % 4) + 1) for i in range(8)]
        best, points = sweep_quality_threshold(
            wild_eps, eval_pairs, bank, FAST, thresholds=(0, 12, 24)
        )
        assert [p.C for p in points] == [0, 12, 24]
        counts = [p.num_pairs for p in points]
        assert counts == sorted(counts, reverse=True)
        assert counts[0] == 8 * 6
        assert best in (0, 12, 24)

    def test_exclusions_and_incomplete_skipped(self):
        _, _, eval_pairs, bank = curve_fixture()
        wild_eps = [wild_episode(f"s{i}", stars=4) for i in range(4)]
        wild_eps.append(wild_episode("partial", num_turns=9))
        _, points = sweep_quality_threshold(
            wild_eps, eval_pairs, bank, FAST,
            thresholds=(0,), exclude_episode_ids=frozenset({"s0"}),
        )
        assert points[0].num_pairs == 3 * 6
