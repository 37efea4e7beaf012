import numpy as np
import pytest

from fableloop.core import CONTINUE_CHOICES, GameChoice, Speaker, Utterance
from fableloop.dm import DungeonMaster, StarThresholds
from fableloop.engine import GameRuntime
from fableloop.pool import ModelPool, ModelVariant
from fableloop.safety import Blocklist
from fableloop.scoring import CandidateBank
from fableloop.simulate import (
    SimPlayer,
    SimPlayerPolicy,
    keyword_match_quality,
    run_sim_players,
)
from fableloop.text import SEP_TOKEN, tokenize
from fableloop.worldgen import (
    ALL_KEYWORDS,
    NOISE_VOCAB,
    WorldSpec,
    build_world,
    keyword_of,
)

CATALOG = build_world(WorldSpec(num_characters=8, num_locations=3, seed=5))


class PersonaScorer:
    """Prefers candidates carrying the keyword of the context's own persona.

    The persona sits between the first two separators of the serialized
    context, which is where this fake digs the keyword out from. sign=-1
    turns it into its own adversary: it then avoids in-persona lines.
    """

    max_context_tokens = 4096

    def __init__(self, sign=1.0):
        self.sign = sign

    def encode_context(self, tokens):
        try:
            a = tokens.index(SEP_TOKEN)
            b = tokens.index(SEP_TOKEN, a + 1)
        except ValueError:
            return None
        for t in tokens[a + 1 : b]:
            if t in ALL_KEYWORDS:
                return t
        return None

    def scores_for_bank(self, state, bank, indices=None):
        idx = list(range(len(bank))) if indices is None else list(indices)
        return np.array(
            [self.sign * float(state is not None and state in bank.tokens[i]) for i in idx]
        )

    def scores_for_texts(self, state, texts):
        return np.array(
            [self.sign * float(state is not None and state in tokenize(t)) for t in texts]
        )


def make_runtime(variants=None, seed=0, **kw):
    catalog = CATALOG.vet(Blocklist.from_terms([]))
    bank = CandidateBank.build(catalog.all_texts(), vet=lambda t: True)
    if variants is None:
        variants = [ModelVariant("v0", model=PersonaScorer())]
    pool = ModelPool(variants)
    dm = DungeonMaster(PersonaScorer(), bank, thresholds=StarThresholds(2, 4, 6))
    return GameRuntime(catalog, pool, dm, bank, seed=seed, **kw)


def human_context():
    from fableloop.core import context_for_turn

    return context_for_turn(
        [], 0, Speaker.HUMAN, CATALOG.locations[0], CATALOG.characters[0], CATALOG.characters[1]
    )


class TestPolicy:
    def test_valid_defaults(self):
        SimPlayerPolicy()

    @pytest.mark.parametrize(
        "kw",
        [
            {"quality_level": 1.5},
            {"quality_level": -0.1},
            {"base_continue_prob": 2.0},
            {"engagement_slope": float("nan")},
        ],
    )
    def test_rejects_bad_fields(self, kw):
        with pytest.raises(ValueError):
            SimPlayerPolicy(**kw)


class TestSimTurn:
    def test_full_quality_always_in_persona(self):
        player = SimPlayer(SimPlayerPolicy(quality_level=1.0, seed=3))
        kw = keyword_of(CATALOG.characters[0].persona)
        for _ in range(30):
            assert kw in tokenize(player.turn_text(human_context()))

    def test_zero_quality_always_noise(self):
        player = SimPlayer(SimPlayerPolicy(quality_level=0.0, seed=3))
        for _ in range(30):
            toks = player.turn_text(human_context()).split()
            assert set(toks) <= set(NOISE_VOCAB)

    def test_fixed_seed_fixed_transcript(self):
        a = SimPlayer(SimPlayerPolicy(quality_level=0.5, seed=9))
        b = SimPlayer(SimPlayerPolicy(quality_level=0.5, seed=9))
        assert [a.turn_text(human_context()) for _ in range(20)] == [
            b.turn_text(human_context()) for _ in range(20)
        ]

    def test_intermediate_quality_mixes(self):
        player = SimPlayer(SimPlayerPolicy(quality_level=0.5, seed=1))
        kinds = {
            set(player.turn_text(human_context()).split()) <= set(NOISE_VOCAB)
            for _ in range(50)
        }
        assert kinds == {True, False}


class FakeEpisode:
    def __init__(self, texts, character):
        self.turns = [
            Utterance(speaker=Speaker.MODEL, text=t, ts=i * 2) for i, t in enumerate(texts)
        ]
        self.model_character = character


class TestOracle:
    def test_all_in_persona(self):
        ch = CATALOG.characters[2]
        ep = FakeEpisode(CATALOG.replies_for(ch.id, "wild")[:4], ch)
        assert keyword_match_quality(ep) == 1.0

    def test_none_in_persona(self):
        ch = CATALOG.characters[2]
        other = CATALOG.characters[3]
        ep = FakeEpisode(CATALOG.replies_for(other.id, "wild")[:4], ch)
        assert keyword_match_quality(ep) == 0.0

    def test_fractional(self):
        ch = CATALOG.characters[2]
        other = CATALOG.characters[3]
        texts = CATALOG.replies_for(ch.id, "wild")[:2] + CATALOG.replies_for(other.id, "wild")[:2]
        assert keyword_match_quality(FakeEpisode(texts, ch)) == 0.5

    def test_no_model_turns(self):
        assert keyword_match_quality(FakeEpisode([], CATALOG.characters[0])) == 0.0


class TestEndChoice:
    def test_slope_zero_matches_base_rate(self):
        player = SimPlayer(SimPlayerPolicy(base_continue_prob=0.75, seed=0))
        ep = FakeEpisode([], CATALOG.characters[0])
        n = 4000
        continues = sum(player.end_choice(ep).continues for _ in range(n))
        rate = continues / n
        assert abs(rate - 0.75) < 3 * np.sqrt(0.75 * 0.25 / n)

    def test_continue_options_uniform(self):
        player = SimPlayer(SimPlayerPolicy(base_continue_prob=1.0, seed=0))
        ep = FakeEpisode([], CATALOG.characters[0])
        n = 3000
        counts = {c: 0 for c in CONTINUE_CHOICES}
        for _ in range(n):
            counts[player.end_choice(ep)] += 1
        p = 1 / 3
        for c in CONTINUE_CHOICES:
            assert abs(counts[c] / n - p) < 3 * np.sqrt(p * (1 - p) / n)

    def test_clamped_low_never_continues(self):
        policy = SimPlayerPolicy(base_continue_prob=0.0, engagement_slope=-0.5, seed=0)
        player = SimPlayer(policy)
        ep = FakeEpisode(CATALOG.replies_for(CATALOG.characters[0].id, "wild"), CATALOG.characters[0])
        assert all(
            player.end_choice(ep) is GameChoice.END_GAME for _ in range(50)
        )

    def test_clamped_high_always_continues(self):
        policy = SimPlayerPolicy(base_continue_prob=0.8, engagement_slope=0.5, seed=0)
        player = SimPlayer(policy)
        ch = CATALOG.characters[0]
        ep = FakeEpisode(CATALOG.replies_for(ch.id, "wild"), ch)
        assert all(player.end_choice(ep).continues for _ in range(50))

    def test_slope_gap_matches_closed_form(self):
        # identical policies, oracle pinned to 1.0 vs 0.0: gap must be the slope
        n = 4000
        rates = []
        for oracle_value in (1.0, 0.0):
            player = SimPlayer(SimPlayerPolicy(base_continue_prob=0.3, engagement_slope=0.3, seed=2))
            ep = FakeEpisode([], CATALOG.characters[0])
            hits = sum(
                player.end_choice(ep, oracle=lambda e: oracle_value).continues
                for _ in range(n)
            )
            rates.append(hits / n)
        se = np.sqrt(0.6 * 0.4 / n + 0.3 * 0.7 / n)
        assert abs((rates[0] - rates[1]) - 0.3) < 3 * se

    def test_deterministic_sequence(self):
        ep = FakeEpisode([], CATALOG.characters[0])
        a = SimPlayer(SimPlayerPolicy(base_continue_prob=0.5, seed=7))
        b = SimPlayer(SimPlayerPolicy(base_continue_prob=0.5, seed=7))
        assert [a.end_choice(ep) for _ in range(30)] == [b.end_choice(ep) for _ in range(30)]


class TestHarness:
    def test_reaches_target(self):
        rt = make_runtime()
        stored = run_sim_players(rt, 12, SimPlayerPolicy(base_continue_prob=0.6, seed=1))
        assert stored in (12, 13)
        assert len(rt.episodes) == stored

    def test_deterministic_end_to_end(self):
        def run():
            rt = make_runtime(seed=3)
            run_sim_players(rt, 10, SimPlayerPolicy(quality_level=0.7, base_continue_prob=0.5, seed=4))
            return [ep.to_record() for ep in rt.episodes]

        assert run() == run()

    def test_full_quality_players_speak_in_persona(self):
        rt = make_runtime()
        run_sim_players(rt, 8, SimPlayerPolicy(quality_level=1.0, base_continue_prob=0.5, seed=2))
        for ep in rt.episodes:
            kw = keyword_of(ep.human_character.persona)
            for t in ep.turns:
                if t.speaker is Speaker.HUMAN:
                    assert kw in tokenize(t.text)

    def test_zero_quality_players_speak_noise(self):
        rt = make_runtime()
        run_sim_players(rt, 6, SimPlayerPolicy(quality_level=0.0, base_continue_prob=0.5, seed=2))
        for ep in rt.episodes:
            for t in ep.turns:
                if t.speaker is Speaker.HUMAN:
                    assert set(t.text.split()) <= set(NOISE_VOCAB)

    def test_base_rate_recovered_from_pool(self):
        rt = make_runtime()
        n = 300
        run_sim_players(rt, n, SimPlayerPolicy(base_continue_prob=0.75, seed=6))
        est = rt.pool.continue_rate("v0")
        assert abs(est.rate - 0.75) < 3 * np.sqrt(0.75 * 0.25 / est.n) + 2 / n

    def test_better_model_earns_higher_continue_rate(self):
        variants = [
            ModelVariant("good", model=PersonaScorer(sign=1.0)),
            ModelVariant("bad", model=PersonaScorer(sign=-1.0)),
        ]
        rt = make_runtime(variants=variants)
        policy = SimPlayerPolicy(
            quality_level=1.0, base_continue_prob=0.25, engagement_slope=0.5, seed=8
        )
        run_sim_players(rt, 400, policy)
        good = rt.pool.continue_rate("good")
        bad = rt.pool.continue_rate("bad")
        se = np.sqrt(good.stderr**2 + bad.stderr**2)
        assert good.rate - bad.rate > 3 * se
        assert good.rate - bad.rate == pytest.approx(0.5, abs=0.12)

    def test_rejects_nonpositive_target(self):
        with pytest.raises(ValueError):
            run_sim_players(make_runtime(), 0, SimPlayerPolicy())
