import math

import numpy as np
import pytest

from fableloop.core import ContextBundle, PairSource, Speaker, TrainingPair
from fableloop.scoring import (
    CandidateBank,
    PolyLiteConfig,
    PolyLiteModel,
    batch_loss,
    batch_loss_and_grads,
    evaluate_hits,
    loss_trace_csv,
    prepare_batch,
    train,
)
from fableloop.scoring.polylite import PreparedBatch, _resolve
from fableloop.text import build_vocab

WORDS = [
    "ale", "bard", "cave", "dragon", "ember", "fort", "gate", "hound",
    "inn", "jewel", "key", "lute", "moat", "nest", "oath", "pike",
    "quill", "rune", "spear", "torch", "urn", "vale", "ward", "yarn",
]


def make_pair(rng, round_id=1):
    def phrase(n):
        return " ".join(rng.choice(WORDS) for _ in range(n))

    history = tuple(("Guide", phrase(rng.integers(2, 5))) for _ in range(rng.integers(2, 5)))
    return TrainingPair(
        context=ContextBundle(
            location_description=phrase(3),
            self_persona=phrase(4),
            partner_name="Guide",
            dialogue_history=history,
        ),
        target=phrase(3),
        source=PairSource.SEED_CORPUS,
        round_id=round_id,
        quality=None,
        target_author=Speaker.HUMAN,
        episode_id=f"ep{rng.integers(0, 10_000)}",
    )


def toy_setup(seed):
    # Spec-scale toy: d=4, N=2, V around 30, B=5, H=2.
    rng = np.random.default_rng(seed)
    vocab = build_vocab([" ".join(WORDS), "guide : !"])
    cfg = PolyLiteConfig(
        embed_dim=4,
        num_codes=2,
        max_context_tokens=24,
        batch_size=5,
        history_negatives=2,
        seed=seed,
    )
    pairs = [make_pair(rng) for _ in range(5)]
    resolved = [_resolve(p, vocab, cfg.max_context_tokens) for p in pairs]
    batch = prepare_batch(resolved, cfg.history_negatives, rng)
    return vocab, cfg, batch, rng


def finite_difference_grads(E, C, batch, eps=1e-5):
    gE = np.zeros_like(E)
    gC = np.zeros_like(C)
    for arr, grad in ((E, gE), (C, gC)):
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + eps
            up = batch_loss(E, C, batch)
            arr[idx] = orig - eps
            down = batch_loss(E, C, batch)
            arr[idx] = orig
            grad[idx] = (up - down) / (2 * eps)
    return gE, gC


def max_relative_error(a, b):
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-6)
    return float((np.abs(a - b) / denom).max())


def test_analytic_gradients_match_finite_differences():
    # Three random parameter points, not just the initialization.
    vocab, cfg, batch, _ = toy_setup(seed=0)
    for point in range(3):
        rng = np.random.default_rng(100 + point)
        E = rng.normal(0, 0.5, size=(len(vocab), cfg.embed_dim))
        C = rng.normal(0, 0.5, size=(cfg.num_codes, cfg.embed_dim))
        loss, gE, gC = batch_loss_and_grads(E, C, batch)
        assert math.isfinite(loss)
        fE, fC = finite_difference_grads(E, C, batch)
        assert max_relative_error(gE, fE) < 1e-4
        assert max_relative_error(gC, fC) < 1e-4


def test_gradients_with_duplicate_gold_texts():
    # Two identical targets in one batch: the duplicate is masked out of the
    # other example's softmax, and the loss stays differentiable.
    vocab = build_vocab([" ".join(WORDS)])
    cfg = PolyLiteConfig(embed_dim=4, num_codes=2, batch_size=5, history_negatives=0, seed=1)
    rng = np.random.default_rng(2)
    pairs = [make_pair(rng) for _ in range(3)]
    clone = TrainingPair(
        context=pairs[0].context,
        target=pairs[1].target,
        source=pairs[0].source,
        round_id=1,
        quality=None,
        target_author=Speaker.HUMAN,
        episode_id="dup",
    )
    resolved = [_resolve(p, vocab, 24) for p in pairs + [clone]]
    batch = prepare_batch(resolved, 0, rng)
    assert batch.masked[1][3] and batch.masked[3][1]
    E = rng.normal(0, 0.5, size=(len(vocab), cfg.embed_dim))
    C = rng.normal(0, 0.5, size=(cfg.num_codes, cfg.embed_dim))
    loss, gE, gC = batch_loss_and_grads(E, C, batch)
    assert math.isfinite(loss)
    fE, fC = finite_difference_grads(E, C, batch)
    assert max_relative_error(gE, fE) < 1e-4
    assert max_relative_error(gC, fC) < 1e-4


def test_empty_context_contributes_constant_loss_and_zero_grads():
    vocab = build_vocab([" ".join(WORDS)])
    rng = np.random.default_rng(3)
    E = rng.normal(0, 0.5, size=(len(vocab), 4))
    C = rng.normal(0, 0.5, size=(2, 4))
    batch = PreparedBatch(
        contexts=[[]],
        candidates=[[[3], [4], [5]]],
        gold_index=[0],
        masked=[np.array([False, False, False])],
    )
    loss, gE, gC = batch_loss_and_grads(E, C, batch)
    assert loss == pytest.approx(math.log(3))
    assert np.all(gE == 0) and np.all(gC == 0)


def test_history_negatives_never_equal_gold():
    vocab = build_vocab([" ".join(WORDS)])
    pair = TrainingPair(
        context=ContextBundle(
            location_description="cave",
            self_persona="dragon",
            partner_name="Guide",
            dialogue_history=(("Guide", "ale inn"), ("Guide", "torch rune"), ("Guide", "ale inn")),
        ),
        target="ale inn",
        source=PairSource.WILD,
        round_id=1,
        quality=12,
        target_author=Speaker.HUMAN,
        episode_id="e1",
    )
    rng = np.random.default_rng(0)
    resolved = [_resolve(pair, vocab, 24), _resolve(pair, vocab, 24)]
    for _ in range(20):
        batch = prepare_batch(resolved, 4, rng)
        # Only "torch rune" survives the gold filter: at most 1 extra candidate.
        assert all(len(c) <= 3 for c in batch.candidates)


def seeded_pairs(n, seed=7):
    rng = np.random.default_rng(seed)
    return [make_pair(rng) for _ in range(n)]


def test_train_zero_lr_leaves_parameters_unchanged():
    pairs = seeded_pairs(12)
    vocab = build_vocab([p.target for p in pairs] + [" ".join(WORDS)])
    cfg = PolyLiteConfig(
        embed_dim=8, num_codes=2, batch_size=4, epochs=2, learning_rate=0.0, seed=4
    )
    model = PolyLiteModel.init(vocab, cfg)
    trained, trace = train(model, pairs)
    assert np.array_equal(trained.E, model.E)
    assert np.array_equal(trained.C, model.C)
    assert len(trace) == 2
    assert all(math.isfinite(x) for x in trace)


def test_train_deterministic_given_seed():
    pairs = seeded_pairs(20)
    vocab = build_vocab([p.target for p in pairs] + [" ".join(WORDS)])
    cfg = PolyLiteConfig(embed_dim=8, num_codes=2, batch_size=6, epochs=3, seed=11)
    a, trace_a = train(PolyLiteModel.init(vocab, cfg), pairs)
    b, trace_b = train(PolyLiteModel.init(vocab, cfg), pairs)
    assert trace_a == trace_b
    assert np.array_equal(a.E, b.E)
    assert np.array_equal(a.C, b.C)


def test_train_clamps_batch_size():
    pairs = seeded_pairs(3)
    vocab = build_vocab([p.target for p in pairs] + [" ".join(WORDS)])
    cfg = PolyLiteConfig(embed_dim=4, num_codes=2, batch_size=64, epochs=1, seed=0)
    _, trace = train(PolyLiteModel.init(vocab, cfg), pairs)
    assert len(trace) == 1


def test_train_decreases_loss():
    pairs = seeded_pairs(40, seed=13)
    vocab = build_vocab([p.target for p in pairs] + [" ".join(WORDS)])
    cfg = PolyLiteConfig(embed_dim=16, num_codes=2, batch_size=8, epochs=8, seed=1)
    _, trace = train(PolyLiteModel.init(vocab, cfg), pairs)
    assert trace[-1] < trace[0]


def test_train_rejects_empty_pairs():
    model = PolyLiteModel.init(build_vocab(["a"]), PolyLiteConfig(embed_dim=4, num_codes=2))
    with pytest.raises(ValueError):
        train(model, [])


def test_train_aborts_on_nonfinite_loss():
    pairs = seeded_pairs(6)
    vocab = build_vocab([p.target for p in pairs] + [" ".join(WORDS)])
    cfg = PolyLiteConfig(embed_dim=4, num_codes=2, batch_size=3, epochs=1, seed=0)
    model = PolyLiteModel.init(vocab, cfg)
    model.E[:] = 1e200
    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(RuntimeError, match="non-finite"):
            train(model, pairs)


def test_loss_trace_csv_format():
    out = loss_trace_csv([2.5, 1.25])
    assert out == "epoch,mean_loss\n1,2.500000\n2,1.250000\n"


def separable_corpus(num_keys=24, contexts_per_key=5, seed=0):
    # Each persona keyword deterministically selects its reply, so a
    # bag-of-words solution exists. The keyword dominates the context: with
    # mean-pooled embeddings the signal must survive the pooling.
    rng = np.random.default_rng(seed)
    filler = ["the", "and", "with", "some"]
    keys = [f"key{i}" for i in range(num_keys)]
    replies = [f"reply{i} marker{i}" for i in range(num_keys)]
    train_pairs, eval_pairs = [], []
    for i, key in enumerate(keys):
        for rep in range(contexts_per_key):
            noise = " ".join(rng.choice(filler, size=2))
            pair = TrainingPair(
                context=ContextBundle(
                    location_description="room",
                    self_persona=f"{key} {key} {noise}",
                    partner_name="Guide",
                    dialogue_history=(("Guide", noise),),
                ),
                target=replies[i],
                source=PairSource.SEED_CORPUS,
                round_id=1,
                quality=None,
                target_author=Speaker.HUMAN,
                episode_id=f"seed-{i}-{rep}",
            )
            if rep == contexts_per_key - 1:
                eval_pairs.append(pair)
            else:
                train_pairs.append(pair)
    return train_pairs, eval_pairs, replies


def test_separable_corpus_reaches_high_hits():
    train_pairs, eval_pairs, replies = separable_corpus()
    corpus = [p.target for p in train_pairs]
    for p in train_pairs:
        corpus.append(p.context.self_persona)
        corpus.append(p.context.location_description)
    vocab = build_vocab(corpus)
    cfg = PolyLiteConfig(
        embed_dim=24,
        num_codes=2,
        max_context_tokens=48,
        learning_rate=2.0,
        batch_size=16,
        history_negatives=2,
        epochs=40,
        seed=3,
    )
    model = PolyLiteModel.init(vocab, cfg)
    bank = CandidateBank.build(replies)
    before = evaluate_hits(model, eval_pairs, bank, seed=99)
    trained, trace = train(model, train_pairs)
    after = evaluate_hits(trained, eval_pairs, bank, seed=99)
    assert trace[-1] < trace[0]
    assert before.hits_at_1_of_20 < 0.3
    assert after.hits_at_1_of_20 >= 0.9
