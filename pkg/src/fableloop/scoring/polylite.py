"""Trainable retrieval scorer: token embeddings plus code attention.

The context encoder is an embedding table attended by N learned code
vectors; candidates are mean-pooled embeddings that attend back over the
codes. Training is softmax cross-entropy where each example competes
against the other in-batch gold targets and utterances sampled from its
own dialogue history. All gradients are analytic; batch_loss exists so a
finite-difference oracle can check them.
"""

from __future__ import annotations

import math
import weakref
from dataclasses import dataclass

import numpy as np

from ..core import TrainingPair, serialize_context
from ..text import UNK_ID, Vocabulary, tokenize
from .bank import CandidateBank

INIT_SCALE = 0.1


@dataclass(frozen=True)
class PolyLiteConfig:
    embed_dim: int = 64
    num_codes: int = 5
    max_context_tokens: int = 128
    learning_rate: float = 0.05
    batch_size: int = 32
    history_negatives: int = 4
    epochs: int = 3
    seed: int = 0
    clip_norm: float = 1.0

    def __post_init__(self) -> None:
        if self.embed_dim < 1:
            raise ValueError("embed_dim must be >= 1")
        if self.num_codes < 1:
            raise ValueError("num_codes must be >= 1")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2: training needs in-batch negatives")


def softmax_rows(x: np.ndarray) -> np.ndarray:
    m = x.max(axis=-1, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cols(x: np.ndarray) -> np.ndarray:
    m = x.max(axis=0, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=0, keepdims=True)


class PolyLiteModel:
    """Immutable-by-convention scorer snapshot: E is V x d, C is N x d.

    Parameters live as float64 in memory; checkpoints store float32.
    """

    def __init__(self, E: np.ndarray, C: np.ndarray, config: PolyLiteConfig, vocab: Vocabulary):
        if E.shape != (len(vocab), config.embed_dim):
            raise ValueError(f"E shape {E.shape} inconsistent with vocab/config")
        if C.shape != (config.num_codes, config.embed_dim):
            raise ValueError(f"C shape {C.shape} inconsistent with config")
        if not (np.isfinite(E).all() and np.isfinite(C).all()):
            raise ValueError("model parameters must be finite")
        self.E = E
        self.C = C
        self.config = config
        self.vocab = vocab
        self._bank_cache: "weakref.WeakKeyDictionary[CandidateBank, np.ndarray]" = (
            weakref.WeakKeyDictionary()
        )

    @classmethod
    def init(cls, vocab: Vocabulary, config: PolyLiteConfig) -> "PolyLiteModel":
        rng = np.random.default_rng(config.seed)
        E = rng.normal(0.0, INIT_SCALE, size=(len(vocab), config.embed_dim))
        C = rng.normal(0.0, INIT_SCALE, size=(config.num_codes, config.embed_dim))
        return cls(E=E, C=C, config=config, vocab=vocab)

    @classmethod
    def zeros(cls, vocab: Vocabulary, config: PolyLiteConfig) -> "PolyLiteModel":
        E = np.zeros((len(vocab), config.embed_dim))
        C = np.zeros((config.num_codes, config.embed_dim))
        return cls(E=E, C=C, config=config, vocab=vocab)

    @property
    def max_context_tokens(self) -> int:
        return self.config.max_context_tokens

    def get_params(self) -> dict:
        return {
            "embed_dim": self.config.embed_dim,
            "num_codes": self.config.num_codes,
            "max_context_tokens": self.config.max_context_tokens,
            "learning_rate": self.config.learning_rate,
            "batch_size": self.config.batch_size,
            "history_negatives": self.config.history_negatives,
            "epochs": self.config.epochs,
            "seed": self.config.seed,
            "clip_norm": self.config.clip_norm,
        }

    def candidate_ids(self, text: str) -> list[int]:
        # A candidate with no tokens at all scores through the <unk> embedding.
        ids = self.vocab.ids(tokenize(text))
        return ids if ids else [UNK_ID]

    def candidate_embedding(self, text: str) -> np.ndarray:
        return self.E[self.candidate_ids(text)].mean(axis=0)

    def encode_context(self, context_tokens: list[str]) -> np.ndarray:
        """Attend the N codes over the context; N x d. Empty context -> zeros."""
        ids = self.vocab.ids(context_tokens)
        return encode_context_codes(self.E, self.C, ids)

    def bank_matrix(self, bank: CandidateBank) -> np.ndarray:
        cached = self._bank_cache.get(bank)
        if cached is None:
            cached = np.zeros((len(bank), self.config.embed_dim))
            for i, toks in enumerate(bank.tokens):
                ids = self.vocab.ids(toks) or [UNK_ID]
                cached[i] = self.E[ids].mean(axis=0)
            self._bank_cache[bank] = cached
        return cached

    def scores_for_bank(self, state: np.ndarray, bank: CandidateBank, indices=None) -> np.ndarray:
        matrix = self.bank_matrix(bank)
        if indices is not None:
            matrix = matrix[indices]
        return scores_from_codes(state, matrix)

    def scores_for_texts(self, state: np.ndarray, texts: list[str]) -> np.ndarray:
        U = np.stack([self.candidate_embedding(t) for t in texts])
        return scores_from_codes(state, U)

    def score(self, context_tokens: list[str], candidate_text: str) -> float:
        state = self.encode_context(context_tokens)
        return float(self.scores_for_texts(state, [candidate_text])[0])

    def fit(self, pairs: list[TrainingPair]) -> "PolyLiteModel":
        trained, _ = train(self, pairs)
        return trained


def encode_context_codes(E: np.ndarray, C: np.ndarray, ctx_ids: list[int]) -> np.ndarray:
    if not ctx_ids:
        return np.zeros_like(C)
    H = E[ctx_ids]
    Q = (H @ C.T) / math.sqrt(E.shape[1])
    A = softmax_cols(Q)
    return A.T @ H


def scores_from_codes(Y: np.ndarray, U: np.ndarray) -> np.ndarray:
    """score_m = sum_j w_mj g_mj with w = softmax(g / sqrt(d)) and g = U Y^T."""
    G = U @ Y.T
    W = softmax_rows(G / math.sqrt(U.shape[1]))
    return (W * G).sum(axis=1)


@dataclass
class PreparedBatch:
    """Fully resolved batch: pure function of (E, C) from here on.

    For example k, candidates[k] holds the B in-batch gold id-lists (index k
    is the example's own gold) followed by its sampled history negatives.
    masked[k] flags in-batch entries whose text equals the gold so duplicate
    targets are not counted as negatives.
    """

    contexts: list[list[int]]
    candidates: list[list[list[int]]]
    gold_index: list[int]
    masked: list[np.ndarray]


@dataclass
class _Resolved:
    ctx_ids: list[int]
    gold_text: str
    gold_ids: list[int]
    history: list[tuple[str, list[int]]]  # (text, ids) per prior turn


def _resolve(pair: TrainingPair, vocab: Vocabulary, max_context_tokens: int) -> _Resolved:
    ctx_tokens = serialize_context(pair.context, max_context_tokens)
    gold_ids = vocab.ids(tokenize(pair.target)) or [UNK_ID]
    history = []
    for _, text in pair.context.dialogue_history:
        ids = vocab.ids(tokenize(text)) or [UNK_ID]
        history.append((text, ids))
    return _Resolved(
        ctx_ids=vocab.ids(ctx_tokens),
        gold_text=pair.target,
        gold_ids=gold_ids,
        history=history,
    )


def prepare_batch(
    examples: list[_Resolved], history_negatives: int, rng: np.random.Generator
) -> PreparedBatch:
    golds = [ex.gold_ids for ex in examples]
    texts = [ex.gold_text for ex in examples]
    contexts, candidates, gold_index, masked = [], [], [], []
    for k, ex in enumerate(examples):
        cands = list(golds)
        mask = [j != k and texts[j] == ex.gold_text for j in range(len(examples))]
        pool = [ids for text, ids in ex.history if text != ex.gold_text]
        if pool and history_negatives > 0:
            take = min(history_negatives, len(pool))
            picked = rng.choice(len(pool), size=take, replace=False)
            for i in sorted(picked):
                cands.append(pool[i])
                mask.append(False)
        contexts.append(ex.ctx_ids)
        candidates.append(cands)
        gold_index.append(k)
        masked.append(np.array(mask, dtype=bool))
    return PreparedBatch(
        contexts=contexts, candidates=candidates, gold_index=gold_index, masked=masked
    )


def batch_loss(E: np.ndarray, C: np.ndarray, batch: PreparedBatch) -> float:
    """Summed cross-entropy over the batch; the finite-difference oracle calls this."""
    total = 0.0
    for k in range(len(batch.contexts)):
        Y = encode_context_codes(E, C, batch.contexts[k])
        U = np.stack([E[ids].mean(axis=0) for ids in batch.candidates[k]])
        z = scores_from_codes(Y, U)
        logits = np.where(batch.masked[k], -np.inf, z)
        zmax = logits.max()
        lse = zmax + math.log(np.exp(logits - zmax).sum())
        total += lse - z[batch.gold_index[k]]
    return total


def batch_loss_and_grads(
    E: np.ndarray, C: np.ndarray, batch: PreparedBatch
) -> tuple[float, np.ndarray, np.ndarray]:
    d = E.shape[1]
    scale = 1.0 / math.sqrt(d)
    gE = np.zeros_like(E)
    gC = np.zeros_like(C)
    total = 0.0
    for k in range(len(batch.contexts)):
        ctx = batch.contexts[k]
        cands = batch.candidates[k]
        mask = batch.masked[k]
        gold = batch.gold_index[k]

        U = np.stack([E[ids].mean(axis=0) for ids in cands])
        if ctx:
            H = E[ctx]
            Q = (H @ C.T) * scale
            A = softmax_cols(Q)
            Y = A.T @ H
        else:
            Y = np.zeros_like(C)
        G = U @ Y.T
        W = softmax_rows(G * scale)
        z = (W * G).sum(axis=1)

        logits = np.where(mask, -np.inf, z)
        zmax = logits.max()
        lse = zmax + math.log(np.exp(logits - zmax).sum())
        total += lse - z[gold]

        p = np.exp(logits - lse)
        dz = p.copy()
        dz[gold] -= 1.0
        # z_m = sum_j w_mj g_mj: the G-path is direct plus through the softmax.
        dP = W * (G - z[:, None]) * dz[:, None]
        coef = dz[:, None] * W + dP * scale
        gradU = coef @ Y
        for m, ids in enumerate(cands):
            np.add.at(gE, ids, gradU[m] / len(ids))
        if ctx:
            gradY = coef.T @ U
            Gam = H @ gradY.T
            AG = A * Gam
            dQ = AG - A * AG.sum(axis=0, keepdims=True)
            gC += (dQ.T @ H) * scale
            gradH = (dQ @ C) * scale + A @ gradY
            np.add.at(gE, ctx, gradH)
    return total, gE, gC


def train(
    model: PolyLiteModel, pairs: list[TrainingPair]
) -> tuple[PolyLiteModel, list[float]]:
    """Minibatch SGD with gradient-norm clipping; returns a new snapshot.

    Deterministic given config.seed: shuffling and history-negative sampling
    all draw from one generator. The loss trace holds the mean per-example
    loss of each epoch.
    """
    if not pairs:
        raise ValueError("train needs at least one pair")
    cfg = model.config
    E = model.E.copy()
    C = model.C.copy()
    resolved = [_resolve(p, model.vocab, cfg.max_context_tokens) for p in pairs]
    rng = np.random.default_rng(cfg.seed)
    B = min(cfg.batch_size, len(pairs))
    trace: list[float] = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(resolved))
        epoch_loss = 0.0
        for start in range(0, len(resolved), B):
            idx = order[start : start + B]
            batch = prepare_batch([resolved[i] for i in idx], cfg.history_negatives, rng)
            loss_sum, gE, gC = batch_loss_and_grads(E, C, batch)
            if not math.isfinite(loss_sum):
                raise RuntimeError(
                    f"non-finite loss {loss_sum} at epoch {epoch + 1}, "
                    f"batch starting at {start}"
                )
            n = len(idx)
            gE /= n
            gC /= n
            norm = math.sqrt((gE * gE).sum() + (gC * gC).sum())
            if cfg.clip_norm > 0 and norm > cfg.clip_norm:
                shrink = cfg.clip_norm / norm
                gE *= shrink
                gC *= shrink
            E -= cfg.learning_rate * gE
            C -= cfg.learning_rate * gC
            epoch_loss += loss_sum
        trace.append(epoch_loss / len(resolved))
    return PolyLiteModel(E=E, C=C, config=cfg, vocab=model.vocab), trace


def loss_trace_csv(trace: list[float]) -> str:
    lines = ["epoch,mean_loss"]
    for i, loss in enumerate(trace, start=1):
        lines.append(f"{i},{loss:.6f}")
    return "\n".join(lines) + "\n"
