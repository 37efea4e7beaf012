from .bank import CandidateBank
from .checkpoint import load_checkpoint, save_checkpoint
from .evaluation import EvalReport, evaluate_hits
from .polylite import (
    PolyLiteConfig,
    PolyLiteModel,
    batch_loss,
    batch_loss_and_grads,
    loss_trace_csv,
    prepare_batch,
    train,
)
from .rank import DecodingControl, ScoredCandidate, rank_candidates
from .tfidf import TfIdfModel

__all__ = [
    "CandidateBank",
    "DecodingControl",
    "EvalReport",
    "PolyLiteConfig",
    "PolyLiteModel",
    "ScoredCandidate",
    "TfIdfModel",
    "batch_loss",
    "batch_loss_and_grads",
    "evaluate_hits",
    "load_checkpoint",
    "loss_trace_csv",
    "prepare_batch",
    "rank_candidates",
    "save_checkpoint",
    "train",
]
