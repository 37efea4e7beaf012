"""Versioned binary checkpoints for the trainable scorer.

Layout: 4 magic bytes, format version (u32 LE), header length (u32 LE),
UTF-8 JSON header (config, vocab, shapes), then the parameter blocks E and
C as row-major little-endian float32. The vocab travels inside the file so
a checkpoint is self-contained.
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

from ..text import Vocabulary
from .polylite import PolyLiteConfig, PolyLiteModel

MAGIC = b"FLPE"
FORMAT_VERSION = 1


def save_checkpoint(model: PolyLiteModel, path: str) -> None:
    """Write atomically: temp file in the same directory, then rename."""
    header = {
        "config": model.get_params(),
        "vocab": {
            "id_to_token": model.vocab.id_to_token,
            "document_frequency": model.vocab.document_frequency,
            "num_documents": model.vocab.num_documents,
        },
        "shapes": {
            "V": model.E.shape[0],
            "d": model.E.shape[1],
            "N": model.C.shape[0],
        },
    }
    blob = json.dumps(header).encode("utf-8")
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", FORMAT_VERSION, len(blob)))
        f.write(blob)
        f.write(np.ascontiguousarray(model.E, dtype="<f4").tobytes())
        f.write(np.ascontiguousarray(model.C, dtype="<f4").tobytes())
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp, path)


def load_checkpoint(path: str) -> PolyLiteModel:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != MAGIC:
        raise ValueError(f"{path} is not a model checkpoint (bad magic)")
    version, header_len = struct.unpack_from("<II", data, 4)
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    header_end = 12 + header_len
    header = json.loads(data[12:header_end].decode("utf-8"))
    config = PolyLiteConfig(**header["config"])
    vocab_rec = header["vocab"]
    vocab = Vocabulary(
        token_to_id={t: i for i, t in enumerate(vocab_rec["id_to_token"])},
        id_to_token=list(vocab_rec["id_to_token"]),
        document_frequency=dict(vocab_rec["document_frequency"]),
        num_documents=vocab_rec["num_documents"],
    )
    shapes = header["shapes"]
    v, d, n = shapes["V"], shapes["d"], shapes["N"]
    e_bytes = v * d * 4
    c_bytes = n * d * 4
    if len(data) != header_end + e_bytes + c_bytes:
        raise ValueError(f"{path} truncated or oversized")
    E = np.frombuffer(data, dtype="<f4", count=v * d, offset=header_end)
    C = np.frombuffer(data, dtype="<f4", count=n * d, offset=header_end + e_bytes)
    return PolyLiteModel(
        E=E.reshape(v, d).astype(np.float64),
        C=C.reshape(n, d).astype(np.float64),
        config=config,
        vocab=vocab,
    )
