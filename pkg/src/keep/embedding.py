"""Dense concept embeddings and their on-disk formats.

Text format::

    V d kind
    <external_id> v1 ... vd        (V lines, fixed-precision decimals)

Binary format (little endian): the 8 magic bytes ``KEEPEMB1``, ``u32 V``,
``u32 d``, then ``V*d`` float32 values in row-major order.  The binary
variant carries no ids; rows are internal indices ``0..V-1``.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .validation import check_embedding_values

KINDS = ("anchor", "target", "context", "final")
MAGIC = b"KEEPEMB1"
TEXT_DECIMALS = 8


@dataclass(eq=False)
class EmbeddingMatrix:
    """``V x d`` matrix whose row ``i`` belongs to the concept ``ids[i]``."""

    values: np.ndarray
    ids: np.ndarray = None
    kind: str = "final"
    _row: dict = field(init=False, repr=False, default=None)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        self.values = check_embedding_values(self.values, dtype=[np.float64, np.float32])
        if self.ids is None:
            self.ids = np.arange(self.values.shape[0], dtype=np.int64)
        self.ids = np.asarray(self.ids, dtype=np.int64)
        if self.ids.shape != (self.values.shape[0],):
            raise ValueError(
                f"{len(self.ids)} ids for {self.values.shape[0]} embedding rows"
            )
        if len(np.unique(self.ids)) != len(self.ids):
            raise ValueError("embedding ids must be unique")

    @property
    def vocab_size(self):
        return self.values.shape[0]

    @property
    def dim(self):
        return self.values.shape[1]

    @property
    def shape(self):
        return self.values.shape

    def row_of(self, concept_id):
        if self._row is None:
            self._row = {int(e): i for i, e in enumerate(self.ids)}
        return self._row[int(concept_id)]

    def rows_for(self, concept_ids):
        """Row indices for `concept_ids`, or -1 where a concept is absent."""
        if self._row is None:
            self._row = {int(e): i for i, e in enumerate(self.ids)}
        return np.array([self._row.get(int(c), -1) for c in concept_ids], dtype=np.int64)

    def reindex(self, concept_ids):
        """Rows for `concept_ids` in that order; raises KeyError if one is absent."""
        rows = self.rows_for(concept_ids)
        if (rows < 0).any():
            raise KeyError(f"concepts absent from embedding: {np.asarray(concept_ids)[rows < 0][:10]}")
        return EmbeddingMatrix(self.values[rows], ids=np.asarray(concept_ids), kind=self.kind)


def save_text(emb: EmbeddingMatrix, path, decimals=TEXT_DECIMALS):
    fmt = f"%.{decimals}f"
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{emb.vocab_size} {emb.dim} {emb.kind}\n")
        for ext, row in zip(emb.ids, emb.values):
            fh.write(str(int(ext)))
            fh.write(" ")
            fh.write(" ".join(fmt % v for v in row))
            fh.write("\n")


def load_text(path):
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 3:
            raise ValueError(f"{path}: malformed header {header!r}")
        V, d, kind = int(header[0]), int(header[1]), header[2]
        ids = np.empty(V, dtype=np.int64)
        values = np.empty((V, d), dtype=np.float64)
        for i in range(V):
            parts = fh.readline().split()
            if len(parts) != d + 1:
                raise ValueError(f"{path}: row {i} has {len(parts) - 1} values, expected {d}")
            ids[i] = int(parts[0])
            values[i] = np.array(parts[1:], dtype=np.float64)
    return EmbeddingMatrix(values, ids=ids, kind=kind)


def save_binary(emb: EmbeddingMatrix, path):
    payload = np.ascontiguousarray(emb.values, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", emb.vocab_size, emb.dim))
        fh.write(payload.tobytes())


def load_binary(path, kind="final", ids=None):
    """Binary files carry no concept ids; pass `ids` to attach them."""
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise ValueError(f"{path}: bad magic {raw[:8]!r}")
    V, d = struct.unpack("<II", raw[8:16])
    values = np.frombuffer(raw, dtype="<f4", offset=16)
    if values.size != V * d:
        raise ValueError(f"{path}: payload holds {values.size} floats, header says {V}x{d}")
    return EmbeddingMatrix(values.reshape(V, d).astype(np.float32), ids=ids, kind=kind)


def save(emb, path, binary=None):
    path = Path(path)
    if binary is None:
        binary = path.suffix == ".bin"
    (save_binary if binary else save_text)(emb, path)


def load(path, kind="final", ids=None):
    """Load either format, sniffing the magic bytes."""
    with open(path, "rb") as fh:
        head = fh.read(8)
    if head == MAGIC:
        return load_binary(path, kind=kind, ids=ids)
    return load_text(path)
