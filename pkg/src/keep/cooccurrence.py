"""Patient-level co-occurrence counts over the retained concept vocabulary.

A patient is labelled with a concept when it occurs at least twice in their
history after roll-up of excluded concepts; every unordered pair of labels
then contributes one count to ``X[i, j]``.
"""
from __future__ import annotations

import csv
import logging
import os
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np
import scipy.sparse as sp

from .exceptions import UnknownConceptError

logger = logging.getLogger(__name__)

MIN_OCCURRENCES = 2


@dataclass
class PatientRecord:
    patient_id: str
    events: list = field(default_factory=list)  # (concept_id, day_ordinal)

    def concepts(self):
        return [c for c, _ in self.events]


def phenotype(record: PatientRecord, rollup, retained_vocab, on_unknown="skip",
              min_occurrences=MIN_OCCURRENCES):
    """Set of retained concept ids assigned to `record`.

    Excluded concepts are replaced by every one of their roll-up targets
    before counting, so two occurrences of distinct children of ``a`` count
    as two occurrences of ``a``.
    """
    if on_unknown not in ("skip", "error"):
        raise ValueError(f"on_unknown must be 'skip' or 'error', got {on_unknown!r}")
    counts = Counter()
    for concept, _day in record.events:
        concept = int(concept)
        if concept in retained_vocab:
            counts[concept] += 1
            continue
        targets = rollup.get(concept) if rollup is not None else None
        if targets:
            for t in targets:
                counts[int(t)] += 1
        elif on_unknown == "error":
            raise UnknownConceptError(
                f"patient {record.patient_id}: concept {concept} is neither retained nor rolled up"
            )
        else:
            logger.warning("patient %s: skipping unknown concept %s", record.patient_id, concept)
    return {c for c, n in counts.items() if n >= min_occurrences}


@dataclass(eq=False)
class CooccurrenceMatrix:
    """Upper-triangular sparse pair counts.

    ``rows[k] < cols[k]`` always holds and entries are sorted by ``(row, col)``.
    ``marginals[i]`` is the number of patients labelled with concept ``i``
    (``None`` when loaded from a file that does not carry them).
    """

    vocab_size: int
    rows: np.ndarray
    cols: np.ndarray
    counts: np.ndarray
    marginals: np.ndarray = None
    n_patients: int = 0

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.int64)
        self.cols = np.asarray(self.cols, dtype=np.int64)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if not (self.rows.shape == self.cols.shape == self.counts.shape):
            raise ValueError("rows, cols and counts must have equal length")
        if self.nnz:
            if (self.rows >= self.cols).any():
                raise ValueError("entries must satisfy i < j (no diagonal, upper triangle)")
            if self.cols.max() >= self.vocab_size or self.rows.min() < 0:
                raise ValueError("entry index outside the vocabulary")
            if (self.counts <= 0).any():
                raise ValueError("counts must be positive")
            order = np.lexsort((self.cols, self.rows))
            self.rows, self.cols, self.counts = self.rows[order], self.cols[order], self.counts[order]

    @property
    def nnz(self):
        return len(self.counts)

    @property
    def shape(self):
        return (self.vocab_size, self.vocab_size)

    def get(self, i, j):
        if i == j:
            return 0
        i, j = (i, j) if i < j else (j, i)
        keys = self.rows * self.vocab_size + self.cols
        k = np.searchsorted(keys, i * self.vocab_size + j)
        if k < len(keys) and keys[k] == i * self.vocab_size + j:
            return int(self.counts[k])
        return 0

    def __getitem__(self, ij):
        return self.get(*ij)

    def total(self):
        return int(self.counts.sum())

    def to_sparse(self, symmetric=True):
        upper = sp.coo_matrix((self.counts, (self.rows, self.cols)), shape=self.shape)
        return (upper + upper.T).tocsr() if symmetric else upper.tocsr()

    def to_dense(self):
        out = np.zeros(self.shape, dtype=np.int64)
        out[self.rows, self.cols] = self.counts
        out[self.cols, self.rows] = self.counts
        return out

    def both_directions(self):
        """``(i, j, count)`` with each stored pair listed once as (i, j) and once as (j, i)."""
        return (
            np.concatenate([self.rows, self.cols]),
            np.concatenate([self.cols, self.rows]),
            np.concatenate([self.counts, self.counts]),
        )

    @classmethod
    def from_sparse(cls, matrix):
        m = sp.triu(sp.coo_matrix(matrix), k=1).tocoo()
        m.sum_duplicates()
        keep = m.data > 0
        return cls(m.shape[0], m.row[keep], m.col[keep], np.rint(m.data[keep]).astype(np.int64))


def build_cooccurrence(records: Iterable[PatientRecord], rollup, vocab: Mapping[int, int],
                       on_unknown="skip"):
    """Accumulate patient-level pair incidences.

    `vocab` maps retained external ids to internal indices ``0..V-1``.
    """
    V = len(vocab)
    keys = []
    labelled = []
    n_patients = 0
    for rec in records:
        n_patients += 1
        ph = phenotype(rec, rollup, vocab, on_unknown=on_unknown)
        idx = np.sort(np.fromiter((vocab[c] for c in ph), dtype=np.int64, count=len(ph)))
        labelled.append(idx)
        if len(idx) > 1:
            a, b = np.triu_indices(len(idx), k=1)
            keys.append(idx[a] * V + idx[b])
    marginals = np.bincount(np.concatenate(labelled), minlength=V) if labelled else np.zeros(V, dtype=np.int64)
    if keys:
        uniq, counts = np.unique(np.concatenate(keys), return_counts=True)
    else:
        uniq = counts = np.zeros(0, dtype=np.int64)
    return CooccurrenceMatrix(V, uniq // V, uniq % V, counts, marginals=marginals,
                              n_patients=n_patients)


def read_patients(path_or_lines):
    """Group ``patient_id<TAB>concept_id<TAB>day`` rows into :class:`PatientRecord` objects.

    Rows need not be sorted; patients come out in order of first appearance.
    """
    if isinstance(path_or_lines, (str, os.PathLike)):
        with open(path_or_lines, encoding="utf-8") as fh:
            return read_patients(fh)
    records = {}
    rows = (ln for ln in path_or_lines if ln.strip() and not ln.startswith("#"))
    for row in csv.reader(rows, delimiter="\t"):
        if len(row) != 3:
            raise ValueError(f"patient row must have 3 columns, got {row!r}")
        pid, concept, day = row
        rec = records.get(pid)
        if rec is None:
            rec = records[pid] = PatientRecord(pid)
        rec.events.append((int(concept), int(day)))
    return list(records.values())


def write_patients(records, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            for concept, day in rec.events:
                fh.write(f"{rec.patient_id}\t{concept}\t{day}\n")


def save_matrix(X: CooccurrenceMatrix, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"#V={X.vocab_size}\n")
        if X.marginals is not None:
            fh.write("#marginals=" + ",".join(map(str, X.marginals.tolist())) + "\n")
            fh.write(f"#patients={X.n_patients}\n")
        for i, j, c in zip(X.rows.tolist(), X.cols.tolist(), X.counts.tolist()):
            fh.write(f"{i}\t{j}\t{c}\n")


def load_matrix(path):
    V = None
    marginals = None
    n_patients = 0
    rows, cols, counts = [], [], []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("#V="):
                V = int(line[3:])
            elif line.startswith("#marginals="):
                body = line[len("#marginals="):].strip()
                marginals = np.array(body.split(","), dtype=np.int64) if body else np.zeros(0, dtype=np.int64)
            elif line.startswith("#patients="):
                n_patients = int(line[len("#patients="):])
            elif line.strip() and not line.startswith("#"):
                i, j, c = line.split("\t")
                rows.append(int(i))
                cols.append(int(j))
                counts.append(int(c))
    if V is None:
        raise ValueError(f"{path}: missing '#V=<V>' header")
    return CooccurrenceMatrix(V, rows, cols, counts, marginals=marginals, n_patients=n_patients)
