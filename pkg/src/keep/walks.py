"""Second-order biased random walks over the (undirected) concept graph.

From the current node ``v`` reached from ``t``, a neighbor ``x`` of ``v`` gets
unnormalized weight ``1/p`` if ``x == t``, ``1`` if ``x`` is also a neighbor
of ``t``, and ``1/q`` otherwise.  The first step of a walk is uniform.

Every start node draws its uniforms from its own stream, seeded from
``(rng_seed, node)``, so the corpus does not depend on the thread count.
"""
from __future__ import annotations

import gzip
import io
from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np

from .exceptions import KeepError
from .validation import check_at_least, check_positive

NODE_CHUNK = 256


@dataclass(frozen=True)
class WalkConfig:
    walk_length: int = 30
    walks_per_node: int = 750
    p: float = 1.0
    q: float = 1.0
    rng_seed: int = 0

    def __post_init__(self):
        check_at_least(self.walk_length, "walk_length", 2)
        check_at_least(self.walks_per_node, "walks_per_node", 1)
        check_positive(self.p, "p")
        check_positive(self.q, "q")
        check_positive(self.rng_seed, "rng_seed", strict=False, integer=True)


@dataclass(eq=False)
class WalkCorpus:
    """Walks stored as a padded ``(n_walks, walk_length)`` int array plus lengths.

    Walks are ordered by ``(start node, replica)``.  Padding is ``-1``.
    """

    tokens: np.ndarray
    lengths: np.ndarray
    vocab_size: int

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.int32)
        self.lengths = np.asarray(self.lengths, dtype=np.int32)
        if self.tokens.ndim != 2 or self.tokens.shape[0] != self.lengths.shape[0]:
            raise ValueError("tokens must be (n_walks, max_len) with one length per walk")
        if len(self.lengths) and (self.lengths.min() < 1 or self.lengths.max() > self.tokens.shape[1]):
            raise ValueError("walk lengths must lie in [1, max_len]")

    def __len__(self):
        return len(self.lengths)

    def __iter__(self):
        for row, n in zip(self.tokens, self.lengths):
            yield row[:n]

    def __getitem__(self, k):
        return self.tokens[k, : self.lengths[k]]

    @property
    def n_tokens(self):
        return int(self.lengths.sum())

    def flat(self):
        """``(tokens, offsets)`` with walk ``k`` at ``tokens[offsets[k]:offsets[k+1]]``."""
        mask = np.arange(self.tokens.shape[1])[None, :] < self.lengths[:, None]
        offsets = np.zeros(len(self) + 1, dtype=np.int64)
        np.cumsum(self.lengths, out=offsets[1:])
        return np.ascontiguousarray(self.tokens[mask]), offsets

    @classmethod
    def from_walks(cls, walks, vocab_size):
        walks = [np.asarray(w, dtype=np.int32) for w in walks]
        width = max((len(w) for w in walks), default=1)
        tokens = np.full((len(walks), width), -1, dtype=np.int32)
        for k, w in enumerate(walks):
            tokens[k, : len(w)] = w
        return cls(tokens, [len(w) for w in walks], vocab_size)


@numba.njit(cache=True, nogil=True)
def _is_neighbor(indptr, indices, a, b):
    lo = indptr[a]
    hi = indptr[a + 1]
    while lo < hi:
        mid = (lo + hi) // 2
        x = indices[mid]
        if x == b:
            return True
        if x < b:
            lo = mid + 1
        else:
            hi = mid
    return False


@numba.njit(cache=True, nogil=True)
def _walk_block(indptr, indices, starts, uniforms, inv_p, inv_q, out, lengths, row0):
    n_rep = uniforms.shape[1]
    L = out.shape[1]
    weights = np.empty(indptr.shape[0], dtype=np.float64)
    for s in range(starts.shape[0]):
        start = starts[s]
        for r in range(n_rep):
            k = row0 + s * n_rep + r
            u = uniforms[s, r]
            out[k, 0] = start
            n = 1
            prev = -1
            cur = start
            while n < L:
                lo = indptr[cur]
                deg = indptr[cur + 1] - lo
                if deg == 0:
                    break
                if prev < 0:
                    j = int(u[n - 1] * deg)
                    if j >= deg:
                        j = deg - 1
                    nxt = indices[lo + j]
                else:
                    total = 0.0
                    for m in range(deg):
                        x = indices[lo + m]
                        if x == prev:
                            w = inv_p
                        elif _is_neighbor(indptr, indices, prev, x):
                            w = 1.0
                        else:
                            w = inv_q
                        total += w
                        weights[m] = total
                    target = u[n - 1] * total
                    j = 0
                    while j < deg - 1 and weights[j] <= target:
                        j += 1
                    nxt = indices[lo + j]
                out[k, n] = nxt
                n += 1
                prev = cur
                cur = nxt
            lengths[k] = n


def _node_uniforms(seed, nodes, walks_per_node, walk_length):
    u = np.empty((len(nodes), walks_per_node, walk_length - 1), dtype=np.float64)
    for s, v in enumerate(nodes):
        rng = np.random.default_rng([int(seed), int(v)])
        u[s] = rng.random((walks_per_node, walk_length - 1))
    return u


def generate_walks(ont, cfg: WalkConfig = WalkConfig(), n_jobs=1):
    """Generate ``walks_per_node`` walks from every concept of `ont`.

    `ont` may be an :class:`~keep.ontology.Ontology` or a CSR pair
    ``(indptr, indices)`` of sorted undirected neighbor lists.
    """
    if isinstance(ont, tuple):
        indptr, indices = (np.asarray(a, dtype=np.int64) for a in ont)
    else:
        indptr, indices = ont.undirected_adjacency()
    V = len(indptr) - 1
    if V <= 0:
        raise KeepError("cannot generate walks on an empty graph")

    n_walks = V * cfg.walks_per_node
    out = np.full((n_walks, cfg.walk_length), -1, dtype=np.int32)
    lengths = np.zeros(n_walks, dtype=np.int32)
    chunks = [np.arange(a, min(a + NODE_CHUNK, V)) for a in range(0, V, NODE_CHUNK)]

    def run(nodes):
        u = _node_uniforms(cfg.rng_seed, nodes, cfg.walks_per_node, cfg.walk_length)
        _walk_block(
            indptr, indices, nodes.astype(np.int64), u, 1.0 / cfg.p, 1.0 / cfg.q,
            out, lengths, int(nodes[0]) * cfg.walks_per_node,
        )

    if n_jobs is not None and n_jobs > 1:
        # chunks write disjoint row ranges and the kernel releases the GIL
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            list(pool.map(run, chunks))
    else:
        for nodes in chunks:
            run(nodes)
    return WalkCorpus(out, lengths, V)


def transition_probabilities(indptr, indices, prev, cur, p, q):
    """Exact next-step distribution over the neighbors of `cur` (given `prev`)."""
    nbrs = np.asarray(indices[indptr[cur]:indptr[cur + 1]])
    if prev is None:
        return nbrs, np.full(len(nbrs), 1.0 / len(nbrs))
    prev_nbrs = set(indices[indptr[prev]:indptr[prev + 1]].tolist())
    w = np.array([1.0 / p if x == prev else (1.0 if x in prev_nbrs else 1.0 / q) for x in nbrs])
    return nbrs, w / w.sum()


def save_corpus(corpus: WalkCorpus, path):
    """One walk per line, space separated; ``.gz`` paths are gzip-compressed."""
    path = Path(path)
    buf = io.StringIO()
    for walk in corpus:
        buf.write(" ".join(map(str, walk.tolist())))
        buf.write("\n")
    data = buf.getvalue().encode("ascii")
    if path.suffix == ".gz":
        # mtime=0 keeps the container byte-identical across runs
        with open(path, "wb") as raw, gzip.GzipFile(fileobj=raw, mode="wb", mtime=0, filename="") as fh:
            fh.write(data)
    else:
        path.write_bytes(data)


def load_corpus(path, vocab_size=None):
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rt", encoding="ascii") as fh:
        walks = [np.array(line.split(), dtype=np.int32) for line in fh if line.strip()]
    if vocab_size is None:
        vocab_size = int(max((w.max() for w in walks), default=-1)) + 1
    corpus = WalkCorpus.from_walks(walks, vocab_size)
    if len(corpus) and corpus.tokens.max() >= vocab_size:
        raise ValueError(f"{path}: walk index exceeds vocabulary size {vocab_size}")
    return corpus
