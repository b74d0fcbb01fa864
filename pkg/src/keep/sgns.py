"""Skip-gram with negative sampling over walk corpora, and the Node2Vec estimator.

For a positive pair (center ``c``, context ``o``) and negatives ``k_1..k_n``
drawn from the unigram^0.75 noise distribution the loss is::

    -log sig(t_c . u_o) - sum_k log sig(-t_c . u_k)

where ``t`` are target vectors and ``u`` context vectors.  Training uses
plain SGD with a learning rate decaying linearly to ``1e-4 * lr`` over all
epochs.  Only the target vectors are returned.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numba
import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .embedding import EmbeddingMatrix
from .exceptions import DivergenceError, KeepError
from .validation import check_at_least, check_indices, check_positive, derive_seed
from .walks import WalkConfig, WalkCorpus, generate_walks

logger = logging.getLogger(__name__)

NOISE_POWER = 0.75
MIN_LR_FRACTION = 1e-4


@dataclass(frozen=True)
class SgnsConfig:
    dim: int = 100
    window: int = 10
    negatives_per_positive: int = 5
    min_count: int = 1
    epochs: int = 1
    learning_rate: float = 0.025
    batch_size: int = 4096
    rng_seed: int = 0
    deterministic: bool = True

    def __post_init__(self):
        check_at_least(self.dim, "dim", 1)
        check_at_least(self.window, "window", 1)
        check_at_least(self.negatives_per_positive, "negatives_per_positive", 1)
        check_at_least(self.min_count, "min_count", 1)
        check_at_least(self.epochs, "epochs", 1)
        check_positive(self.learning_rate, "learning_rate")
        check_at_least(self.batch_size, "batch_size", 1)
        check_positive(self.rng_seed, "rng_seed", strict=False, integer=True)


def sgns_loss_and_grad(target, context, negatives):
    """Loss and gradients for one (center, context, negatives) tuple.

    Parameters are the vectors themselves: ``target`` (d,), ``context`` (d,)
    and ``negatives`` (n, d).  Returns ``(loss, g_target, g_context, g_negatives)``.
    """
    target = np.asarray(target, dtype=np.float64)
    context = np.asarray(context, dtype=np.float64)
    negatives = np.atleast_2d(np.asarray(negatives, dtype=np.float64))
    s_pos = target @ context
    s_neg = negatives @ target
    loss = np.logaddexp(0.0, -s_pos) + np.logaddexp(0.0, s_neg).sum()
    sig_pos = 1.0 / (1.0 + np.exp(-s_pos))
    sig_neg = 1.0 / (1.0 + np.exp(-s_neg))
    g_target = -(1.0 - sig_pos) * context + sig_neg @ negatives
    g_context = -(1.0 - sig_pos) * target
    g_negatives = sig_neg[:, None] * target[None, :]
    return float(loss), g_target, g_context, g_negatives


@numba.njit(cache=True, nogil=True, fastmath=True)
def _sgd_pair(W, C, center, ctx, neg_ids, lr, grad_buf):
    """One SGD update for a (center, context) pair; returns the pair loss."""
    d = W.shape[1]
    for m in range(d):
        grad_buf[m] = 0.0
    loss = 0.0
    for k in range(-1, neg_ids.shape[0]):
        if k < 0:
            o = ctx
        else:
            o = neg_ids[k]
            if o == ctx:
                continue
        acc = W[center, 0] * 0
        for m in range(d):
            acc += W[center, m] * C[o, m]
        s = float(acc)
        if k >= 0:
            s = -s
        # z = sig(s) is the probability of the observed label
        if s > 30.0:
            z = 1.0
            loss += np.exp(-s)
        elif s < -30.0:
            z = 0.0
            loss -= s
        else:
            z = 1.0 / (1.0 + np.exp(-s))
            loss -= np.log(z)
        # d loss / d (t . u) is (z - 1) for the positive and (1 - z) for negatives
        g = W.dtype.type(z - 1.0 if k < 0 else 1.0 - z)
        step = W.dtype.type(lr) * g
        for m in range(d):
            grad_buf[m] += g * C[o, m]
            C[o, m] -= step * W[center, m]
    lr_t = W.dtype.type(lr)
    for m in range(d):
        W[center, m] -= lr_t * grad_buf[m]
    return loss


@numba.njit(cache=True, nogil=True)
def _draw_negatives(prob, alias, n, out):
    V = prob.shape[0]
    for k in range(n):
        x = np.random.random() * V
        col = int(x)
        if col >= V:
            col = V - 1
        out[k] = col if (x - col) < prob[col] else alias[col]


@numba.njit(cache=True, nogil=True)
def _epoch_serial(W, C, tokens, offsets, keep, prob, alias, window, n_neg, seed,
                  lr_start, lr_end, total_pairs, batch_size):
    np.random.seed(seed)
    d = W.shape[1]
    grad_buf = np.empty(d, dtype=W.dtype)
    neg_ids = np.empty(n_neg, dtype=np.int64)
    done = 0
    lr = lr_start
    loss = 0.0
    n_walks = offsets.shape[0] - 1
    for k in range(n_walks):
        a = offsets[k]
        b = offsets[k + 1]
        for i in range(a, b):
            c = tokens[i]
            if not keep[c]:
                continue
            lo = max(a, i - window)
            hi = min(b, i + window + 1)
            for j in range(lo, hi):
                if j == i or not keep[tokens[j]]:
                    continue
                _draw_negatives(prob, alias, n_neg, neg_ids)
                loss += _sgd_pair(W, C, c, tokens[j], neg_ids, lr, grad_buf)
                done += 1
                if done % batch_size == 0:
                    frac = done / total_pairs
                    lr = lr_start + (lr_end - lr_start) * min(frac, 1.0)
    return loss, done


@numba.njit(cache=True, parallel=True)
def _epoch_parallel(W, C, tokens, offsets, keep, prob, alias, window, n_neg, seed,
                    lr_start, lr_end, n_shards):
    # lock-free (Hogwild-style) updates; shards are contiguous walk ranges
    n_walks = offsets.shape[0] - 1
    losses = np.zeros(n_shards)
    counts = np.zeros(n_shards, dtype=np.int64)
    for s in numba.prange(n_shards):
        np.random.seed(seed + s)
        d = W.shape[1]
        grad_buf = np.empty(d, dtype=W.dtype)
        neg_ids = np.empty(n_neg, dtype=np.int64)
        k0 = s * n_walks // n_shards
        k1 = (s + 1) * n_walks // n_shards
        span = max(k1 - k0, 1)
        for k in range(k0, k1):
            lr = lr_start + (lr_end - lr_start) * (k - k0) / span
            a = offsets[k]
            b = offsets[k + 1]
            for i in range(a, b):
                c = tokens[i]
                if not keep[c]:
                    continue
                lo = max(a, i - window)
                hi = min(b, i + window + 1)
                for j in range(lo, hi):
                    if j == i or not keep[tokens[j]]:
                        continue
                    _draw_negatives(prob, alias, n_neg, neg_ids)
                    losses[s] += _sgd_pair(W, C, c, tokens[j], neg_ids, lr, grad_buf)
                    counts[s] += 1
    return losses.sum(), counts.sum()


@numba.njit(cache=True)
def _count_pairs(tokens, offsets, keep, window):
    total = 0
    for k in range(offsets.shape[0] - 1):
        a = offsets[k]
        b = offsets[k + 1]
        for i in range(a, b):
            if not keep[tokens[i]]:
                continue
            lo = max(a, i - window)
            hi = min(b, i + window + 1)
            for j in range(lo, hi):
                if j != i and keep[tokens[j]]:
                    total += 1
    return total


def noise_distribution(counts, power=NOISE_POWER):
    w = np.asarray(counts, dtype=np.float64) ** power
    return w / w.sum()


def alias_table(probs):
    """Walker alias table ``(prob, alias)`` for exact O(1) categorical sampling."""
    probs = np.asarray(probs, dtype=np.float64)
    n = len(probs)
    scaled = probs * n / probs.sum()
    prob = np.ones(n)
    alias = np.arange(n, dtype=np.int64)
    small = [i for i in range(n) if scaled[i] < 1.0]
    large = [i for i in range(n) if scaled[i] >= 1.0]
    while small and large:
        s, l = small.pop(), large.pop()
        prob[s] = scaled[s]
        alias[s] = l
        scaled[l] -= 1.0 - scaled[s]
        (small if scaled[l] < 1.0 else large).append(l)
    return prob, alias


def train_sgns(corpus: WalkCorpus, cfg: SgnsConfig = SgnsConfig(), dtype=np.float32,
               n_jobs=1, on_epoch=None):
    """Train target vectors on `corpus`; returns ``(EmbeddingMatrix, loss_trace)``.

    ``loss_trace[e]`` is the mean pair loss seen during epoch ``e``.  If given,
    ``on_epoch(epoch, target, context)`` is called after every epoch with live
    views of the parameter matrices.
    """
    if len(corpus) == 0:
        raise KeepError("cannot train on an empty walk corpus")
    tokens, offsets = corpus.flat()
    V = corpus.vocab_size
    check_indices(tokens, V, name="walk tokens")

    counts = np.bincount(tokens, minlength=V)
    keep = counts >= cfg.min_count
    total_pairs = int(_count_pairs(tokens, offsets, keep, cfg.window))
    if total_pairs == 0:
        raise KeepError("walk corpus contains no (center, context) pairs inside the window")
    prob, alias = alias_table(noise_distribution(np.where(keep, counts, 0)))

    rng = np.random.default_rng(cfg.rng_seed)
    W = ((rng.random((V, cfg.dim)) - 0.5) / cfg.dim).astype(dtype)
    C = np.zeros((V, cfg.dim), dtype=dtype)

    lr0 = cfg.learning_rate
    lr_floor = lr0 * MIN_LR_FRACTION
    trace = []
    for epoch in range(cfg.epochs):
        lr_start = lr0 - (lr0 - lr_floor) * epoch / cfg.epochs
        lr_end = lr0 - (lr0 - lr_floor) * (epoch + 1) / cfg.epochs
        seed = derive_seed(cfg.rng_seed, epoch)
        if cfg.deterministic or n_jobs <= 1:
            loss, n = _epoch_serial(W, C, tokens, offsets, keep, prob, alias, cfg.window,
                                    cfg.negatives_per_positive, seed, lr_start, lr_end,
                                    total_pairs, cfg.batch_size)
        else:
            numba.set_num_threads(min(n_jobs, numba.config.NUMBA_NUM_THREADS))
            loss, n = _epoch_parallel(W, C, tokens, offsets, keep, prob, alias, cfg.window,
                                      cfg.negatives_per_positive, seed, lr_start, lr_end,
                                      4 * n_jobs)
        trace.append(loss / max(n, 1))
        logger.info("sgns epoch %d/%d: mean pair loss %.5f", epoch + 1, cfg.epochs, trace[-1])
        if not np.isfinite(trace[-1]):
            raise DivergenceError(epoch + 1, trace[-1])
        if on_epoch is not None:
            on_epoch(epoch, W, C)
    return EmbeddingMatrix(W, kind="anchor"), np.array(trace)


class Node2Vec(TransformerMixin, BaseEstimator):
    """Walk-based concept embeddings (Stage 1 anchors).

    ``fit(ont)`` generates biased random walks on the ontology graph and trains
    skip-gram target vectors on them.  ``transform(indices)`` returns rows of
    the learned matrix.

    Attributes
    ----------
    embedding_ : EmbeddingMatrix
        Anchor embeddings, row ``i`` for the concept ``ont.ids[i]``.
    loss_trace_ : ndarray
        Mean pair loss per epoch.
    """

    def __init__(self, dim=100, walk_length=30, walks_per_node=750, p=1.0, q=1.0,
                 window=10, negatives=5, min_count=1, epochs=1, learning_rate=0.025,
                 batch_size=4096, deterministic=True, n_jobs=1, random_state=0):
        self.dim = dim
        self.walk_length = walk_length
        self.walks_per_node = walks_per_node
        self.p = p
        self.q = q
        self.window = window
        self.negatives = negatives
        self.min_count = min_count
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.deterministic = deterministic
        self.n_jobs = n_jobs
        self.random_state = random_state

    def walk_config(self):
        return WalkConfig(self.walk_length, self.walks_per_node, self.p, self.q,
                          rng_seed=self.random_state)

    def sgns_config(self):
        return SgnsConfig(dim=self.dim, window=self.window,
                          negatives_per_positive=self.negatives, min_count=self.min_count,
                          epochs=self.epochs, learning_rate=self.learning_rate,
                          batch_size=self.batch_size, rng_seed=self.random_state,
                          deterministic=self.deterministic)

    def fit(self, ont, y=None):
        corpus = generate_walks(ont, self.walk_config(), n_jobs=self.n_jobs)
        return self.fit_corpus(corpus, ids=getattr(ont, "ids", None))

    def fit_corpus(self, corpus, ids=None):
        emb, trace = train_sgns(corpus, self.sgns_config(), n_jobs=self.n_jobs)
        if ids is not None:
            emb = EmbeddingMatrix(emb.values, ids=ids, kind="anchor")
        self.embedding_ = emb
        self.loss_trace_ = trace
        self.n_features_out_ = self.dim
        return self

    def fit_transform(self, ont, y=None):
        return self.fit(ont).embedding_.values

    def transform(self, X):
        check_is_fitted(self, "embedding_")
        rows = check_indices(X, self.embedding_.vocab_size)
        return self.embedding_.values[rows]
