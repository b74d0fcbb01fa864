"""Anchored GloVe training (KEEP) and the plain GloVe baseline.

The objective over all ordered pairs with ``X[i, j] > 0`` is::

    J = sum_ij f(X_ij) * (w_i . c_j + b_i + bc_j - ln X_ij)**2
        + lam * sum_i ||w_i - a_i||**2

with ``f(x) = min(1, (x / x_max) ** alpha)`` and anchors ``a`` taken from the
walk embeddings.  Training runs AdamW over shuffled mini-batches of the
nonzero entries.  A mini-batch of ``B`` out of ``N`` entries carries the
fraction ``B / N`` of the regularizer, so one epoch of mini-batch gradients
sums to the full-objective gradient.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numba
import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .cooccurrence import CooccurrenceMatrix
from .embedding import EmbeddingMatrix
from .exceptions import ConfigError, DivergenceError, KeepError
from .validation import (
    check_at_least,
    check_embedding_values,
    check_fraction,
    check_indices,
    check_positive,
)

logger = logging.getLogger(__name__)

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class KeepConfig:
    dim: int = 100
    learning_rate: float = 0.05
    epochs: int = 300
    batch_size: int = 1024
    x_max_percentile: float = 75.0
    alpha: float = 0.75
    lam: float = 1e-3
    weight_decay: float = 0.0
    use_bias: bool = True
    deterministic: bool = True
    rng_seed: int = 0

    def __post_init__(self):
        check_at_least(self.dim, "dim", 1)
        check_positive(self.learning_rate, "learning_rate")
        check_at_least(self.epochs, "epochs", 1)
        check_at_least(self.batch_size, "batch_size", 1)
        check_positive(self.x_max_percentile, "x_max_percentile")
        if self.x_max_percentile > 100:
            raise ConfigError("x_max_percentile", f"must lie in (0, 100], got {self.x_max_percentile!r}")
        check_fraction(self.alpha, "alpha")
        check_positive(self.lam, "lambda", strict=False)
        check_positive(self.weight_decay, "weight_decay", strict=False)
        check_positive(self.rng_seed, "rng_seed", strict=False, integer=True)


@dataclass(frozen=True)
class WeightingFunction:
    x_max: float
    alpha: float = 0.75

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        return np.where(x < self.x_max, (x / self.x_max) ** self.alpha, 1.0)


@dataclass(eq=False)
class KeepModel:
    """Trainable parameters; ``anchor`` is ``None`` for plain GloVe."""

    w: np.ndarray
    w_ctx: np.ndarray
    b: np.ndarray
    b_ctx: np.ndarray
    anchor: np.ndarray = None
    ids: np.ndarray = None
    loss_trace: list = field(default_factory=list)
    x_max: float = None

    def __post_init__(self):
        V, d = self.w.shape
        if self.w_ctx.shape != (V, d) or self.b.shape != (V,) or self.b_ctx.shape != (V,):
            raise ValueError("inconsistent parameter shapes")
        if self.anchor is not None and self.anchor.shape != (V, d):
            raise ValueError(f"anchor shape {self.anchor.shape} does not match {(V, d)}")

    @property
    def vocab_size(self):
        return self.w.shape[0]

    @property
    def dim(self):
        return self.w.shape[1]

    def check_finite(self):
        for name in ("w", "w_ctx", "b", "b_ctx"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise FloatingPointError(f"non-finite values in parameter {name}")

    def copy(self):
        return KeepModel(self.w.copy(), self.w_ctx.copy(), self.b.copy(), self.b_ctx.copy(),
                         None if self.anchor is None else self.anchor.copy(), self.ids,
                         list(self.loss_trace))


def resolve_x_max(X, percentile=75.0):
    """Nearest-rank percentile of the nonzero counts of `X`."""
    counts = _nonzero_counts(X)
    if counts.size == 0:
        raise KeepError("co-occurrence matrix has no nonzero entries")
    if not 0 < percentile <= 100:
        raise ValueError(f"percentile must lie in (0, 100], got {percentile}")
    ordered = np.sort(counts)
    rank = max(1, math.ceil(percentile / 100.0 * len(ordered)))
    return float(ordered[rank - 1])


def _nonzero_counts(X):
    if isinstance(X, CooccurrenceMatrix):
        return X.counts.astype(np.float64)
    if sp.issparse(X):
        return sp.triu(X, k=1).tocoo().data.astype(np.float64)
    return np.asarray(X, dtype=np.float64)


def _as_cooccurrence(X):
    if isinstance(X, CooccurrenceMatrix):
        return X
    if sp.issparse(X) or isinstance(X, np.ndarray):
        m = sp.coo_matrix(X)
        if m.shape[0] != m.shape[1]:
            raise ValueError(f"co-occurrence matrix must be square, got {m.shape}")
        if (abs(m - m.T) > 0).nnz:
            raise ValueError("co-occurrence matrix must be symmetric")
        return CooccurrenceMatrix.from_sparse(m)
    raise TypeError(f"cannot interpret {type(X).__name__} as a co-occurrence matrix")


def _entries(X):
    i, j, c = X.both_directions()
    return i, j, np.log(c.astype(np.float64))


def keep_loss(model: KeepModel, X, wfn: WeightingFunction, lam, chunk=1 << 16):
    """Full objective value (GloVe term over nonzero entries + anchor penalty)."""
    model.check_finite()
    X = _as_cooccurrence(X)
    I, J, logx = _entries(X)
    fx = wfn(np.exp(logx))
    total = 0.0
    for s in range(0, len(I), chunk):
        i, j = I[s:s + chunk], J[s:s + chunk]
        err = (np.einsum("nd,nd->n", model.w[i], model.w_ctx[j])
               + model.b[i] + model.b_ctx[j] - logx[s:s + chunk])
        total += float(np.dot(fx[s:s + chunk], err * err))
    if model.anchor is not None and lam:
        total += lam * float(np.sum((model.w - model.anchor) ** 2))
    return total


def keep_gradients(model: KeepModel, X, wfn: WeightingFunction, lam):
    """Exact gradients of :func:`keep_loss`.

    Returns a dict with arrays shaped like ``w``, ``w_ctx``, ``b`` and ``b_ctx``.
    """
    model.check_finite()
    X = _as_cooccurrence(X)
    I, J, logx = _entries(X)
    fx = wfn(np.exp(logx))
    err = (np.einsum("nd,nd->n", model.w[I], model.w_ctx[J])
           + model.b[I] + model.b_ctx[J] - logx)
    g = 2.0 * fx * err
    V, d = model.w.shape
    gw = np.zeros((V, d))
    gc = np.zeros((V, d))
    np.add.at(gw, I, g[:, None] * model.w_ctx[J])
    np.add.at(gc, J, g[:, None] * model.w[I])
    gb = np.bincount(I, weights=g, minlength=V)
    gbc = np.bincount(J, weights=g, minlength=V)
    if model.anchor is not None and lam:
        gw += 2.0 * lam * (model.w - model.anchor)
    return {"w": gw, "w_ctx": gc, "b": gb, "b_ctx": gbc}


@numba.njit(cache=True)
def _glove_term(I, J, logx, fx, W, C, b, bc):
    total = 0.0
    d = W.shape[1]
    for n in range(I.shape[0]):
        i = I[n]
        j = J[n]
        s = b[i] + bc[j] - logx[n]
        for m in range(d):
            s += W[i, m] * C[j, m]
        total += fx[n] * s * s
    return total


@numba.njit(cache=True)
def _adamw_flat(P, G, M, Vs, lr, beta1, beta2, eps, wd, bc1, bc2_sqrt):
    # dense AdamW on flat views; G is consumed (zeroed) as it is read
    step = lr / bc1
    decay = 1.0 - lr * wd
    for k in range(P.shape[0]):
        g = G[k]
        G[k] = 0.0
        p = P[k] * decay
        m = beta1 * M[k] + (1.0 - beta1) * g
        v = beta2 * Vs[k] + (1.0 - beta2) * g * g
        M[k] = m
        Vs[k] = v
        P[k] = p - step * m / (math.sqrt(v) / bc2_sqrt + eps)


@numba.njit(cache=True)
def _add_anchor_pull(P, A, G, reg):
    c = 2.0 * reg
    for k in range(P.shape[0]):
        G[k] += c * (P[k] - A[k])


@numba.njit(cache=True, parallel=True)
def _adamw_flat_parallel(P, G, M, Vs, lr, beta1, beta2, eps, wd, bc1, bc2_sqrt):
    step = lr / bc1
    decay = 1.0 - lr * wd
    for k in numba.prange(P.shape[0]):
        g = G[k]
        G[k] = 0.0
        p = P[k] * decay
        m = beta1 * M[k] + (1.0 - beta1) * g
        v = beta2 * Vs[k] + (1.0 - beta2) * g * g
        M[k] = m
        Vs[k] = v
        P[k] = p - step * m / (math.sqrt(v) / bc2_sqrt + eps)


def _adamw(P, G, state, hyper, anchor=None, reg=0.0, parallel=False):
    """AdamW step on a whole parameter matrix, optionally adding the anchor pull."""
    p, g = P.reshape(-1), G.reshape(-1)
    if anchor is not None and reg > 0.0:
        _add_anchor_pull(p, anchor.reshape(-1), g, reg)
    fn = _adamw_flat_parallel if parallel else _adamw_flat
    fn(p, g, state.m.reshape(-1), state.v.reshape(-1), *hyper)


@numba.njit(cache=True)
def _batch_grads(idx, I, J, logx, fx, W, C, b, bc, gW, gC, gb, gbc):
    d = W.shape[1]
    loss = 0.0
    for t in range(idx.shape[0]):
        n = idx[t]
        i = I[n]
        j = J[n]
        s = b[i, 0] + bc[j, 0] - logx[n]
        for m in range(d):
            s += W[i, m] * C[j, m]
        loss += fx[n] * s * s
        g = 2.0 * fx[n] * s
        for m in range(d):
            gW[i, m] += g * C[j, m]
            gC[j, m] += g * W[i, m]
        gb[i, 0] += g
        gbc[j, 0] += g
    return loss


@numba.njit(cache=True, parallel=True)
def _batch_grads_parallel(idx, I, J, logx, fx, W, C, b, bc, gW, gC, gb, gbc, n_shards):
    # shard by target row so w / b gradients never collide; context rows are
    # written lock-free
    d = W.shape[1]
    losses = np.zeros(n_shards)
    for s in numba.prange(n_shards):
        for t in range(idx.shape[0]):
            n = idx[t]
            i = I[n]
            if i % n_shards != s:
                continue
            j = J[n]
            r = b[i, 0] + bc[j, 0] - logx[n]
            for m in range(d):
                r += W[i, m] * C[j, m]
            losses[s] += fx[n] * r * r
            g = 2.0 * fx[n] * r
            for m in range(d):
                gW[i, m] += g * C[j, m]
                gC[j, m] += g * W[i, m]
            gb[i, 0] += g
            gbc[j, 0] += g
    return losses.sum()


class _AdamState:
    def __init__(self, shape):
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)


def _run_epoch(perm, I, J, logx, fx, params, grads, states, anchor, lam, cfg, step, parallel,
               n_threads):
    W, C, b, bc = params
    gW, gC, gb, gbc = grads
    N = len(perm)
    beta1, beta2 = ADAM_BETAS
    for s in range(0, N, cfg.batch_size):
        idx = perm[s:s + cfg.batch_size]
        if parallel:
            _batch_grads_parallel(idx, I, J, logx, fx, W, C, b, bc, gW, gC, gb, gbc, n_threads)
        else:
            _batch_grads(idx, I, J, logx, fx, W, C, b, bc, gW, gC, gb, gbc)
        step += 1
        hyper = (cfg.learning_rate, beta1, beta2, ADAM_EPS, cfg.weight_decay,
                 1.0 - beta1 ** step, math.sqrt(1.0 - beta2 ** step))
        reg = lam * len(idx) / N if anchor is not None else 0.0
        _adamw(W, gW, states[0], hyper, anchor, reg, parallel)
        _adamw(C, gC, states[1], hyper, parallel=parallel)
        if cfg.use_bias:
            _adamw(b, gb, states[2], hyper, parallel=parallel)
            _adamw(bc, gbc, states[3], hyper, parallel=parallel)
        else:
            gb[:] = 0.0
            gbc[:] = 0.0
    return step


def init_model(V, cfg: KeepConfig, anchor=None, rng=None):
    """Initial parameters; consumes the rng in the order w (when no anchor), w_ctx."""
    rng = np.random.default_rng(cfg.rng_seed) if rng is None else rng
    d = cfg.dim
    if anchor is None:
        w = (rng.random((V, d)) - 0.5) / d
    else:
        w = np.array(anchor, dtype=np.float64, copy=True)
    w_ctx = (rng.random((V, d)) - 0.5) / d
    return KeepModel(w, w_ctx, np.zeros(V), np.zeros(V),
                     anchor=None if anchor is None else np.array(anchor, dtype=np.float64, copy=True))


def train_keep(X, anchor=None, cfg: KeepConfig = KeepConfig(), n_jobs=1, model=None):
    """Train KEEP (or plain GloVe when `anchor` is None) on co-occurrence counts `X`.

    The returned model's ``loss_trace[e]`` is the full objective after epoch
    ``e + 1``.  Pass `model` to start from explicit parameters instead of the
    seeded initialization; the shuffles then come from a fresh
    ``default_rng(cfg.rng_seed)``.
    """
    X = _as_cooccurrence(X)
    if X.nnz == 0:
        raise KeepError("co-occurrence matrix has no nonzero entries")
    ids = None
    if isinstance(anchor, EmbeddingMatrix):
        ids = anchor.ids
        anchor = anchor.values
    if anchor is not None:
        anchor = check_embedding_values(anchor, name="anchor")
        if anchor.shape != (X.vocab_size, cfg.dim):
            raise ConfigError("dim", f"anchor has shape {anchor.shape}, expected {(X.vocab_size, cfg.dim)}")

    rng = np.random.default_rng(cfg.rng_seed)
    if model is None:
        model = init_model(X.vocab_size, cfg, anchor, rng)
    else:
        model = model.copy()
        model.anchor = anchor
    model.ids = ids
    x_max = resolve_x_max(X, cfg.x_max_percentile)
    wfn = WeightingFunction(x_max, cfg.alpha)
    I, J, logx = _entries(X)
    fx = wfn(np.exp(logx))
    lam = cfg.lam if anchor is not None else 0.0

    V, d = model.w.shape
    b = model.b.reshape(V, 1)
    bc = model.b_ctx.reshape(V, 1)
    params = (model.w, model.w_ctx, b, bc)
    grads = (np.zeros((V, d)), np.zeros((V, d)), np.zeros((V, 1)), np.zeros((V, 1)))
    states = [_AdamState(p.shape) for p in params]
    parallel = not cfg.deterministic and n_jobs > 1
    if parallel:
        numba.set_num_threads(min(n_jobs, numba.config.NUMBA_NUM_THREADS))

    step = 0
    for epoch in range(1, cfg.epochs + 1):
        perm = rng.permutation(len(I))
        step = _run_epoch(perm, I, J, logx, fx, params, grads, states,
                          model.anchor if lam else None, lam, cfg, step, parallel, n_jobs)
        loss = _glove_term(I, J, logx, fx, model.w, model.w_ctx, b[:, 0], bc[:, 0])
        if lam:
            loss += lam * float(np.sum((model.w - model.anchor) ** 2))
        if not np.isfinite(loss):
            raise DivergenceError(epoch, loss)
        model.loss_trace.append(float(loss))
        if epoch == 1 or epoch % 10 == 0 or epoch == cfg.epochs:
            logger.info("keep epoch %d/%d: loss %.6g", epoch, cfg.epochs, loss)
    model.x_max = x_max
    return model


def select_learning_rate(X, anchor=None, cfg: KeepConfig = KeepConfig(), grid=None, n_runs=5,
                         n_jobs=1):
    """Learning rate from `grid` with the lowest median final loss over `n_runs` seeds.

    Returns ``(best_lr, {lr: median_final_loss})``.  Runs that diverge count
    as infinite loss.
    """
    grid = sorted(grid if grid is not None else np.geomspace(0.1, 5e-5, 8), reverse=True)
    medians = {}
    for lr in grid:
        finals = []
        for run in range(n_runs):
            run_cfg = replace(cfg, learning_rate=float(lr), rng_seed=cfg.rng_seed + run)
            try:
                finals.append(train_keep(X, anchor, run_cfg, n_jobs=n_jobs).loss_trace[-1])
            except DivergenceError:
                finals.append(np.inf)
        medians[float(lr)] = float(np.median(finals))
    best = min(medians, key=lambda lr: (medians[lr], lr))
    return best, medians


def export_final(model: KeepModel):
    """Target vectors as the final embedding."""
    return EmbeddingMatrix(model.w.copy(), ids=model.ids, kind="final")


class KeepEmbedding(TransformerMixin, BaseEstimator):
    """Co-occurrence embeddings anchored to walk embeddings.

    ``fit(X, anchor=...)`` trains the regularized objective starting from the
    anchors; without an anchor it is plain GloVe from a random start.

    Attributes
    ----------
    model_ : KeepModel
    embedding_ : EmbeddingMatrix
        Target vectors, ``kind="final"``.
    loss_trace_ : ndarray
        Full objective after each epoch.
    x_max_ : float
    """

    def __init__(self, dim=100, learning_rate=0.05, epochs=300, batch_size=1024,
                 x_max_percentile=75.0, alpha=0.75, reg_lambda=1e-3, weight_decay=0.0,
                 use_bias=True, deterministic=True, n_jobs=1, random_state=0):
        self.dim = dim
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.x_max_percentile = x_max_percentile
        self.alpha = alpha
        self.reg_lambda = reg_lambda
        self.weight_decay = weight_decay
        self.use_bias = use_bias
        self.deterministic = deterministic
        self.n_jobs = n_jobs
        self.random_state = random_state

    def config(self):
        return KeepConfig(dim=self.dim, learning_rate=self.learning_rate, epochs=self.epochs,
                          batch_size=self.batch_size, x_max_percentile=self.x_max_percentile,
                          alpha=self.alpha, lam=self.reg_lambda, weight_decay=self.weight_decay,
                          use_bias=self.use_bias, deterministic=self.deterministic,
                          rng_seed=self.random_state)

    def fit(self, X, y=None, anchor=None):
        self.model_ = train_keep(X, anchor=anchor, cfg=self.config(), n_jobs=self.n_jobs)
        self.embedding_ = export_final(self.model_)
        self.loss_trace_ = np.array(self.model_.loss_trace)
        self.x_max_ = self.model_.x_max
        self.n_features_out_ = self.dim
        return self

    def fit_transform(self, X, y=None, anchor=None):
        return self.fit(X, y, anchor=anchor).embedding_.values

    def transform(self, X):
        check_is_fitted(self, "embedding_")
        rows = check_indices(X, self.embedding_.vocab_size)
        return self.embedding_.values[rows]


class GloVe(KeepEmbedding):
    """Plain GloVe: the same trainer with no anchor and no regularization."""

    def __init__(self, dim=100, learning_rate=0.05, epochs=300, batch_size=1024,
                 x_max_percentile=75.0, alpha=0.75, weight_decay=0.0, use_bias=True,
                 deterministic=True, n_jobs=1, random_state=0):
        super().__init__(dim=dim, learning_rate=learning_rate, epochs=epochs,
                         batch_size=batch_size, x_max_percentile=x_max_percentile,
                         alpha=alpha, reg_lambda=0.0, weight_decay=weight_decay,
                         use_bias=use_bias, deterministic=deterministic, n_jobs=n_jobs,
                         random_state=random_state)

    def fit(self, X, y=None):
        return super().fit(X, y, anchor=None)

    def fit_transform(self, X, y=None):
        return self.fit(X, y).embedding_.values
