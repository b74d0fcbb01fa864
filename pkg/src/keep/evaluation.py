"""Intrinsic evaluation of concept embeddings.

* :func:`impact_assessment` - how well cosine similarity tracks Resnik
  similarity and co-occurrence counts around each concept.
* :func:`intrinsic_discrimination` - fraction of known related concepts whose
  cosine to a core concept beats the 95th percentile of a random null.
* :func:`wilcoxon_signed_rank` and :func:`rank_methods` - comparing methods
  across evaluation tasks.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field

import numba
import numpy as np
from scipy import stats

from .embedding import EmbeddingMatrix
from .exceptions import KeepError
from .ontology import resnik_matrix

logger = logging.getLogger(__name__)

RELATION_TYPES = ("synonym", "child", "complication", "comorbidity")
N_NEIGHBORS = 10
N_RANDOM = 150
EXACT_MAX_N = 12


def _values(emb):
    return emb.values if isinstance(emb, EmbeddingMatrix) else np.asarray(emb, dtype=np.float64)


def cosine_similarity(emb, i, j):
    X = _values(emb)
    a, b = X[i].astype(np.float64), X[j].astype(np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    for idx, n in ((i, na), (j, nb)):
        if n == 0:
            name = emb.ids[idx] if isinstance(emb, EmbeddingMatrix) else idx
            raise KeepError(f"concept {name} has a zero-norm embedding")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def cosine_matrix(emb):
    X = _values(emb).astype(np.float64)
    norms = np.linalg.norm(X, axis=1)
    if (norms == 0).any():
        bad = np.flatnonzero(norms == 0)[0]
        name = emb.ids[bad] if isinstance(emb, EmbeddingMatrix) else bad
        raise KeepError(f"concept {name} has a zero-norm embedding")
    U = X / norms[:, None]
    return np.clip(U @ U.T, -1.0, 1.0)


def rank_correlation(x, y, method="spearman"):
    """Row-wise correlation of two equally shaped 2-D arrays (NaN for constant rows)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if method == "spearman":
        x = stats.rankdata(x, axis=1)
        y = stats.rankdata(y, axis=1)
    elif method != "pearson":
        raise ValueError(f"method must be 'spearman' or 'pearson', got {method!r}")
    xc = x - x.mean(axis=1, keepdims=True)
    yc = y - y.mean(axis=1, keepdims=True)
    den = np.sqrt((xc * xc).sum(axis=1) * (yc * yc).sum(axis=1))
    with np.errstate(invalid="ignore", divide="ignore"):
        r = (xc * yc).sum(axis=1) / den
    r[den == 0] = np.nan
    return r


@numba.njit(cache=True)
def _sample_excluding(u, n_total, excluded, out):
    # Floyd's algorithm per row: out[r] gets k distinct values from
    # range(n_total) avoiding the sorted row excluded[r].
    n_rows, k = u.shape
    n_ex = excluded.shape[1]
    pool = n_total - n_ex
    chosen = np.empty(k, dtype=np.int64)
    for r in range(n_rows):
        for t in range(k):
            j = pool - k + t
            v = int(u[r, t] * (j + 1))
            if v > j:
                v = j
            dup = False
            for s in range(t):
                if chosen[s] == v:
                    dup = True
                    break
            chosen[t] = j if dup else v
        # map 0..pool-1 onto range(n_total) minus the excluded values
        for t in range(k):
            v = chosen[t]
            for e in range(n_ex):
                if excluded[r, e] <= v:
                    v += 1
            out[r, t] = v


@dataclass(frozen=True)
class ImpactResult:
    resnik_corr: float
    cooc_corr: float
    n_codes: int
    repetitions: int

    def __iter__(self):
        return iter((self.resnik_corr, self.cooc_corr))


def impact_assessment(emb, ont, ic, X, repetitions=250, seed=0, *, method="spearman",
                      n_neighbors=N_NEIGHBORS, n_random=N_RANDOM, probes=None):
    """Median rank correlation of cosine vs Resnik and vs co-occurrence.

    For every probed code and repetition, the candidate set is the code's
    ``n_neighbors`` nearest neighbors by cosine plus ``n_random`` further
    concepts drawn uniformly without replacement from the rest of the
    vocabulary (never the code itself or its neighbors).

    `emb` rows, `ont` internal indices and `X` indices must share one
    vocabulary; when `emb` is an :class:`EmbeddingMatrix` its ids are
    checked against ``ont.ids``.
    """
    if isinstance(emb, EmbeddingMatrix) and not np.array_equal(emb.ids, ont.ids):
        emb = emb.reindex(ont.ids)
    V = ont.n_nodes
    if V < n_neighbors + n_random + 1:
        raise KeepError(f"vocabulary of {V} concepts is smaller than {n_neighbors + n_random + 1}")
    if X.vocab_size != V:
        raise KeepError(f"co-occurrence vocabulary {X.vocab_size} != ontology vocabulary {V}")

    cos = cosine_matrix(emb)
    res = resnik_matrix(ont, ic)
    cooc = X.to_dense().astype(np.float64)
    probes = np.arange(V) if probes is None else np.asarray(probes, dtype=np.int64)

    masked = cos[probes].copy()
    masked[np.arange(len(probes)), probes] = -np.inf
    top = np.argpartition(-masked, n_neighbors, axis=1)[:, :n_neighbors]
    excluded = np.sort(np.concatenate([top, probes[:, None]], axis=1), axis=1)

    rows = probes[:, None]
    r_corr, c_corr = [], []
    seeds = np.random.SeedSequence(seed).spawn(repetitions)
    sampled = np.empty((len(probes), n_random), dtype=np.int64)
    for rep in range(repetitions):
        u = np.random.default_rng(seeds[rep]).random((len(probes), n_random))
        _sample_excluding(u, V, excluded, sampled)
        cand = np.concatenate([top, sampled], axis=1)
        c = cos[rows, cand]
        r_corr.append(rank_correlation(c, res[rows, cand], method))
        c_corr.append(rank_correlation(c, cooc[rows, cand], method))
    r_all = np.concatenate(r_corr)
    c_all = np.concatenate(c_corr)
    return ImpactResult(
        resnik_corr=float(np.nanmedian(r_all)) if np.isfinite(r_all).any() else float("nan"),
        cooc_corr=float(np.nanmedian(c_all)) if np.isfinite(c_all).any() else float("nan"),
        n_codes=len(probes),
        repetitions=repetitions,
    )


@dataclass(frozen=True)
class RelationshipSet:
    core: int
    positives: tuple
    relation_types: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.core in self.positives:
            raise ValueError(f"core concept {self.core} is listed among its own positives")
        if not self.positives:
            raise ValueError(f"relationship set for {self.core} has no positives")


def read_relationship_sets(path_or_lines):
    """Parse ``core_id<TAB>relation_type<TAB>concept_id`` rows, grouped by core."""
    if isinstance(path_or_lines, str) or hasattr(path_or_lines, "__fspath__"):
        with open(path_or_lines, encoding="utf-8") as fh:
            return read_relationship_sets(fh)
    grouped = {}
    for lineno, line in enumerate(path_or_lines, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ValueError(f"line {lineno}: expected 3 columns, got {len(parts)}")
        core, rel, concept = int(parts[0]), parts[1], int(parts[2])
        if rel not in RELATION_TYPES:
            raise ValueError(f"line {lineno}: unknown relation type {rel!r}")
        grouped.setdefault(core, {})[concept] = rel
    return [RelationshipSet(core, tuple(rels), rels) for core, rels in grouped.items()]


def write_relationship_sets(relsets, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rs in relsets:
            for concept in rs.positives:
                rel = rs.relation_types.get(concept, "comorbidity")
                fh.write(f"{rs.core}\t{rel}\t{concept}\n")


@dataclass(frozen=True)
class DiscriminationResult:
    score: float
    ci_low: float
    ci_high: float
    median: float
    n_positives: int
    coverage: float

    def __iter__(self):
        return iter((self.score, self.ci_low, self.ci_high))


def intrinsic_discrimination(emb: EmbeddingMatrix, relset: RelationshipSet, null_size=1000,
                             bootstrap_iters=1000, seed=0, *, repetitions=250,
                             percentile=95.0, min_null=20):
    """Share of positives whose cosine to the core beats the null's 95th percentile.

    Each repetition draws a fresh null of `null_size` random concepts (without
    replacement when the pool allows).  A positive's hit rate is the fraction
    of repetitions in which it strictly exceeds the threshold; the score is
    the mean hit rate.  Bootstrap resampling of positives gives the median and
    95% interval.  Concepts missing from `emb` are dropped and reported via
    ``coverage``.
    """
    wanted = [relset.core, *relset.positives]
    rows = emb.rows_for(wanted)
    if rows[0] < 0:
        raise KeepError(f"core concept {relset.core} is absent from the embedding")
    pos_rows = rows[1:][rows[1:] >= 0]
    coverage = len(pos_rows) / len(relset.positives)
    if len(pos_rows) == 0:
        raise KeepError(f"no positives of core {relset.core} are present in the embedding")
    excluded = np.zeros(emb.vocab_size, dtype=bool)
    excluded[rows[rows >= 0]] = True
    candidates = np.flatnonzero(~excluded)
    if len(candidates) < min_null:
        raise KeepError(f"only {len(candidates)} null candidates for core {relset.core}; need {min_null}")

    X = emb.values.astype(np.float64)
    norms = np.linalg.norm(X, axis=1)
    if (norms[rows[rows >= 0]] == 0).any() or (norms[candidates] == 0).any():
        raise KeepError("zero-norm embedding row among evaluated concepts")
    core = X[rows[0]] / norms[rows[0]]
    sims = (X @ core) / norms
    pos_sims = sims[pos_rows]

    rng = np.random.default_rng(seed)
    replace = len(candidates) < null_size
    hits = np.zeros(len(pos_rows))
    for _ in range(repetitions):
        null = sims[rng.choice(candidates, size=null_size, replace=replace)]
        threshold = np.percentile(null, percentile)
        hits += pos_sims > threshold
    hits /= repetitions
    score = float(hits.mean())

    boot = rng.integers(0, len(hits), size=(bootstrap_iters, len(hits)))
    boot_scores = hits[boot].mean(axis=1)
    lo, med, hi = np.percentile(boot_scores, [2.5, 50.0, 97.5])
    return DiscriminationResult(score, float(lo), float(hi), float(med), len(pos_rows), coverage)


def _signed_rank_stat(d):
    d = np.asarray(d, dtype=np.float64)
    d = d[d != 0]
    ranks = stats.rankdata(np.abs(d))
    return d, ranks, float(ranks[d > 0].sum())


def wilcoxon_signed_rank(scores_a, scores_b):
    """Two-sided Wilcoxon signed-rank p-value for paired samples.

    Zero differences are dropped.  With at most 12 nonzero differences the
    null distribution is enumerated exactly over all sign assignments of the
    (tie-averaged) ranks; otherwise a normal approximation with tie
    correction is used.  All-zero differences give ``p = 1``.
    """
    a = np.asarray(scores_a, dtype=np.float64)
    b = np.asarray(scores_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("scores_a and scores_b must be 1-D with equal length")
    if len(a) < 5:
        raise ValueError(f"need at least 5 paired observations, got {len(a)}")
    d, ranks, w_plus = _signed_rank_stat(a - b)
    n = len(d)
    if n == 0:
        return 1.0
    if n <= EXACT_MAX_N:
        signs = (np.arange(2 ** n)[:, None] >> np.arange(n)) & 1
        null = signs @ ranks
        # compare on doubled ranks so half-integer ties stay exact
        null2 = np.rint(2 * null).astype(np.int64)
        w2 = int(round(2 * w_plus))
        lower = np.mean(null2 <= w2)
        upper = np.mean(null2 >= w2)
        return float(min(1.0, 2.0 * min(lower, upper)))
    mean = n * (n + 1) / 4.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(tie_counts ** 3 - tie_counts) / 48.0
    if var <= 0:
        return 1.0
    z = (w_plus - mean) / np.sqrt(var)
    return float(min(1.0, 2.0 * stats.norm.sf(abs(z))))


@dataclass
class RankResult:
    ranks: dict
    mean_ranks: dict
    best: str
    p_values: dict


def rank_methods(scores):
    """Per-task ranks (1 = highest score, ties averaged), mean ranks, and p-values.

    `scores` maps method -> {task: score}.  Each method is compared with the
    best (lowest mean rank) method by a Wilcoxon signed-rank test on the
    per-task ranks; the p-value is ``None`` when fewer than 5 tasks exist.
    """
    methods = list(scores)
    if len(methods) < 2:
        raise ValueError("need at least two methods")
    tasks = sorted({t for m in methods for t in scores[m]}, key=str)
    if len(tasks) < 2:
        raise ValueError("need at least two tasks")
    missing = [(m, t) for m in methods for t in tasks if t not in scores[m] or scores[m][t] is None]
    if missing:
        raise ValueError(f"missing scores for {missing}")
    table = np.array([[float(scores[m][t]) for t in tasks] for m in methods])
    ranks = stats.rankdata(-table, axis=0)
    mean_ranks = ranks.mean(axis=1)
    best_k = int(np.argmin(mean_ranks))
    p_values = {}
    for k, m in enumerate(methods):
        if len(tasks) < 5:
            p_values[m] = None
        else:
            p_values[m] = wilcoxon_signed_rank(ranks[k], ranks[best_k])
    return RankResult(
        ranks={m: dict(zip(tasks, ranks[k].tolist())) for k, m in enumerate(methods)},
        mean_ranks={m: float(mean_ranks[k]) for k, m in enumerate(methods)},
        best=methods[best_k],
        p_values=p_values,
    )


@dataclass
class EvalReport:
    """Results of one or more evaluation runs, keyed by method name."""

    discrimination: dict = field(default_factory=dict)  # method -> core -> result dict
    correlations: dict = field(default_factory=dict)  # method -> {resnik_corr, cooc_corr}
    mean_ranks: dict = field(default_factory=dict)
    p_values: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def add_discrimination(self, method, core, result: DiscriminationResult):
        self.discrimination.setdefault(method, {})[str(core)] = asdict(result)

    def add_correlations(self, method, result: ImpactResult):
        self.correlations[method] = {"resnik_corr": result.resnik_corr,
                                     "cooc_corr": result.cooc_corr}

    def add_ranking(self, result: RankResult):
        self.mean_ranks = dict(result.mean_ranks)
        self.p_values = dict(result.p_values)
        self.meta["best_method"] = result.best

    def merge(self, other: "EvalReport"):
        for m, per_core in other.discrimination.items():
            self.discrimination.setdefault(m, {}).update(per_core)
        self.correlations.update(other.correlations)
        self.mean_ranks.update(other.mean_ranks)
        self.p_values.update(other.p_values)
        self.meta.update(other.meta)
        return self

    def discrimination_scores(self):
        return {m: {c: r["score"] for c, r in per.items()} for m, per in self.discrimination.items()}

    def to_json(self, **kw):
        return json.dumps(asdict(self), sort_keys=True, indent=kw.pop("indent", 2), **kw)

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))

    def save(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_json())
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())

    def render_text(self):
        """Aligned text tables: correlations, then discrimination with mean rank."""
        out = []
        if self.correlations:
            out.append(_table(
                ["Model", "Resnik Sim.", "Co-occur. Sim."],
                [[m, _fmt(v["resnik_corr"]), _fmt(v["cooc_corr"])]
                 for m, v in sorted(self.correlations.items())],
            ))
        if self.discrimination:
            cores = sorted({c for per in self.discrimination.values() for c in per}, key=str)
            header = ["Model", *cores]
            if self.mean_ranks:
                header += ["Mean Rank", "p"]
            rows = []
            for m in sorted(self.discrimination):
                row = [m] + [_fmt(self.discrimination[m].get(c, {}).get("score")) for c in cores]
                if self.mean_ranks:
                    row += [_fmt(self.mean_ranks.get(m)), _fmt(self.p_values.get(m), 3)]
                rows.append(row)
            out.append(_table(header, rows))
        return "\n\n".join(out) + "\n"


def _fmt(v, digits=2):
    if v is None or (isinstance(v, float) and np.isnan(v)):
        return "-"
    return f"{v:.{digits}f}"


def _table(header, rows):
    widths = [max(len(str(x)) for x in col) for col in zip(header, *rows)]
    lines = ["  ".join(str(h).ljust(w) if k == 0 else str(h).rjust(w)
                       for k, (h, w) in enumerate(zip(header, widths)))]
    lines.append("  ".join("-" * w for w in widths))
    for row in rows:
        lines.append("  ".join(str(x).ljust(w) if k == 0 else str(x).rjust(w)
                               for k, (x, w) in enumerate(zip(row, widths))))
    return "\n".join(lines)

