"""Synthetic ontologies and patient cohorts with planted comorbidity clusters.

The ontology is a preferential-attachment tree with a few extra parent
edges.  Half of the clusters are drawn from inside one subtree (graph and
co-occurrence agree), the other half are scattered across the hierarchy
(only co-occurrence reveals them).  Patients belong to one home cluster;
each member of it is active with ``within_cluster_rate``, every other
concept with ``background_rate``.  Active concepts emit at least two events
so the phenotyping rule always admits them.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .cooccurrence import PatientRecord
from .evaluation import RelationshipSet
from .exceptions import ConfigError
from .ontology import DEFAULT_MAX_DEPTH, load_ontology, prune_to_depth
from .validation import check_at_least, check_fraction, check_positive

ID_OFFSET = 10_000


@dataclass(frozen=True)
class SynthConfig:
    n_concepts: int = 2000
    branching: float = 3.0
    max_depth_generated: int = 8
    n_patients: int = 10_000
    n_clusters: int = 100
    cluster_size: int = 12
    within_cluster_rate: float = 0.35
    background_rate: float = 0.002
    repeat_mean: float = 1.0
    extra_parent_fraction: float = 0.05
    prune_depth: int = DEFAULT_MAX_DEPTH
    n_days: int = 3650
    rng_seed: int = 0

    def __post_init__(self):
        check_at_least(self.n_concepts, "n_concepts", 10)
        check_positive(self.branching, "branching")
        check_at_least(self.max_depth_generated, "max_depth_generated", 1)
        check_at_least(self.n_patients, "n_patients", 0)
        check_at_least(self.n_clusters, "n_clusters", 1)
        check_at_least(self.cluster_size, "cluster_size", 2)
        check_fraction(self.within_cluster_rate, "within_cluster_rate")
        check_fraction(self.background_rate, "background_rate", low_open=False, high_open=True)
        if self.within_cluster_rate <= self.background_rate:
            raise ConfigError("within_cluster_rate", "must exceed background_rate")
        check_positive(self.repeat_mean, "repeat_mean", strict=False)
        check_fraction(self.extra_parent_fraction, "extra_parent_fraction", low_open=False)
        check_at_least(self.prune_depth, "prune_depth", 1)
        check_at_least(self.n_days, "n_days", 1)


@dataclass
class PlantedTruth:
    clusters: list  # list of tuples of external ids
    aligned: list  # per cluster: drawn from one subtree?
    relationship_sets: list = field(default_factory=list)

    @property
    def assignment(self):
        return {c: k for k, members in enumerate(self.clusters) for c in members}

    def to_dict(self):
        return {"clusters": [list(map(int, c)) for c in self.clusters],
                "aligned": list(map(bool, self.aligned))}


def generate_edges(cfg: SynthConfig):
    """``(edges, root_id)`` for a random rooted DAG with ``cfg.n_concepts`` nodes.

    Parents are chosen with probability proportional to ``children + a`` with
    ``a = 1 / (branching - 2)``, which makes the mean number of children per
    internal node approach ``branching``; nodes at ``max_depth_generated``
    accept no children.
    """
    rng = np.random.default_rng(cfg.rng_seed)
    n = cfg.n_concepts
    offset = 1.0 / (cfg.branching - 2.0) if cfg.branching > 2.05 else 20.0
    children = np.zeros(n)
    depth = np.zeros(n, dtype=np.int64)
    parent = np.full(n, -1, dtype=np.int64)
    open_ = np.zeros(n, dtype=bool)
    open_[0] = cfg.max_depth_generated > 0
    for k in range(1, n):
        w = np.where(open_[:k], children[:k] + offset, 0.0)
        p = int(rng.choice(k, p=w / w.sum()))
        parent[k] = p
        children[p] += 1
        depth[k] = depth[p] + 1
        open_[k] = depth[k] < cfg.max_depth_generated
    edges = [(k, int(parent[k])) for k in range(1, n)]
    n_extra = int(round(cfg.extra_parent_fraction * (n - 1)))
    for k in rng.choice(np.arange(2, n), size=min(n_extra, max(n - 2, 0)), replace=False):
        # an earlier node as extra parent keeps the graph acyclic
        options = np.setdiff1d(np.arange(k), [parent[k]])
        edges.append((int(k), int(rng.choice(options))))
    edges.sort()
    return [(ID_OFFSET + c, ID_OFFSET + p) for c, p in edges], ID_OFFSET


def generate_ontology(cfg: SynthConfig = SynthConfig()):
    edges, root = generate_edges(cfg)
    labels = {ID_OFFSET + k: f"synthetic condition {k}" for k in range(cfg.n_concepts)}
    return load_ontology(edges, root, labels=labels)


def plant_clusters(ont, cfg: SynthConfig = SynthConfig()):
    """Pick disjoint clusters among concepts that survive depth pruning."""
    rng = np.random.default_rng([cfg.rng_seed, 1])
    pruned, _ = prune_to_depth(ont, cfg.prune_depth)
    anc = pruned.ancestor_matrix()
    n_desc = anc.sum(axis=0)
    used = np.zeros(pruned.n_nodes, dtype=bool)
    used[pruned.root] = True
    clusters, aligned, relsets = [], [], []
    n_aligned = cfg.n_clusters // 2 + cfg.n_clusters % 2
    subtree_roots = np.flatnonzero((n_desc > cfg.cluster_size) & (pruned.depth >= 1))
    rng.shuffle(subtree_roots)
    for r in subtree_roots:
        if len(clusters) >= n_aligned:
            break
        pool = np.setdiff1d(np.flatnonzero(anc[:, r] & ~used), [r])
        if used[r] or len(pool) < cfg.cluster_size - 1:
            continue
        members = np.concatenate([[r], rng.choice(pool, cfg.cluster_size - 1, replace=False)])
        used[members] = True
        clusters.append(tuple(int(pruned.ids[m]) for m in members))
        aligned.append(True)
    while len(clusters) < cfg.n_clusters:
        pool = np.flatnonzero(~used)
        if len(pool) < cfg.cluster_size:
            raise ConfigError("n_clusters", "not enough retained concepts for the requested clusters")
        members = rng.choice(pool, cfg.cluster_size, replace=False)
        used[members] = True
        clusters.append(tuple(int(pruned.ids[m]) for m in members))
        aligned.append(False)
    for members, is_aligned in zip(clusters, aligned):
        core, rest = members[0], members[1:]
        rel = "child" if is_aligned else "comorbidity"
        relsets.append(RelationshipSet(core, tuple(rest), {c: rel for c in rest}))
    return PlantedTruth(clusters, aligned, relsets)


def generate_patients(ont, truth: PlantedTruth, cfg: SynthConfig = SynthConfig()):
    """Patient records over the full (unpruned) concept set of `ont`."""
    rng = np.random.default_rng([cfg.rng_seed, 2])
    ids = ont.ids
    position = {int(e): i for i, e in enumerate(ids)}
    members = [np.array([position[c] for c in cl], dtype=np.int64) for cl in truth.clusters]
    records = []
    width = len(str(max(cfg.n_patients, 1)))
    for p in range(cfg.n_patients):
        home = int(rng.integers(len(members)))
        active = rng.random(len(ids)) < cfg.background_rate
        in_home = members[home]
        active[in_home] = rng.random(len(in_home)) < cfg.within_cluster_rate
        concepts = np.flatnonzero(active)
        reps = 2 + rng.poisson(cfg.repeat_mean, size=len(concepts))
        days = rng.integers(0, cfg.n_days, size=int(reps.sum()))
        events = list(zip(np.repeat(ids[concepts], reps).tolist(), days.tolist()))
        records.append(PatientRecord(f"P{p:0{width}d}", events))
    return records


def expected_pair_rate(cfg: SynthConfig, same_cluster, a_clustered=True, b_clustered=True):
    """Probability that two given concepts are both active for a random patient.

    Ignores roll-up, which only adds mass to retained ancestors.
    """
    K = cfg.n_clusters
    w, bg = cfg.within_cluster_rate, cfg.background_rate
    if same_cluster:
        return w * w / K + (1 - 1 / K) * bg * bg
    homes = int(a_clustered) + int(b_clustered)
    return homes / K * w * bg + (1 - homes / K) * bg * bg


def verify_planted_lift(X, vocab, truth: PlantedTruth, alpha=0.01):
    """One-sided binomial check that planted pairs co-occur more than the average pair.

    Counts how many planted pairs exceed the mean count over all concept
    pairs and tests that share against 1/2.  Returns the p-value; raises
    ``AssertionError`` when it is not below `alpha`.
    """
    dense = X.to_dense()
    V = X.vocab_size
    mean_rate = dense.sum() / (V * (V - 1))
    above = n = 0
    for cl in truth.clusters:
        idx = [vocab[c] for c in cl if c in vocab]
        for s, a in enumerate(idx):
            for b in idx[s + 1:]:
                n += 1
                above += dense[a, b] > mean_rate
    p = stats.binomtest(above, n, 0.5, alternative="greater").pvalue
    if p >= alpha:
        raise AssertionError(f"planted pairs do not co-occur above background (p={p:.3g})")
    return float(p)


def generate(cfg: SynthConfig = SynthConfig()):
    """Ontology, planted truth and patient records for one configuration."""
    ont = generate_ontology(cfg)
    truth = plant_clusters(ont, cfg)
    return ont, truth, generate_patients(ont, truth, cfg)
