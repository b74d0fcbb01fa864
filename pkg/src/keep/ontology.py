"""Concept hierarchy: loading, depth pruning, information content, Resnik similarity.

Concepts carry stable external integer ids.  Inside an :class:`Ontology` they
are densely re-indexed to ``0..V-1``; ``ont.ids[i]`` is the external id of
internal index ``i`` and ``ont.index[ext]`` is the reverse lookup.  Edges
always point child -> parent (is-a).
"""
from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import networkx as nx
import numpy as np

from .exceptions import CycleError, OntologyError

logger = logging.getLogger(__name__)

DEFAULT_MAX_DEPTH = 5


@dataclass(frozen=True, eq=False)
class Ontology:
    """Immutable rooted DAG of concepts.

    Build instances with :func:`load_ontology`; the constructor trusts its
    arguments.
    """

    ids: np.ndarray
    parents: tuple
    root: int
    labels: Mapping[int, str] = field(default_factory=dict)
    index: dict = field(init=False, repr=False)
    children: tuple = field(init=False, repr=False)
    depth: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        index = {int(e): i for i, e in enumerate(self.ids)}
        kids = [[] for _ in range(len(self.ids))]
        for c, ps in enumerate(self.parents):
            for p in ps:
                kids[p].append(c)
        object.__setattr__(self, "index", index)
        object.__setattr__(
            self, "children", tuple(np.array(sorted(k), dtype=np.int64) for k in kids)
        )
        object.__setattr__(self, "depth", _min_depth(self.children, self.root))

    def __len__(self):
        return len(self.ids)

    def __repr__(self):
        return f"Ontology(n_nodes={len(self)}, n_edges={self.n_edges}, root={self.root_id})"

    @property
    def n_nodes(self):
        return len(self.ids)

    @property
    def n_edges(self):
        return sum(len(p) for p in self.parents)

    @property
    def root_id(self):
        return int(self.ids[self.root])

    def edges(self):
        """Internal (child, parent) pairs in index order."""
        return [(c, int(p)) for c, ps in enumerate(self.parents) for p in ps]

    def external_edges(self):
        return [(int(self.ids[c]), int(self.ids[p])) for c, p in self.edges()]

    def label(self, concept_id):
        return self.labels.get(int(concept_id), "")

    def undirected_adjacency(self):
        """CSR arrays ``(indptr, indices)`` with sorted neighbor lists."""
        nbrs = [
            np.union1d(np.asarray(self.parents[v], dtype=np.int64), self.children[v])
            for v in range(self.n_nodes)
        ]
        indptr = np.zeros(self.n_nodes + 1, dtype=np.int64)
        indptr[1:] = np.cumsum([len(n) for n in nbrs])
        indices = np.concatenate(nbrs) if nbrs else np.zeros(0, dtype=np.int64)
        return indptr, indices.astype(np.int64)

    def ancestor_matrix(self):
        """Boolean ``(V, V)`` matrix; ``A[c, a]`` is True iff ``a`` is ``c`` or an ancestor of ``c``."""
        cached = self.__dict__.get("_ancestors")
        if cached is not None:
            return cached
        V = self.n_nodes
        anc = np.zeros((V, V), dtype=bool)
        for v in _topological_parents_first(self):
            anc[v, v] = True
            for p in self.parents[v]:
                anc[v] |= anc[p]
        anc.setflags(write=False)
        object.__setattr__(self, "_ancestors", anc)
        return anc

    def ancestors(self, c):
        """Internal indices of ``c`` and all its ancestors."""
        return np.flatnonzero(self.ancestor_matrix()[c])

    def descendants(self, c):
        """Internal indices of ``c`` and all its descendants."""
        return np.flatnonzero(self.ancestor_matrix()[:, c])


def _min_depth(children, root):
    depth = np.full(len(children), -1, dtype=np.int64)
    depth[root] = 0
    queue = deque([root])
    while queue:
        v = queue.popleft()
        for c in children[v]:
            if depth[c] < 0:
                depth[c] = depth[v] + 1
                queue.append(c)
    return depth


def _topological_parents_first(ont):
    remaining = np.array([len(p) for p in ont.parents])
    queue = deque(np.flatnonzero(remaining == 0).tolist())
    order = []
    while queue:
        v = queue.popleft()
        order.append(v)
        for c in ont.children[v]:
            remaining[c] -= 1
            if remaining[c] == 0:
                queue.append(int(c))
    return order


def read_edge_list(lines: Iterable[str]):
    """Parse ``child<TAB>parent`` lines, skipping blanks and ``#`` comments."""
    edges = []
    for lineno, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) < 2:
            parts = line.split()
        if len(parts) != 2:
            raise OntologyError(f"line {lineno}: expected 2 columns, got {len(parts)}")
        try:
            edges.append((int(parts[0]), int(parts[1])))
        except ValueError:
            raise OntologyError(f"line {lineno}: non-integer concept id in {line!r}") from None
    return edges


def load_ontology(edges, root, labels=None, nodes=None):
    """Validate an is-a edge list and build an :class:`Ontology`.

    Parameters
    ----------
    edges : iterable of (child_id, parent_id), or of TSV lines
    root : int
        External id of the designated root.
    labels : mapping, optional
        External id -> description.
    nodes : iterable of int, optional
        Extra isolated concept ids to include before the reachability check.

    Nodes that cannot reach the root by following is-a edges are logged and
    dropped.  A directed cycle raises :class:`CycleError` naming one of its
    edges.
    """
    edges = list(edges)
    if edges and isinstance(edges[0], str):
        edges = read_edge_list(edges)
    root = int(root)

    g = nx.DiGraph()
    g.add_edges_from((int(c), int(p)) for c, p in edges)
    if nodes is not None:
        g.add_nodes_from(int(n) for n in nodes)
    if root not in g:
        if g.number_of_nodes() == 0 and nodes is None:
            raise OntologyError(f"root {root} does not appear in an empty edge list")
        raise OntologyError(f"root {root} does not appear in the node set")

    try:
        cycle = nx.find_cycle(g)
    except nx.NetworkXNoCycle:
        cycle = None
    if cycle:
        raise CycleError(cycle[-1][:2], [e[:2] for e in cycle])

    keep = nx.ancestors(g, root) | {root}
    dropped = g.number_of_nodes() - len(keep)
    if dropped:
        lost = sorted(set(g.nodes) - keep)
        logger.warning(
            "dropping %d node(s) that do not reach root %d: %s%s",
            dropped, root, lost[:10], " ..." if dropped > 10 else "",
        )
    ids = np.array(sorted(keep), dtype=np.int64)
    index = {int(e): i for i, e in enumerate(ids)}
    parents = tuple(
        np.array(sorted(index[p] for p in g.successors(int(e)) if p in index), dtype=np.int64)
        for e in ids
    )
    lab = {int(k): str(v) for k, v in (labels or {}).items() if int(k) in index}
    return Ontology(ids=ids, parents=parents, root=index[root], labels=lab)


@dataclass(frozen=True)
class RollUpMap:
    """Excluded external id -> sorted tuple of retained external ids."""

    mapping: Mapping[int, tuple]

    def __len__(self):
        return len(self.mapping)

    def __contains__(self, concept_id):
        return concept_id in self.mapping

    def __getitem__(self, concept_id):
        return self.mapping[concept_id]

    def get(self, concept_id, default=None):
        return self.mapping.get(concept_id, default)

    def items(self):
        return self.mapping.items()


def prune_to_depth(ont: Ontology, max_depth: int = DEFAULT_MAX_DEPTH):
    """Keep concepts whose minimum hop distance from the root is at most `max_depth`.

    Returns the induced sub-ontology and a :class:`RollUpMap` sending every
    excluded concept to its nearest retained ancestors, following each
    upward path until it first hits a retained node.
    """
    if isinstance(max_depth, bool) or int(max_depth) != max_depth or max_depth < 1:
        raise ValueError(f"max_depth must be an integer >= 1, got {max_depth!r}")
    keep = ont.depth <= max_depth
    new_index = -np.ones(ont.n_nodes, dtype=np.int64)
    new_index[keep] = np.arange(int(keep.sum()))

    targets = {}

    def resolve(v):
        # parents are strictly closer to the root in a DAG walk upward, so
        # recursion depth is bounded by the longest upward path
        if keep[v]:
            return (v,)
        if v in targets:
            return targets[v]
        out = set()
        for p in ont.parents[v]:
            out.update(resolve(int(p)))
        targets[v] = tuple(sorted(out))
        return targets[v]

    for v in _topological_parents_first(ont):
        if not keep[v]:
            resolve(v)

    ids = ont.ids[keep]
    parents = tuple(
        np.sort(new_index[ps[keep[ps]]]) for ps in (ont.parents[v] for v in np.flatnonzero(keep))
    )
    kept_ids = set(ids.tolist())
    labels = {k: v for k, v in ont.labels.items() if k in kept_ids}
    pruned = Ontology(ids=ids, parents=parents, root=int(new_index[ont.root]), labels=labels)
    rollup = RollUpMap({
        int(ont.ids[v]): tuple(sorted(int(ont.ids[t]) for t in ts)) for v, ts in sorted(targets.items())
    })
    return pruned, rollup


def information_content(ont: Ontology):
    """Per-concept IC in nats: ``-ln(|descendants(c) + c| / V)``.

    Returns a float array indexed by internal index.
    """
    n_desc = ont.ancestor_matrix().sum(axis=0)
    ic = -np.log(n_desc / ont.n_nodes)
    ic[ont.root] = 0.0  # exact zero rather than -0.0
    return ic


def resnik_similarity(ont: Ontology, ic, c1, c2):
    """IC of the most informative common ancestor of internal indices `c1`, `c2`."""
    anc = ont.ancestor_matrix()
    common = anc[c1] & anc[c2]
    if not common.any():
        raise OntologyError(
            f"concepts {ont.ids[c1]} and {ont.ids[c2]} share no ancestor; the graph is corrupt"
        )
    return float(np.max(ic[common]))


def resnik_matrix(ont: Ontology, ic):
    """All-pairs Resnik similarity as a dense ``(V, V)`` array.

    Row ``c`` is the elementwise max over ancestors ``a`` of ``c`` of
    ``ic[a] * [x is a descendant of a]``, which touches only ``depth(c)``
    rows per concept instead of intersecting ancestor sets pairwise.
    """
    anc = ont.ancestor_matrix()
    desc = anc.T
    ic = np.asarray(ic, dtype=np.float64)
    out = np.empty((ont.n_nodes, ont.n_nodes), dtype=np.float64)
    for c in range(ont.n_nodes):
        a = np.flatnonzero(anc[c])
        out[c] = np.max(np.where(desc[a], ic[a, None], 0.0), axis=0)
    return out


def read_labels(lines):
    labels = {}
    for line in lines:
        line = line.rstrip("\n")
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        labels[int(parts[0])] = parts[1] if len(parts) > 1 else ""
    return labels
