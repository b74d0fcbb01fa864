import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

import oracles
from keep.cooccurrence import CooccurrenceMatrix
from keep.embedding import EmbeddingMatrix
from keep.evaluation import (
    EvalReport,
    ImpactResult,
    RelationshipSet,
    cosine_matrix,
    cosine_similarity,
    impact_assessment,
    intrinsic_discrimination,
    rank_correlation,
    rank_methods,
    read_relationship_sets,
    wilcoxon_signed_rank,
    write_relationship_sets,
)
from keep.exceptions import KeepError
from keep.ontology import information_content, load_ontology


def random_tree(n, seed):
    rng = np.random.default_rng(seed)
    return [(k, int(rng.integers(max(0, k - 30), k))) for k in range(1, n)]


def resnik_embedding(ont, ic):
    """Rows whose pairwise cosine equals Resnik / M on a tree."""
    V = ont.n_nodes
    anc = ont.ancestor_matrix()
    weight = np.array([ic[v] - (ic[ont.parents[v][0]] if len(ont.parents[v]) else 0.0)
                       for v in range(V)])
    shared = anc * np.sqrt(weight)[None, :]
    M = ic.max() + 1.0
    private = np.diag(np.sqrt(M - ic))
    return np.hstack([shared, private])


def random_cooc(V, seed):
    rng = np.random.default_rng(seed)
    dense = np.triu(rng.poisson(0.5, (V, V)), 1)
    return CooccurrenceMatrix.from_sparse(dense + dense.T)


@pytest.fixture(scope="module")
def tree200():
    ont = load_ontology(random_tree(200, 0), 0)
    return ont, information_content(ont)


def test_cosine_examples():
    E = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 2.0], [-1.0, 0.0], [0.0, 0.0]])
    assert cosine_similarity(E, 0, 1) == 1.0
    assert cosine_similarity(E, 0, 2) == 0.0
    assert cosine_similarity(E, 0, 3) == -1.0
    emb = EmbeddingMatrix(E, ids=[10, 11, 12, 13, 14])
    with pytest.raises(KeepError, match="14"):
        cosine_similarity(emb, 0, 4)
    with pytest.raises(KeepError, match="14"):
        cosine_matrix(emb)


def test_cosine_matrix_matches_pairwise():
    E = np.random.default_rng(0).normal(size=(12, 5))
    C = cosine_matrix(E)
    for i in range(12):
        for j in range(12):
            assert C[i, j] == pytest.approx(cosine_similarity(E, i, j), abs=1e-12)


def test_rank_correlation_matches_scipy():
    rng = np.random.default_rng(1)
    x, y = rng.normal(size=(4, 30)), rng.integers(0, 5, (4, 30))
    got = rank_correlation(x, y)
    for k in range(4):
        assert got[k] == pytest.approx(stats.spearmanr(x[k], y[k]).statistic, abs=1e-12)
        assert rank_correlation(x, y, "pearson")[k] == pytest.approx(stats.pearsonr(x[k], y[k]).statistic)
    assert np.isnan(rank_correlation(np.ones((1, 5)), x[:1, :5])[0])
    with pytest.raises(ValueError):
        rank_correlation(x, y, "kendall")


def test_impact_monotone_resnik_embedding(tree200):
    ont, ic = tree200
    E = resnik_embedding(ont, ic)
    C = cosine_matrix(E)
    M = ic.max() + 1.0
    from keep.ontology import resnik_matrix
    R = resnik_matrix(ont, ic)
    off = ~np.eye(ont.n_nodes, dtype=bool)
    assert np.allclose(C[off], R[off] / M, atol=1e-12)
    res = impact_assessment(E, ont, ic, random_cooc(ont.n_nodes, 1), repetitions=5)
    assert res.resnik_corr >= 0.95


def test_impact_gaussian_is_uncorrelated():
    ont = load_ontology(random_tree(500, 3), 0)
    ic = information_content(ont)
    E = np.random.default_rng(4).normal(size=(500, 16))
    r, c = impact_assessment(E, ont, ic, random_cooc(500, 5), repetitions=3)
    assert abs(r) < 0.1 and abs(c) < 0.1


def test_impact_deterministic_and_seed_sensitive(tree200):
    ont, ic = tree200
    E = np.random.default_rng(6).normal(size=(200, 8))
    X = random_cooc(200, 7)
    a = impact_assessment(E, ont, ic, X, repetitions=4, seed=1)
    b = impact_assessment(E, ont, ic, X, repetitions=4, seed=1)
    assert a == b
    assert isinstance(a, ImpactResult) and a.n_codes == 200 and a.repetitions == 4


def test_impact_invariant_to_monotone_count_transform(tree200):
    ont, ic = tree200
    E = np.random.default_rng(8).normal(size=(200, 8))
    X = random_cooc(200, 9)
    Y = CooccurrenceMatrix(X.vocab_size, X.rows, X.cols, X.counts ** 3 + 5)
    assert impact_assessment(E, ont, ic, X, repetitions=3).cooc_corr == \
        impact_assessment(E, ont, ic, Y, repetitions=3).cooc_corr


def test_impact_sample_excludes_probe_and_neighbors(tree200, monkeypatch):
    import keep.evaluation as ev

    ont, ic = tree200
    E = np.random.default_rng(10).normal(size=(200, 8))
    seen = []
    real = ev._sample_excluding

    def spy(u, n_total, excluded, out):
        real(u, n_total, excluded, out)
        seen.append((excluded.copy(), out.copy()))

    monkeypatch.setattr(ev, "_sample_excluding", spy)
    impact_assessment(E, ont, ic, random_cooc(200, 11), repetitions=2)
    for excluded, out in seen:
        assert excluded.shape[1] == 11 and out.shape[1] == 150
        for ex, row in zip(excluded, out):
            assert len(set(row.tolist())) == 150
            assert not set(row.tolist()) & set(ex.tolist())
            assert row.min() >= 0 and row.max() < 200


def test_impact_small_vocabulary_rejected():
    ont = load_ontology(random_tree(160, 0), 0)
    with pytest.raises(KeepError):
        impact_assessment(np.ones((160, 2)), ont, information_content(ont), random_cooc(160, 0))


def test_impact_vocabulary_mismatch(tree200):
    ont, ic = tree200
    with pytest.raises(KeepError):
        impact_assessment(np.random.default_rng(0).normal(size=(200, 4)), ont, ic, random_cooc(201, 0))


def test_relationship_set_validation(tmp_path):
    with pytest.raises(ValueError):
        RelationshipSet(1, (1, 2))
    with pytest.raises(ValueError):
        RelationshipSet(1, ())
    sets = [RelationshipSet(1, (2, 3), {2: "child", 3: "synonym"}), RelationshipSet(9, (4,), {4: "comorbidity"})]
    path = tmp_path / "rel.tsv"
    write_relationship_sets(sets, path)
    back = read_relationship_sets(path)
    assert back == sets
    assert back[0].relation_types == {2: "child", 3: "synonym"}
    with pytest.raises(ValueError):
        read_relationship_sets(["1\tfriend\t2"])
    with pytest.raises(ValueError):
        read_relationship_sets(["1\t2"])


def embedding_with_duplicated_core(V=300, n_pos=10, d=20, seed=0):
    rng = np.random.default_rng(seed)
    E = rng.normal(size=(V, d))
    E[:, 0] = 0.0
    E[: n_pos + 1] = 0.0
    E[: n_pos + 1, 0] = 1.0
    return EmbeddingMatrix(E, ids=np.arange(V))


def test_discrimination_perfect_separation():
    emb = embedding_with_duplicated_core()
    res = intrinsic_discrimination(emb, RelationshipSet(0, tuple(range(1, 11))), repetitions=20,
                                   bootstrap_iters=100)
    assert res.score == 1.0 and res.ci_low == res.ci_high == 1.0
    assert res.n_positives == 10 and res.coverage == 1.0


def test_discrimination_random_embedding_near_false_positive_rate():
    emb = EmbeddingMatrix(np.random.default_rng(1).normal(size=(3000, 32)), ids=np.arange(3000))
    res = intrinsic_discrimination(emb, RelationshipSet(0, tuple(range(1, 301))), repetitions=50,
                                   bootstrap_iters=200)
    assert abs(res.score - 0.05) <= 0.03


def test_discrimination_tie_at_threshold_is_not_a_hit():
    E = np.zeros((60, 2))
    E[:, 0] = 1.0  # every concept identical to the core
    res = intrinsic_discrimination(EmbeddingMatrix(E, ids=np.arange(60)), RelationshipSet(0, (1, 2)),
                                   null_size=30, repetitions=5, bootstrap_iters=10)
    assert res.score == 0.0


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 1000), scale=st.floats(1e-3, 1e3))
def test_discrimination_invariant_to_scale_and_rotation(seed, scale):
    rng = np.random.default_rng(seed)
    E = rng.normal(size=(400, 12))
    E[1:30] += E[0]
    Q, _ = np.linalg.qr(rng.normal(size=(12, 12)))
    rs = RelationshipSet(0, tuple(range(1, 30)))
    kw = dict(repetitions=10, bootstrap_iters=50, null_size=200)
    base = intrinsic_discrimination(EmbeddingMatrix(E, ids=np.arange(400)), rs, **kw)
    scaled = intrinsic_discrimination(EmbeddingMatrix(E * scale, ids=np.arange(400)), rs, **kw)
    rotated = intrinsic_discrimination(EmbeddingMatrix(E @ Q, ids=np.arange(400)), rs, **kw)
    assert scaled.score == pytest.approx(base.score, abs=1e-12)
    assert rotated.score == pytest.approx(base.score, abs=1e-12)


def test_bootstrap_interval_contains_point_and_shrinks():
    rng = np.random.default_rng(2)
    E = rng.normal(size=(2000, 16))
    E[1:201] += 0.35 * E[0]
    emb = EmbeddingMatrix(E, ids=np.arange(2000))
    small = intrinsic_discrimination(emb, RelationshipSet(0, tuple(range(1, 21))), repetitions=30)
    large = intrinsic_discrimination(emb, RelationshipSet(0, tuple(range(1, 201))), repetitions=30)
    for r in (small, large):
        assert r.ci_low <= r.score <= r.ci_high
        assert r.ci_low <= r.median <= r.ci_high
    assert large.ci_high - large.ci_low < small.ci_high - small.ci_low


def test_discrimination_errors_and_coverage():
    emb = EmbeddingMatrix(np.random.default_rng(3).normal(size=(40, 4)), ids=np.arange(40))
    with pytest.raises(KeepError):
        intrinsic_discrimination(emb, RelationshipSet(0, tuple(range(1, 25))))
    with pytest.raises(KeepError):
        intrinsic_discrimination(emb, RelationshipSet(99, (1,)))
    with pytest.raises(KeepError):
        intrinsic_discrimination(emb, RelationshipSet(0, (98, 99)))
    res = intrinsic_discrimination(emb, RelationshipSet(0, (1, 2, 98, 99)), repetitions=3,
                                   bootstrap_iters=10)
    assert res.coverage == 0.5 and res.n_positives == 2


def test_discrimination_deterministic():
    emb = EmbeddingMatrix(np.random.default_rng(4).normal(size=(300, 8)), ids=np.arange(300))
    rs = RelationshipSet(0, tuple(range(1, 40)))
    assert intrinsic_discrimination(emb, rs, repetitions=5) == intrinsic_discrimination(emb, rs, repetitions=5)


def test_wilcoxon_examples():
    a = np.arange(8.0)
    assert wilcoxon_signed_rank(a, a) == 1.0
    b = a + np.array([0.5, 1.1, 1.7, 2.3, 2.9, 3.5, 4.1, 4.7])
    assert wilcoxon_signed_rank(b, a) == 0.0078125
    assert wilcoxon_signed_rank(a, b) == 0.0078125
    with pytest.raises(ValueError):
        wilcoxon_signed_rank([1, 2, 3, 4], [1, 2, 3, 5])
    with pytest.raises(ValueError):
        wilcoxon_signed_rank([1, 2, 3, 4, 5], [1, 2, 3, 4])


@settings(max_examples=40, deadline=None)
@given(d=st.lists(st.floats(-10, 10, allow_nan=False).filter(lambda x: abs(x) > 1e-6),
                  min_size=5, max_size=12, unique_by=abs))
def test_wilcoxon_exact_matches_enumeration_and_scipy(d):
    d = np.array(d)
    p = wilcoxon_signed_rank(d, np.zeros_like(d))
    assert p == pytest.approx(oracles.signed_rank_exact_p(d.tolist()), abs=1e-12)
    assert p == pytest.approx(stats.wilcoxon(d, method="exact").pvalue, abs=1e-12)
    assert wilcoxon_signed_rank(np.zeros_like(d), d) == p


def test_wilcoxon_normal_approximation_matches_scipy():
    rng = np.random.default_rng(5)
    for n in (13, 30, 100):
        d = rng.normal(0.3, 1, n)
        want = stats.wilcoxon(d, method="approx", correction=False).pvalue
        assert wilcoxon_signed_rank(d, np.zeros(n)) == pytest.approx(want, rel=1e-10)
    tied = np.round(rng.normal(0.5, 1, 40))
    want = stats.wilcoxon(tied, method="approx", correction=False, zero_method="wilcox").pvalue
    assert wilcoxon_signed_rank(tied, np.zeros(40)) == pytest.approx(want, rel=1e-10)


@pytest.mark.parametrize("n,critical", [(6, 0), (7, 2), (8, 3), (9, 5), (10, 8), (11, 10), (12, 13)])
def test_wilcoxon_critical_values(n, critical):
    assert oracles.critical_value(n) == critical

    def diffs_with_negative_sum(t):
        signs = np.ones(n)
        left = t
        for r in range(n, 0, -1):
            if r <= left:
                signs[r - 1] = -1
                left -= r
        assert left == 0
        return signs * np.arange(1, n + 1)

    assert wilcoxon_signed_rank(diffs_with_negative_sum(critical), np.zeros(n)) <= 0.05
    assert wilcoxon_signed_rank(diffs_with_negative_sum(critical + 1), np.zeros(n)) > 0.05


def test_rank_methods_examples():
    dom = {"A": {t: 1.0 for t in "pqrst"}, "B": {t: 0.5 for t in "pqrst"}, "C": {t: 0.2 for t in "pqrst"}}
    res = rank_methods(dom)
    assert res.mean_ranks["A"] == 1.0 and res.best == "A"
    assert res.p_values["A"] == 1.0
    same = rank_methods({"A": {"x": 0.3, "y": 0.4, "z": 0.1, "u": 0.0, "v": 1.0},
                         "B": {"x": 0.3, "y": 0.4, "z": 0.1, "u": 0.0, "v": 1.0}})
    assert same.mean_ranks["A"] == same.mean_ranks["B"] == 1.5
    assert same.p_values == {"A": 1.0, "B": 1.0}
    few = rank_methods({"A": {"x": 1, "y": 2}, "B": {"x": 2, "y": 1}})
    assert few.p_values == {"A": None, "B": None}


def test_rank_methods_matches_hand_ranking():
    rng = np.random.default_rng(6)
    tasks = [f"t{k}" for k in range(8)]
    scores = {m: {t: float(rng.integers(0, 6)) / 5 for t in tasks} for m in "ABC"}
    res = rank_methods(scores)
    per_task = {m: [] for m in scores}
    for t in tasks:
        ranks = oracles.average_ranks_desc([scores[m][t] for m in "ABC"])
        for m, r in zip("ABC", ranks):
            per_task[m].append(r)
            assert res.ranks[m][t] == r
    for m in scores:
        assert res.mean_ranks[m] == pytest.approx(np.mean(per_task[m]))


def test_rank_methods_missing_cells():
    with pytest.raises(ValueError, match="'B', 'y'"):
        rank_methods({"A": {"x": 1, "y": 2}, "B": {"x": 1}})
    with pytest.raises(ValueError):
        rank_methods({"A": {"x": 1, "y": 2}})


def test_eval_report_roundtrip(tmp_path):
    rep = EvalReport()
    rep.add_correlations("KEEP", ImpactResult(0.61, 0.55, 100, 3))
    rep.add_correlations("GloVe", ImpactResult(0.2, float("nan"), 100, 3))
    emb = embedding_with_duplicated_core()
    rep.add_discrimination("KEEP", 0, intrinsic_discrimination(emb, RelationshipSet(0, (1, 2)),
                                                               repetitions=3, bootstrap_iters=10))
    path = tmp_path / "r.json"
    rep.save(path)
    back = EvalReport.load(path)
    assert back.discrimination_scores() == {"KEEP": {"0": 1.0}}
    assert back.correlations["KEEP"] == {"resnik_corr": 0.61, "cooc_corr": 0.55}
    assert json.loads(path.read_text())["correlations"]["KEEP"]["resnik_corr"] == 0.61
    text = back.render_text()
    assert "Resnik Sim." in text and "Co-occur. Sim." in text
    assert [ln for ln in text.splitlines() if ln.startswith("KEEP")][0].split()[1:] == ["0.61", "0.55"]
    lines = [ln for ln in text.splitlines() if ln.startswith("GloVe")]
    assert lines and lines[0].split()[-1] == "-"
    other = EvalReport(correlations={"n2v": {"resnik_corr": 0.5, "cooc_corr": 0.1}})
    assert set(back.merge(other).correlations) == {"KEEP", "GloVe", "n2v"}
