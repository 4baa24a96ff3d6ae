import numpy as np
import pytest
from scipy import stats

from cdtsim.analyze import (
    EmbeddedEvent, bss, drift_test, emd, emd_vectors, mann_whitney_u, pairwise_cosine, phase_split,
    similarity_matrix, transport,
)
from cdtsim.exceptions import DegenerateEmbeddingError, ValidationError
from cdtsim.model import Cdt, CdtNode, Gate, Statement
from cdtsim.oracle import Oracle, PlantedRuleProvider
from cdtsim.synthetic import phase_behavior_corpus, planted_corpus

from conftest import obs
from oracles import brute_assignment_emd, brute_bss, cosine, enumerate_mwu


def _events(rng, n, prefix, dim=4):
    return [EmbeddedEvent(f"{prefix}{i}", rng.normal(size=dim), rng.normal(size=dim)) for i in range(n)]


def _items(events):
    return [(e.id, list(e.context), list(e.action)) for e in events]


def test_pairwise_cosine_matches_reference_and_is_symmetric():
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=(5, 3)), rng.normal(size=(4, 3))
    m = pairwise_cosine(a, b)
    assert m[2, 3] == pytest.approx(cosine(a[2], b[3]), abs=1e-12)
    assert np.array_equal(m.T, pairwise_cosine(b, a))
    with pytest.raises(DegenerateEmbeddingError):
        pairwise_cosine(np.zeros((1, 3)), b)


@pytest.mark.parametrize("seed", range(5))
def test_bss_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    a, b = _events(rng, 7, "a", 2), _events(rng, 6, "b", 2)
    got = bss(a, b, top_n=5, tau=0.3)
    score, pairs = brute_bss(_items(a), _items(b), 5, 0.3)
    assert [(p.a, p.b) for p in got.pairs] == pairs
    assert got.score == pytest.approx(score, abs=1e-12)


def test_bss_symmetric():
    rng = np.random.default_rng(7)
    a, b = _events(rng, 8, "a", 2), _events(rng, 8, "b", 2)
    ab, ba = bss(a, b, 10, 0.2), bss(b, a, 10, 0.2)
    assert ab.score == ba.score
    assert {frozenset((p.a, p.b)) for p in ab.pairs} == {frozenset((p.a, p.b)) for p in ba.pairs}


def test_bss_no_pairs_and_self_exclusion():
    e = [EmbeddedEvent("x", np.array([1.0, 0.0]), np.array([1.0, 0.0])),
         EmbeddedEvent("y", np.array([0.0, 1.0]), np.array([0.0, 1.0]))]
    assert bss(e, e, tau=0.7, exclude_self=True).score is None
    assert bss(e, e, tau=0.7).score == 1.0
    with pytest.raises(ValidationError):
        bss([], e)


def test_bss_many_to_many():
    one = [EmbeddedEvent("a", np.array([1.0, 0.0]), np.array([1.0, 0.0]))]
    many = [EmbeddedEvent(f"b{i}", np.array([1.0, 0.01 * i]), np.array([0.0, 1.0])) for i in range(3)]
    assert bss(one, many).n_pairs == 3


@pytest.mark.parametrize("n", [2, 3, 5])
def test_transport_square_matches_permutations(n):
    cost = np.random.default_rng(n).random((n, n))
    res = transport(cost)
    assert res.method == "assignment"
    assert res.distance == pytest.approx(brute_assignment_emd(cost.tolist()), abs=1e-12)
    assert np.allclose(res.plan.sum(axis=1), 1 / n)


def test_transport_rectangular_and_lp_agree():
    cost = np.random.default_rng(3).random((4, 6))
    exact = transport(cost)
    assert np.allclose(exact.plan.sum(axis=0), 1 / 6) and np.allclose(exact.plan.sum(axis=1), 1 / 4)
    big = np.random.default_rng(4).random((25, 31))  # lcm 775 goes to the LP
    lp = transport(big)
    assert lp.method == "linprog"
    assert np.allclose(lp.plan.sum(axis=1), 1 / 25)


def test_sinkhorn_close_to_exact():
    rng = np.random.default_rng(5)
    a, b = rng.normal(size=(101, 3)), rng.normal(size=(101, 3))
    approx = emd_vectors(a, b)
    assert approx.method == "sinkhorn"
    cost = np.clip(1.0 - pairwise_cosine(a, b), 0.0, 2.0)
    from scipy.optimize import linear_sum_assignment
    r, c = linear_sum_assignment(cost)
    assert abs(approx.distance - cost[r, c].sum() / 101) <= approx.tolerance + 1e-6


def test_emd_identity_and_element_kinds(planted):
    g = lambda q: Gate("g", q)  # noqa: E731
    t1 = Cdt("A", CdtNode("n0", (Statement("s", "does [act:alpha]"),), ((g("[ctx:alpha]?"), CdtNode("n1")),)))
    t2 = Cdt("B", CdtNode("n0", (Statement("s", "does [act:beta]"),), ((g("[ctx:beta]?"), CdtNode("n1")),)))
    assert emd(t1, t1, "gate", planted) == pytest.approx(0.0, abs=1e-12)
    assert emd(t1, t2, "stmt", planted) > 0
    with pytest.raises(ValidationError):
        emd(t1, t2, "node", planted)
    with pytest.raises(ValidationError):
        emd(t1, Cdt("C", CdtNode("n0")), "gate", planted)


@pytest.mark.parametrize("x,y", [([1, 2, 3], [4, 5, 6]), ([1, 1, 2, 3], [2, 3, 3, 4, 5]),
                                 ([0.5] * 4, [0.5] * 3), ([3, 1, 4, 1, 5], [9, 2, 6]),
                                 ([1, 2, 2, 2, 3, 4, 7, 7], [2, 3, 5, 6, 6, 8, 9, 9, 9])])
def test_mwu_exact_against_enumeration(x, y):
    u, p = mann_whitney_u(x, y)
    ru, rp = enumerate_mwu(x, y)
    assert u == ru
    assert p == pytest.approx(rp, abs=1e-12)


def test_mwu_normal_branch_matches_scipy():
    rng = np.random.default_rng(0)
    x, y = rng.normal(size=30).round(1), rng.normal(0.5, size=25).round(1)
    u, p = mann_whitney_u(x, y)
    ref = stats.mannwhitneyu(x, y, alternative="two-sided", method="asymptotic", use_continuity=True)
    assert p == pytest.approx(ref.pvalue, rel=1e-9)
    assert u == min(ref.statistic, 30 * 25 - ref.statistic)


def test_mwu_rejects_empty():
    with pytest.raises(ValidationError):
        mann_whitney_u([], [1.0])


@pytest.mark.parametrize("n,sizes", [(9, [3, 3, 3]), (10, [4, 3, 3]), (11, [4, 4, 3])])
def test_phase_split_sizes(n, sizes):
    parts = phase_split([obs(i, key=n - i) for i in range(n)])
    assert [len(p) for p in parts] == sizes
    keys = [e.order_key for p in parts for e in p]
    assert keys == sorted(keys)


def test_drift_detected_and_absent():
    o = Oracle(PlantedRuleProvider(group="Acme"))
    drifting = drift_test(phase_behavior_corpus(seed=0, drift=True), o)
    steady = drift_test(phase_behavior_corpus(seed=0, drift=False), o)
    assert drifting.significant and drifting.p_value < 0.05
    assert not steady.significant
    assert drifting.to_dict()["n_cross"] == len(drifting.cross)


def test_drift_needs_events():
    with pytest.raises(ValidationError):
        drift_test([obs(i) for i in range(4)], Oracle(PlantedRuleProvider()))


def test_similarity_matrix_bss(planted):
    groups = [("A", planted_corpus("A", per_rule=4, seed=1)), ("B", planted_corpus("B", per_rule=4, seed=2))]
    sm = similarity_matrix(groups, "bss", planted)
    assert sm.values[0][1] == sm.values[1][0]
    assert sm.to_csv_rows()[0] == ["", "A", "B"]
    with pytest.raises(ValidationError):
        similarity_matrix(groups[:1], "bss", planted)
    with pytest.raises(ValidationError):
        similarity_matrix(groups, "cosine", planted)


def test_similarity_matrix_records_failing_cells(planted):
    empty = Cdt("E", CdtNode("n0"))
    full = Cdt("F", CdtNode("n0", (Statement("s", "x"),), ((Gate("g", "q?"), CdtNode("n1")),)))
    sm = similarity_matrix([("E", empty), ("F", full)], "emd_gate", planted)
    assert sm.values[1][1] == pytest.approx(0.0, abs=1e-12)
    assert sm.values[0][1] is None and "E|F" in sm.errors


def test_drift_ignores_float_noise():
    """Identical behaviors in every phase must not look like drift through last-bit cosine noise."""
    o = Oracle(PlantedRuleProvider())
    for seed in range(10):
        r = drift_test(phase_behavior_corpus(seed=seed, drift=False), o)
        assert set(r.within) == set(r.cross) == {1.0} and r.p_value == 1.0
