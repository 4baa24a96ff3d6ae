"""Property-based checks against the naive references in ``oracles.py``."""
import json
import math

import numpy as np
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from cdtsim.adapt import classify_statement
from cdtsim.analyze import EmbeddedEvent, bss, mann_whitney_u, phase_split, transport
from cdtsim.bench import chronological_split
from cdtsim.cli import _truncate
from cdtsim.evaluate import EvaluationRecord, aggregate
from cdtsim.ground import StatementStats
from cdtsim.infer import TraversalTrace, assemble_background
from cdtsim.model import (
    Cdt, CdtNode, EvidenceLabel, Gate, GroundingMatrix, HyperParams, Observation, Statement, tree_from_dict,
    tree_to_dict,
)
from cdtsim.oracle import GenerationRequest, request_digest

from oracles import brute_assignment_emd, brute_bss, enumerate_mwu, reference_classify

counts = st.integers(0, 60)
text = st.text(st.characters(blacklist_categories=("Cs",)), min_size=1, max_size=120).filter(lambda s: s.strip())


@given(counts, counts, counts)
def test_classify_agrees_with_reference(sup, con, irr):
    n = sup + con
    want = reference_classify(sup / n if n else 0.0, n)
    assert classify_statement(StatementStats("s", sup, con, irr), HyperParams()).value == want


def _unit(deg):
    return np.array([math.cos(math.radians(deg)), math.sin(math.radians(deg))])


# Two context layouts keep float ties honest.  One-hot contexts give cosines of exactly 0 or 1,
# so ties are common and exact.  Angled contexts use disjoint direction sets for the two sides
# whose cross angles are all distinct, so two pairs tie only when their inputs are identical.
ONE_HOT = [np.eye(4)[i] for i in range(4)]
ANGLED = ([_unit(d) for d in (0, 11, 23)], [_unit(d) for d in (41, 70, 97)])
TAUS = [-0.5, 0.0, 0.4, 0.6, 0.8, 0.9, 0.95, 0.99]


@st.composite
def event_sets(draw, prefix, contexts):
    n = draw(st.integers(1, 6))
    act = st.lists(st.floats(-1, 1, allow_nan=False), min_size=2, max_size=2).filter(
        lambda v: math.hypot(*v) > 1e-3)
    return [EmbeddedEvent(f"{prefix}{i}", contexts[draw(st.integers(0, len(contexts) - 1))], np.array(draw(act)))
            for i in range(n)]


def _check_bss(a, b, top_n, tau):
    items = lambda es: [(e.id, list(e.context), list(e.action)) for e in es]  # noqa: E731
    got, back = bss(a, b, top_n, tau), bss(b, a, top_n, tau)
    score, pairs = brute_bss(items(a), items(b), top_n, tau)
    assert [(p.a, p.b) for p in got.pairs] == pairs
    if score is None:
        assert got.score is None and back.score is None
        return
    assert abs(got.score - score) <= 1e-12
    assert got.score == back.score
    assert -1 - 1e-12 <= got.score <= 1 + 1e-12
    assert {frozenset((p.a, p.b)) for p in got.pairs} == {frozenset((p.a, p.b)) for p in back.pairs}


@settings(max_examples=80)
@given(event_sets("a", ONE_HOT), event_sets("b", ONE_HOT), st.integers(1, 10), st.sampled_from(TAUS))
def test_bss_one_hot_contexts(a, b, top_n, tau):
    _check_bss(a, b, top_n, tau)


@settings(max_examples=80)
@given(event_sets("a", ANGLED[0]), event_sets("b", ANGLED[1]), st.integers(1, 10), st.sampled_from(TAUS))
def test_bss_angled_contexts(a, b, top_n, tau):
    _check_bss(a, b, top_n, tau)


small = st.lists(st.integers(0, 6), min_size=1, max_size=6)


@settings(max_examples=80, suppress_health_check=[HealthCheck.too_slow])
@given(small, small)
def test_mwu_exact_against_enumeration(x, y):
    u, p = mann_whitney_u(x, y)
    ru, rp = enumerate_mwu(x, y)
    assert u == ru
    assert abs(p - rp) <= 1e-12
    assert 0.0 <= p <= 1.0
    assert mann_whitney_u(y, x) == (u, p)


@given(st.integers(1, 5).flatmap(lambda n: st.lists(st.lists(st.floats(0, 2), min_size=n, max_size=n),
                                                    min_size=n, max_size=n)))
def test_square_transport_is_best_permutation(cost):
    res = transport(np.array(cost))
    assert abs(res.distance - brute_assignment_emd(cost)) <= 1e-9
    n = len(cost)
    assert np.allclose(res.plan.sum(axis=0), 1 / n) and np.allclose(res.plan.sum(axis=1), 1 / n)


@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 1000))
def test_transport_marginals(ka, kb, seed):
    cost = np.random.default_rng(seed).random((ka, kb))
    res = transport(cost)
    assert np.allclose(res.plan.sum(axis=1), 1 / ka) and np.allclose(res.plan.sum(axis=0), 1 / kb)
    assert res.distance >= -1e-12
    assert abs(res.distance - float((res.plan * cost).sum())) <= 1e-9


def _obs(i, key):
    return Observation(f"e{i:03d}", "G", "c", "d", order_key=key)


@given(st.lists(st.integers(-50, 50), min_size=2, max_size=40), st.floats(0.05, 0.95))
def test_chronological_split_partitions(keys, f):
    corpus = [_obs(i, k) for i, k in enumerate(keys)]
    s = chronological_split(corpus, f)
    assert sorted(s.train_ids + s.test_ids) == sorted(o.id for o in corpus)
    assert 1 <= len(s.test) and 1 <= len(s.train)
    assert len(s.train) == min(math.ceil(round(f * len(keys), 9)), len(keys) - 1)
    last = max((o.order_key, o.id) for o in s.train)
    assert all((o.order_key, o.id) > last for o in s.test)


@given(st.lists(st.integers(0, 100), max_size=50), st.integers(1, 5))
def test_phase_split_balanced(keys, phases):
    parts = phase_split([_obs(i, k) for i, k in enumerate(keys)], phases)
    sizes = [len(p) for p in parts]
    assert sum(sizes) == len(keys)
    assert max(sizes) - min(sizes) <= 1 and sizes == sorted(sizes, reverse=True)


@given(st.lists(text, max_size=5), st.lists(text, max_size=30), st.integers(1, 5000))
def test_background_cap(gates, statements, cap):
    bg = assemble_background(TraversalTrace(satisfied_gates=gates, statement_texts=statements), cap)
    full = assemble_background(TraversalTrace(satisfied_gates=gates, statement_texts=statements), 10 ** 9)
    assert len(bg) <= cap and full.startswith(bg)


@given(st.dictionaries(st.text(max_size=5), st.integers(), max_size=8))
def test_digest_ignores_key_order(d):
    assert request_digest(d) == request_digest(dict(reversed(list(d.items()))))


@given(text, st.floats(0, 1), st.integers(1, 4096))
def test_distinct_requests_distinct_digests(prompt, temp, max_tokens):
    a = GenerationRequest(prompt, temp, max_tokens)
    b = GenerationRequest(prompt + " ", temp, max_tokens)
    assert request_digest(a) != request_digest(b)


labels = st.sampled_from(list(EvidenceLabel))


@st.composite
def trees(draw):
    counter = iter(range(10 ** 6))

    def node(depth):
        nid = f"n{next(counter)}"
        stmts = tuple(Statement(f"s{next(counter)}", draw(text)) for _ in range(draw(st.integers(0, 2))))
        events = tuple(f"e{i}" for i in range(draw(st.integers(0, 3))))
        matrix = None
        if stmts:
            matrix = GroundingMatrix(nid, events, tuple(s.id for s in stmts),
                                     tuple(tuple(draw(labels) for _ in stmts) for _ in events))
        kids = ()
        if depth < 2:
            kids = tuple((Gate(f"g{next(counter)}", draw(text)), node(depth + 1))
                         for _ in range(draw(st.integers(0, 2))))
        return CdtNode(nid, stmts, kids, frozenset(events), depth, matrix)

    return Cdt(draw(text), node(0))


@settings(max_examples=40)
@given(trees())
def test_tree_document_roundtrip(t):
    doc = json.loads(json.dumps(tree_to_dict(t)))
    assert tree_from_dict(doc) == t


@given(text)
def test_dot_truncation(label):
    short = _truncate(label)
    flat = " ".join(label.split())
    assert len(short) <= 80
    if len(flat) <= 80:
        assert short == flat
    else:
        assert short == flat[:77] + "..."


@given(st.lists(st.tuples(st.sampled_from("ABC"), st.sampled_from([0, 50, 100])), min_size=1, max_size=30))
def test_aggregate_bounds(rows):
    records = [EvaluationRecord(f"e{i}", "p", c, 0, 0, 0, 0, group=g) for i, (g, c) in enumerate(rows)]
    t = aggregate(records, "group")
    means = [r["consistency"] for r in t.rows.values()]
    assert min(means) - 1e-9 <= t.average["consistency"] <= max(means) + 1e-9
    assert abs(t.weighted_average["consistency"] - sum(c for _, c in rows) / len(rows)) <= 1e-9
