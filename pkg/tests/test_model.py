import json

import pytest

from cdtsim.construct import build_tree
from cdtsim.exceptions import ConfigError, ValidationError
from cdtsim.model import (
    SCHEMA_VERSION, Cdt, CdtNode, EvidenceLabel, Gate, GroundingMatrix, HyperParams, IdAllocator,
    Observation, Origin, Statement, sort_chronologically, tree_from_dict, tree_to_dict, validate_tree,
)

from conftest import obs


def test_table5_defaults():
    hp = HyperParams()
    assert (hp.d_max, hp.rounds_r, hp.per_centroid_m, hp.hypotheses_k) == (3, 4, 8, 3)
    assert hp.tau_accept == hp.tau_keep == 0.65
    assert hp.tau_reject == hp.tau_delete == 0.35
    assert (hp.tau_filter, hp.tau_min) == (0.8, 3)


@pytest.mark.parametrize("kw", [
    {"tau_accept_keep": 0.3, "tau_reject_delete": 0.35},
    {"tau_filter": 0.0},
    {"tau_min": 0},
    {"d_max": 0},
    {"rounds_r": 5},
    {"n_target": 9, "n_upper": 8},
])
def test_hyperparams_reject_bad_values(kw):
    with pytest.raises(ConfigError):
        HyperParams(**kw)


def test_hyperparams_unknown_key():
    with pytest.raises(ConfigError, match="unknown"):
        HyperParams.from_dict({"depth": 3})


def test_observation_validation():
    with pytest.raises(ValidationError):
        Observation(id="a", group="G", context=" ", decision="d")
    with pytest.raises(ValidationError):
        Observation(id="a", group="G", context="c", decision="d", order_key="2020-01-01")
    o = Observation.from_dict({"id": 1, "group": "G", "context": "c", "decision": "d", "order_key": 4,
                               "source": "wikipedia"})
    assert o.id == "1" and o.source.value == "wikipedia"
    assert Observation.from_dict(o.to_dict()) == o


def test_observation_missing_field():
    with pytest.raises(ValidationError, match="decision"):
        Observation.from_dict({"id": "a", "group": "G", "context": "c", "order_key": 0})


def test_sort_chronologically_examples():
    b, a = obs(2, key=2), obs(1, key=1)
    assert [o.id for o in sort_chronologically([b, a])] == ["e1", "e2"]
    x, y = Observation("b", "G", "c", "d", 1), Observation("a", "G", "c", "d", 1)
    assert [o.id for o in sort_chronologically([x, y])] == ["a", "b"]
    assert sort_chronologically([]) == []


def test_sort_rejects_mixed_groups():
    with pytest.raises(ValidationError):
        sort_chronologically([obs(1, group="A"), obs(2, group="B")])


def _tree(child_depth=1, child_routed=("e1",)):
    child = CdtNode("n1", (Statement("s1", "does x"),), (), frozenset(child_routed), child_depth)
    root = CdtNode("n0", (), ((Gate("g0", "is it y?"), child),), frozenset({"e1", "e2"}), 0)
    return Cdt("G", root)


def test_validate_tree_examples():
    assert validate_tree(Cdt("G", CdtNode("n0"))) == []
    assert validate_tree(_tree()) == []
    bad_depth = validate_tree(_tree(child_depth=0))
    assert len(bad_depth) == 1 and "n1" in bad_depth[0]
    bad_subset = validate_tree(_tree(child_routed=("e1", "e9")))
    assert len(bad_subset) == 1 and "subset" in bad_subset[0]


def test_validate_tree_depth_and_duplicates():
    leaf = CdtNode("n0", (Statement("s1", "a"), Statement("s1", "b")), depth=0)
    assert any("duplicate statement" in v for v in validate_tree(Cdt("G", leaf)))
    deep = CdtNode("n2", depth=2)
    mid = CdtNode("n1", children=((Gate("g1", "q"), deep),), depth=1)
    root = CdtNode("n0", children=((Gate("g0", "q"), mid),))
    assert any("d_max" in v for v in validate_tree(Cdt("G", root, HyperParams(d_max=1))))


def test_grounding_matrix_shape_checked():
    with pytest.raises(ValidationError):
        GroundingMatrix("n0", ("e1",), ("s1", "s2"), ((EvidenceLabel.SUP,),))


def test_matrix_select_keeps_order():
    S, C, I = EvidenceLabel.SUP, EvidenceLabel.CON, EvidenceLabel.IRR
    m = GroundingMatrix("n0", ("e1", "e2", "e3"), ("s1", "s2"), ((S, C), (I, S), (C, C)))
    sub = m.select(["e3", "e1"], ["s2"])
    assert sub.event_ids == ("e1", "e3") and sub.labels == ((C,), (C,))


def test_round_trip_on_built_tree(planted, planted_events):
    t = build_tree(planted_events, "Acme", HyperParams(), planted, seed=0)
    d = tree_to_dict(t)
    assert d["schema_version"] == SCHEMA_VERSION
    back = tree_from_dict(json.loads(json.dumps(d)))
    assert back == t
    assert tree_to_dict(back) == d


def test_unknown_schema_version_rejected():
    d = tree_to_dict(Cdt("G", CdtNode("n0")))
    d["schema_version"] = 99
    with pytest.raises(ValidationError, match="schema_version"):
        tree_from_dict(d)


def test_id_allocator_skips_existing():
    ids = IdAllocator(_tree())
    assert ids.node() == "n2" and ids.statement() == "s2" and ids.gate() == "g1"


def test_statement_origin_enum():
    assert {o.value for o in Origin} == {"constructed", "adapted_add", "demoted", "transferred"}
