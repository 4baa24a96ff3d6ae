import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from cdtsim import CodifiedDecisionTree
from cdtsim._validation import check_contexts, check_observations
from cdtsim.exceptions import ConfigError, ValidationError
from cdtsim.model import HyperParams, Origin
from cdtsim.synthetic import drifting_corpus

from conftest import obs


def _est(planted, **kw):
    return CodifiedDecisionTree(oracle=planted, hyperparams={"candidates_c": 1}, seeds=(0,), **kw)


def test_params_roundtrip(planted):
    est = _est(planted, group="Acme")
    params = est.get_params()
    assert params["group"] == "Acme" and params["seeds"] == (0,)
    twin = clone(est)
    assert twin.oracle is planted
    assert twin.get_params()["hyperparams"] == {"candidates_c": 1}
    est.set_params(background_cap=100)
    assert est.background_cap == 100


def test_fit_predict_and_path(planted, planted_events):
    est = _est(planted).fit(planted_events)
    assert est.tree_.group == "Acme" and est.adapt_report_ is None
    preds = est.predict(["scene [ctx:alpha]", {"context": "scene [ctx:beta]", "question": "Next?"}])
    assert len(preds) == 2 and all(isinstance(p, str) and p for p in preds)
    [trace] = est.decision_path([planted_events[0]])
    assert trace.statement_ids


def test_fit_on_strings_needs_group(planted):
    X = [f"scene [ctx:alpha] {i}" for i in range(10)]
    y = ["did [act:alpha]"] * 10
    with pytest.raises(ValidationError):
        _est(planted).fit(X, y)
    est = _est(planted, group="Acme").fit(X, y)
    assert [o.id for o in est.history_][:2] == ["obs0", "obs1"]


def test_partial_fit_adapts(planted):
    events = drifting_corpus("Acme", per_phase=20)
    est = _est(planted).fit(events[:20])
    est.partial_fit(events[20:40])
    assert est.adapt_report_ is not None and len(est.history_) == 40
    assert any(s.origin is Origin.ADAPTED_ADD for s in est.tree_.statements())


def test_partial_fit_strings_continue_ids(planted):
    est = _est(planted, group="Acme").fit([f"[ctx:alpha] {i}" for i in range(10)], ["[act:alpha]"] * 10)
    est.partial_fit(["[ctx:alpha] late"] * 3, ["[anti:alpha]"] * 3)
    assert [o.id for o in est.history_[-3:]] == ["obs10", "obs11", "obs12"]


def test_partial_fit_unfitted_fits(planted, planted_events):
    est = _est(planted).partial_fit(planted_events)
    assert est.adapt_report_ is None and est.tree_ is not None


def test_not_fitted(planted):
    with pytest.raises(NotFittedError):
        _est(planted).predict(["x"])


def test_bad_hyperparams_and_seeds(planted, planted_events):
    with pytest.raises(ConfigError):
        CodifiedDecisionTree(oracle=planted, hyperparams="deep").fit(planted_events)
    with pytest.raises(ConfigError):
        CodifiedDecisionTree(oracle=planted, seeds=(0,)).fit(planted_events)
    est = CodifiedDecisionTree(oracle=planted, hyperparams=HyperParams(candidates_c=1), seeds=(0,))
    assert est.fit(planted_events).tree_ is not None


def test_default_oracle_is_offline(planted_events):
    est = CodifiedDecisionTree(hyperparams={"candidates_c": 1}, seeds=(0,)).fit(planted_events[:6])
    assert est.predict(["scene"])


def test_check_observations():
    with pytest.raises(ValidationError):
        check_observations([])
    assert check_observations([], allow_empty=True) == []
    with pytest.raises(ValidationError):
        check_observations([obs(1, group="A"), obs(2, group="B")])
    with pytest.raises(ValidationError):
        check_observations([obs(1), obs(1)])
    with pytest.raises(ValidationError):
        check_observations(["a", "b"], ["x"], group="G")
    with pytest.raises(ValidationError):
        check_observations([42])
    with pytest.raises(ValidationError):
        check_observations([{"context": "c"}], group="G")
    got = check_observations([{"context": "c", "decision": "d"}], group="G", start=5)
    assert (got[0].id, got[0].order_key) == ("obs5", 5)


def test_check_contexts():
    assert check_contexts(["a", obs(1, context="b"), {"context": "c", "question": "q"}]) == [
        ("a", ""), ("b", ""), ("c", "q")]
    with pytest.raises(ValidationError):
        check_contexts([" "])
    with pytest.raises(ValidationError):
        check_contexts([3])
