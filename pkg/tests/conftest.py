import pytest

from cdtsim.model import HyperParams, Observation
from cdtsim.oracle import Oracle, PlantedRule, PlantedRuleProvider, ScriptedProvider
from cdtsim.synthetic import planted_corpus


def obs(i, context="ctx", decision="dec", group="G", key=None, **kw):
    return Observation(id=f"e{i}", group=group, context=context, decision=decision,
                       order_key=i if key is None else key, **kw)


@pytest.fixture
def planted():
    return Oracle(PlantedRuleProvider([PlantedRule("alpha"), PlantedRule("beta")], group="Acme"))


@pytest.fixture
def planted_events():
    return planted_corpus("Acme", per_rule=30, seed=0)


@pytest.fixture
def hp():
    return HyperParams()


def scripted(replies=None, embeddings=None, **kw):
    return Oracle(ScriptedProvider(replies, embeddings), **kw)


# acceptance criteria append (number, passed, detail); printed once at the end of the session
ACCEPTANCE_RESULTS: list[tuple[int, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n, ok, detail in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
