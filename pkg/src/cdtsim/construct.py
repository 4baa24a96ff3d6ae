"""Build a CDT from scratch: cluster, hypothesize, summarize, validate, recurse."""
from __future__ import annotations

import enum
import logging
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from sklearn.cluster import KMeans

from . import prompts
from ._clock import timestamp
from .exceptions import AggregateError, CdtError, DegenerateEmbeddingError, NodeError, ProtocolError, ValidationError
from .ground import compute_matrix
from .model import Cdt, CdtNode, Gate, HyperParams, IdAllocator, Observation, Origin, Statement
from .oracle import Lens
from .oracle.parsing import find_json_object, parse_assigned_list

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class HypothesisPair:
    gate_hypothesis: str
    statement_hypothesis: str
    source_cluster: str = ""

    def __post_init__(self):
        if not self.gate_hypothesis.strip() or not self.statement_hypothesis.strip():
            raise ValidationError("hypothesis pair texts must be non-empty")


@dataclass(frozen=True)
class Cluster:
    member_ids: tuple[str, ...]
    round_index: int
    centroid: tuple[float, ...]


class Outcome(str, enum.Enum):
    LEAF_CHILD = "LeafChild"
    RECURSE_CHILD = "RecurseChild"
    DISCARD = "Discard"


@dataclass
class GatedResult:
    outcome: Outcome
    routed: list[Observation]
    answers: list[tuple[str, str]]
    broadness: float
    p_gated: float | None


def _unit(v: np.ndarray, what: str) -> np.ndarray:
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        raise DegenerateEmbeddingError(f"zero-norm {what} embedding")
    return v / norm


def composite_embed(obs: Sequence[Observation], r: int, oracle, group: str = "") -> np.ndarray:
    """Rows of [unit(context + guide suffix r) ; unit(decision)]."""
    if not 1 <= r <= len(prompts.GUIDE_SUFFIXES):
        raise ValidationError(f"round {r} outside 1..{len(prompts.GUIDE_SUFFIXES)}")
    group = group or obs[0].group
    suffix = prompts.GUIDE_SUFFIXES[r - 1].format(group=group)
    ctx = oracle.embed([f"{o.context} {suffix}" for o in obs], Lens.GENERAL_CONTEXT)
    dec = oracle.embed([o.decision for o in obs], Lens.SURFACE_DECISION)
    return np.vstack([np.concatenate([_unit(c, "context"), _unit(d, "decision")]) for c, d in zip(ctx, dec)])


def cluster_round(vectors: np.ndarray, ids: Sequence[str], k_clusters: int, m: int, seed: int,
                  round_index: int = 1) -> list[Cluster]:
    """Seeded Lloyd k-means; each centroid keeps its ``m`` nearest points (ties by id)."""
    vectors = np.asarray(vectors, dtype=float)
    if k_clusters < 1:
        raise ValidationError("k_clusters must be >= 1")
    if len(vectors) < k_clusters:
        raise ValidationError(f"{len(vectors)} observations cannot form {k_clusters} clusters")
    km = KMeans(n_clusters=k_clusters, n_init=1, random_state=seed, algorithm="lloyd").fit(vectors)
    out = []
    for centroid in km.cluster_centers_:
        dist = np.linalg.norm(vectors - centroid, axis=1)
        order = sorted(range(len(ids)), key=lambda i: (dist[i], ids[i]))[:m]
        out.append(Cluster(tuple(ids[i] for i in order), round_index, tuple(float(x) for x in centroid)))
    return out


def n_clusters_for(n_events: int, m: int) -> int:
    return min(max(n_events // m, 2), 8, n_events)


def _parse_hypotheses(text: str):
    statements = parse_assigned_list(text, "action_hypotheses")
    gates = parse_assigned_list(text, "scene_check_hypotheses")
    if statements is None or gates is None:
        return None
    return list(zip(gates, statements))


def generate_hypotheses(cluster: Sequence[Observation], established: Sequence[str], gate_path: Sequence[str],
                        group: str, k: int, oracle, source_cluster: str = "") -> list[HypothesisPair]:
    if not cluster:
        raise ValidationError("cannot hypothesize from an empty cluster")
    prompt = prompts.hypothesis_generation(group, cluster, established, gate_path, k)
    first = _parse_hypotheses(oracle.text(prompt, "heavy"))
    best = first
    if first is None or len(first) < k:
        second = _parse_hypotheses(oracle.text(prompt + prompts.REPROMPT_NOTE, "heavy"))
        if second is not None and (best is None or len(second) > len(best)):
            best = second
    if not best:
        raise ProtocolError(f"no usable hypotheses for cluster {source_cluster or '?'}")
    if len(best) < k:
        log.warning("cluster %s: provider gave %d of %d hypotheses", source_cluster, len(best), k)
    return [HypothesisPair(g, s, source_cluster) for g, s in best[:k]]


def summarize_hypotheses(pairs: Sequence[HypothesisPair], group: str, n_target: int, n_upper: int,
                         oracle) -> list[HypothesisPair]:
    if not pairs:
        raise ValidationError("nothing to summarize")
    distinct = len({(p.gate_hypothesis, p.statement_hypothesis) for p in pairs})
    lo = min(n_target, distinct)

    def parse(text: str):
        obj = find_json_object(text)
        if obj is None or not isinstance(obj.get("pairs"), list):
            return None
        try:
            out = [HypothesisPair(str(p["scene_check_hypothesis"]), str(p["action_hypothesis"]), "summary")
                   for p in obj["pairs"]]
        except (KeyError, TypeError, ValidationError):
            return None
        return out if lo <= len(out) <= n_upper else None

    return oracle.ask(prompts.hypothesis_summarization(group, pairs, n_target, n_upper), parse,
                      role="heavy", what=f"summary ({lo}..{n_upper} pairs)")


def validate_ungated(statement: str, events: Sequence[Observation], oracle,
                     group: str = "") -> tuple[float, list[tuple[str, bool]]]:
    """Share of events whose decision is consistent with the statement."""
    if not events:
        raise ValidationError("ungated validation needs events")
    group = group or events[0].group
    verdicts = oracle.map(lambda e: (e.id, oracle.yes_no(prompts.ungated_validation(group, e.decision, statement))),
                          events)
    n_yes = sum(1 for _, v in verdicts if v)
    return n_yes / len(verdicts), verdicts


def _precision(verdicts) -> float | None:
    return sum(1 for _, v in verdicts if v) / len(verdicts) if verdicts else None


def validate_gated(pair: HypothesisPair, events: Sequence[Observation], hp: HyperParams, oracle,
                   verdicts: Sequence[tuple[str, bool]] | None = None, group: str = "") -> GatedResult:
    """Route events through the candidate gate and decide the pair's fate.

    Broadness is the routed fraction (No and Unknown both count as not routed).
    Precision over the routed subset reuses the Stage-1 verdicts when given.
    """
    group = group or events[0].group
    answers = oracle.map(lambda e: (e.id, oracle.judge_gate(e.context, pair.gate_hypothesis, group).value), events)
    routed = [e for e, (_, a) in zip(events, answers) if a == "yes"]
    broadness = len(routed) / len(events)
    if not routed or broadness > hp.tau_filter or len(routed) == len(events):
        return GatedResult(Outcome.DISCARD, routed, answers, broadness, None)
    routed_ids = {e.id for e in routed}
    if verdicts is None:
        _, sub = validate_ungated(pair.statement_hypothesis, routed, oracle, group)
    else:
        sub = [(eid, v) for eid, v in verdicts if eid in routed_ids]
    p = _precision(sub)
    if p >= hp.tau_accept:
        outcome = Outcome.LEAF_CHILD
    elif p >= hp.tau_reject:
        outcome = Outcome.RECURSE_CHILD
    else:
        outcome = Outcome.DISCARD
    return GatedResult(outcome, routed, answers, broadness, p)


@dataclass
class _BuildContext:
    group: str
    hp: HyperParams
    oracle: object
    ids: IdAllocator
    phase: str = ""
    events: dict = field(default_factory=dict)


def _verdict_rows(verdicts) -> list[list]:
    return [[eid, "yes" if v else "no"] for eid, v in verdicts]


def _finish(ctx: _BuildContext, node_id: str, events, depth, statements) -> CdtNode:
    node = CdtNode(id=node_id, statements=tuple(statements), routed_event_ids=frozenset(e.id for e in events),
                   depth=depth)
    if statements:
        node = replace(node, matrix=compute_matrix(node, events, ctx.oracle, ctx.group))
    return node


def _child_seed(seed: int, *path: int) -> int:
    return int(np.random.SeedSequence([seed, *path]).generate_state(1)[0])


def build_node(events: Sequence[Observation], depth: int, gate_path: Sequence[str], established: Sequence[str],
               hp: HyperParams, oracle, seed: int, *, group: str = "", ids: IdAllocator | None = None,
               initial: Sequence[Statement] = (), phase: str = "", path: str = "root") -> CdtNode:
    """Recursively construct the subtree for ``events``."""
    if not events:
        raise ValidationError("build_node needs events")
    ctx = _BuildContext(group or events[0].group, hp, oracle, ids or IdAllocator(), phase)
    try:
        return _build(ctx, list(events), depth, list(gate_path), list(established), seed, list(initial), path)
    except NodeError:
        raise
    except CdtError as exc:
        raise NodeError(path, exc) from exc


def _build(ctx: _BuildContext, events, depth, gate_path, established, seed, initial, path) -> CdtNode:
    hp, oracle = ctx.hp, ctx.oracle
    node_id = ctx.ids.node()
    if len(events) < hp.min_node_size or depth >= hp.d_max:
        log.info("%s: leaf (%d events, depth %d)", path, len(events), depth)
        return _finish(ctx, node_id, events, depth, initial)

    by_id = {e.id: e for e in events}
    ids = [e.id for e in events]
    k_clusters = n_clusters_for(len(events), hp.per_centroid_m)
    clusters: list[Cluster] = []
    for r in range(1, hp.rounds_r + 1):
        vectors = composite_embed(events, r, oracle, ctx.group)
        clusters.extend(cluster_round(vectors, ids, k_clusters, hp.per_centroid_m, _child_seed(seed, r), r))
    log.info("%s: %d clusters over %d events (calls so far %d)", path, len(clusters), len(events), oracle.total_calls)

    known = established + [s.text for s in initial]
    batches = oracle.map(
        lambda ic: generate_hypotheses([by_id[i] for i in ic[1].member_ids], known, gate_path, ctx.group,
                                       hp.hypotheses_k, oracle, f"r{ic[1].round_index}.{ic[0]}"),
        list(enumerate(clusters)),
    )
    raw = [p for batch in batches for p in batch]
    pairs = summarize_hypotheses(raw, ctx.group, hp.n_target, hp.n_upper, oracle)
    log.info("%s: %d raw hypotheses -> %d pairs", path, len(raw), len(pairs))

    statements = list(initial)
    children: list[tuple[Gate, CdtNode]] = []
    seen = set(known)
    for i, pair in enumerate(pairs):
        text = pair.statement_hypothesis
        if text in seen:
            continue
        p_global, verdicts = validate_ungated(text, events, oracle, ctx.group)
        if p_global >= hp.tau_accept:
            seen.add(text)
            statements.append(Statement(ctx.ids.statement(), text, Origin.CONSTRUCTED, ctx.phase,
                                        {"stage": "ungated", "verdicts": _verdict_rows(verdicts)}))
            continue
        res = validate_gated(pair, events, hp, oracle, verdicts, ctx.group)
        log.info("%s: pair %d p_global=%.2f b=%.2f p_gated=%s -> %s", path, i, p_global, res.broadness,
                 None if res.p_gated is None else round(res.p_gated, 3), res.outcome.value)
        if res.outcome is Outcome.DISCARD:
            continue
        seen.add(text)
        routed_ids = {e.id for e in res.routed}
        gate = Gate(ctx.ids.gate(), pair.gate_hypothesis, tuple((eid, a) for eid, a in res.answers))
        stage = "gated" if res.outcome is Outcome.LEAF_CHILD else "recurse"
        stmt = Statement(ctx.ids.statement(), text, Origin.CONSTRUCTED, ctx.phase,
                         {"stage": stage, "verdicts": _verdict_rows((eid, v) for eid, v in verdicts if eid in routed_ids)})
        child_path = f"{path}/{gate.id}"
        if res.outcome is Outcome.LEAF_CHILD:
            child = _finish(ctx, ctx.ids.node(), res.routed, depth + 1, [stmt])
        else:
            child = _build(ctx, res.routed, depth + 1, gate_path + [pair.gate_hypothesis],
                           established + [s.text for s in statements], _child_seed(seed, 1000 + i), [stmt],
                           child_path)
        children.append((gate, child))

    return replace(_finish(ctx, node_id, events, depth, statements), children=tuple(children))


def build_tree(corpus: Sequence[Observation], group: str | None = None, hp: HyperParams | None = None,
               oracle=None, seed: int = 0, phase: str = "train") -> Cdt:
    """Single candidate tree."""
    if not corpus:
        raise ValidationError("cannot build a tree from an empty corpus")
    hp = hp or HyperParams()
    group = group or corpus[0].group
    if len({e.id for e in corpus}) != len(corpus):
        raise ValidationError("duplicate observation ids in corpus")
    ids = IdAllocator()
    calls_before = oracle.total_calls
    root = build_node(list(corpus), 0, [], [], hp, oracle, seed, group=group, ids=ids, phase=phase)
    return Cdt(group=group, root=root, hyperparams=hp, provenance_log=(
        {"op": "construct", "at": timestamp(), "seed": seed, "phase": phase, "n_events": len(corpus),
         "oracle_calls": oracle.total_calls - calls_before},
    ))


def verbalize_tree(t: Cdt) -> str:
    lines = []

    def visit(node: CdtNode, indent: int):
        pad = "  " * indent
        for s in node.statements:
            lines.append(f"{pad}Statement: {prompts.one_line(s.text)}")
        for gate, child in node.children:
            lines.append(f"{pad}Gate: {prompts.one_line(gate.question)}")
            visit(child, indent + 1)

    visit(t.root, 0)
    return "\n".join(lines) or "(empty tree)"


def select_candidate(candidates: Sequence[Cdt], group: str, rounds: int, oracle, seed: int) -> tuple[int, list[int]]:
    """Majority vote over ``rounds`` shuffled presentations; ties go to the lower index."""
    if len(candidates) == 1:
        return 0, []
    texts = [verbalize_tree(c) for c in candidates]
    rng = np.random.default_rng(seed)
    votes = []
    for _ in range(rounds):
        order = [int(i) for i in rng.permutation(len(candidates))]

        def parse(text, n=len(order)):
            obj = find_json_object(text)
            try:
                idx = int(obj["best_candidate_index"])
            except (TypeError, KeyError, ValueError):
                return None
            return idx if 1 <= idx <= n else None

        pick = oracle.ask(prompts.candidate_selection(group, [texts[i] for i in order]), parse,
                          role="heavy", what="candidate vote")
        votes.append(order[pick - 1])
    tally = Counter(votes)
    winner = min(range(len(candidates)), key=lambda i: (-tally.get(i, 0), i))
    return winner, votes


def build_tree_with_selection(corpus: Sequence[Observation], group: str | None = None,
                              hp: HyperParams | None = None, oracle=None, seeds: Sequence[int] | None = None,
                              phase: str = "train") -> Cdt:
    """Build ``candidates_c`` trees with distinct seeds and keep the voted best."""
    hp = hp or HyperParams()
    if hp.candidates_c < 1:
        raise ValidationError("candidates_c must be >= 1")
    seeds = list(seeds) if seeds is not None else list(range(hp.candidates_c))
    if len(seeds) < hp.candidates_c:
        raise ValidationError(f"need {hp.candidates_c} seeds, got {len(seeds)}")
    seeds = seeds[: hp.candidates_c]
    if len(set(seeds)) != len(seeds):
        raise ValidationError("candidate seeds must be distinct")
    group = group or corpus[0].group
    built: list[tuple[int, Cdt]] = []
    errors = []
    for i, s in enumerate(seeds):
        try:
            built.append((i, build_tree(corpus, group, hp, oracle, s, phase)))
        except CdtError as exc:
            log.warning("candidate %d (seed %d) failed: %s", i, s, exc)
            errors.append(exc)
    if not built:
        raise AggregateError("every candidate build failed", errors)
    winner, votes = select_candidate([t for _, t in built], group, hp.voting_rounds, oracle, seeds[0])
    index, tree = built[winner]
    return tree.log({"op": "select", "at": timestamp(), "candidates": len(seeds), "built": [i for i, _ in built],
                     "votes": [built[v][0] for v in votes], "selected": index, "seed": seeds[index]})
