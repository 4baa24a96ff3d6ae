"""Incremental adaptation of an existing CDT to new observations.

Each node is processed top-down.  Its grounding matrix is extended with the new
events, every statement is classified (keep, delete, demote), demoted statements
are relocated into a child or dropped, uncovered events seed new statements, and
only then does processing recurse into the children.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

from . import prompts
from ._clock import timestamp
from .exceptions import AggregateError, CdtError, NodeError, ValidationError
from .ground import StatementStats, extend_matrix, stats_for, supporting_events, uncovered_events
from .model import (Cdt, CdtNode, EvidenceLabel, Gate, GroundingMatrix, HyperParams, IdAllocator, Observation,
                    Origin, Statement)
from .oracle.parsing import parse_string_list

log = logging.getLogger(__name__)


class Verdict(str, enum.Enum):
    KEEP = "Keep"
    KEEP_INSUFFICIENT = "KeepInsufficient"
    DELETE = "Delete"
    DEMOTE = "Demote"


def classify_statement(stats: StatementStats, hp: HyperParams) -> Verdict:
    if stats.effective_n < hp.tau_min:
        return Verdict.KEEP_INSUFFICIENT
    p = stats.precision
    if p >= hp.tau_keep:
        return Verdict.KEEP
    if p < hp.tau_delete:
        return Verdict.DELETE
    return Verdict.DEMOTE


@dataclass(frozen=True)
class DemotionOutcome:
    kind: str  # "MovedToChild" | "NewChild" | "Deleted"
    child_id: str | None = None
    gate: Gate | None = None
    precision: float | None = None

    def to_dict(self) -> dict:
        return {"kind": self.kind, "child_id": self.child_id,
                "gate_id": self.gate.id if self.gate else None, "precision": self.precision}


@dataclass
class NodeReport:
    kept: list[dict] = field(default_factory=list)
    deleted: list[dict] = field(default_factory=list)
    demoted: list[dict] = field(default_factory=list)
    added: list[dict] = field(default_factory=list)
    rejected_candidates: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"kept": self.kept, "deleted": self.deleted, "demoted": self.demoted, "added": self.added,
                "rejected_candidates": self.rejected_candidates}


@dataclass
class AdaptReport:
    nodes: dict[str, NodeReport] = field(default_factory=dict)
    new_children: list[str] = field(default_factory=list)
    oracle_calls: int = 0

    def node(self, node_id: str) -> NodeReport:
        return self.nodes.setdefault(node_id, NodeReport())

    def ids(self, kind: str) -> list[str]:
        return [row["statement_id"] for rep in self.nodes.values() for row in getattr(rep, kind)]

    def to_dict(self) -> dict:
        return {"nodes": {k: v.to_dict() for k, v in self.nodes.items()}, "new_children": self.new_children,
                "oracle_calls": self.oracle_calls}


def _stat_row(stats: StatementStats, verdict: Verdict | None = None) -> dict:
    row = {"statement_id": stats.statement_id, "p": stats.precision, "n": stats.effective_n}
    if verdict is not None:
        row["verdict"] = verdict.value
    return row


def _column(m: GroundingMatrix, statement_id: str, event_ids) -> dict[str, EvidenceLabel]:
    col = dict(zip(m.event_ids, m.column(statement_id)))
    return {e: col[e] for e in event_ids}


def _precision_over(labels: Mapping[str, EvidenceLabel], event_ids) -> tuple[float | None, int]:
    sup = sum(1 for e in event_ids if labels.get(e) is EvidenceLabel.SUP)
    con = sum(1 for e in event_ids if labels.get(e) is EvidenceLabel.CON)
    return (sup / (sup + con) if sup + con else None), sup + con


def _jaccard(a: set, b: set) -> float:
    return len(a & b) / len(a | b) if a | b else 1.0


@dataclass
class _Ctx:
    group: str
    hp: HyperParams
    oracle: object
    ids: IdAllocator
    events: dict[str, Observation]
    report: AdaptReport
    phase: str
    log: list[dict]


@dataclass
class _Incoming:
    statement: Statement
    labels: dict[str, EvidenceLabel]


def _route(ctx: _Ctx, question: str, events: Sequence[Observation]) -> set[str]:
    answers = ctx.oracle.map(lambda e: (e.id, ctx.oracle.judge_gate(e.context, question, ctx.group)), events)
    return {eid for eid, a in answers if a.value == "yes"}


def _demote_jointly(ctx: _Ctx, node: CdtNode, m: GroundingMatrix, demoted: Sequence[Statement],
                    child_events: Sequence[set[str]]) -> tuple[dict[str, DemotionOutcome], list[tuple[Gate, CdtNode]]]:
    """Relocate each demoted statement into an existing child, a new child, or nowhere.

    ``child_events`` holds each existing child's routed ids (old and new).  Returns
    per-statement outcomes and any newly created (gate, child) pairs.
    """
    hp = ctx.hp
    outcomes: dict[str, DemotionOutcome] = {}
    unresolved = []
    for s in demoted:
        labels = _column(m, s.id, m.event_ids)
        sup = set(supporting_events(m, s.id))
        best = None
        for idx, routed in enumerate(child_events):
            captured = len(sup & routed)
            if not sup or captured < 0.5 * len(sup):
                continue
            p, _ = _precision_over(labels, routed)
            if p is not None and p >= hp.tau_keep and (best is None or p > best[0]):
                best = (p, idx)
        if best is not None:
            child = node.children[best[1]][1]
            outcomes[s.id] = DemotionOutcome("MovedToChild", child.id, precision=best[0])
        else:
            unresolved.append(s)

    new_children: list[tuple[Gate, CdtNode]] = []
    if not unresolved:
        return outcomes, new_children
    if node.depth + 1 > hp.d_max:
        for s in unresolved:
            outcomes[s.id] = DemotionOutcome("Deleted")
        return outcomes, new_children

    sup_sets = {s.id: set(supporting_events(m, s.id)) for s in unresolved}
    groups: list[list[Statement]] = []
    for s in unresolved:
        for g in groups:
            if _jaccard(sup_sets[g[0].id], sup_sets[s.id]) >= 0.5:
                g.append(s)
                break
        else:
            groups.append([s])

    node_events = [ctx.events[e] for e in m.event_ids]
    routed_cache: dict[str, set[str]] = {}
    children_by_question: dict[str, tuple[Gate, list[Statement], set[str]]] = {}
    for group_stmts in groups:
        lead = group_stmts[0]
        sup_ids = sorted(set().union(*(sup_sets[s.id] for s in group_stmts)))
        con_ids = sorted(set().union(*(supporting_events(m, s.id, EvidenceLabel.CON) for s in group_stmts)))
        p_lead = stats_for(m, lead.id).precision or 0.0
        prompt = prompts.demotion_gates(ctx.group, lead.text, p_lead, [ctx.events[e] for e in sup_ids],
                                        [ctx.events[e] for e in con_ids])
        candidates = ctx.oracle.ask(prompt, lambda t: parse_string_list(t) or None, role="heavy",
                                    what="demotion gate candidates")[:3]
        for s in group_stmts:
            labels = _column(m, s.id, m.event_ids)
            sup = sup_sets[s.id]
            placed = False
            for q in candidates:
                if not ctx.oracle.yes_no(prompts.gate_semantic_check(ctx.group, s.text, q), role="light"):
                    continue
                if q not in routed_cache:
                    routed_cache[q] = _route(ctx, q, node_events)
                routed = routed_cache[q]
                if not routed or len(sup & routed) < 0.5 * len(sup):
                    continue
                p, _ = _precision_over(labels, routed)
                if p is None or p < ctx.hp.tau_keep:
                    continue
                if q not in children_by_question:
                    answers = tuple((e, "yes" if e in routed else "no") for e in m.event_ids)
                    children_by_question[q] = (Gate(ctx.ids.gate(), q, answers), [], routed)
                gate, members, _ = children_by_question[q]
                members.append(s)
                outcomes[s.id] = DemotionOutcome("NewChild", None, gate, p)
                placed = True
                break
            if not placed:
                outcomes[s.id] = DemotionOutcome("Deleted")

    for q, (gate, members, routed) in children_by_question.items():
        child_id = ctx.ids.node()
        ordered = [e for e in m.event_ids if e in routed]
        stmts = tuple(replace(s, origin=Origin.DEMOTED) for s in members)
        labels = _reorder(m.select(ordered), [s.id for s in members])
        child = CdtNode(id=child_id, statements=stmts, routed_event_ids=frozenset(ordered), depth=node.depth + 1,
                        matrix=GroundingMatrix(child_id, tuple(ordered), tuple(s.id for s in stmts), labels))
        new_children.append((gate, child))
        for s in members:
            outcomes[s.id] = replace(outcomes[s.id], child_id=child_id)
    return outcomes, new_children


def _reorder(m: GroundingMatrix, statement_ids: Sequence[str]) -> tuple:
    cols = [m.statement_ids.index(s) for s in statement_ids]
    return tuple(tuple(row[j] for j in cols) for row in m.labels)


def demote_statement(stmt: Statement, node: CdtNode, matrix: GroundingMatrix, hp: HyperParams, oracle, *,
                     events: Mapping[str, Observation], group: str = "", ids: IdAllocator | None = None):
    """Relocate one demoted statement; returns (outcome, new (gate, child) pairs)."""
    ctx = _Ctx(group or next(iter(events.values())).group, hp, oracle, ids or IdAllocator(), dict(events),
               AdaptReport(), "", [])
    child_events = [set(c.routed_event_ids) for _, c in node.children]
    outcomes, new_children = _demote_jointly(ctx, node, matrix, [stmt], child_events)
    return outcomes[stmt.id], new_children


def _path_text(gate_path: Sequence[str]) -> str:
    return "\n".join(f"{i}. {q}" for i, q in enumerate(gate_path, 1))


def add_statements(node: CdtNode, matrix: GroundingMatrix, surviving: Sequence[Statement], gate_path: Sequence[str],
                   hp: HyperParams, oracle, *, events: Mapping[str, Observation], group: str = "",
                   ids: IdAllocator | None = None, phase: str = "") -> tuple[list[Statement], GroundingMatrix, list[dict]]:
    """Propose statements for uncovered events and keep the ones that validate.

    Returns (accepted statements, matrix over surviving + accepted, rejected rows).
    """
    ids = ids or IdAllocator()
    surviving_ids = [s.id for s in surviving]
    base = matrix.select(statement_ids=surviving_ids)
    uncovered = uncovered_events(base, surviving_ids)
    if len(uncovered) < hp.tau_min:
        return [], base, []
    group = group or next(iter(events.values())).group
    uncovered_obs = [events[e] for e in matrix.event_ids if e in uncovered]
    prompt = prompts.add_statements(group, _path_text(gate_path), uncovered_obs, [s.text for s in surviving])
    texts = oracle.ask(prompt, lambda t: parse_string_list(t, "statements"), role="heavy", what="new statements")
    existing = {s.text for s in surviving}
    fresh = []
    for t in texts:
        if t not in existing:
            existing.add(t)
            fresh.append(Statement(ids.statement(), t, Origin.ADAPTED_ADD, phase))
    if not fresh:
        return [], base, []
    grown = extend_matrix(base, [], fresh, oracle, statements=surviving, events=events, group=group)
    accepted, rejected = [], []
    for s in fresh:
        st = stats_for(grown, s.id)
        if st.effective_n >= hp.tau_min and st.precision >= hp.tau_keep:
            accepted.append(s)
        else:
            rejected.append({**_stat_row(st), "text": s.text})
    return accepted, grown.select(statement_ids=surviving_ids + [s.id for s in accepted]), rejected


def _process(ctx: _Ctx, node: CdtNode, new_events: list[Observation], incoming: list[_Incoming],
             gate_path: list[str], path: str) -> CdtNode:
    hp, oracle = ctx.hp, ctx.oracle
    rep = ctx.report.node(node.id)

    # 1. route new events into existing children
    child_new: list[list[Observation]] = []
    for gate, _ in node.children:
        routed = _route(ctx, gate.question, new_events) if new_events else set()
        child_new.append([e for e in new_events if e.id in routed])

    # 2. extend the matrix with new rows, then incoming (moved-down) columns
    m = node.matrix
    if m is None:
        old = sorted(node.routed_event_ids)
        m = GroundingMatrix(node.id, tuple(old), (), tuple(() for _ in old))
    statements = list(node.statements)
    if tuple(s.id for s in statements) != m.statement_ids:
        raise ValidationError(f"node {node.id}: matrix columns do not match statements")
    m = extend_matrix(m, new_events, [], oracle, statements=statements, group=ctx.group)
    for inc in incoming:
        col = [inc.labels[e] for e in m.event_ids]
        m = GroundingMatrix(m.node_id, m.event_ids, m.statement_ids + (inc.statement.id,),
                            tuple(row + (lab,) for row, lab in zip(m.labels, col)))
        statements.append(inc.statement)

    # 3. classify
    kept, deleted, demoted = [], [], []
    for s in statements:
        st = stats_for(m, s.id)
        verdict = classify_statement(st, hp)
        if verdict in (Verdict.KEEP, Verdict.KEEP_INSUFFICIENT):
            kept.append(s)
            rep.kept.append(_stat_row(st, verdict))
        elif verdict is Verdict.DELETE:
            deleted.append(s)
            rep.deleted.append(_stat_row(st, verdict))
            ctx.log.append({"op": "delete", "statement_id": s.id, "node_id": node.id, "text": s.text,
                            "stats": st.to_dict()})
        else:
            demoted.append(s)

    # 4. demote
    children = list(node.children)
    child_routed = [set(c.routed_event_ids) | {e.id for e in ne} for (_, c), ne in zip(children, child_new)]
    moved: dict[int, list[_Incoming]] = {}
    new_pairs: list[tuple[Gate, CdtNode]] = []
    if demoted:
        outcomes, new_pairs = _demote_jointly(ctx, node, m, demoted, child_routed)
        child_index = {c.id: i for i, (_, c) in enumerate(children)}
        for s in demoted:
            out = outcomes[s.id]
            st = stats_for(m, s.id)
            rep.demoted.append({**_stat_row(st, Verdict.DEMOTE), "outcome": out.to_dict()})
            ctx.log.append({"op": "demote", "statement_id": s.id, "node_id": node.id, "text": s.text,
                            "stats": st.to_dict(), "outcome": out.to_dict()})
            if out.kind == "MovedToChild":
                idx = child_index[out.child_id]
                labels = _column(m, s.id, child_routed[idx])
                moved.setdefault(idx, []).append(_Incoming(replace(s, origin=Origin.DEMOTED), labels))
        for gate, child in new_pairs:
            ctx.report.new_children.append(child.id)
            ctx.log.append({"op": "new_gate", "gate_id": gate.id, "node_id": node.id, "child_id": child.id,
                            "question": gate.question})

    # 5. add
    m_kept = m.select(statement_ids=[s.id for s in kept])
    added, m_final, rejected = add_statements(node, m_kept, kept, gate_path, hp, oracle, events=ctx.events,
                                              group=ctx.group, ids=ctx.ids, phase=ctx.phase)
    for s in added:
        st = stats_for(m_final, s.id)
        rep.added.append({**_stat_row(st), "text": s.text})
        ctx.log.append({"op": "add", "statement_id": s.id, "node_id": node.id, "text": s.text,
                        "stats": st.to_dict()})
    rep.rejected_candidates.extend(rejected)
    final_statements = tuple(kept + added)
    matrix = m_final if final_statements else None

    # 6. recurse
    new_children = []
    for idx, ((gate, child), ne) in enumerate(zip(children, child_new)):
        sub = _recurse(ctx, child, ne, moved.get(idx, []), gate_path + [gate.question], f"{path}/{gate.id}")
        new_children.append((gate, sub))
    for gate, child in new_pairs:
        sub = _recurse(ctx, child, [], [], gate_path + [gate.question], f"{path}/{gate.id}")
        new_children.append((gate, sub))

    return CdtNode(id=node.id, statements=final_statements, children=tuple(new_children),
                   routed_event_ids=node.routed_event_ids | {e.id for e in new_events}, depth=node.depth,
                   matrix=matrix)


def _recurse(ctx, child, new_events, incoming, gate_path, path):
    try:
        return _process(ctx, child, new_events, incoming, gate_path, path)
    except NodeError:
        raise
    except CdtError as exc:
        raise NodeError(path, exc) from exc


def adapt_tree(t: Cdt, d_new: Sequence[Observation], oracle, hp: HyperParams | None = None, *,
               history: Sequence[Observation] = (), phase: str = "adapt") -> tuple[Cdt, AdaptReport]:
    """Return an adapted copy of ``t`` and an audit report; ``t`` is untouched.

    ``history`` must resolve every event already in the tree (old cells are reused,
    but new statements and new gates need the old observations).
    """
    d_new = list(d_new)
    if not d_new:
        raise ValidationError("adaptation needs at least one new observation")
    hp = hp or t.hyperparams
    known = t.event_ids()
    new_ids = [e.id for e in d_new]
    if len(set(new_ids)) != len(new_ids):
        raise ValidationError("duplicate ids in new observations")
    clash = sorted(set(new_ids) & known)
    if clash:
        raise ValidationError(f"{len(clash)} new observation id(s) already in the tree, e.g. {clash[:3]}")
    events = {e.id: e for e in history}
    missing = sorted(known - set(events))
    if missing:
        raise ValidationError(f"history lacks {len(missing)} event(s) already in the tree, e.g. {missing[:3]}")
    events.update((e.id, e) for e in d_new)

    report = AdaptReport()
    calls_before = oracle.total_calls
    ctx = _Ctx(t.group, hp, oracle, IdAllocator(t), events, report, phase, [])
    try:
        root = _process(ctx, t.root, d_new, [], [], "root")
    except NodeError as exc:
        raise AggregateError("adaptation failed", [exc]) from exc
    report.oracle_calls = oracle.total_calls - calls_before
    entries = [{"op": "adapt", "at": timestamp(), "phase": phase, "n_new": len(d_new),
                "oracle_calls": report.oracle_calls}]
    entries += [{**e, "at": entries[0]["at"]} for e in ctx.log]
    adapted = replace(t, root=root, hyperparams=hp).log(*entries)
    return adapted, report


def _relabel(node: CdtNode) -> CdtNode:
    return replace(
        node,
        statements=tuple(replace(s, origin=Origin.TRANSFERRED) for s in node.statements),
        children=tuple((g, _relabel(c)) for g, c in node.children),
    )


def transfer(source: Cdt, target_corpus: Sequence[Observation], target_group: str, oracle,
             hp: HyperParams | None = None, *, source_history: Sequence[Observation] = ()) -> tuple[Cdt, AdaptReport]:
    """Adapt a source group's tree to a target group's observations."""
    target_corpus = list(target_corpus)
    if not target_corpus:
        raise ValidationError("transfer needs a non-empty target corpus")
    clone = replace(source, group=target_group, root=_relabel(source.root)).log(
        {"op": "transfer", "at": timestamp(), "origin": "transferred", "source_group": source.group,
         "target_group": target_group, "n_target": len(target_corpus)})
    return adapt_tree(clone, target_corpus, oracle, hp, history=source_history, phase=f"transfer:{target_group}")
