"""Per-node grounding matrices and the statistics derived from them."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .exceptions import NodeError, OracleError, ValidationError
from .model import CdtNode, EvidenceLabel, GroundingMatrix, Observation, Statement


@dataclass(frozen=True)
class StatementStats:
    statement_id: str
    n_sup: int
    n_con: int
    n_irr: int

    @property
    def effective_n(self) -> int:
        return self.n_sup + self.n_con

    @property
    def precision(self) -> float | None:
        """sup / (sup + con); ``None`` when there is no decisive evidence."""
        n = self.effective_n
        return self.n_sup / n if n else None

    def to_dict(self) -> dict:
        return {"statement_id": self.statement_id, "n_sup": self.n_sup, "n_con": self.n_con,
                "n_irr": self.n_irr, "precision": self.precision, "effective_n": self.effective_n}


def _label_rows(group: str, events: Sequence[Observation], statements: Sequence[Statement],
                oracle, node_id: str) -> list[tuple[EvidenceLabel, ...]]:
    def one(event: Observation):
        try:
            return tuple(oracle.relate_batch(group, event.decision, statements))
        except OracleError as exc:
            raise NodeError(f"node {node_id} / event {event.id}", exc) from exc

    return oracle.map(one, events)


def compute_matrix(node: CdtNode, events: Sequence[Observation], oracle, group: str = "") -> GroundingMatrix:
    """Label every (event, statement) cell with one relation call per event."""
    if not node.statements:
        raise ValidationError(f"node {node.id} has no statements to ground")
    stray = [e.id for e in events if e.id not in node.routed_event_ids]
    if stray:
        raise ValidationError(f"events not routed to node {node.id}: {stray[:5]}")
    group = group or (events[0].group if events else "")
    rows = _label_rows(group, events, node.statements, oracle, node.id)
    return GroundingMatrix(
        node_id=node.id,
        event_ids=tuple(e.id for e in events),
        statement_ids=tuple(s.id for s in node.statements),
        labels=tuple(rows),
    )


def extend_matrix(m: GroundingMatrix, new_events: Sequence[Observation], new_statements: Sequence[Statement],
                  oracle, *, statements: Sequence[Statement] = (),
                  events: Mapping[str, Observation] | None = None, group: str = "") -> GroundingMatrix:
    """Grow ``m`` by new rows and/or columns; old cells are never relabeled.

    ``statements`` are the statements already in ``m`` (needed to label new
    rows) and ``events`` resolves old event ids (needed to label new columns).
    Each old event costs one call covering all new statements; each new event
    costs one call covering old and new statements together.
    """
    new_events = list(new_events)
    new_statements = list(new_statements)
    clash = ({e.id for e in new_events} & set(m.event_ids)) | ({s.id for s in new_statements} & set(m.statement_ids))
    if clash:
        raise ValidationError(f"id collision extending matrix of node {m.node_id}: {sorted(clash)}")
    if len({e.id for e in new_events}) != len(new_events):
        raise ValidationError("duplicate event ids in new_events")
    if len({s.id for s in new_statements}) != len(new_statements):
        raise ValidationError("duplicate statement ids in new_statements")

    old_rows = list(m.labels)
    if new_statements and m.event_ids:
        if events is None or any(e not in events for e in m.event_ids):
            raise ValidationError(f"labeling new statements at node {m.node_id} needs every old observation")
        g = group or events[m.event_ids[0]].group
        extra = _label_rows(g, [events[e] for e in m.event_ids], new_statements, oracle, m.node_id)
        old_rows = [row + ext for row, ext in zip(old_rows, extra)]

    new_rows: list[tuple[EvidenceLabel, ...]] = []
    all_statements = list(statements) + new_statements
    if new_events:
        if m.statement_ids and tuple(s.id for s in statements) != m.statement_ids:
            raise ValidationError(f"statements given for node {m.node_id} do not match the matrix columns")
        if all_statements:
            g = group or new_events[0].group
            new_rows = _label_rows(g, new_events, all_statements, oracle, m.node_id)
        else:
            new_rows = [() for _ in new_events]
    return GroundingMatrix(
        node_id=m.node_id,
        event_ids=m.event_ids + tuple(e.id for e in new_events),
        statement_ids=m.statement_ids + tuple(s.id for s in new_statements),
        labels=tuple(old_rows) + tuple(new_rows),
    )


def empty_matrix(node_id: str) -> GroundingMatrix:
    return GroundingMatrix(node_id=node_id, event_ids=(), statement_ids=(), labels=())


def stats_for(m: GroundingMatrix, statement_id: str) -> StatementStats:
    col = m.column(statement_id)
    return StatementStats(
        statement_id=statement_id,
        n_sup=sum(1 for x in col if x is EvidenceLabel.SUP),
        n_con=sum(1 for x in col if x is EvidenceLabel.CON),
        n_irr=sum(1 for x in col if x is EvidenceLabel.IRR),
    )


def supporting_events(m: GroundingMatrix, statement_id: str, label: EvidenceLabel = EvidenceLabel.SUP) -> list[str]:
    col = m.column(statement_id)
    return [e for e, x in zip(m.event_ids, col) if x is label]


def uncovered_events(m: GroundingMatrix, surviving_statement_ids: Iterable[str]) -> set[str]:
    """Events with no Sup cell among the surviving statements."""
    surviving = set(surviving_statement_ids)
    unknown = surviving - set(m.statement_ids)
    if unknown:
        raise ValidationError(f"statements not in matrix: {sorted(unknown)}")
    cols = [j for j, s in enumerate(m.statement_ids) if s in surviving]
    return {
        e for e, row in zip(m.event_ids, m.labels)
        if not any(row[j] is EvidenceLabel.SUP for j in cols)
    }
