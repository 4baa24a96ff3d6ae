"""Domain types shared by every module.

Everything here is an immutable value.  Trees are never edited in place;
construction and adaptation build new ``Cdt`` values with ``dataclasses.replace``.
"""
from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field, fields, replace
from typing import Any, Iterable, Iterator, Sequence

from .exceptions import ConfigError, ValidationError

SCHEMA_VERSION = 1


class Source(str, enum.Enum):
    WIKIPEDIA = "wikipedia"
    TECHCRUNCH = "techcrunch"
    SYNTHETIC = "synthetic"


class Origin(str, enum.Enum):
    CONSTRUCTED = "constructed"
    ADAPTED_ADD = "adapted_add"
    DEMOTED = "demoted"
    TRANSFERRED = "transferred"


class EvidenceLabel(str, enum.Enum):
    SUP = "Sup"
    CON = "Con"
    IRR = "Irr"


@dataclass(frozen=True)
class Observation:
    id: str
    group: str
    context: str
    decision: str
    order_key: int = 0
    domain: str = ""
    source: Source = Source.SYNTHETIC
    question: str = ""

    def __post_init__(self):
        if not self.id:
            raise ValidationError("observation id must be non-empty")
        if not self.context or not self.context.strip():
            raise ValidationError(f"observation {self.id}: empty context")
        if not self.decision or not self.decision.strip():
            raise ValidationError(f"observation {self.id}: empty decision")
        if isinstance(self.order_key, bool) or not isinstance(self.order_key, int):
            raise ValidationError(f"observation {self.id}: order_key must be an integer")
        if not isinstance(self.source, Source):
            object.__setattr__(self, "source", Source(self.source))

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "group": self.group,
            "domain": self.domain,
            "source": self.source.value,
            "order_key": self.order_key,
            "context": self.context,
            "decision": self.decision,
            "question": self.question,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Observation":
        missing = [k for k in ("id", "group", "context", "decision", "order_key") if k not in d]
        if missing:
            raise ValidationError(f"missing field(s): {', '.join(missing)}")
        return cls(
            id=str(d["id"]),
            group=str(d["group"]),
            domain=str(d.get("domain", "")),
            source=Source(d.get("source", "synthetic")),
            order_key=d["order_key"],
            context=d["context"],
            decision=d["decision"],
            question=d.get("question", "") or "",
        )


@dataclass(frozen=True)
class Statement:
    id: str
    text: str
    origin: Origin = Origin.CONSTRUCTED
    created_at_phase: str = ""
    # How the statement earned its place: {"stage": ..., "verdicts": [[event_id, "yes"|"no"], ...]}
    acceptance: dict | None = None

    def __post_init__(self):
        if not self.text or not self.text.strip():
            raise ValidationError(f"statement {self.id}: empty text")


@dataclass(frozen=True)
class Gate:
    id: str
    question: str
    # Recorded routing answers at acceptance time: [[event_id, "yes"|"no"|"unknown"], ...]
    answers: tuple = ()

    def __post_init__(self):
        if not self.question or not self.question.strip():
            raise ValidationError(f"gate {self.id}: empty question")

    @property
    def broadness(self) -> float | None:
        if not self.answers:
            return None
        return sum(1 for _, a in self.answers if a == "yes") / len(self.answers)


@dataclass(frozen=True)
class GroundingMatrix:
    node_id: str
    event_ids: tuple[str, ...]
    statement_ids: tuple[str, ...]
    labels: tuple[tuple[EvidenceLabel, ...], ...]

    def __post_init__(self):
        if len(self.labels) != len(self.event_ids):
            raise ValidationError("grid row count does not match event_ids")
        for row in self.labels:
            if len(row) != len(self.statement_ids):
                raise ValidationError("grid column count does not match statement_ids")

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.event_ids), len(self.statement_ids)

    def column(self, statement_id: str) -> tuple[EvidenceLabel, ...]:
        try:
            j = self.statement_ids.index(statement_id)
        except ValueError:
            raise ValidationError(f"statement {statement_id!r} not in matrix for node {self.node_id}") from None
        return tuple(row[j] for row in self.labels)

    def row(self, event_id: str) -> tuple[EvidenceLabel, ...]:
        return self.labels[self.event_ids.index(event_id)]

    def select(self, event_ids: Iterable[str] | None = None,
               statement_ids: Iterable[str] | None = None, node_id: str | None = None) -> "GroundingMatrix":
        """Sub-grid restricted to the given events and statements (existing order kept)."""
        keep_e = set(self.event_ids if event_ids is None else event_ids)
        keep_s = set(self.statement_ids if statement_ids is None else statement_ids)
        rows = [i for i, e in enumerate(self.event_ids) if e in keep_e]
        cols = [j for j, s in enumerate(self.statement_ids) if s in keep_s]
        return GroundingMatrix(
            node_id=node_id or self.node_id,
            event_ids=tuple(self.event_ids[i] for i in rows),
            statement_ids=tuple(self.statement_ids[j] for j in cols),
            labels=tuple(tuple(self.labels[i][j] for j in cols) for i in rows),
        )

    def to_dict(self) -> dict:
        return {
            "node_id": self.node_id,
            "event_ids": list(self.event_ids),
            "statement_ids": list(self.statement_ids),
            "labels": [[lab.value for lab in row] for row in self.labels],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GroundingMatrix":
        return cls(
            node_id=d["node_id"],
            event_ids=tuple(d["event_ids"]),
            statement_ids=tuple(d["statement_ids"]),
            labels=tuple(tuple(EvidenceLabel(v) for v in row) for row in d["labels"]),
        )


@dataclass(frozen=True)
class CdtNode:
    id: str
    statements: tuple[Statement, ...] = ()
    children: tuple[tuple[Gate, "CdtNode"], ...] = ()
    routed_event_ids: frozenset[str] = frozenset()
    depth: int = 0
    matrix: GroundingMatrix | None = None

    @property
    def is_leaf(self) -> bool:
        return not self.children

    def walk(self) -> Iterator["CdtNode"]:
        """Depth-first pre-order, siblings in stored order."""
        yield self
        for _, child in self.children:
            yield from child.walk()

    def statement(self, statement_id: str) -> Statement:
        for s in self.statements:
            if s.id == statement_id:
                return s
        raise KeyError(statement_id)


@dataclass(frozen=True)
class HyperParams:
    d_max: int = 3
    rounds_r: int = 4
    per_centroid_m: int = 8
    hypotheses_k: int = 3
    tau_accept_keep: float = 0.65
    tau_reject_delete: float = 0.35
    tau_filter: float = 0.8
    tau_min: int = 3
    min_node_size: int = 8
    candidates_c: int = 3
    voting_rounds: int = 5
    bss_top_n: int = 20
    bss_context_tau: float = 0.7
    n_target: int = 4
    n_upper: int = 8

    def __post_init__(self):
        problems = self.problems()
        if problems:
            raise ConfigError("invalid hyperparameters: " + "; ".join(problems))

    def problems(self) -> list[str]:
        out = []
        if not 0 <= self.tau_reject_delete < self.tau_accept_keep <= 1:
            out.append("need 0 <= tau_reject_delete < tau_accept_keep <= 1")
        if not 0 < self.tau_filter <= 1:
            out.append("need 0 < tau_filter <= 1")
        if self.tau_min < 1:
            out.append("need tau_min >= 1")
        if self.d_max < 1:
            out.append("need d_max >= 1")
        for name in ("rounds_r", "per_centroid_m", "hypotheses_k", "min_node_size",
                     "candidates_c", "voting_rounds", "bss_top_n", "n_target"):
            if getattr(self, name) < 1:
                out.append(f"need {name} >= 1")
        if self.n_upper < self.n_target:
            out.append("need n_upper >= n_target")
        if self.rounds_r > 4:
            out.append("rounds_r cannot exceed the four guide suffixes")
        return out

    @property
    def tau_accept(self) -> float:
        return self.tau_accept_keep

    @property
    def tau_keep(self) -> float:
        return self.tau_accept_keep

    @property
    def tau_reject(self) -> float:
        return self.tau_reject_delete

    @property
    def tau_delete(self) -> float:
        return self.tau_reject_delete

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "HyperParams":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown hyperparameter(s): {', '.join(sorted(unknown))}")
        return cls(**d)


@dataclass(frozen=True)
class Cdt:
    group: str
    root: CdtNode
    hyperparams: HyperParams = field(default_factory=HyperParams)
    provenance_log: tuple[dict, ...] = ()

    def nodes(self) -> Iterator[CdtNode]:
        return self.root.walk()

    def gates(self) -> list[Gate]:
        out = []
        for node in self.nodes():
            out.extend(g for g, _ in node.children)
        return out

    def statements(self) -> list[Statement]:
        out = []
        for node in self.nodes():
            out.extend(node.statements)
        return out

    def node(self, node_id: str) -> CdtNode:
        for n in self.nodes():
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    def event_ids(self) -> frozenset[str]:
        return self.root.routed_event_ids

    def log(self, *entries: dict) -> "Cdt":
        return replace(self, provenance_log=self.provenance_log + tuple(entries))


class IdAllocator:
    """Hands out opaque, content-independent ids (``n7``, ``s12``, ``g3``).

    Seeded from an existing tree so new ids never collide with old ones.
    """

    _pattern = re.compile(r"^([a-z]+)(\d+)$")

    def __init__(self, tree: Cdt | None = None):
        self._next = {"n": 0, "s": 0, "g": 0}
        if tree is not None:
            for node in tree.nodes():
                self._bump(node.id)
                for s in node.statements:
                    self._bump(s.id)
                for g, _ in node.children:
                    self._bump(g.id)
            for entry in tree.provenance_log:
                for key in ("statement_id", "node_id", "gate_id"):
                    if key in entry:
                        self._bump(entry[key])

    def _bump(self, ident: str) -> None:
        m = self._pattern.match(ident)
        if m and m.group(1) in self._next:
            self._next[m.group(1)] = max(self._next[m.group(1)], int(m.group(2)) + 1)

    def _take(self, prefix: str) -> str:
        n = self._next[prefix]
        self._next[prefix] = n + 1
        return f"{prefix}{n}"

    def node(self) -> str:
        return self._take("n")

    def statement(self) -> str:
        return self._take("s")

    def gate(self) -> str:
        return self._take("g")


def sort_chronologically(corpus: Sequence[Observation]) -> list[Observation]:
    """Sort one group's observations by ``order_key``, ties broken by id."""
    groups = {o.group for o in corpus}
    if len(groups) > 1:
        raise ValidationError(f"cannot sort a mixed-group corpus: {sorted(groups)}")
    return sorted(corpus, key=lambda o: (o.order_key, o.id))


def validate_tree(t: Cdt) -> list[str]:
    violations: list[str] = []
    hp = t.hyperparams
    if t.root.depth != 0:
        violations.append(f"node {t.root.id}: root depth is {t.root.depth}, expected 0")
    seen_nodes: set[str] = set()
    seen_stmts: set[str] = set()
    seen_gates: set[str] = set()

    def visit(node: CdtNode) -> None:
        if node.id in seen_nodes:
            violations.append(f"node {node.id}: duplicate node id")
        seen_nodes.add(node.id)
        if node.depth > hp.d_max:
            violations.append(f"node {node.id}: depth {node.depth} exceeds d_max {hp.d_max}")
        for s in node.statements:
            if s.id in seen_stmts:
                violations.append(f"node {node.id}: duplicate statement id {s.id}")
            seen_stmts.add(s.id)
        if node.matrix is not None:
            m = node.matrix
            if m.node_id != node.id:
                violations.append(f"node {node.id}: matrix belongs to {m.node_id}")
            if not set(m.event_ids) <= node.routed_event_ids:
                violations.append(f"node {node.id}: matrix events not routed to node")
            if tuple(s.id for s in node.statements) != m.statement_ids:
                violations.append(f"node {node.id}: matrix statements differ from node statements")
        for gate, child in node.children:
            if gate.id in seen_gates:
                violations.append(f"node {node.id}: duplicate gate id {gate.id}")
            seen_gates.add(gate.id)
            if child.depth != node.depth + 1:
                violations.append(
                    f"node {child.id}: depth {child.depth} != parent depth {node.depth} + 1")
            if not child.routed_event_ids <= node.routed_event_ids:
                violations.append(f"node {child.id}: routed events not a subset of parent {node.id}")
            visit(child)

    visit(t.root)
    return violations


# --- serialization ---------------------------------------------------------

def _statement_to_dict(s: Statement) -> dict:
    d: dict[str, Any] = {"id": s.id, "text": s.text, "origin": s.origin.value,
                         "created_at_phase": s.created_at_phase}
    if s.acceptance is not None:
        d["acceptance"] = s.acceptance
    return d


def _node_to_dict(n: CdtNode) -> dict:
    return {
        "id": n.id,
        "depth": n.depth,
        "routed_event_ids": sorted(n.routed_event_ids),
        "statements": [_statement_to_dict(s) for s in n.statements],
        "matrix": n.matrix.to_dict() if n.matrix is not None else None,
        "children": [
            {"gate": {"id": g.id, "question": g.question, "answers": [list(a) for a in g.answers]},
             "node": _node_to_dict(c)}
            for g, c in n.children
        ],
    }


def _freeze(obj):
    if isinstance(obj, list):
        return [_freeze(x) for x in obj]
    if isinstance(obj, dict):
        return {k: _freeze(v) for k, v in obj.items()}
    return obj


def _node_from_dict(d: dict) -> CdtNode:
    return CdtNode(
        id=d["id"],
        depth=d["depth"],
        routed_event_ids=frozenset(d["routed_event_ids"]),
        statements=tuple(
            Statement(id=s["id"], text=s["text"], origin=Origin(s["origin"]),
                      created_at_phase=s.get("created_at_phase", ""),
                      acceptance=_freeze(s.get("acceptance")))
            for s in d["statements"]
        ),
        matrix=GroundingMatrix.from_dict(d["matrix"]) if d.get("matrix") else None,
        children=tuple(
            (Gate(id=c["gate"]["id"], question=c["gate"]["question"],
                  answers=tuple(tuple(a) for a in c["gate"].get("answers", []))),
             _node_from_dict(c["node"]))
            for c in d["children"]
        ),
    )


def tree_to_dict(t: Cdt) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "group": t.group,
        "hyperparams": t.hyperparams.to_dict(),
        "provenance_log": list(t.provenance_log),
        "root": _node_to_dict(t.root),
    }


def tree_from_dict(d: dict) -> Cdt:
    version = d.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ValidationError(f"unsupported tree schema_version {version!r} (expected {SCHEMA_VERSION})")
    return Cdt(
        group=d["group"],
        root=_node_from_dict(d["root"]),
        hyperparams=HyperParams.from_dict(d["hyperparams"]),
        provenance_log=tuple(d.get("provenance_log", ())),
    )
