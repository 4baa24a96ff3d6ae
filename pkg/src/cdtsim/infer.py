"""Tree traversal, background assembly and prediction (CDT and baseline methods)."""
from __future__ import annotations

import enum
import logging
import threading
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import prompts
from .exceptions import NodeError, OracleError, ValidationError
from .model import Cdt, CdtNode, Observation
from .oracle import Lens

log = logging.getLogger(__name__)

DEFAULT_BACKGROUND_CAP = 4000
RAG_K = 8


@dataclass
class TraversalTrace:
    activated: list[tuple[str, str]] = field(default_factory=list)  # (gate id, answer) for every judged gate
    reached: list[str] = field(default_factory=list)
    statement_ids: list[str] = field(default_factory=list)
    satisfied_gates: list[str] = field(default_factory=list)  # questions, in traversal order
    statement_texts: list[str] = field(default_factory=list)
    background: str = ""

    def to_dict(self) -> dict:
        return {
            "activated": [list(a) for a in self.activated],
            "reached": self.reached,
            "statement_ids": self.statement_ids,
            "satisfied_gates": self.satisfied_gates,
            "statement_texts": self.statement_texts,
            "background": self.background,
        }


def traverse(t: Cdt, context: str, oracle) -> TraversalTrace:
    """Non-exclusive top-down walk: every child whose gate answers Yes is entered.

    Sibling gates at one node are judged together (possibly in parallel); the
    trace follows stored sibling order.
    """
    trace = TraversalTrace()
    seen: set[str] = set()

    def visit(node: CdtNode, path: str) -> None:
        trace.reached.append(node.id)
        for s in node.statements:
            if s.id not in seen:
                seen.add(s.id)
                trace.statement_ids.append(s.id)
                trace.statement_texts.append(s.text)
        if not node.children:
            return
        try:
            answers = oracle.map(lambda gc: oracle.judge_gate(context, gc[0], t.group), node.children)
        except OracleError as exc:
            raise NodeError(path, exc) from exc
        for (gate, child), answer in zip(node.children, answers):
            trace.activated.append((gate.id, answer.value))
            if answer.value == "yes":
                trace.satisfied_gates.append(gate.question)
                visit(child, f"{path}/{gate.id}")

    visit(t.root, "root")
    trace.background = assemble_background(trace)
    return trace


def assemble_background(trace: TraversalTrace, cap: int = DEFAULT_BACKGROUND_CAP) -> str:
    """Satisfied gate conditions, then statements, one per line; tail-truncated at ``cap`` chars."""
    lines = [f"Condition: {prompts.one_line(q)}" for q in trace.satisfied_gates]
    lines += [f"Behavior: {prompts.one_line(s)}" for s in trace.statement_texts]
    text = "\n".join(lines)
    if len(text) > cap:
        log.warning("background of %d chars truncated to %d", len(text), cap)
        text = text[:cap]
    return text


def predict(t: Cdt, context: str, question: str, oracle, *, background_cap: int = DEFAULT_BACKGROUND_CAP,
            return_trace: bool = False):
    trace = traverse(t, context, oracle)
    if background_cap != DEFAULT_BACKGROUND_CAP:
        trace.background = assemble_background(trace, background_cap)
    if not trace.statement_ids:
        log.warning("tree for %s yields no statements for this context; using the vanilla prompt", t.group)
        prompt = prompts.vanilla_inference(t.group, context, question)
    else:
        prompt = prompts.cdt_inference(t.group, trace.background, context, question)
    answer = oracle.text(prompt, role="predict", max_tokens=128).strip()
    return (answer, trace) if return_trace else answer


class Method(str, enum.Enum):
    VANILLA = "vanilla"
    HUMAN_PROFILE = "human_profile"
    SUMMARIZATION = "summarization"
    RAG = "rag"


def _cosine_rows(matrix: np.ndarray, query: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=1) * np.linalg.norm(query)
    with np.errstate(invalid="ignore", divide="ignore"):
        sims = matrix @ query / norms
    return np.where(norms > 0, sims, -np.inf)


def retrieve(corpus: Sequence[Observation], context: str, oracle, k: int = RAG_K) -> list[Observation]:
    """Top-``k`` corpus entries by context cosine; ties go to the smaller id."""
    if not corpus:
        raise ValidationError("retrieval needs a non-empty corpus")
    vecs = oracle.embed([o.context for o in corpus] + [context], Lens.PLAIN)
    sims = _cosine_rows(np.vstack(vecs[:-1]), vecs[-1])
    order = sorted(range(len(corpus)), key=lambda i: (-sims[i], corpus[i].id))
    return [corpus[i] for i in order[:k]]


_profile_lock = threading.Lock()


def build_profile(group: str, corpus: Sequence[Observation], oracle, block_size: int = 40) -> str:
    """Narrative profile: extract per block, fold blocks into a running profile."""
    if not corpus:
        raise ValidationError("summarization profile needs a non-empty corpus")
    profile = None
    for start in range(0, len(corpus), block_size):
        block = corpus[start:start + block_size]
        text = oracle.text(prompts.profile_extraction(group, block), role="heavy")
        text = text.split("===Profile===", 1)[-1].strip()
        profile = text if profile is None else oracle.text(prompts.profile_aggregation(profile, text), "heavy").strip()
    return profile


def baseline_predict(kind: Method | str, corpus: Sequence[Observation], context: str, question: str, oracle,
                     config: dict | None = None, *, group: str = "") -> str:
    """Comparator predictions.  ``config`` may hold "profile" (human_profile), a
    "profile_cache" dict (summarization, keyed by group), and "rag_k"."""
    kind = Method(kind)
    config = config if config is not None else {}
    group = group or (corpus[0].group if corpus else config.get("group", ""))
    if kind is Method.VANILLA:
        prompt = prompts.vanilla_inference(group, context, question)
    elif kind is Method.HUMAN_PROFILE:
        profile = config.get("profile")
        if not profile:
            raise ValidationError("human_profile baseline needs a 'profile' text")
        prompt = prompts.human_profile_inference(profile, context, question)
    elif kind is Method.SUMMARIZATION:
        cache = config.setdefault("profile_cache", {})
        with _profile_lock:
            if group not in cache:
                cache[group] = build_profile(group, list(corpus), oracle)
        prompt = prompts.human_profile_inference(cache[group], context, question)
    else:
        examples = retrieve(list(corpus), context, oracle, config.get("rag_k", RAG_K))
        prompt = prompts.rag_inference(group, examples, context, question)
    return oracle.text(prompt, role="predict", max_tokens=128).strip()
