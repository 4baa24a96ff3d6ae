"""Offline providers: a planted-rule fake LLM and a hash embedder.

The planted-rule provider reads the same prompts a real model would get and
answers from marker tokens embedded in the text:

* ``[ctx:NAME]`` in a scene marks a situational trigger,
* ``[act:NAME]`` in a decision supports pattern NAME,
* ``[anti:NAME]`` in a decision contradicts pattern NAME.

A rule table can give each pattern human-readable statement and gate texts.
Replies are pure functions of (prompt, seed).
"""
from __future__ import annotations

import hashlib
import json
import re
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .. import prompts
from ..exceptions import DegenerateEmbeddingError, ValidationError
from .base import EmbeddingRequest, GenerationRequest, GenerationResponse, Lens

CTX = re.compile(r"\[ctx:([\w\-]+)\]")
ACT = re.compile(r"\[act:([\w\-]+)\]")
ANTI = re.compile(r"\[anti:([\w\-]+)\]")
ANY_TOKEN = re.compile(r"\[(?:ctx|act|anti):[\w\-]+\]")


@dataclass(frozen=True)
class PlantedRule:
    """Pattern NAME: scenes with ``[ctx:NAME]`` lead to decisions with ``[act:NAME]``."""

    name: str
    statement: str = ""
    gate: str = ""

    def statement_text(self, group: str) -> str:
        return self.statement or f"{group} tends to answer such situations with a {self.name} response [act:{self.name}]."

    def gate_text(self, group: str) -> str:
        return self.gate or f"Does the scene raise a {self.name} trigger [ctx:{self.name}] for {group}'s next action?"


def _section(prompt: str, header: str, stop: str = r"\n#") -> str:
    m = re.search(re.escape(header) + r"[^\n]*\n(.*?)(?:" + stop + r"|\Z)", prompt, re.S)
    return m.group(1).strip() if m else ""


def _field(prompt: str, name: str) -> str:
    m = re.search(rf"^{re.escape(name)}:\s*(.*)$", prompt, re.M)
    return m.group(1).strip() if m else ""


def _pairs(block: str) -> list[tuple[str, str]]:
    return re.findall(r"- Scene: (.*)\n\s+Action: (.*)", block)


class PlantedRuleProvider:
    """Deterministic fake LLM driven by marker tokens and an optional rule table.

    ``vote_marker``: in candidate selection, prefer the first candidate whose text
    contains this string.  ``incompatible``: (statement, gate) pairs the semantic
    check rejects.  ``predict_mode``: "last_act" names the most specific pattern in
    the background; "echo_first" echoes the first background statement.
    ``universal_gate_answer`` answers gates that carry no marker.
    """

    def __init__(self, rules=(), *, group: str = "", seed: int = 0, vote_marker: str | None = None,
                 incompatible=(), predict_mode: str = "last_act", universal_gate_answer: str = "yes"):
        self.rules = {r.name: r for r in rules}
        self.group = group
        self.seed = seed
        self.vote_marker = vote_marker
        self.incompatible = {tuple(x) for x in incompatible}
        if predict_mode not in ("last_act", "echo_first"):
            raise ValidationError(f"unknown predict_mode {predict_mode!r}")
        self.predict_mode = predict_mode
        self.universal_gate_answer = universal_gate_answer

    @classmethod
    def from_config(cls, cfg: dict) -> "PlantedRuleProvider":
        cfg = dict(cfg)
        rules = [PlantedRule(**r) if isinstance(r, dict) else PlantedRule(r) for r in cfg.pop("rules", [])]
        return cls(rules, **cfg)

    # -- knowledge --------------------------------------------------------

    def _rule(self, name: str) -> PlantedRule:
        return self.rules.get(name) or PlantedRule(name)

    def _statement_names(self, text: str) -> list[str]:
        names = [r.name for r in self.rules.values() if r.statement and r.statement == text]
        return names or ACT.findall(text)

    def _gate_names(self, text: str) -> list[str]:
        names = [r.name for r in self.rules.values() if r.gate and r.gate == text]
        return names or CTX.findall(text)

    def relation(self, statement: str, decision: str) -> str:
        names = self._statement_names(statement)
        if not names:
            return "irrelevant"
        acts, antis = set(ACT.findall(decision)), set(ANTI.findall(decision))
        if any(n in acts for n in names):
            return "supports"
        if any(n in antis for n in names):
            return "contradicts"
        return "irrelevant"

    def gate(self, question: str, scene: str) -> str:
        names = self._gate_names(question)
        if not names:
            return self.universal_gate_answer
        present = set(CTX.findall(scene))
        return "yes" if all(n in present for n in names) else "no"

    # -- dispatch -----------------------------------------------------------

    def complete(self, request: GenerationRequest) -> GenerationResponse:
        prompt = request.prompt
        if prompt.endswith(prompts.REPROMPT_NOTE):
            prompt = prompt[: -len(prompts.REPROMPT_NOTE)]
        for anchor, handler in self._handlers():
            if anchor in prompt:
                return GenerationResponse(handler(prompt))
        return GenerationResponse("I cannot help with that.")

    def _handlers(self):
        return (
            ("scene_check_hypotheses = []", self._hypotheses),
            ("# Task: Summarize & Compress", self._summarize),
            ("Directly answer only yes/no.", self._ungated),
            ("Answer unknown only when", self._gate_check),
            ("candidate Codified Decision Trees", self._select),
            ("Classify the relationship between the action and EACH", self._relate),
            ("## Statement being demoted", self._demotion_gates),
            ("## Gate question", self._semantic),
            ("## Uncovered events at this node", self._add_statements),
            ("# In-Context Examples", self._rag),
            ("# Background Knowledge\n", self._predict_with_background),
            ("# Main Profile", self._aggregate_profile),
            ("===Profile===", self._extract_profile),
            ("Determine the relationship between the premise and hypothesis", self._consistency),
            ('Output: {"', self._dimension),
            ("Predict the specific action", self._vanilla),
        )

    def _group(self, prompt: str) -> str:
        if self.group:
            return self.group
        m = re.search(r"behavior of (.+?) \(Current topic", prompt) or \
            re.search(r"^Group: (.*)$", prompt, re.M) or \
            re.search(r"behavioral patterns of (.+?)\.\n", prompt) or \
            re.search(r"taken by (.+?)\. State", prompt) or \
            re.search(r'model the behavior of the group "(.+?)"', prompt) or \
            re.search(r"statement about (.+?)\n", prompt)
        return m.group(1) if m else "The group"

    # -- construction -------------------------------------------------------

    def _hypotheses(self, prompt: str) -> str:
        group = self._group(prompt)
        k = int(re.search(r"Summarize (\d+) potential common points", prompt).group(1))
        pairs = _pairs(_section(prompt, "# Scene-Action Pairs"))
        established = _section(prompt, "# Established Statements")
        known = set()
        for line in established.splitlines():
            known.update(self._statement_names(line.lstrip("- ").strip()))
        counts = Counter(n for _, action in pairs for n in set(ACT.findall(action)))
        names = [n for n, _ in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])) if n not in known]
        statements, gates = [], []
        for name in names[:k]:
            rule = self._rule(name)
            statements.append(rule.statement_text(group))
            gates.append(rule.gate_text(group))
        while len(statements) < k:
            statements.append(f"{group} weighs its options carefully before acting.")
            gates.append(f"Does the scene call for any decision as {group}'s next action?")
        return (
            "1. The main feature is recurring situational responses.\n"
            f"action_hypotheses = {json.dumps(statements)}\n"
            f"scene_check_hypotheses = {json.dumps(gates)}"
        )

    def _summarize(self, prompt: str) -> str:
        m = re.search(r"Input pairs:\n(.*?)\n\n## Goal", prompt, re.S)
        items = json.loads(m.group(1))
        n_upper = int(re.search(r"output between \d+ and (\d+) pairs", prompt).group(1))
        order: dict[tuple[str, str], int] = {}
        counts: Counter = Counter()
        for item in items:
            key = (item["scene_check_hypothesis"], item["action_hypothesis"])
            order.setdefault(key, len(order))
            counts[key] += 1
        ranked = sorted(order, key=lambda key: (-counts[key], order[key]))[:n_upper]
        return json.dumps({"pairs": [{"scene_check_hypothesis": g, "action_hypothesis": s} for g, s in ranked]})

    def _ungated(self, prompt: str) -> str:
        return "yes" if self.relation(_field(prompt, "Statement"), _field(prompt, "Action")) == "supports" else "no"

    def _gate_check(self, prompt: str) -> str:
        return self.gate(_field(prompt, "Question"), _field(prompt, "Scene"))

    def _select(self, prompt: str) -> str:
        blocks = re.split(r"^## Candidate (\d+)\n", prompt, flags=re.M)
        candidates = {int(blocks[i]): blocks[i + 1] for i in range(1, len(blocks) - 1, 2)}
        choice = None
        if self.vote_marker:
            choice = next((i for i, text in sorted(candidates.items()) if self.vote_marker in text), None)
        if choice is None:
            choice = min(candidates, key=lambda i: (-candidates[i].count("Statement:"), i))
        return json.dumps({"best_candidate_index": choice, "reasoning": "most complete coverage"})

    def _relate(self, prompt: str) -> str:
        action = _field(prompt, "Action")
        block = _section(prompt, "Statements:", stop=r"\n\nOutput JSON")
        statements = re.findall(r"^\[\d+\] (.*)$", block, re.M)
        return json.dumps([self.relation(s, action) for s in statements])

    def _demotion_gates(self, prompt: str) -> str:
        group = self._group(prompt)
        sup = _pairs(_section(prompt, "## Supporting events", stop=r"\n\n##"))
        con = _pairs(_section(prompt, "## Contradicting events", stop=r"\n\n##"))

        def freq(events):
            c = Counter(n for scene, _ in events for n in set(CTX.findall(scene)))
            return {n: v / len(events) for n, v in c.items()} if events else {}

        fs, fc = freq(sup), freq(con)
        scored = sorted(((fs[n] - fc.get(n, 0.0), n) for n in fs), key=lambda t: (-t[0], t[1]))
        questions = [self._rule(n).gate_text(group) for score, n in scored if score > 0][:3]
        while len(questions) < 3:
            questions.append(f"Does the scene call for any decision as {group}'s next action?")
        return json.dumps(questions)

    def _semantic(self, prompt: str) -> str:
        statement = _section(prompt, "## Statement").strip('"')
        question = _section(prompt, "## Gate question").strip('"')
        return "no" if (statement, question) in self.incompatible else "yes"

    def _add_statements(self, prompt: str) -> str:
        group = self._group(prompt)
        uncovered = _pairs(_section(prompt, "## Uncovered events at this node", stop=r"\n\n##"))
        existing = set()
        for line in _section(prompt, "## Existing statements", stop=r"\n\n##").splitlines():
            existing.update(self._statement_names(line.lstrip("- ").strip()))
        counts = Counter(n for _, action in uncovered for n in set(ACT.findall(action)))
        names = [n for n, _ in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])) if n not in existing]
        return json.dumps({"statements": [self._rule(n).statement_text(group) for n in names[:3]]})

    # -- inference and evaluation -----------------------------------------------

    def _predict_with_background(self, prompt: str) -> str:
        group = self._group(prompt)
        background = _section(prompt, "# Background Knowledge")
        lines = [ln for ln in background.splitlines() if ln.strip()]
        behaviors = [ln.split(":", 1)[1].strip() for ln in lines if ln.startswith("Behavior:")]
        if not behaviors:
            behaviors = lines
        if self.predict_mode == "echo_first" and behaviors:
            return behaviors[0]
        for text in reversed(behaviors):
            names = self._statement_names(text)
            if names:
                return f"{group} responds with [act:{names[0]}]."
        context = _section(prompt, "# Scene") or _section(prompt, "# Context")
        return f"{group} acts on {' '.join(ANY_TOKEN.findall(context)) or 'the situation'}."

    def _rag(self, prompt: str) -> str:
        group = self._group(prompt)
        examples = _pairs(_section(prompt, "# In-Context Examples"))
        for _, action in examples:
            names = ACT.findall(action)
            if names:
                return f"{group} responds with [act:{names[0]}]."
        return f"{group} acts on the situation."

    def _vanilla(self, prompt: str) -> str:
        group = self._group(prompt)
        context = _section(prompt, "# Context")
        return f"{group} acts on {' '.join(ANY_TOKEN.findall(context)) or 'the situation'}."

    def _extract_profile(self, prompt: str) -> str:
        pairs = _pairs(_section(prompt, "# Scene-Action Pairs"))
        counts = Counter(n for _, action in pairs for n in ACT.findall(action))
        tendencies = ", ".join(f"[act:{n}]" for n, _ in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])))
        return f"===Profile===\nThe group repeatedly shows these tendencies: {tendencies or 'none observed'}."

    def _aggregate_profile(self, prompt: str) -> str:
        main = _section(prompt, "# Main Profile")
        new = _section(prompt, "# New Summarized Profile")
        names = list(dict.fromkeys(ACT.findall(main) + ACT.findall(new)))
        return "The group repeatedly shows these tendencies: " + (", ".join(f"[act:{n}]" for n in names) or "none observed") + "."

    def _consistency(self, prompt: str) -> str:
        reference, prediction = _field(prompt, "Premise"), _field(prompt, "Hypothesis")
        pred = set(ACT.findall(prediction))
        if pred & set(ACT.findall(reference)):
            return "entails"
        if pred & set(ANTI.findall(reference)):
            return "contradicts"
        return "neutral"

    def _dimension(self, prompt: str) -> str:
        dim = re.search(r'Output: \{"(\w+)"', prompt).group(1)
        reference = re.search(r"^# Ground Truth: (.*)$", prompt, re.M).group(1)
        prediction = re.search(r"^# Your Response: (.*)$", prompt, re.M).group(1)
        match = bool(set(ACT.findall(prediction)) & set(ACT.findall(reference)))
        verdict = "match" if match else "mismatch"
        return json.dumps({dim: verdict, "reason": f"shared pattern: {match}"})

    def embed(self, request: EmbeddingRequest) -> list[list[float]]:
        if getattr(self, "_embedder", None) is None:
            self._embedder = HashEmbedder(seed=self.seed)
        return self._embedder.embed(request)


_TOKEN = re.compile(r"\[(?:ctx|act|anti):[\w\-]+\]|[\w']+")


class HashEmbedder:
    """Bag-of-tokens embedding: each token maps to a seeded Gaussian direction.

    Texts sharing most tokens get high cosine similarity; the vector for a text is
    a pure function of (text, lens, seed).
    """

    def __init__(self, dim: int = 64, seed: int = 0, lens_salt: bool = False):
        self.dim = dim
        self.seed = seed
        self.lens_salt = lens_salt
        self._cache: dict[str, np.ndarray] = {}

    def _direction(self, token: str) -> np.ndarray:
        vec = self._cache.get(token)
        if vec is None:
            h = hashlib.sha256(f"{self.seed}:{token}".encode()).digest()
            vec = np.random.default_rng(int.from_bytes(h[:8], "little")).standard_normal(self.dim)
            self._cache[token] = vec
        return vec

    def vector(self, text: str, lens: Lens = Lens.PLAIN) -> np.ndarray:
        out = np.zeros(self.dim)
        salt = f"{Lens(lens).value}|" if self.lens_salt else ""
        for token in _TOKEN.findall(text.lower()):
            out += self._direction(salt + token)
        return out

    def embed(self, request: EmbeddingRequest) -> list[list[float]]:
        return [self.vector(t, request.lens).tolist() for t in request.texts]

    def complete(self, request: GenerationRequest) -> GenerationResponse:
        raise ValidationError("HashEmbedder only serves embeddings")


class ScriptedProvider:
    """Test double answering from a callable or a fixed queue of replies."""

    def __init__(self, replies=None, embeddings=None):
        self._replies = replies
        self._queue = list(replies) if isinstance(replies, (list, tuple)) else None
        self._embeddings = embeddings
        self.prompts: list[str] = []

    def complete(self, request: GenerationRequest) -> GenerationResponse:
        self.prompts.append(request.prompt)
        if self._queue is not None:
            if not self._queue:
                raise ValidationError("scripted provider ran out of replies")
            reply = self._queue.pop(0)
        else:
            reply = self._replies(request.prompt)
        return reply if isinstance(reply, GenerationResponse) else GenerationResponse(str(reply))

    def embed(self, request: EmbeddingRequest) -> list[list[float]]:
        if self._embeddings is None:
            raise DegenerateEmbeddingError("no embeddings scripted")
        return [list(self._embeddings(t, request.lens)) for t in request.texts]
