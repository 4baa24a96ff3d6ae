"""Typed oracle facade over text-in/text-out providers."""
from __future__ import annotations

import enum
import hashlib
import json
import logging
import threading
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Callable, Iterable, Protocol, Sequence, TypeVar

import numpy as np

from .. import prompts
from ..exceptions import BudgetError, ProtocolError, TransportError, ValidationError
from ..model import EvidenceLabel, Gate
from . import parsing

log = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

ROLES = ("heavy", "light", "judge", "predict", "embed")


class GateAnswer(str, enum.Enum):
    YES = "yes"
    NO = "no"
    UNKNOWN = "unknown"


class Lens(str, enum.Enum):
    GENERAL_CONTEXT = "general_context"
    SURFACE_DECISION = "surface_decision"
    PLAIN = "plain"


@dataclass(frozen=True)
class GenerationRequest:
    prompt: str
    temperature: float = 0.0
    max_tokens: int = 1024
    role: str = "heavy"

    def __post_init__(self):
        if not self.prompt:
            raise ValidationError("prompt must be non-empty")

    def to_dict(self) -> dict:
        return {"kind": "generate", **asdict(self)}


@dataclass(frozen=True)
class GenerationResponse:
    text: str
    finish_reason: str = "stop"


@dataclass(frozen=True)
class EmbeddingRequest:
    texts: tuple[str, ...]
    lens: Lens = Lens.PLAIN

    def __post_init__(self):
        if not self.texts:
            raise ValidationError("embed needs at least one text")
        object.__setattr__(self, "lens", Lens(self.lens))

    def to_dict(self) -> dict:
        return {"kind": "embed", "texts": list(self.texts), "lens": self.lens.value}


def request_digest(request) -> str:
    """Stable digest of a request; independent of key order in its encoding."""
    payload = request if isinstance(request, dict) else request.to_dict()
    canon = json.dumps(payload, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


class Provider(Protocol):
    def complete(self, request: GenerationRequest) -> GenerationResponse: ...

    def embed(self, request: EmbeddingRequest) -> list[list[float]]: ...


class Oracle:
    """Every external model capability the pipelines need.

    ``provider`` serves all roles unless ``roles`` maps a role name
    ("heavy", "light", "judge", "predict", "embed") to another provider.
    Parsing is tolerant, with exactly one reprompt before a ProtocolError.
    Transport errors are retried ``retries`` times with exponential backoff.
    """

    def __init__(self, provider: Provider, roles: dict[str, Provider] | None = None, *,
                 max_workers: int = 1, retries: int = 3, backoff: float = 0.5,
                 max_prompt_chars: int | None = None, sleep: Callable[[float], None] = time.sleep):
        self.provider = provider
        self.roles = dict(roles or {})
        unknown = set(self.roles) - set(ROLES)
        if unknown:
            raise ValidationError(f"unknown oracle role(s): {sorted(unknown)}")
        self.max_workers = max_workers
        self.retries = retries
        self.backoff = backoff
        self.max_prompt_chars = max_prompt_chars
        self._sleep = sleep
        self._lock = threading.Lock()
        self.calls: Counter = Counter()

    def __deepcopy__(self, memo):
        # a shared service (providers, transcripts, counters), never duplicated
        return self

    # -- plumbing ----------------------------------------------------------

    def _provider(self, role: str) -> Provider:
        return self.roles.get(role, self.provider)

    def _count(self, kind: str) -> None:
        with self._lock:
            self.calls[kind] += 1

    @property
    def total_calls(self) -> int:
        with self._lock:
            return sum(self.calls.values())

    def _with_retry(self, fn: Callable[[], R]) -> R:
        last = None
        for attempt in range(1, self.retries + 1):
            try:
                return fn()
            except TransportError as exc:
                last = exc
                if attempt < self.retries:
                    delay = self.backoff * 2 ** (attempt - 1)
                    log.warning("transport error (attempt %d/%d): %s; retrying in %.2fs",
                                attempt, self.retries, exc, delay)
                    self._sleep(delay)
        raise TransportError(f"giving up after {self.retries} attempts: {last}", attempts=self.retries)

    def map(self, fn: Callable[[T], R], items: Iterable[T]) -> list[R]:
        """Apply ``fn`` to every item; results always come back in input order."""
        items = list(items)
        if self.max_workers <= 1 or len(items) <= 1:
            return [fn(x) for x in items]
        with ThreadPoolExecutor(max_workers=self.max_workers) as pool:
            return list(pool.map(fn, items))

    # -- raw capabilities --------------------------------------------------

    def generate(self, request: GenerationRequest) -> GenerationResponse:
        if self.max_prompt_chars is not None and len(request.prompt) > self.max_prompt_chars:
            raise BudgetError(f"prompt of {len(request.prompt)} chars exceeds budget {self.max_prompt_chars}")
        self._count(f"generate:{request.role}")
        resp = self._with_retry(lambda: self._provider(request.role).complete(request))
        if not resp.text.strip() and resp.finish_reason == "stop":
            raise ProtocolError("provider returned an empty completion")
        return resp

    def text(self, prompt: str, role: str = "heavy", temperature: float = 0.0, max_tokens: int = 1024) -> str:
        return self.generate(GenerationRequest(prompt, temperature, max_tokens, role)).text

    def ask(self, prompt: str, parse: Callable[[str], T | None], role: str = "heavy",
            what: str = "reply", max_tokens: int = 1024) -> T:
        """Generate and parse; reprompt once on a parse failure."""
        reply = self.text(prompt, role, max_tokens=max_tokens)
        value = parse(reply)
        if value is not None:
            return value
        log.info("unparseable %s, reprompting: %r", what, reply[:200])
        reply = self.text(prompt + prompts.REPROMPT_NOTE, role, max_tokens=max_tokens)
        value = parse(reply)
        if value is None:
            raise ProtocolError(f"unparseable {what} after reprompt: {reply[:200]!r}")
        return value

    def embed(self, texts: Sequence[str], lens: Lens | str = Lens.PLAIN) -> list[np.ndarray]:
        request = EmbeddingRequest(tuple(texts), Lens(lens))
        self._count(f"embed:{request.lens.value}")
        vectors = self._with_retry(lambda: self._provider("embed").embed(request))
        if len(vectors) != len(request.texts):
            raise ProtocolError(f"expected {len(request.texts)} embeddings, got {len(vectors)}")
        out = [np.asarray(v, dtype=float) for v in vectors]
        dims = {v.shape for v in out}
        if len(dims) != 1 or any(not np.all(np.isfinite(v)) for v in out):
            raise ProtocolError("embeddings must be finite and share one dimension")
        return out

    # -- typed judgments ---------------------------------------------------

    def judge_gate(self, scene: str, gate: Gate | str, group: str = "") -> GateAnswer:
        question = gate.question if isinstance(gate, Gate) else gate
        word = self.ask(prompts.gate_check(scene, question),
                        lambda t: parsing.parse_choice(t, ("yes", "no", "unknown")),
                        role="light", what="gate answer", max_tokens=8)
        return GateAnswer(word)

    def yes_no(self, prompt: str, role: str = "light") -> bool:
        return self.ask(prompt, lambda t: parsing.parse_choice(t, ("yes", "no")),
                        role=role, what="yes/no verdict", max_tokens=8) == "yes"

    def relate_batch(self, group: str, decision: str, statements: Sequence) -> list[EvidenceLabel]:
        if not statements:
            raise ValidationError("relate_batch needs at least one statement")
        texts = [getattr(s, "text", s) for s in statements]
        return self.ask(prompts.relation_batch(group, decision, texts),
                        lambda t: parsing.parse_labels(t, len(texts)),
                        role="light", what="relation verdict", max_tokens=32 * len(texts) + 16)
