"""Record/replay cache for provider calls: one digest-named JSON file per request."""
from __future__ import annotations

import enum
import json
import os
import threading
from pathlib import Path

from ..exceptions import MissingTranscriptError, ValidationError
from .base import EmbeddingRequest, GenerationRequest, GenerationResponse, Provider, request_digest


class Mode(str, enum.Enum):
    RECORD = "record"
    REPLAY = "replay"
    PASSTHROUGH = "passthrough"


class Transcript:
    """A provider that records to, or replays from, a directory.

    In replay mode ``inner`` is never consulted; a missing entry raises
    ``MissingTranscriptError``.  In record mode existing entries are reused, so a
    partially recorded run can be resumed.
    """

    def __init__(self, directory: str | os.PathLike, mode: Mode | str = Mode.REPLAY,
                 inner: Provider | None = None):
        self.directory = Path(directory)
        self.mode = Mode(mode)
        self.inner = inner
        if self.mode is not Mode.REPLAY and inner is None:
            raise ValidationError(f"{self.mode.value} mode needs an inner provider")
        if self.mode is Mode.RECORD:
            self.directory.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return sum(1 for _ in self.directory.glob("*.json")) if self.directory.exists() else 0

    def _path(self, digest: str) -> Path:
        return self.directory / f"{digest}.json"

    def lookup(self, request) -> dict | None:
        path = self._path(request_digest(request))
        if not path.exists():
            return None
        with path.open(encoding="utf-8") as fh:
            return json.load(fh)["response"]

    def _store(self, request, response: dict) -> None:
        digest = request_digest(request)
        path = self._path(digest)
        payload = {"digest": digest, "request": request.to_dict(), "response": response}
        with self._lock:
            tmp = path.with_suffix(".tmp")
            with tmp.open("w", encoding="utf-8") as fh:
                json.dump(payload, fh, ensure_ascii=False, indent=1, sort_keys=True)
            os.replace(tmp, path)

    def _serve(self, request, call, encode, decode):
        if self.mode is Mode.PASSTHROUGH:
            return call()
        recorded = self.lookup(request)
        if recorded is not None:
            return decode(recorded)
        if self.mode is Mode.REPLAY:
            raise MissingTranscriptError(
                f"no recorded response for request {request_digest(request)[:12]} in {self.directory}")
        result = call()
        self._store(request, encode(result))
        return result

    def complete(self, request: GenerationRequest) -> GenerationResponse:
        return self._serve(
            request, lambda: self.inner.complete(request),
            lambda r: {"text": r.text, "finish_reason": r.finish_reason},
            lambda d: GenerationResponse(d["text"], d.get("finish_reason", "stop")),
        )

    def embed(self, request: EmbeddingRequest) -> list[list[float]]:
        return self._serve(
            request, lambda: [list(map(float, v)) for v in self.inner.embed(request)],
            lambda vs: {"vectors": vs},
            lambda d: d["vectors"],
        )
