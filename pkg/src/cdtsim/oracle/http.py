"""OpenAI-compatible chat-completion and embedding endpoints."""
from __future__ import annotations

import os

import httpx

from ..exceptions import BudgetError, ConfigError, TransportError
from .base import EmbeddingRequest, GenerationRequest, GenerationResponse, Lens


class HttpProvider:
    """Talks to ``{base_url}/chat/completions`` and ``{base_url}/embeddings``.

    The API key is read from the environment variable named by ``api_key_env``.
    ``embedding_models`` may map a lens name to a dedicated embedding model.
    """

    def __init__(self, base_url: str, model: str, *, api_key_env: str = "OPENAI_API_KEY",
                 embedding_model: str | None = None, embedding_models: dict | None = None,
                 timeout: float = 60.0, max_prompt_chars: int = 200_000, client: httpx.Client | None = None):
        if not base_url or not model:
            raise ConfigError("http provider needs base_url and model")
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key_env = api_key_env
        self.embedding_model = embedding_model or model
        self.embedding_models = dict(embedding_models or {})
        self.max_prompt_chars = max_prompt_chars
        self._client = client or httpx.Client(timeout=timeout)

    def _headers(self) -> dict:
        key = os.environ.get(self.api_key_env)
        if not key:
            raise ConfigError(f"environment variable {self.api_key_env} is not set")
        return {"Authorization": f"Bearer {key}", "Content-Type": "application/json"}

    def _post(self, path: str, body: dict) -> dict:
        try:
            resp = self._client.post(f"{self.base_url}{path}", json=body, headers=self._headers())
        except httpx.HTTPError as exc:
            raise TransportError(f"POST {path} failed: {exc}") from exc
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransportError(f"POST {path} returned HTTP {resp.status_code}")
        if resp.status_code >= 400:
            raise ConfigError(f"POST {path} returned HTTP {resp.status_code}: {resp.text[:300]}")
        return resp.json()

    def complete(self, request: GenerationRequest) -> GenerationResponse:
        if len(request.prompt) > self.max_prompt_chars:
            raise BudgetError(f"prompt of {len(request.prompt)} chars exceeds {self.max_prompt_chars}")
        data = self._post("/chat/completions", {
            "model": self.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        })
        choice = data["choices"][0]
        return GenerationResponse(choice["message"].get("content") or "", choice.get("finish_reason") or "stop")

    def embed(self, request: EmbeddingRequest) -> list[list[float]]:
        model = self.embedding_models.get(Lens(request.lens).value, self.embedding_model)
        data = self._post("/embeddings", {"model": model, "input": list(request.texts)})
        rows = sorted(data["data"], key=lambda r: r["index"])
        return [r["embedding"] for r in rows]
