from .base import (
    EmbeddingRequest,
    GateAnswer,
    GenerationRequest,
    GenerationResponse,
    Lens,
    Oracle,
    Provider,
    request_digest,
)
from .mock import HashEmbedder, PlantedRule, PlantedRuleProvider, ScriptedProvider
from .transcript import Mode, Transcript
from ..exceptions import ConfigError


def build_provider(cfg: dict):
    """Provider from a config mapping: ``{"kind": "mock"|"http", ...}``."""
    cfg = dict(cfg or {"kind": "mock"})
    kind = cfg.pop("kind", "mock")
    if kind == "mock":
        return PlantedRuleProvider.from_config(cfg)
    if kind == "http":
        from .http import HttpProvider
        return HttpProvider(**cfg)
    raise ConfigError(f"unknown provider kind {kind!r}")


def make_oracle(providers: dict | None = None, *, record: str | None = None, replay: str | None = None,
                max_workers: int = 1, **kwargs) -> Oracle:
    """Oracle from a providers config: ``{"default": {...}, "<role>": {...}}``.

    With ``replay`` no provider is ever constructed or called.
    """
    if record and replay:
        raise ConfigError("--record and --replay are mutually exclusive")
    providers = dict(providers or {})
    if replay:
        return Oracle(Transcript(replay, Mode.REPLAY), max_workers=max_workers, **kwargs)
    default = build_provider(providers.pop("default", {"kind": "mock"}))
    roles = {role: build_provider(cfg) for role, cfg in providers.items()}
    if record:
        default = Transcript(record, Mode.RECORD, default)
        roles = {role: Transcript(record, Mode.RECORD, p) for role, p in roles.items()}
    return Oracle(default, roles, max_workers=max_workers, **kwargs)


__all__ = [
    "EmbeddingRequest", "GateAnswer", "GenerationRequest", "GenerationResponse", "HashEmbedder",
    "Lens", "Mode", "Oracle", "PlantedRule", "PlantedRuleProvider", "Provider", "ScriptedProvider",
    "Transcript", "build_provider", "make_oracle", "request_digest",
]
