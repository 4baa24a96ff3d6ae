"""Seeded synthetic corpora with planted behavioral rules.

Texts carry the marker tokens the planted-rule mock provider understands
(``[ctx:NAME]``, ``[act:NAME]``, ``[anti:NAME]``) plus seeded filler words so
that embeddings and clusters are not trivial.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

import numpy as np

from .model import Observation

_FILLER = (
    "market regulators investors partners rivals pricing supply quarter merger lawsuit talent "
    "launch outage funding board customers analysts press union tariff platform region "
    "budget audit forecast licence acquisition hiring layoffs chip cloud retail"
).split()


def _filler(rng: np.random.Generator, n: int = 4) -> str:
    return " ".join(rng.choice(_FILLER, size=n, replace=False))


def planted_corpus(group: str = "Acme", rules: Sequence[str] = ("alpha", "beta"), per_rule: int = 30,
                   seed: int = 0, domain: str = "synthetic", noise: float = 0.0) -> list[Observation]:
    """``per_rule`` events per rule, interleaved in time; rule NAME maps [ctx:NAME] to [act:NAME].

    With ``noise`` > 0 that share of events breaks its rule: the scene also carries
    ``[ctx:odd]`` and the decision contradicts the rule with ``[act:odd]``.
    """
    rng = np.random.default_rng(seed)
    out = []
    for i in range(per_rule * len(rules)):
        name = rules[i % len(rules)]
        odd = noise > 0 and rng.random() < noise
        out.append(Observation(
            id=f"{group}-{i:04d}", group=group, domain=domain, order_key=i,
            context=f"News on {_filler(rng)} puts {group} in a {name} situation [ctx:{name}]"
                    + (" [ctx:odd]." if odd else "."),
            decision=f"{group} moves on {_filler(rng, 2)} " + (f"[anti:{name}] [act:odd]." if odd else f"[act:{name}]."),
            question=f"What will {group} do next?",
        ))
    return out


def drifting_corpus(group: str = "Acme", per_phase: int = 30, seed: int = 0, drifting: str = "alpha",
                    stable: str = "beta", replacement: str = "gamma", domain: str = "synthetic") -> list[Observation]:
    """Three equal phases.  In phase 1 the ``drifting`` rule holds; from phase 2 on
    the same trigger leads to ``replacement`` and contradicts the old rule.  Each
    phase marks its scenes with ``[ctx:eraK]``.  The ``stable`` rule never changes."""
    rng = np.random.default_rng(seed)
    out = []
    for k in range(per_phase * 3):
        phase = k // per_phase + 1
        name = drifting if k % 2 == 0 else stable
        if name == drifting and phase > 1:
            action = f"[act:{replacement}] [anti:{drifting}]"
        else:
            action = f"[act:{name}]"
        out.append(Observation(
            id=f"{group}-{k:04d}", group=group, domain=domain, order_key=k,
            context=f"In era {phase} news on {_filler(rng)} puts {group} in a {name} situation "
                    f"[ctx:{name}] [ctx:era{phase}].",
            decision=f"{group} moves on {_filler(rng, 2)} {action}.",
            question=f"What will {group} do next?",
        ))
    return out


def phase_behavior_corpus(group: str = "Acme", per_phase: int = 24, clusters: int = 4, seed: int = 0,
                          drift: bool = True) -> list[Observation]:
    """Contexts drawn from a few recurring scene types.  With ``drift`` the
    action for a scene type changes every phase; without it the action depends
    on the scene type only."""
    rng = np.random.default_rng(seed)
    out = []
    for k in range(per_phase * 3):
        phase = k // per_phase + 1
        c = int(rng.integers(clusters))
        tag = f"p{phase}c{c}" if drift else f"c{c}"
        out.append(Observation(
            id=f"{group}-{k:04d}", group=group, order_key=k,
            context=f"scene{c} topic{c} theme{c}",
            decision=f"response {tag} action{tag} move{tag}",
        ))
    return out


def write_jsonl(path: str | Path, observations: Sequence[Observation]) -> Path:
    path = Path(path)
    path.write_text("".join(json.dumps(o.to_dict(), sort_keys=True) + "\n" for o in observations),
                    encoding="utf-8")
    return path
