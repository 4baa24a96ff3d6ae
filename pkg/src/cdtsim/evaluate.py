"""Judge-based scoring of predictions and aggregation into summary tables."""
from __future__ import annotations

import csv
import enum
import io
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from . import prompts
from .exceptions import ValidationError
from .oracle import parsing

CONSISTENCY_SCORES = {"entails": 100, "neutral": 50, "contradicts": 0}
MATCH_SCORES = {"match": 100, "mismatch": 0}


class Dimension(str, enum.Enum):
    INITIATIVE = "initiative"
    SCOPE = "scope"
    MAGNITUDE = "magnitude"
    HORIZON = "horizon"


SCORE_COLUMNS = ("consistency",) + tuple(d.value for d in Dimension)


@dataclass
class EvaluationRecord:
    observation_id: str
    prediction: str
    consistency: int
    initiative: int
    scope: int
    magnitude: int
    horizon: int
    rationales: dict[str, str] = field(default_factory=dict)
    group: str = ""
    domain: str = ""
    method: str = ""

    def __post_init__(self):
        if self.consistency not in CONSISTENCY_SCORES.values():
            raise ValidationError(f"consistency score {self.consistency} not in {{100, 50, 0}}")
        for d in Dimension:
            if getattr(self, d.value) not in MATCH_SCORES.values():
                raise ValidationError(f"{d.value} score {getattr(self, d.value)} not in {{100, 0}}")

    def score(self, column: str) -> int:
        return getattr(self, column)

    def to_dict(self) -> dict:
        return {
            "observation_id": self.observation_id, "group": self.group, "domain": self.domain,
            "method": self.method, "prediction": self.prediction,
            **{c: self.score(c) for c in SCORE_COLUMNS}, "rationales": self.rationales,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvaluationRecord":
        return cls(d["observation_id"], d["prediction"], *(int(d[c]) for c in SCORE_COLUMNS),
                   rationales=dict(d.get("rationales", {})), group=d.get("group", ""),
                   domain=d.get("domain", ""), method=d.get("method", ""))


def score_consistency(context: str, reference: str, prediction: str, oracle) -> int:
    verdict = oracle.ask(prompts.consistency_judge(context, reference, prediction),
                         lambda t: parsing.parse_choice(t, tuple(CONSISTENCY_SCORES)),
                         role="judge", what="entailment verdict", max_tokens=8)
    return CONSISTENCY_SCORES[verdict]


def _parse_dimension(dim: str):
    def parse(text: str):
        obj = parsing.find_json_object(text)
        if obj is None:
            word = parsing.parse_choice(text, tuple(MATCH_SCORES))
            return (word, "") if word else None
        word = obj.get(dim)
        if not isinstance(word, str) or parsing.normalize_word(word) not in MATCH_SCORES:
            return None
        return parsing.normalize_word(word), str(obj.get("reason", ""))
    return parse


def score_dimension(dim: Dimension | str, context: str, reference: str, prediction: str, oracle,
                    group: str = "the group") -> tuple[int, str]:
    """(100 or 0, rationale) for one strategic dimension."""
    dim = Dimension(dim).value
    word, reason = oracle.ask(prompts.dimension_judge(dim, group, context, reference, prediction),
                              _parse_dimension(dim), role="judge", what=f"{dim} verdict", max_tokens=256)
    return MATCH_SCORES[word], reason


def evaluate_prediction(observation, prediction: str, oracle, *, method: str = "",
                        dimensions: Iterable[Dimension | str] = tuple(Dimension)) -> EvaluationRecord:
    """All five scores for one prediction.  Skipped dimensions score 0 with an empty rationale."""
    obs = observation
    scores = {"consistency": score_consistency(obs.context, obs.decision, prediction, oracle)}
    rationales = {}
    wanted = {Dimension(d).value for d in dimensions}
    for d in Dimension:
        if d.value in wanted:
            scores[d.value], rationales[d.value] = score_dimension(d, obs.context, obs.decision, prediction,
                                                                   oracle, obs.group)
        else:
            scores[d.value] = 0
    return EvaluationRecord(obs.id, prediction, rationales=rationales, group=obs.group,
                            domain=obs.domain, method=method, **scores)


@dataclass
class SummaryTable:
    """Mean scores per (key, column) with unweighted and record-weighted averages."""

    by: str
    rows: dict[str, dict[str, float]]
    counts: dict[str, int]
    average: dict[str, float]
    weighted_average: dict[str, float]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([self.by, "n", *SCORE_COLUMNS])
        for key in sorted(self.rows):
            w.writerow([key, self.counts[key], *(_fmt(self.rows[key][c]) for c in SCORE_COLUMNS)])
        w.writerow(["Avg", sum(self.counts.values()), *(_fmt(self.average[c]) for c in SCORE_COLUMNS)])
        w.writerow(["WeightedAvg", sum(self.counts.values()),
                    *(_fmt(self.weighted_average[c]) for c in SCORE_COLUMNS)])
        return buf.getvalue()


def _fmt(x: float) -> str:
    return f"{x:.4f}"


def _mean(xs: Sequence[float]) -> float:
    return math.fsum(xs) / len(xs)


def aggregate(records: Sequence[EvaluationRecord], group_by: str = "group") -> SummaryTable:
    """Means per key; ``Avg`` is the unweighted mean over keys.

    When grouping by domain, each domain mean is itself the mean of its group
    means, so a large group does not swamp a domain.
    """
    if not records:
        raise ValidationError("aggregate needs at least one record")
    if group_by not in ("group", "domain", "method"):
        raise ValidationError(f"cannot group by {group_by!r}")
    buckets: dict[str, list[EvaluationRecord]] = defaultdict(list)
    for r in records:
        buckets[getattr(r, group_by)].append(r)
    rows, counts = {}, {}
    for key, rs in buckets.items():
        counts[key] = len(rs)
        if group_by == "domain":
            per_group: dict[str, list[EvaluationRecord]] = defaultdict(list)
            for r in rs:
                per_group[r.group].append(r)
            rows[key] = {c: _mean([_mean([r.score(c) for r in g]) for g in per_group.values()])
                         for c in SCORE_COLUMNS}
        else:
            rows[key] = {c: _mean([r.score(c) for r in rs]) for c in SCORE_COLUMNS}
    average = {c: _mean([rows[k][c] for k in rows]) for c in SCORE_COLUMNS}
    weighted = {c: _mean([r.score(c) for r in records]) for c in SCORE_COLUMNS}
    return SummaryTable(group_by, rows, counts, average, weighted)
