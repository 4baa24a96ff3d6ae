"""Input checking shared by the estimator front end."""
from __future__ import annotations

from typing import Any, Iterable, Sequence

from sklearn.exceptions import NotFittedError

from .exceptions import ValidationError
from .model import Observation


def _as_observation(item: Any, index: int, group: str | None, start: int = 0) -> Observation:
    if isinstance(item, Observation):
        return item
    if isinstance(item, dict):
        d = dict(item)
        if group is not None:
            d.setdefault("group", group)
        d.setdefault("order_key", start + index)
        d.setdefault("id", f"obs{start + index}")
        try:
            return Observation.from_dict(d)
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"row {index}: {exc}") from exc
    raise ValidationError(f"row {index}: expected an Observation or a mapping, got {type(item).__name__}")


def check_observations(X: Iterable[Any], y: Sequence[str] | None = None, *, group: str | None = None,
                       allow_empty: bool = False, start: int = 0) -> list[Observation]:
    """Normalize ``X`` into observations of one group.

    ``X`` may hold Observations or mappings.  Plain context strings are accepted
    when ``y`` supplies the decisions; ids and order keys then follow row order,
    counted from ``start``.
    """
    rows = list(X)
    if y is not None:
        y = list(y)
        if len(y) != len(rows):
            raise ValidationError(f"X has {len(rows)} rows but y has {len(y)}")
        if group is None:
            raise ValidationError("plain contexts need a group name")
        rows = [
            {"id": f"obs{start + i}", "group": group, "context": x, "decision": d, "order_key": start + i}
            if isinstance(x, str) else x
            for i, (x, d) in enumerate(zip(rows, y))
        ]
    out = [_as_observation(x, i, group, start) for i, x in enumerate(rows)]
    if not out and not allow_empty:
        raise ValidationError("no observations given")
    groups = {o.group for o in out}
    if len(groups) > 1:
        raise ValidationError(f"observations span several groups: {sorted(groups)}")
    ids = [o.id for o in out]
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate observation ids")
    return out


def check_contexts(X: Iterable[Any]) -> list[tuple[str, str]]:
    """(context, question) pairs from strings, mappings or observations."""
    out = []
    for i, x in enumerate(X):
        if isinstance(x, str):
            out.append((x, ""))
        elif isinstance(x, Observation):
            out.append((x.context, x.question))
        elif isinstance(x, dict) and isinstance(x.get("context"), str):
            out.append((x["context"], x.get("question", "") or ""))
        else:
            raise ValidationError(f"row {i}: cannot read a context from {type(x).__name__}")
        if not out[-1][0].strip():
            raise ValidationError(f"row {i}: empty context")
    return out


def check_is_fitted(estimator, attribute: str = "tree_") -> None:
    if getattr(estimator, attribute, None) is None:
        raise NotFittedError(f"{type(estimator).__name__} is not fitted yet; call fit first")
