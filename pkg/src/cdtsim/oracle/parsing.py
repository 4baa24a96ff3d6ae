"""Tolerant parsers for provider replies.  Each returns ``None`` on failure."""
from __future__ import annotations

import ast
import json
import re

from ..model import EvidenceLabel

_LABEL_WORDS = {
    "supports": EvidenceLabel.SUP, "support": EvidenceLabel.SUP, "supported": EvidenceLabel.SUP,
    "sup": EvidenceLabel.SUP,
    "contradicts": EvidenceLabel.CON, "contradict": EvidenceLabel.CON,
    "contradicted": EvidenceLabel.CON, "con": EvidenceLabel.CON,
    "irrelevant": EvidenceLabel.IRR, "irr": EvidenceLabel.IRR, "unrelated": EvidenceLabel.IRR,
}

_STRIP = " \t\r\n.,;:!?\"'`*()[]{}<>"


def normalize_word(text: str) -> str:
    return text.strip().strip(_STRIP).lower()


def parse_choice(text: str, choices) -> str | None:
    """Accept a reply that is exactly one of ``choices`` modulo case and punctuation.

    A leading choice followed by an explanation ("Yes. Because ...") is accepted too.
    """
    word = normalize_word(text)
    if word in choices:
        return word
    head = re.split(r"[\s.,;:!]+", text.strip().strip(_STRIP).lower(), maxsplit=1)[0]
    return head if head in choices else None


def _balanced(text: str, start: int, open_ch: str, close_ch: str) -> str | None:
    depth = 0
    in_str = None
    escape = False
    for i in range(start, len(text)):
        ch = text[i]
        if in_str:
            if escape:
                escape = False
            elif ch == "\\":
                escape = True
            elif ch == in_str:
                in_str = None
            continue
        if ch in "\"'":
            in_str = ch
        elif ch == open_ch:
            depth += 1
        elif ch == close_ch:
            depth -= 1
            if depth == 0:
                return text[start:i + 1]
    return None


def _literal(snippet: str):
    try:
        return json.loads(snippet)
    except (json.JSONDecodeError, ValueError):
        pass
    try:
        return ast.literal_eval(snippet)
    except (ValueError, SyntaxError, MemoryError, RecursionError):
        return None


def find_json_array(text: str) -> list | None:
    i = text.find("[")
    while i != -1:
        snippet = _balanced(text, i, "[", "]")
        if snippet is not None:
            value = _literal(snippet)
            if isinstance(value, list):
                return value
        i = text.find("[", i + 1)
    return None


def find_json_object(text: str) -> dict | None:
    i = text.find("{")
    while i != -1:
        snippet = _balanced(text, i, "{", "}")
        if snippet is not None:
            value = _literal(snippet)
            if isinstance(value, dict):
                return value
        i = text.find("{", i + 1)
    return None


def parse_labels(text: str, n: int) -> list[EvidenceLabel] | None:
    items = find_json_array(text)
    if items is None or not all(isinstance(x, str) for x in items):
        items = [ln for ln in text.splitlines() if ln.strip()]
        items = [re.sub(r"^\s*(?:[-*]|\[?\d+[\].)]?)\s*", "", ln) for ln in items]
    labels = []
    for item in items:
        lab = _LABEL_WORDS.get(normalize_word(str(item)))
        if lab is None:
            return None
        labels.append(lab)
    return labels if len(labels) == n else None


def parse_assigned_list(text: str, name: str) -> list[str] | None:
    """Extract ``name = [...]`` from a chain-of-thought reply."""
    m = re.search(rf"{re.escape(name)}\s*=\s*\[", text)
    if not m:
        return None
    snippet = _balanced(text, m.end() - 1, "[", "]")
    if snippet is None:
        return None
    value = _literal(snippet)
    if not isinstance(value, list):
        return None
    out = [str(v).strip() for v in value if str(v).strip()]
    return out


def parse_string_list(text: str, key: str | None = None) -> list[str] | None:
    """A JSON array of strings, or an object holding one under ``key``."""
    if key is not None:
        obj = find_json_object(text)
        if obj is not None and isinstance(obj.get(key), list):
            return [str(v).strip() for v in obj[key] if str(v).strip()]
    arr = find_json_array(text)
    if arr is not None and all(isinstance(v, str) for v in arr):
        return [v.strip() for v in arr if v.strip()]
    return None
