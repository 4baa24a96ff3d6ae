"""Behavioral similarity (BSS), tree distance (EMD) and phase drift testing."""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import optimize, stats
from scipy.special import logsumexp

from .exceptions import DegenerateEmbeddingError, ValidationError
from .model import Cdt, Observation, sort_chronologically
from .oracle import Lens

log = logging.getLogger(__name__)

EXACT_LIMIT = 10_000  # K_a * K_b above this switches to the entropic solver
EXACT_ENUMERATION_LIMIT = 20
ALPHA = 0.05
RANK_DECIMALS = 12


# -- BSS ----------------------------------------------------------------------


@dataclass(frozen=True)
class EmbeddedEvent:
    id: str
    context: np.ndarray
    action: np.ndarray


@dataclass(frozen=True)
class MatchedPair:
    a: str
    b: str
    context_cosine: float
    action_cosine: float

    def to_dict(self) -> dict:
        return {"a": self.a, "b": self.b, "context_cosine": self.context_cosine,
                "action_cosine": self.action_cosine}


@dataclass(frozen=True)
class BssResult:
    score: float | None  # None when no pair clears the context threshold
    pairs: tuple[MatchedPair, ...]

    @property
    def n_pairs(self) -> int:
        return len(self.pairs)


def _unit_rows(vectors: np.ndarray, what: str) -> np.ndarray:
    vectors = np.asarray(vectors, dtype=float)
    norms = np.linalg.norm(vectors, axis=1)
    if np.any(norms == 0):
        raise DegenerateEmbeddingError(f"zero-norm {what} embedding")
    return vectors / norms[:, None]


def pairwise_cosine(a: np.ndarray, b: np.ndarray, what: str = "") -> np.ndarray:
    """Cosine grid; ``pairwise_cosine(b, a)`` is bit-for-bit the transpose."""
    ua, ub = _unit_rows(a, what), _unit_rows(b, what)
    # elementwise product then a last-axis sum: the same float ops in either orientation
    return np.clip((ua[:, None, :] * ub[None, :, :]).sum(axis=-1), -1.0, 1.0)


def embed_events(events: Sequence[Observation], oracle) -> list[EmbeddedEvent]:
    if not events:
        return []
    vecs = oracle.embed([e.context for e in events] + [e.decision for e in events], Lens.PLAIN)
    n = len(events)
    return [EmbeddedEvent(e.id, vecs[i], vecs[n + i]) for i, e in enumerate(events)]


def bss(set_a: Sequence[EmbeddedEvent], set_b: Sequence[EmbeddedEvent], top_n: int = 20, tau: float = 0.7,
        *, exclude_self: bool = False) -> BssResult:
    """Mean action cosine over the top-``top_n`` cross pairs with context cosine > ``tau``.

    Pairs are many-to-many.  Ties in context cosine break on the id pair written
    in sorted order, so ``bss(a, b)`` and ``bss(b, a)`` keep the same pairs.
    """
    if not set_a or not set_b:
        raise ValidationError("bss needs two non-empty event sets")
    if top_n < 1:
        raise ValidationError("top_n must be >= 1")
    ctx = pairwise_cosine(np.vstack([e.context for e in set_a]), np.vstack([e.context for e in set_b]), "context")
    act = pairwise_cosine(np.vstack([e.action for e in set_a]), np.vstack([e.action for e in set_b]), "action")
    rows, cols = np.nonzero(ctx > tau)
    candidates = []
    for i, j in zip(rows.tolist(), cols.tolist()):
        a, b = set_a[i].id, set_b[j].id
        if exclude_self and a == b:
            continue
        candidates.append((-float(ctx[i, j]), min(a, b), max(a, b), i, j))
    candidates.sort()
    kept = candidates[:top_n]
    pairs = tuple(MatchedPair(set_a[i].id, set_b[j].id, -negc, float(act[i, j])) for negc, _, _, i, j in kept)
    if not pairs:
        return BssResult(None, ())
    return BssResult(math.fsum(p.action_cosine for p in pairs) / len(pairs), pairs)


# -- EMD ----------------------------------------------------------------------


@dataclass(frozen=True)
class TransportResult:
    distance: float
    plan: np.ndarray
    method: str  # "assignment", "linprog" or "sinkhorn"
    tolerance: float = 0.0


def _exact_transport(cost: np.ndarray) -> TransportResult:
    ka, kb = cost.shape
    lcm = ka * kb // math.gcd(ka, kb)
    if lcm <= 600:
        # uniform marginals: replicate each side to lcm copies; the problem becomes an assignment
        ra, rb = lcm // ka, lcm // kb
        big = np.repeat(np.repeat(cost, ra, axis=0), rb, axis=1)
        r, c = optimize.linear_sum_assignment(big)
        plan = np.zeros_like(cost)
        np.add.at(plan, (r // ra, c // rb), 1.0 / lcm)
        return TransportResult(math.fsum(big[r, c]) / lcm, plan, "assignment")
    n = ka * kb
    a_eq = np.zeros((ka + kb, n))
    for i in range(ka):
        a_eq[i, i * kb:(i + 1) * kb] = 1.0
    for j in range(kb):
        a_eq[ka + j, j::kb] = 1.0
    b_eq = np.concatenate([np.full(ka, 1.0 / ka), np.full(kb, 1.0 / kb)])
    res = optimize.linprog(cost.ravel(), A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if not res.success:
        raise ValidationError(f"transport LP failed: {res.message}")
    return TransportResult(float(res.fun), res.x.reshape(ka, kb), "linprog")


def _sinkhorn(cost: np.ndarray, eps: float = 1e-3, iters: int = 5000, tol: float = 1e-9) -> TransportResult:
    ka, kb = cost.shape
    log_a, log_b = np.full(ka, -math.log(ka)), np.full(kb, -math.log(kb))
    f, g = np.zeros(ka), np.zeros(kb)
    err = np.inf
    for _ in range(iters):
        f = eps * (log_a - logsumexp((g[None, :] - cost) / eps, axis=1))
        g = eps * (log_b - logsumexp((f[:, None] - cost) / eps, axis=0))
        plan = np.exp((f[:, None] + g[None, :] - cost) / eps)
        err = float(np.abs(plan.sum(axis=1) - np.exp(log_a)).sum())
        if err < tol:
            break
    plan = np.exp((f[:, None] + g[None, :] - cost) / eps)
    return TransportResult(float((plan * cost).sum()), plan, "sinkhorn", tolerance=max(err, eps * math.log(ka * kb)))


def transport(cost: np.ndarray) -> TransportResult:
    """Min-cost plan between uniform marginals over the rows and columns of ``cost``."""
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2 or 0 in cost.shape:
        raise ValidationError("transport needs a non-empty 2-d cost matrix")
    if cost.size <= EXACT_LIMIT:
        return _exact_transport(cost)
    result = _sinkhorn(cost)
    log.warning("EMD on %dx%d solved approximately (entropic, tolerance %.2e)", *cost.shape, result.tolerance)
    return result


def emd_vectors(a: np.ndarray, b: np.ndarray) -> TransportResult:
    cost = np.clip(1.0 - pairwise_cosine(a, b, "element"), 0.0, 2.0)
    return transport(cost)


def tree_elements(t: Cdt, eta: str) -> list[str]:
    if eta == "gate":
        return [g.question for g in t.gates()]
    if eta == "stmt":
        return [s.text for s in t.statements()]
    raise ValidationError(f"eta must be 'gate' or 'stmt', got {eta!r}")


def emd(tree_a: Cdt, tree_b: Cdt, eta: str, oracle) -> float:
    """Distance between the gate (or statement) embedding sets of two trees."""
    texts_a, texts_b = tree_elements(tree_a, eta), tree_elements(tree_b, eta)
    if not texts_a or not texts_b:
        raise ValidationError(f"both trees need at least one {eta} element")
    vecs = oracle.embed(texts_a + texts_b, Lens.PLAIN)
    return emd_vectors(np.vstack(vecs[:len(texts_a)]), np.vstack(vecs[len(texts_a):])).distance


# -- Mann-Whitney U -------------------------------------------------------------


def _midranks(values: np.ndarray) -> np.ndarray:
    return stats.rankdata(values, method="average")


def _exact_count(doubled_ranks: list[int], n_x: int, observed_dev: int, center2: int) -> tuple[int, int]:
    """Count size-``n_x`` subsets whose doubled rank sum is at least as extreme as observed."""
    # dp[k] maps a doubled rank sum to the number of size-k subsets reaching it
    dp: list[dict[int, int]] = [dict() for _ in range(n_x + 1)]
    dp[0][0] = 1
    for r in doubled_ranks:
        for k in range(n_x, 0, -1):
            prev = dp[k - 1]
            cur = dp[k]
            for s, c in prev.items():
                cur[s + r] = cur.get(s + r, 0) + c
    extreme = sum(c for s, c in dp[n_x].items() if abs(s - center2) >= observed_dev)
    total = sum(dp[n_x].values())
    return extreme, total


def mann_whitney_u(sample_x: Sequence[float], sample_y: Sequence[float]) -> tuple[float, float]:
    """Two-sided test; returns ``(min(U_x, U_y), p)``.

    Exact permutation p (ties use midranks) when the pooled size is at most 20,
    otherwise a normal approximation with tie correction and continuity correction.
    """
    x = np.asarray(sample_x, dtype=float)
    y = np.asarray(sample_y, dtype=float)
    if x.size == 0 or y.size == 0:
        raise ValidationError("mann_whitney_u needs two non-empty samples")
    n_x, n_y = x.size, y.size
    n = n_x + n_y
    ranks = _midranks(np.concatenate([x, y]))
    doubled = [int(round(2 * r)) for r in ranks]  # midranks are multiples of 1/2
    rank_sum2 = sum(doubled[:n_x])
    u_x = rank_sum2 / 2 - n_x * (n_x + 1) / 2
    u = min(u_x, n_x * n_y - u_x)
    if n <= EXACT_ENUMERATION_LIMIT:
        center2 = n_x * (n + 1)  # doubled expected rank sum
        extreme, total = _exact_count(doubled, n_x, abs(rank_sum2 - center2), center2)
        return u, min(1.0, extreme / total)
    mean = n_x * n_y / 2
    _, counts = np.unique(ranks, return_counts=True)
    tie_term = float(np.sum(counts ** 3 - counts)) / (n * (n - 1))
    var = n_x * n_y / 12 * ((n + 1) - tie_term)
    if var <= 0:
        return u, 1.0
    z = (abs(u_x - mean) - 0.5) / math.sqrt(var)
    return u, float(min(1.0, 2 * stats.norm.sf(max(z, 0.0))))


# -- drift --------------------------------------------------------------------


@dataclass
class DriftResult:
    group: str
    within: list[float]
    cross: list[float]
    u: float
    p_value: float
    significant: bool
    within_pairs: list[MatchedPair] = field(default_factory=list)
    cross_pairs: list[MatchedPair] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "group": self.group, "u": self.u, "p_value": self.p_value, "significant": self.significant,
            "within_mean": float(np.mean(self.within)), "cross_mean": float(np.mean(self.cross)),
            "n_within": len(self.within), "n_cross": len(self.cross),
            "within_pairs": [p.to_dict() for p in self.within_pairs],
            "cross_pairs": [p.to_dict() for p in self.cross_pairs],
        }


def phase_split(events: Sequence[Observation], phases: int = 3) -> list[list[Observation]]:
    """Chronological split into equal thirds by count; the remainder goes to earlier phases."""
    ordered = sort_chronologically(list(events))
    base, extra = divmod(len(ordered), phases)
    out, start = [], 0
    for k in range(phases):
        size = base + (1 if k < extra else 0)
        out.append(ordered[start:start + size])
        start += size
    return out


def drift_test(group_events: Sequence[Observation], oracle, *, phases: int = 3, top_n: int = 20,
               tau: float = 0.7, alpha: float = ALPHA) -> DriftResult:
    parts = phase_split(group_events, phases)
    small = [k + 1 for k, p in enumerate(parts) if len(p) < 2]
    if small:
        raise ValidationError(f"phases {small} have fewer than 2 events")
    embedded = embed_events(sort_chronologically(list(group_events)), oracle)
    by_id = {e.id: e for e in embedded}
    sets = [[by_id[o.id] for o in p] for p in parts]
    within_pairs: list[MatchedPair] = []
    cross_pairs: list[MatchedPair] = []
    for k, s in enumerate(sets):
        within_pairs += bss(s, s, top_n, tau, exclude_self=True).pairs
    for i, j in itertools.combinations(range(len(sets)), 2):
        cross_pairs += bss(sets[i], sets[j], top_n, tau).pairs
    # cosines carry ~1e-16 of rounding noise; rank on a grid so identical behaviors tie
    within = [round(p.action_cosine, RANK_DECIMALS) for p in within_pairs]
    cross = [round(p.action_cosine, RANK_DECIMALS) for p in cross_pairs]
    if not within or not cross:
        raise ValidationError("no context-matched pairs within or across phases; lower tau")
    u, p = mann_whitney_u(within, cross)
    return DriftResult(group_events[0].group, within, cross, u, p, p < alpha, within_pairs, cross_pairs)


# -- similarity matrices ------------------------------------------------------------


@dataclass
class SimilarityMatrix:
    names: list[str]
    values: list[list[float | None]]
    mode: str
    errors: dict[str, str] = field(default_factory=dict)

    def to_csv_rows(self) -> list[list[str]]:
        rows = [[""] + self.names]
        for name, row in zip(self.names, self.values):
            rows.append([name] + ["" if v is None else repr(float(v)) for v in row])
        return rows


def similarity_matrix(groups: Sequence[tuple[str, object]], mode: str, oracle, *, top_n: int = 20,
                      tau: float = 0.7) -> SimilarityMatrix:
    """Pairwise BSS or EMD; the diagonal is each group's self-score.

    For BSS the diagonal excludes self-pairs.  A failing cell is recorded in
    ``errors`` and left empty.
    """
    if len(groups) < 2:
        raise ValidationError("similarity_matrix needs at least two groups")
    if mode not in ("bss", "emd_gate", "emd_stmt"):
        raise ValidationError(f"unknown similarity mode {mode!r}")
    names = [n for n, _ in groups]
    k = len(groups)
    values: list[list[float | None]] = [[None] * k for _ in range(k)]
    errors: dict[str, str] = {}
    prepared: dict[int, object] = {}

    def payload(i):
        if i not in prepared:
            item = groups[i][1]
            prepared[i] = embed_events(list(item), oracle) if mode == "bss" else item
        return prepared[i]

    for i in range(k):
        for j in range(i, k):
            try:
                a, b = payload(i), payload(j)
                if mode == "bss":
                    v = bss(a, b, top_n, tau, exclude_self=(i == j)).score
                else:
                    v = emd(a, b, mode.split("_")[1], oracle)
            except Exception as exc:  # a bad cell must not sink the matrix
                errors[f"{names[i]}|{names[j]}"] = f"{type(exc).__name__}: {exc}"
                v = None
            values[i][j] = values[j][i] = v
    return SimilarityMatrix(names, values, mode, errors)
