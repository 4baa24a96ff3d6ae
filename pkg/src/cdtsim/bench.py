"""Ingestion, chronological splits and experiment orchestration.

A run writes everything it produces under one directory::

    run/
      config.json            resolved config, seeds included (written first)
      trees/<group>__<setting>.json
      reports/<group>__<setting>.adapt.json
      predictions.jsonl      one line per (cell, test observation), CDT lines carry a trace
      evaluations.jsonl
      summary_by_method.csv  summary_by_group.csv
      analysis/drift.json    analysis/similarity_<mode>.csv   (when requested)
      errors.json            failed cells, keyed "<group>|<method>"
"""
from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from . import analyze, evaluate, infer
from .adapt import adapt_tree, transfer
from .construct import build_tree_with_selection
from .exceptions import CdtError, ConfigError, ValidationError
from .model import HyperParams, Observation, sort_chronologically, tree_from_dict, tree_to_dict

log = logging.getLogger(__name__)

GROUP_FLOOR = 100
METHODS = ("cdt", "vanilla", "human_profile", "summarization", "rag")
PLANS = ("main", "temporal", "transfer")


# -- ingestion ----------------------------------------------------------------


@dataclass
class IngestReport:
    corpus: dict[str, list[Observation]]
    errors: list[dict] = field(default_factory=list)  # {"line": n, "error": msg}
    warnings: list[str] = field(default_factory=list)

    @property
    def n_observations(self) -> int:
        return sum(len(v) for v in self.corpus.values())

    def all(self) -> list[Observation]:
        return [o for g in sorted(self.corpus) for o in self.corpus[g]]


def ingest(path: str | Path) -> IngestReport:
    """Read JSONL observations; bad lines are reported, duplicate ids are fatal."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc}") from exc
    corpus: dict[str, list[Observation]] = {}
    errors, seen = [], {}
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            raw = json.loads(line)
            if not isinstance(raw, dict):
                raise ValidationError("line is not a JSON object")
            obs = Observation.from_dict(raw)
        except (json.JSONDecodeError, ValueError, TypeError) as exc:
            errors.append({"line": lineno, "error": str(exc)})
            continue
        if obs.id in seen:
            raise ValidationError(f"duplicate observation id {obs.id!r} on lines {seen[obs.id]} and {lineno}")
        seen[obs.id] = lineno
        corpus.setdefault(obs.group, []).append(obs)
    report = IngestReport({g: sort_chronologically(v) for g, v in corpus.items()}, errors)
    for g, v in sorted(report.corpus.items()):
        if len(v) <= GROUP_FLOOR:
            msg = f"group {g!r} has only {len(v)} observations (benchmark groups have more than {GROUP_FLOOR})"
            log.warning(msg)
            report.warnings.append(msg)
    return report


def write_jsonl(path: Path, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True, ensure_ascii=False) + "\n")


# -- splits ---------------------------------------------------------------------


@dataclass(frozen=True)
class Split:
    train: tuple[Observation, ...]
    test: tuple[Observation, ...]

    @property
    def train_ids(self) -> list[str]:
        return [o.id for o in self.train]

    @property
    def test_ids(self) -> list[str]:
        return [o.id for o in self.test]


def chronological_split(corpus: Sequence[Observation], train_fraction: float = 0.7) -> Split:
    """First ceil(f * n) observations by order go to train; test keeps at least one."""
    if len(corpus) < 2:
        raise ValidationError("a split needs at least 2 observations")
    if not 0 < train_fraction < 1:
        raise ValidationError("train_fraction must lie strictly between 0 and 1")
    ordered = sort_chronologically(corpus)
    n = len(ordered)
    n_train = math.ceil(round(train_fraction * n, 9))
    if n_train >= n:
        log.warning("train fraction %.2f of %d leaves no test data; keeping 1 observation for test",
                    train_fraction, n)
        n_train = n - 1
    return Split(tuple(ordered[:n_train]), tuple(ordered[n_train:]))


def three_phase_split(corpus: Sequence[Observation]) -> tuple[list[Observation], ...]:
    return tuple(analyze.phase_split(corpus, 3))


# -- configuration --------------------------------------------------------------


@dataclass
class RunConfig:
    """Declarative description of one run.

    ``data`` is a JSONL path; ``groups`` restricts the groups used (all when
    empty); ``transfers`` lists ``{"source": g, "target": g}`` pairs and may name
    a prebuilt ``source_tree`` path.  ``profiles`` maps groups to human-written
    profiles for the human_profile baseline.
    """

    data: str
    plan: str = "main"
    groups: list[str] = field(default_factory=list)
    methods: list[str] = field(default_factory=lambda: list(METHODS))
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])
    hyperparams: dict = field(default_factory=dict)
    providers: dict = field(default_factory=lambda: {"default": {"kind": "mock"}})
    train_fraction: float = 0.7
    transfers: list[dict] = field(default_factory=list)
    profiles: dict[str, str] = field(default_factory=dict)
    dimensions: list[str] = field(default_factory=lambda: [d.value for d in evaluate.Dimension])
    analysis: list[str] = field(default_factory=list)  # any of "drift", "bss", "emd_gate", "emd_stmt"
    max_workers: int = 1
    oracle_workers: int = 1
    background_cap: int = infer.DEFAULT_BACKGROUND_CAP

    def __post_init__(self):
        problems = []
        if self.plan not in PLANS:
            problems.append(f"plan must be one of {PLANS}")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            problems.append(f"unknown method(s) {bad}")
        if not self.seeds or len(set(self.seeds)) != len(self.seeds):
            problems.append("seeds must be a non-empty list of distinct integers")
        if not 0 < self.train_fraction < 1:
            problems.append("train_fraction must lie in (0, 1)")
        bad = [d for d in self.dimensions if d not in {x.value for x in evaluate.Dimension}]
        if bad:
            problems.append(f"unknown dimension(s) {bad}")
        bad = [a for a in self.analysis if a not in ("drift", "bss", "emd_gate", "emd_stmt")]
        if bad:
            problems.append(f"unknown analysis {bad}")
        if self.plan == "transfer" and not self.transfers:
            problems.append("transfer plan needs a 'transfers' list")
        for t in self.transfers:
            if not isinstance(t, dict) or "source" not in t or "target" not in t:
                problems.append(f"transfer entry {t!r} needs 'source' and 'target'")
        if self.max_workers < 1 or self.oracle_workers < 1:
            problems.append("worker counts must be >= 1")
        try:
            hp = HyperParams.from_dict(self.hyperparams)
        except (ConfigError, TypeError) as exc:
            problems.append(str(exc))
        else:
            if hp.candidates_c > len(self.seeds):
                problems.append(f"{hp.candidates_c} candidates need as many seeds, got {len(self.seeds)}")
        if problems:
            raise ConfigError("invalid run config: " + "; ".join(problems))

    @property
    def hp(self) -> HyperParams:
        return HyperParams.from_dict(self.hyperparams)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict, base_dir: str | Path | None = None) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a mapping")
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        if "data" not in d:
            raise ConfigError("config needs a 'data' path")
        d = dict(d)
        if base_dir is not None and not Path(d["data"]).is_absolute():
            d["data"] = str(Path(base_dir) / d["data"])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


def load_config(path: str | Path) -> RunConfig:
    """JSON, or YAML when the file ends in .yaml/.yml."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        if path.suffix in (".yaml", ".yml"):
            import yaml
            raw = yaml.safe_load(text)
        else:
            raw = json.loads(text)
    except Exception as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    return RunConfig.from_dict(raw, base_dir=path.parent)


# -- orchestration -----------------------------------------------------------------


@dataclass
class Cell:
    """One (group, method) unit of work: a model plus the observations it is scored on."""

    group: str
    method: str
    test: list[Observation]
    tree_path: str | None = None  # CDT cells
    corpus: list[Observation] = field(default_factory=list)  # baseline training data


@dataclass
class RunSummary:
    run_dir: Path
    n_predictions: int
    errors: dict[str, str]
    tables: dict[str, evaluate.SummaryTable] = field(default_factory=dict)


class _Run:
    def __init__(self, cfg: RunConfig, oracle, run_dir: Path):
        self.cfg = cfg
        self.hp = cfg.hp
        self.oracle = oracle
        self.dir = run_dir
        self.errors: dict[str, str] = {}
        self.trees: dict[str, object] = {}
        self.profile_cache: dict[str, str] = {}

    def fail(self, key: str, exc: Exception) -> None:
        log.error("cell %s failed: %s", key, exc)
        self.errors[key] = f"{type(exc).__name__}: {exc}"

    def save_tree(self, name: str, tree) -> str:
        rel = f"trees/{name}.json"
        (self.dir / rel).write_text(json.dumps(tree_to_dict(tree), indent=2, sort_keys=True) + "\n")
        self.trees[rel] = tree
        return rel

    def save_report(self, name: str, report) -> None:
        (self.dir / f"reports/{name}.adapt.json").write_text(
            json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")

    def build(self, corpus, group, phase):
        return build_tree_with_selection(corpus, group, self.hp, self.oracle, self.cfg.seeds, phase)

    # -- planning: each returns the cells to predict on

    def plan_main(self, group: str, obs: list[Observation]) -> list[Cell]:
        split = chronological_split(obs, self.cfg.train_fraction)
        cells = []
        for method in self.cfg.methods:
            if method == "cdt":
                try:
                    rel = self.save_tree(f"{group}__cdt", self.build(list(split.train), group, "train"))
                except CdtError as exc:
                    self.fail(f"{group}|cdt", exc)
                    continue
                cells.append(Cell(group, "cdt", list(split.test), tree_path=rel))
            else:
                cells.append(Cell(group, method, list(split.test), corpus=list(split.train)))
        return cells

    def plan_temporal(self, group: str, obs: list[Observation]) -> list[Cell]:
        p1, p2, p3 = three_phase_split(obs)
        if not (p1 and p2 and p3):
            raise ValidationError(f"group {group} is too small for three phases")
        test = p2 + p3
        cells = []
        try:
            base = self.save_tree(f"{group}__p1", self.build(p1, group, "P1"))
            cells.append(Cell(group, "fixed", test, tree_path=base))  # reuses the P1 file
        except CdtError as exc:
            for s in ("fixed", "adapted"):
                self.fail(f"{group}|{s}", exc)
            base = None
        try:
            rel = self.save_tree(f"{group}__retrained", self.build(p1 + p2, group, "P1+P2"))
            cells.append(Cell(group, "retrained", test, tree_path=rel))
        except CdtError as exc:
            self.fail(f"{group}|retrained", exc)
        if base is not None:
            try:
                tree, report = adapt_tree(self.trees[base], p2, self.oracle, self.hp, history=p1, phase="P2")
                self.save_report(f"{group}__adapted", report)
                cells.append(Cell(group, "adapted", test, tree_path=self.save_tree(f"{group}__adapted", tree)))
            except CdtError as exc:
                self.fail(f"{group}|adapted", exc)
        return cells

    def plan_transfer(self, spec: dict, corpus: dict[str, list[Observation]]) -> list[Cell]:
        src, tgt = spec["source"], spec["target"]
        label = f"{src}->{tgt}"
        if tgt not in corpus:
            self.fail(f"{label}|*", ValidationError(f"target group {tgt!r} not in data"))
            return []
        split = chronological_split(corpus[tgt], self.cfg.train_fraction)
        train, test = list(split.train), list(split.test)
        cells = [Cell(tgt, "vanilla", test, corpus=train)]
        try:
            rel = self.save_tree(f"{tgt}__target_cdt", self.build(train, tgt, "train"))
            cells.append(Cell(tgt, "target_cdt", test, tree_path=rel))
        except CdtError as exc:
            self.fail(f"{label}|target_cdt", exc)
        try:
            if spec.get("source_tree"):
                path = Path(spec["source_tree"])
                if not path.exists():
                    raise ValidationError(f"source tree {path} not found")
                source = tree_from_dict(json.loads(path.read_text()))
                history = corpus.get(src, [])
            elif src in corpus:
                history = list(chronological_split(corpus[src], self.cfg.train_fraction).train)
                source = self.build(history, src, "train")
                self.save_tree(f"{src}__source", source)
            else:
                raise ValidationError(f"source group {src!r} has neither data nor a source_tree")
            tree, report = transfer(source, train, tgt, self.oracle, self.hp, source_history=history)
            self.save_report(f"{src}__to__{tgt}", report)
            cells.append(Cell(tgt, "transfer", test, tree_path=self.save_tree(f"{src}__to__{tgt}", tree)))
        except CdtError as exc:
            self.fail(f"{label}|transfer", exc)
        return cells

    # -- prediction and scoring

    def run_cell(self, cell: Cell) -> list[tuple[dict, dict]]:
        out = []
        tree = self.trees.get(cell.tree_path) if cell.tree_path else None
        config = {"profile": self.cfg.profiles.get(cell.group), "profile_cache": self.profile_cache}
        for obs in cell.test:
            row = {"observation_id": obs.id, "group": cell.group, "method": cell.method}
            if tree is not None:
                pred, trace = infer.predict(tree, obs.context, obs.question, self.oracle,
                                            background_cap=self.cfg.background_cap, return_trace=True)
                row.update(tree=cell.tree_path, trace=trace.to_dict())
            else:
                kind = "vanilla" if cell.method not in infer.Method._value2member_map_ else cell.method
                pred = infer.baseline_predict(kind, cell.corpus, obs.context, obs.question, self.oracle,
                                              config, group=cell.group)
            row["prediction"] = pred
            record = evaluate.evaluate_prediction(obs, pred, self.oracle, method=cell.method,
                                                  dimensions=self.cfg.dimensions)
            out.append((row, record.to_dict()))
        return out

    def analyses(self, corpus: dict[str, list[Observation]]) -> None:
        if not self.cfg.analysis:
            return
        adir = self.dir / "analysis"
        adir.mkdir(exist_ok=True)
        groups = sorted(corpus)
        if "drift" in self.cfg.analysis:
            results = {}
            for g in groups:
                try:
                    results[g] = analyze.drift_test(corpus[g], self.oracle, top_n=self.hp.bss_top_n,
                                                    tau=self.hp.bss_context_tau).to_dict()
                except CdtError as exc:
                    self.fail(f"{g}|drift", exc)
            (adir / "drift.json").write_text(json.dumps(results, indent=2, sort_keys=True) + "\n")
        for mode in ("bss", "emd_gate", "emd_stmt"):
            if mode not in self.cfg.analysis:
                continue
            if mode == "bss":
                items = [(g, corpus[g]) for g in groups]
            else:
                items = sorted((Path(p).stem, t) for p, t in self.trees.items())
            if len(items) < 2:
                self.fail(f"*|{mode}", ValidationError(f"{mode} needs at least two groups or trees"))
                continue
            m = analyze.similarity_matrix(items, mode, self.oracle, top_n=self.hp.bss_top_n,
                                          tau=self.hp.bss_context_tau)
            with open(adir / f"similarity_{mode}.csv", "w", newline="", encoding="utf-8") as fh:
                csv.writer(fh, lineterminator="\n").writerows(m.to_csv_rows())
            for key, err in m.errors.items():
                self.errors[f"{key}|{mode}"] = err


def run_experiment(cfg: RunConfig, oracle, run_dir: str | Path) -> RunSummary:
    """Run ``cfg.plan`` end to end; failures are isolated per (group, method) cell."""
    run_dir = Path(run_dir)
    for sub in ("trees", "reports"):
        (run_dir / sub).mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")

    data = ingest(cfg.data)
    corpus = {g: v for g, v in data.corpus.items() if not cfg.groups or g in cfg.groups}
    missing = [g for g in cfg.groups if g not in data.corpus]
    run = _Run(cfg, oracle, run_dir)
    for g in missing:
        run.fail(f"{g}|*", ValidationError(f"group {g!r} not in data"))
    if data.errors:
        (run_dir / "ingest_errors.json").write_text(json.dumps(data.errors, indent=2) + "\n")

    def plan_group(item):
        kind, payload = item
        try:
            if kind == "transfer":
                return run.plan_transfer(payload, data.corpus)
            group = payload
            return (run.plan_main if cfg.plan == "main" else run.plan_temporal)(group, corpus[group])
        except CdtError as exc:
            run.fail(f"{payload if kind != 'transfer' else payload['source'] + '->' + payload['target']}|*", exc)
            return []

    work = ([("transfer", t) for t in cfg.transfers] if cfg.plan == "transfer"
            else [("group", g) for g in sorted(corpus)])
    with ThreadPoolExecutor(max_workers=cfg.max_workers) as pool:
        cells = [c for batch in pool.map(plan_group, work) for c in batch]

    def safe_cell(cell: Cell):
        try:
            return run.run_cell(cell)
        except CdtError as exc:
            run.fail(f"{cell.group}|{cell.method}", exc)
            return []

    with ThreadPoolExecutor(max_workers=cfg.max_workers) as pool:
        results = [r for batch in pool.map(safe_cell, cells) for r in batch]
    results.sort(key=lambda pr: (pr[0]["group"], pr[0]["method"], pr[0]["observation_id"]))
    write_jsonl(run_dir / "predictions.jsonl", (p for p, _ in results))
    write_jsonl(run_dir / "evaluations.jsonl", (e for _, e in results))

    records = [evaluate.EvaluationRecord.from_dict(e) for _, e in results]
    tables = {}
    if records:
        tables["method"] = evaluate.aggregate(records, "method")
        (run_dir / "summary_by_method.csv").write_text(tables["method"].to_csv())
        lines = []
        for method in sorted({r.method for r in records}):
            t = evaluate.aggregate([r for r in records if r.method == method], "group")
            lines += [f"{method},{row}" for row in t.to_csv().splitlines()[1:]]
        header = "method,group,n," + ",".join(evaluate.SCORE_COLUMNS)
        (run_dir / "summary_by_group.csv").write_text("\n".join([header] + lines) + "\n")
    run.analyses(corpus)
    (run_dir / "errors.json").write_text(json.dumps(dict(sorted(run.errors.items())), indent=2) + "\n")
    return RunSummary(run_dir, len(results), run.errors, tables)
