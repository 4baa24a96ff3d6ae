"""``cdt`` command line.

Exit codes: 0 success, 2 usage, 3 config, 4 data, 5 oracle, 1 anything else.
Failures print one JSON object on stderr: ``{"error": kind, "type": ..., "message": ...}``.
"""
from __future__ import annotations

import csv
import functools
import json
import logging
import sys
from pathlib import Path

import click

from . import analyze, bench, evaluate, infer
from .adapt import adapt_tree, transfer
from .construct import build_tree_with_selection
from .exceptions import AggregateError, CdtError, ConfigError, NodeError, OracleError, ValidationError
from .model import Cdt, CdtNode, HyperParams, tree_from_dict, tree_to_dict
from .oracle import make_oracle

EXIT_CODES = {"config": 3, "data": 4, "oracle": 5, "internal": 1}
DOT_WIDTH = 80


class _Failure(click.ClickException):
    def __init__(self, kind: str, exc: Exception):
        super().__init__(str(exc))
        self.kind = kind
        self.exc = exc
        self.exit_code = EXIT_CODES[kind]

    def show(self, file=None):
        payload = {"error": self.kind, "type": type(self.exc).__name__, "message": str(self.exc)}
        click.echo(json.dumps(payload), err=True)


def _classify(exc: Exception) -> str:
    """Exit category; wrapped errors take the category their causes share."""
    if isinstance(exc, NodeError):
        return _classify(exc.cause)
    if isinstance(exc, AggregateError) and exc.errors:
        kinds = {_classify(e) for e in exc.errors}
        return kinds.pop() if len(kinds) == 1 else "internal"
    if isinstance(exc, ConfigError):
        return "config"
    if isinstance(exc, OracleError):
        return "oracle"
    if isinstance(exc, ValidationError):
        return "data"
    return "internal"


def _guarded(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except CdtError as exc:
            raise _Failure(_classify(exc), exc) from exc
        except (OSError, json.JSONDecodeError) as exc:
            raise _Failure("data", exc) from exc
    return wrapper


def _oracle_options(fn):
    fn = click.option("--record", type=click.Path(file_okay=False), help="Record oracle calls into DIR.")(fn)
    fn = click.option("--replay", type=click.Path(file_okay=False), help="Answer oracle calls from DIR only.")(fn)
    fn = click.option("--providers", type=click.Path(dir_okay=False, exists=True),
                      help="JSON/YAML provider map {'default': {...}, '<role>': {...}}.")(fn)
    fn = click.option("--workers", type=int, default=1, show_default=True, help="Parallel oracle calls.")(fn)
    return fn


def _read_mapping(path: str | None) -> dict:
    if not path:
        return {}
    text = Path(path).read_text(encoding="utf-8")
    try:
        if path.endswith((".yaml", ".yml")):
            import yaml
            data = yaml.safe_load(text)
        else:
            data = json.loads(text)
    except Exception as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must hold a mapping")
    return data


def _oracle(record, replay, providers, workers):
    if workers < 1:
        raise ConfigError("--workers must be >= 1")
    return make_oracle(_read_mapping(providers) or None, record=record, replay=replay, max_workers=workers)


def _hyperparams(path: str | None) -> HyperParams:
    try:
        return HyperParams.from_dict(_read_mapping(path))
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def _load_tree(path: str) -> Cdt:
    try:
        return tree_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"{path} is not a tree document: {exc}") from exc


def _write_json(path: str | None, payload) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) + "\n"
    if path:
        Path(path).write_text(text, encoding="utf-8")
    else:
        click.echo(text, nl=False)


def _observations(path: str, group: str | None = None):
    report = bench.ingest(path)
    for e in report.errors:
        click.echo(f"warning: {path}:{e['line']}: {e['error']}", err=True)
    if group:
        if group not in report.corpus:
            raise ValidationError(f"group {group!r} not found in {path}")
        return report.corpus[group]
    if len(report.corpus) != 1:
        raise ValidationError(f"{path} holds {len(report.corpus)} groups; pick one with --group")
    return next(iter(report.corpus.values()))


@click.group()
@click.option("-v", "--verbose", count=True, help="More logging (repeatable).")
def main(verbose: int) -> None:
    """Codified decision trees: build, adapt, predict, evaluate and analyze."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


@main.command()
@click.option("--data", required=True, type=click.Path(dir_okay=False), help="JSONL observations.")
@click.option("--group", help="Group to model (needed when the file holds several).")
@click.option("--hyperparams", type=click.Path(dir_okay=False, exists=True), help="JSON/YAML hyperparameters.")
@click.option("--seeds", default="0,1,2", show_default=True, help="Comma-separated candidate seeds.")
@click.option("--phase", default="train", show_default=True)
@click.option("--out", required=True, type=click.Path(dir_okay=False), help="Tree document to write.")
@_oracle_options
@_guarded
def build(data, group, hyperparams, seeds, phase, out, record, replay, providers, workers):
    """Construct a tree from observations."""
    hp = _hyperparams(hyperparams)
    try:
        seed_list = [int(s) for s in seeds.split(",") if s.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad --seeds: {exc}") from exc
    if len(set(seed_list)) != len(seed_list):
        raise ConfigError("--seeds must be distinct")
    if len(seed_list) < hp.candidates_c:
        raise ConfigError(f"{hp.candidates_c} candidates need as many seeds, got {len(seed_list)}")
    corpus = _observations(data, group)
    oracle = _oracle(record, replay, providers, workers)
    tree = build_tree_with_selection(corpus, corpus[0].group, hp, oracle, seed_list, phase)
    _write_json(out, tree_to_dict(tree))


@main.command()
@click.option("--tree", "tree_path", required=True, type=click.Path(dir_okay=False, exists=True))
@click.option("--data", required=True, type=click.Path(dir_okay=False), help="New observations (JSONL).")
@click.option("--history", required=True, type=click.Path(dir_okay=False),
              help="Observations already in the tree (JSONL).")
@click.option("--hyperparams", type=click.Path(dir_okay=False, exists=True))
@click.option("--phase", default="adapt", show_default=True)
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--report", "report_path", type=click.Path(dir_okay=False), help="AdaptReport JSON.")
@_oracle_options
@_guarded
def adapt(tree_path, data, history, hyperparams, phase, out, report_path, record, replay, providers, workers):
    """Incorporate new observations into an existing tree."""
    tree = _load_tree(tree_path)
    hp = _hyperparams(hyperparams) if hyperparams else None
    new = _observations(data, tree.group)
    old = _observations(history, tree.group)
    oracle = _oracle(record, replay, providers, workers)
    adapted, report = adapt_tree(tree, new, oracle, hp, history=old, phase=phase)
    _write_json(out, tree_to_dict(adapted))
    _write_json(report_path or str(Path(out).with_suffix(".report.json")), report.to_dict())


@main.command("transfer")
@click.option("--tree", "tree_path", required=True, type=click.Path(dir_okay=False, exists=True),
              help="Source group's tree.")
@click.option("--history", required=True, type=click.Path(dir_okay=False), help="Source observations in the tree.")
@click.option("--data", required=True, type=click.Path(dir_okay=False), help="Target group observations.")
@click.option("--target-group", required=True)
@click.option("--hyperparams", type=click.Path(dir_okay=False, exists=True))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--report", "report_path", type=click.Path(dir_okay=False))
@_oracle_options
@_guarded
def transfer_cmd(tree_path, history, data, target_group, hyperparams, out, report_path, record, replay,
                 providers, workers):
    """Adapt a source group's tree to a target group."""
    source = _load_tree(tree_path)
    hp = _hyperparams(hyperparams) if hyperparams else None
    target = _observations(data, target_group)
    old = _observations(history, source.group)
    oracle = _oracle(record, replay, providers, workers)
    tree, report = transfer(source, target, target_group, oracle, hp, source_history=old)
    _write_json(out, tree_to_dict(tree))
    _write_json(report_path or str(Path(out).with_suffix(".report.json")), report.to_dict())


@main.command()
@click.option("--tree", "tree_path", required=True, type=click.Path(dir_okay=False, exists=True))
@click.option("--data", required=True, type=click.Path(dir_okay=False), help="Observations to predict (JSONL).")
@click.option("--out", type=click.Path(dir_okay=False), help="Predictions JSONL (stdout when omitted).")
@click.option("--trace/--no-trace", default=True, show_default=True, help="Include the traversal trace.")
@click.option("--background-cap", type=int, default=infer.DEFAULT_BACKGROUND_CAP, show_default=True)
@_oracle_options
@_guarded
def predict(tree_path, data, out, trace, background_cap, record, replay, providers, workers):
    """Predict decisions for new contexts."""
    tree = _load_tree(tree_path)
    observations = _observations(data, tree.group)
    oracle = _oracle(record, replay, providers, workers)
    rows = []
    for obs in observations:
        answer, tr = infer.predict(tree, obs.context, obs.question, oracle, background_cap=background_cap,
                                   return_trace=True)
        row = {"observation_id": obs.id, "group": tree.group, "method": "cdt", "prediction": answer,
               "tree": str(tree_path)}
        if trace:
            row["trace"] = tr.to_dict()
        rows.append(row)
    _emit_jsonl(out, rows)


def _emit_jsonl(out, rows) -> None:
    if out:
        bench.write_jsonl(Path(out), rows)
    else:
        for row in rows:
            click.echo(json.dumps(row, sort_keys=True, ensure_ascii=False))


@main.command("evaluate")
@click.option("--data", required=True, type=click.Path(dir_okay=False), help="Reference observations (JSONL).")
@click.option("--predictions", required=True, type=click.Path(dir_okay=False, exists=True))
@click.option("--out", type=click.Path(dir_okay=False), help="Evaluation records JSONL.")
@click.option("--summary", type=click.Path(dir_okay=False), help="CSV summary table.")
@click.option("--by", type=click.Choice(["group", "domain", "method"]), default="group", show_default=True)
@click.option("--dimensions", default=",".join(d.value for d in evaluate.Dimension), show_default=True)
@_oracle_options
@_guarded
def evaluate_cmd(data, predictions, out, summary, by, dimensions, record, replay, providers, workers):
    """Score predictions against reference decisions."""
    dims = [d.strip() for d in dimensions.split(",") if d.strip()]
    try:
        dims = [evaluate.Dimension(d) for d in dims]
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    refs = {o.id: o for o in bench.ingest(data).all()}
    preds = [json.loads(line) for line in Path(predictions).read_text(encoding="utf-8").splitlines() if line.strip()]
    unknown = [p.get("observation_id") for p in preds if p.get("observation_id") not in refs]
    if unknown:
        raise ValidationError(f"predictions reference unknown observations, e.g. {unknown[:3]}")
    oracle = _oracle(record, replay, providers, workers)
    records = oracle.map(lambda p: evaluate.evaluate_prediction(refs[p["observation_id"]], p["prediction"], oracle,
                                                                method=p.get("method", ""), dimensions=dims), preds)
    records.sort(key=lambda r: (r.method, r.observation_id))
    _emit_jsonl(out, [r.to_dict() for r in records])
    if summary and records:
        Path(summary).write_text(evaluate.aggregate(records, by).to_csv(), encoding="utf-8")


@main.group("analyze")
def analyze_group() -> None:
    """Drift tests and similarity matrices."""


@analyze_group.command("drift")
@click.option("--data", required=True, type=click.Path(dir_okay=False))
@click.option("--group", help="Only this group (default: every group).")
@click.option("--top-n", type=int, default=20, show_default=True)
@click.option("--tau", type=float, default=0.7, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), help="JSON results (stdout when omitted).")
@_oracle_options
@_guarded
def drift_cmd(data, group, top_n, tau, out, record, replay, providers, workers):
    """Mann-Whitney test of within-phase versus cross-phase similarity."""
    if top_n < 1:
        raise ConfigError("--top-n must be >= 1")
    corpus = bench.ingest(data).corpus
    groups = [group] if group else sorted(corpus)
    missing = [g for g in groups if g not in corpus]
    if missing:
        raise ValidationError(f"group(s) not in data: {missing}")
    oracle = _oracle(record, replay, providers, workers)
    results = {g: analyze.drift_test(corpus[g], oracle, top_n=top_n, tau=tau).to_dict() for g in groups}
    _write_json(out, results)


@analyze_group.command("similarity")
@click.option("--mode", type=click.Choice(["bss", "emd_gate", "emd_stmt"]), default="bss", show_default=True)
@click.option("--data", type=click.Path(dir_okay=False), help="Observations (bss mode).")
@click.option("--trees", multiple=True, type=click.Path(dir_okay=False, exists=True), help="Tree files (emd modes).")
@click.option("--top-n", type=int, default=20, show_default=True)
@click.option("--tau", type=float, default=0.7, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), help="CSV matrix (stdout when omitted).")
@click.option("--pairs", type=click.Path(dir_okay=False), help="JSON file for per-cell errors.")
@_oracle_options
@_guarded
def similarity_cmd(mode, data, trees, top_n, tau, out, pairs, record, replay, providers, workers):
    """Pairwise BSS or EMD between groups."""
    if mode == "bss":
        if not data:
            raise ConfigError("bss mode needs --data")
        corpus = bench.ingest(data).corpus
        items = [(g, corpus[g]) for g in sorted(corpus)]
    else:
        if len(trees) < 2:
            raise ConfigError(f"{mode} needs at least two --trees")
        items = [(Path(p).stem, _load_tree(p)) for p in trees]
    oracle = _oracle(record, replay, providers, workers)
    m = analyze.similarity_matrix(items, mode, oracle, top_n=top_n, tau=tau)
    if out:
        with open(out, "w", newline="", encoding="utf-8") as fh:
            csv.writer(fh, lineterminator="\n").writerows(m.to_csv_rows())
    else:
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerows(m.to_csv_rows())
    if pairs:
        _write_json(pairs, m.errors)


def _truncate(text: str, width: int = DOT_WIDTH) -> str:
    text = " ".join(text.split())
    return text if len(text) <= width else text[: width - 3] + "..."


def _dot_escape(text: str) -> str:
    return text.replace("\\", "\\\\").replace('"', '\\"')


def to_dot(tree: Cdt) -> str:
    """Statements inside node boxes, gate questions on the edges."""
    lines = [f'digraph "{_dot_escape(tree.group)}" {{', "  node [shape=box];"]

    def visit(node: CdtNode) -> None:
        body = [f"{node.id}"] + [_dot_escape(_truncate(s.text)) for s in node.statements]
        lines.append(f'  "{node.id}" [label="' + "\\l".join(body) + '\\l"];')
        for gate, child in node.children:
            visit(child)
            lines.append(f'  "{node.id}" -> "{child.id}" [label="{_dot_escape(_truncate(gate.question))}"];')

    visit(tree.root)
    lines.append("}")
    return "\n".join(lines) + "\n"


@main.command()
@click.option("--tree", "tree_path", required=True, type=click.Path(dir_okay=False, exists=True))
@click.option("--dot", "as_dot", is_flag=True, required=True, help="Render as a DOT graph.")
@click.option("--out", type=click.Path(dir_okay=False))
@_guarded
def export(tree_path, as_dot, out):
    """Export a tree for visualization."""
    text = to_dot(_load_tree(tree_path))
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        click.echo(text, nl=False)


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False, exists=True),
              help="Run config (JSON or YAML).")
@click.option("--out", required=True, type=click.Path(file_okay=False), help="Run directory.")
@click.option("--record", type=click.Path(file_okay=False))
@click.option("--replay", type=click.Path(file_okay=False))
@_guarded
def run(config_path, out, record, replay):
    """Run a whole experiment plan from a config file."""
    cfg = bench.load_config(config_path)
    oracle = make_oracle(cfg.providers, record=record, replay=replay, max_workers=cfg.oracle_workers)
    summary = bench.run_experiment(cfg, oracle, out)
    click.echo(json.dumps({"run_dir": str(summary.run_dir), "predictions": summary.n_predictions,
                           "errors": len(summary.errors)}))


if __name__ == "__main__":  # pragma: no cover
    main()
