"""Command-line entry point: ``semcert <subcommand> [--config f.json] [--a.b value ...]``.

Exit codes: 0 success, 1 internal error, 2 budget/threshold violation,
3 invalid config or input.
"""

from __future__ import annotations

import argparse
import contextlib
import datetime as _dt
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .certainty import Scorer
from .config import PipelineConfig, load_config, set_field
from .errors import (ConfigError, DimensionError, EmptyInputError, FormatError, InsufficientDataError,
                     SemcertError)
from .index import Index, write_run
from .kernels import BACKEND
from .pq import PQCodebook, PQConfig, default_config, train_codebook
from .vectors import EmbeddingSet, read_embeddings

log = logging.getLogger("semcert")

EXIT_OK, EXIT_INTERNAL, EXIT_BUDGET, EXIT_INVALID = 0, 1, 2, 3

COMMANDS = ("train-pq", "score", "search", "simulate", "eval", "monitor")
REQUIRED_PATHS = {
    "train-pq": ("corpus",),
    "score": ("corpus", "queries", "codebook"),
    "search": ("corpus", "queries"),
    "simulate": (),
    "eval": ("corpus", "queries", "qrels", "codebook"),
    "monitor": ("corpus", "queries", "codebook"),
}


class BudgetExceeded(Exception):
    pass


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat()


@contextlib.contextmanager
def _locked(out: Path):
    out.mkdir(parents=True, exist_ok=True)
    lock = out / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise ConfigError(f"output directory {out} is locked by another run", "out") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


class Run:
    """Tracks inputs read and outputs written for the run manifest."""

    def __init__(self, command: str, cfg: PipelineConfig, out: Path):
        self.command, self.cfg, self.out = command, cfg, out
        self.inputs, self.outputs = {}, []
        self.started = _now()

    def read(self, path):
        self.inputs[str(path)] = sha256(path)
        return path

    def wrote(self, path):
        self.outputs.append(Path(path))

    def manifest(self) -> Path:
        out = self.out / "manifest.json"
        doc = {
            "command": self.command,
            "tool_version": __version__,
            "kernel_backend": BACKEND,
            "config": self.cfg.to_dict(),
            "inputs": self.inputs,
            "outputs": {p.name: sha256(p) for p in self.outputs},
            "started": self.started,
            "finished": _now(),
        }
        out.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        return out


# ------------------------------------------------------------------ commands


def _load_set(run: Run, path: str) -> EmbeddingSet:
    return read_embeddings(run.read(path))


def _scorer(run: Run, cfg: PipelineConfig, corpus: EmbeddingSet, cb: PQCodebook) -> Scorer:
    s = cfg.scoring
    if cb.dim != corpus.dim:
        raise DimensionError(f"codebook dimension {cb.dim} != corpus dimension {corpus.dim}")
    return Scorer.calibrate(Index(corpus), cb, k=s.k, eps=s.eps, sigma_mode=s.sigma_mode,
                            combiner=s.combiner, alpha=s.alpha, beta=s.beta,
                            calibration_size=s.calibration_size, seed=cfg.seed)


def _check_queries(queries: EmbeddingSet, dim: int, what: str):
    if len(queries) and queries.dim != dim:
        raise DimensionError(f"query dimension {queries.dim} != {what} dimension {dim}")


def cmd_train_pq(cfg: PipelineConfig, run: Run) -> int:
    corpus = _load_set(run, cfg.paths.corpus)
    p = cfg.pq
    if p.num_subspaces is None:
        pq_cfg = default_config(corpus.dim, cfg.seed)
        pq_cfg = PQConfig(pq_cfg.num_subspaces, p.centroids_per_subspace, p.kmeans_iters, cfg.seed)
    else:
        pq_cfg = PQConfig(p.num_subspaces, p.centroids_per_subspace, p.kmeans_iters, cfg.seed)
    pq_cfg.validate(corpus.dim)
    train = corpus
    if p.train_sample is not None and p.train_sample < len(corpus):
        rows = np.sort(np.random.default_rng(cfg.seed).choice(len(corpus), p.train_sample, replace=False))
        train = corpus.subset(rows)
    log.info("training PQ m=%d k=%d on %d rows", pq_cfg.num_subspaces, pq_cfg.centroids_per_subspace, len(train))
    cb = train_codebook(train, pq_cfg)
    out = run.out / "codebook.scpq"
    cb.save(out)
    run.wrote(out)
    return EXIT_OK


def cmd_score(cfg: PipelineConfig, run: Run) -> int:
    corpus = _load_set(run, cfg.paths.corpus)
    queries = _load_set(run, cfg.paths.queries)
    cb = PQCodebook.load(run.read(cfg.paths.codebook))
    _check_queries(queries, cb.dim, "codebook")
    out = run.out / "scores.jsonl"
    with out.open("w", encoding="utf-8") as fh:
        if len(queries):
            scorer = _scorer(run, cfg, corpus, cb)
            for qid, q in zip(queries.ids, queries.vectors):
                fh.write(json.dumps(scorer.score(q, qid).to_dict()) + "\n")
    run.wrote(out)
    log.info("scored %d queries", len(queries))
    return EXIT_OK


def cmd_search(cfg: PipelineConfig, run: Run) -> int:
    corpus = _load_set(run, cfg.paths.corpus)
    queries = _load_set(run, cfg.paths.queries)
    _check_queries(queries, corpus.dim, "corpus")
    k = cfg.search.k or cfg.scoring.k
    cb = None
    if cfg.search.mode == "adc":
        if not cfg.paths.codebook:
            raise ConfigError("adc search needs paths.codebook", "paths.codebook")
        cb = PQCodebook.load(run.read(cfg.paths.codebook))
    ix = Index(corpus, cb)
    search = ix.search_adc if cb is not None else ix.search_exact
    results = {qid: search(q, k) for qid, q in zip(queries.ids, queries.vectors)}
    out = run.out / "run.txt"
    write_run(out, results, cfg.search.tag)
    run.wrote(out)
    return EXIT_OK


def cmd_simulate(cfg: PipelineConfig, run: Run) -> int:
    from .gravity import generate_instance, write_instance

    s = cfg.simulation
    inst = generate_instance(s.num_wells, s.docs_per_well, s.queries_per_well, s.dim,
                             tuple(s.variance_bands), cfg.seed, s.separation, s.spread)
    for p in write_instance(run.out, inst):
        run.wrote(p)
    log.info("simulated %d docs, %d queries", len(inst.corpus), len(inst.queries))
    return EXIT_OK


def cmd_eval(cfg: PipelineConfig, run: Run) -> int:
    from .evaluation import (AblationConfig, DEFAULT_ABLATION, EvalReport, ablation_rows, bootstrap_ci,
                             correlate, gated_recall, measure_overhead, paired_test, read_qrels, recall_at_k,
                             run_retrieval)
    from .errors import DegenerateError
    from .index import read_run

    corpus = _load_set(run, cfg.paths.corpus)
    queries = _load_set(run, cfg.paths.queries)
    qrels = read_qrels(run.read(cfg.paths.qrels))
    cb = PQCodebook.load(run.read(cfg.paths.codebook))
    _check_queries(queries, cb.dim, "codebook")
    missing = [q for q in queries.ids if q not in qrels]
    if missing:
        raise FormatError(f"{len(missing)} queries have no relevance judgments, e.g. {missing[0]}")
    if len(queries) < 3:
        raise InsufficientDataError("eval needs at least 3 queries")
    k, e = cfg.scoring.k, cfg.eval
    scorer = _scorer(run, cfg, corpus, cb)
    res = run_retrieval(scorer, queries, qrels, k, e.expand_factor)
    base, expanded = res.base_recall, res.expanded_recall
    if cfg.paths.run:
        ranked = read_run(run.read(cfg.paths.run))
        base = np.array([recall_at_k(ranked.get(q, []), qrels[q], k) for q in queries.ids])
        expanded = np.array([recall_at_k(ranked.get(q, []), qrels[q], k * e.expand_factor, denominator_k=k)
                             for q in queries.ids])
    ids = list(queries.ids)
    recalls = dict(zip(ids, base.tolist()))
    combined = {s.query_id: s.combined for s in res.scores}
    try:
        pearson, spearman = correlate(combined, recalls)
    except DegenerateError:
        pearson = spearman = float("nan")
    configs = list(DEFAULT_ABLATION)
    try:
        rows = ablation_rows(res.scores, base, expanded, configs, e.gate_fraction)
    except DegenerateError:
        rows = []
    gated = np.array(base)
    n_gate = int(round(e.gate_fraction * len(ids)))
    order = np.argsort(np.array([s.combined for s in res.scores]), kind="stable")[:n_gate]
    gated[order] = expanded[order]
    try:
        p_value = paired_test(dict(zip(ids, gated.tolist())), recalls)
    except (DegenerateError, InsufficientDataError):
        p_value = None
    timings = measure_overhead(queries, scorer.index, scorer, k, e.repetitions) if e.timings else None
    report = EvalReport(per_query_recall=recalls, mean_recall=float(np.mean(base)), pearson=pearson,
                        spearman=spearman, bootstrap_ci=bootstrap_ci(base, e.resamples, cfg.seed),
                        ablation_rows=rows, p_value=p_value, timings=timings, k=k)
    for name, text in (("report.json", report.to_json()), ("report.txt", report.to_text())):
        (run.out / name).write_text(text)
        run.wrote(run.out / name)
    log.info("mean Recall@%d %.4f, spearman %.3f", k, report.mean_recall, spearman)
    return EXIT_OK


def cmd_monitor(cfg: PipelineConfig, run: Run) -> int:
    from .monitor import MonitorConfig, QualityMonitor

    corpus = _load_set(run, cfg.paths.corpus)
    queries = _load_set(run, cfg.paths.queries)
    cb = PQCodebook.load(run.read(cfg.paths.codebook))
    _check_queries(queries, cb.dim, "codebook")
    m = cfg.monitor
    mcfg = MonitorConfig(m.threshold, m.combiner, m.alpha, m.beta, m.policy, m.expand_factor,
                         m.expand_cap, m.window)
    events = run.out / "events.jsonl"
    summary_path = run.out / "summary.json"
    summary = {"queries": 0, "alerts": 0, "alert_rate": 0.0, "threshold": m.threshold, "windows": []}
    with events.open("w", encoding="utf-8") as fh:
        if len(queries):
            monitor = QualityMonitor(mcfg, _scorer(run, cfg, corpus, cb))
            for qid, q in zip(queries.ids, queries.vectors):
                event, _ = monitor.process_query(q, qid)
                fh.write(json.dumps(event.to_dict()) + "\n")
            summary = monitor.drain_stats()
    summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    run.wrote(events)
    run.wrote(summary_path)
    if m.max_alert_rate is not None and summary["alert_rate"] > m.max_alert_rate:
        raise BudgetExceeded(f"alert rate {summary['alert_rate']:.3f} exceeds budget {m.max_alert_rate}")
    return EXIT_OK


HANDLERS = {
    "train-pq": cmd_train_pq,
    "score": cmd_score,
    "search": cmd_search,
    "simulate": cmd_simulate,
    "eval": cmd_eval,
    "monitor": cmd_monitor,
}


# ------------------------------------------------------------------ parsing


def _parse_overrides(extra):
    """``--a.b value`` / ``--a.b=value`` pairs; anything else is an unknown flag."""
    pairs, i = [], 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--") or len(tok) <= 2:
            raise ConfigError(f"unexpected argument {tok!r}", "argv")
        key = tok[2:]
        if "=" in key:
            key, value = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extra):
                raise ConfigError("missing value", key)
            value = extra[i + 1]
            i += 2
        pairs.append((key.replace("-", "_"), value))
    return pairs


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="semcert", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"semcert {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, help="global seed (u64)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--quiet", action="store_true")
        if name == "monitor":
            p.add_argument("--max-alert-rate", type=float, dest="max_alert_rate")
    return parser


def prepare(argv):
    """Parse argv into (command, config, out dir) without touching the filesystem for writing."""
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    cfg = load_config(args.config)
    for key, value in _parse_overrides(extra):
        set_field(cfg, key, value)
    if args.seed is not None:
        set_field(cfg, "seed", args.seed)
    if getattr(args, "max_alert_rate", None) is not None:
        set_field(cfg, "monitor.max_alert_rate", args.max_alert_rate)
    cfg.validate()
    for name in REQUIRED_PATHS[args.command]:
        path = getattr(cfg.paths, name)
        if not path:
            raise ConfigError("required for " + args.command, f"paths.{name}")
        if not Path(path).is_file():
            raise ConfigError(f"file {path} does not exist", f"paths.{name}")
    for name in ("run",):
        path = getattr(cfg.paths, name)
        if path and not Path(path).is_file():
            raise ConfigError(f"file {path} does not exist", f"paths.{name}")
    return args, cfg


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args, cfg = prepare(argv)
    except SystemExit as exc:  # argparse usage errors
        return EXIT_INVALID if exc.code not in (0, None) else EXIT_OK
    except SemcertError as exc:
        print(f"semcert: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    out = Path(args.out)
    try:
        with _locked(out):
            run = Run(args.command, cfg, out)
            code = EXIT_OK
            try:
                code = HANDLERS[args.command](cfg, run)
            except BudgetExceeded as exc:
                log.warning("%s", exc)
                code = EXIT_BUDGET
            run.manifest()
            return code
    except (ConfigError, DimensionError, FormatError, EmptyInputError, InsufficientDataError,
            FileNotFoundError) as exc:
        print(f"semcert: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except SemcertError as exc:
        print(f"semcert: error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception:  # noqa: BLE001
        log.exception("internal error")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
