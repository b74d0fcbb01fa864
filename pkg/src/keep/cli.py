"""Command-line entry point: one subcommand per pipeline stage.

Every stage writes its outputs plus a JSON manifest holding the resolved
configuration, the seed and SHA-256 hashes of all inputs and outputs.
Exit codes: 2 missing input file, 3 invalid configuration or usage,
4 numerical failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import fields
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

import numpy as np

from . import embedding as embio
from .cooccurrence import build_cooccurrence, load_matrix, read_patients, save_matrix, write_patients
from .embedding import EmbeddingMatrix
from .evaluation import (
    EvalReport,
    impact_assessment,
    intrinsic_discrimination,
    rank_methods,
    read_relationship_sets,
    write_relationship_sets,
)
from .exceptions import ConfigError, DivergenceError, KeepError, OntologyError
from .glove import KeepConfig, export_final, train_keep
from .ontology import information_content, load_ontology, prune_to_depth, read_edge_list, RollUpMap
from .sgns import SgnsConfig, train_sgns
from .synthdata import SynthConfig, generate
from .walks import WalkConfig, generate_walks, load_corpus, save_corpus

logger = logging.getLogger("keep")

EXIT_MISSING = 2
EXIT_CONFIG = 3
EXIT_NUMERIC = 4


class MissingInput(Exception):
    def __init__(self, path):
        super().__init__(f"input file not found: {path}")
        self.path = path


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for missing files here
    def error(self, message):
        raise UsageError(message)


def _tool_version():
    try:
        return version("artifact")
    except PackageNotFoundError:
        return "0+unknown"


def sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _need(path):
    p = Path(path)
    if not p.exists():
        raise MissingInput(str(path))
    return p


def _jsonable(v):
    if isinstance(v, Path):
        return str(v)
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def write_manifest(target, stage, args, inputs, outputs):
    """Manifest next to a file output (``<out>.manifest.json``) or inside a directory."""
    target = Path(target)
    path = target / "manifest.json" if target.is_dir() else Path(f"{target}.manifest.json")
    skip = {"func", "command", "config", "verbose"}
    manifest = {
        "stage": stage,
        "tool_version": _tool_version(),
        "seed": getattr(args, "seed", None),
        "config": {k: _jsonable(v) for k, v in sorted(vars(args).items()) if k not in skip},
        "inputs": {str(p): sha256(p) for p in inputs},
        "outputs": {str(p): sha256(p) for p in outputs},
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def read_config_file(path):
    """``key=value`` lines; blank lines and ``#`` comments ignored."""
    out = {}
    with open(_need(path), encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}", "expected key=value")
            key, value = (x.strip() for x in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def _apply_config(parser, args, argv):
    """Re-parse with config-file values as defaults so explicit flags still win."""
    values = read_config_file(args.config)
    actions = {a.dest: a for a in parser._actions}
    defaults = {}
    for key, raw in values.items():
        action = actions.get(key)
        if action is None or key in ("func", "config", "help"):
            raise ConfigError(key, "unknown configuration key")
        if isinstance(action, argparse.BooleanOptionalAction):
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ConfigError(key, f"expected a boolean, got {raw!r}")
            defaults[key] = raw.lower() in ("true", "1", "yes")
        elif action.type is not None:
            try:
                defaults[key] = action.type(raw)
            except (TypeError, ValueError):
                raise ConfigError(key, f"cannot parse {raw!r}") from None
        else:
            defaults[key] = raw
    parser.set_defaults(**defaults)
    return parser.parse_args(argv)


def _default_threads():
    raw = os.environ.get("KEEP_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError("KEEP_THREADS", f"expected an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError("KEEP_THREADS", f"must be >= 1, got {n}")
    return n


def _stochastic(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--deterministic", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads (default: $KEEP_THREADS or 1)")


# ---------------------------------------------------------------- graph io

def _read_edges_with_root(path):
    root = None
    lines = []
    with open(_need(path), encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("#root="):
                root = int(line[len("#root="):])
            lines.append(line)
    return read_edge_list(lines), root


def _write_edges(path, edges, root):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"#root={root}\n")
        for c, p in edges:
            fh.write(f"{c}\t{p}\n")


def _read_labels(path):
    labels = {}
    if path is None:
        return labels
    with open(_need(path), encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line and not line.startswith("#"):
                parts = line.split("\t")
                labels[int(parts[0])] = parts[1] if len(parts) > 1 else ""
    return labels


class Graph:
    """Artifacts written by ``build-graph``: pruned ontology, vocabulary and roll-up map."""

    def __init__(self, directory):
        d = Path(directory)
        if not d.is_dir():
            raise MissingInput(str(d))
        self.files = [_need(d / "edges.tsv"), _need(d / "vocab.tsv"), _need(d / "rollup.tsv")]
        edges, root = _read_edges_with_root(d / "edges.tsv")
        ids, labels = [], {}
        with open(d / "vocab.tsv", encoding="utf-8") as fh:
            for k, line in enumerate(fh):
                idx, ext, *lab = line.rstrip("\n").split("\t")
                if int(idx) != k:
                    raise OntologyError(f"vocab.tsv row {k} has index {idx}")
                ids.append(int(ext))
                labels[int(ext)] = lab[0] if lab else ""
        if root is None:
            raise OntologyError(f"{d / 'edges.tsv'}: missing '#root=' header")
        self.ont = load_ontology(edges, root, labels=labels, nodes=ids)
        if not np.array_equal(self.ont.ids, np.array(ids, dtype=np.int64)):
            raise OntologyError("vocab.tsv does not match the pruned edge list")
        mapping = {}
        with open(d / "rollup.tsv", encoding="utf-8") as fh:
            for line in fh:
                if line.strip() and not line.startswith("#"):
                    src, dst = line.split("\t")
                    mapping.setdefault(int(src), []).append(int(dst))
        self.rollup = RollUpMap({k: tuple(sorted(v)) for k, v in mapping.items()})
        self.vocab = {int(e): i for i, e in enumerate(self.ont.ids)}


def _load_embedding(path, graph=None, kind="final"):
    ids = graph.ont.ids if graph is not None else None
    emb = embio.load(_need(path), kind=kind, ids=ids)
    if graph is not None and not np.array_equal(emb.ids, graph.ont.ids):
        emb = emb.reindex(graph.ont.ids)
    return emb


# ---------------------------------------------------------------- stages

def cmd_gen_synth(args):
    cfg = SynthConfig(n_concepts=args.n_concepts, branching=args.branching,
                      max_depth_generated=args.max_depth_generated, n_patients=args.n_patients,
                      n_clusters=args.n_clusters, cluster_size=args.cluster_size,
                      within_cluster_rate=args.within_cluster_rate,
                      background_rate=args.background_rate, repeat_mean=args.repeat_mean,
                      rng_seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ont, truth, patients = generate(cfg)
    files = [out / "ontology.tsv", out / "labels.tsv", out / "patients.tsv",
             out / "relationships.tsv", out / "truth.json"]
    _write_edges(files[0], ont.external_edges(), ont.root_id)
    with open(files[1], "w", encoding="utf-8", newline="\n") as fh:
        for c in ont.ids:
            fh.write(f"{int(c)}\t{ont.label(int(c))}\n")
    write_patients(patients, files[2])
    write_relationship_sets(truth.relationship_sets, files[3])
    with open(files[4], "w", encoding="utf-8", newline="\n") as fh:
        json.dump(truth.to_dict(), fh, sort_keys=True)
        fh.write("\n")
    write_manifest(out, "gen-synth", args, [], files)
    logger.info("wrote %d concepts, %d patients to %s", ont.n_nodes, len(patients), out)


def cmd_build_graph(args):
    edges, root = _read_edges_with_root(args.edges)
    if args.root is not None:
        root = args.root
    if root is None:
        raise ConfigError("root", "not given and no '#root=' header in the edge list")
    labels = _read_labels(args.labels)
    ont = load_ontology(edges, root, labels=labels)
    pruned, rollup = prune_to_depth(ont, args.max_depth)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files = [out / "edges.tsv", out / "vocab.tsv", out / "rollup.tsv"]
    _write_edges(files[0], pruned.external_edges(), pruned.root_id)
    with open(files[1], "w", encoding="utf-8", newline="\n") as fh:
        for k, c in enumerate(pruned.ids):
            fh.write(f"{k}\t{int(c)}\t{pruned.label(int(c))}\n")
    with open(files[2], "w", encoding="utf-8", newline="\n") as fh:
        for src in sorted(rollup.mapping):
            for dst in rollup[src]:
                fh.write(f"{src}\t{dst}\n")
    inputs = [Path(args.edges)] + ([Path(args.labels)] if args.labels else [])
    write_manifest(out, "build-graph", args, inputs, files)
    logger.info("retained %d of %d concepts (%d rolled up)", pruned.n_nodes, ont.n_nodes, len(rollup))


def cmd_walk(args):
    graph = Graph(args.graph)
    cfg = WalkConfig(walk_length=args.walk_length, walks_per_node=args.walks_per_node,
                     p=args.p, q=args.q, rng_seed=args.seed)
    corpus = generate_walks(graph.ont, cfg, n_jobs=args.threads)
    save_corpus(corpus, args.out)
    write_manifest(args.out, "walk", args, graph.files, [Path(args.out)])
    logger.info("wrote %d walks (%d tokens)", len(corpus), corpus.n_tokens)


def cmd_train_n2v(args):
    graph = Graph(args.graph)
    corpus = load_corpus(_need(args.walks), vocab_size=graph.ont.n_nodes)
    cfg = SgnsConfig(dim=args.dim, window=args.window, negatives_per_positive=args.negatives,
                     min_count=args.min_count, epochs=args.epochs,
                     learning_rate=args.learning_rate, batch_size=args.batch_size,
                     rng_seed=args.seed, deterministic=args.deterministic)
    emb, trace = train_sgns(corpus, cfg, n_jobs=args.threads)
    emb = EmbeddingMatrix(emb.values, ids=graph.ont.ids, kind="anchor")
    embio.save(emb, args.out)
    write_manifest(args.out, "train-n2v", args, graph.files + [Path(args.walks)], [Path(args.out)])
    logger.info("sgns loss per epoch: %s", ", ".join(f"{x:.4f}" for x in trace))


def cmd_build_cooc(args):
    graph = Graph(args.graph)
    records = read_patients(_need(args.patients))
    X = build_cooccurrence(records, graph.rollup, graph.vocab,
                           on_unknown="error" if args.strict else "skip")
    save_matrix(X, args.out)
    write_manifest(args.out, "build-cooc", args, graph.files + [Path(args.patients)], [Path(args.out)])
    logger.info("%d patients, %d nonzero pairs", X.n_patients, X.nnz)


def _keep_config(args, lam):
    return KeepConfig(dim=args.dim, learning_rate=args.learning_rate, epochs=args.epochs,
                      batch_size=args.batch_size, x_max_percentile=args.x_max_percentile,
                      alpha=args.alpha, lam=lam, weight_decay=args.weight_decay,
                      use_bias=args.bias, deterministic=args.deterministic, rng_seed=args.seed)


def _train_and_write(args, anchor, lam, stage, inputs):
    X = load_matrix(_need(args.cooc))
    graph = Graph(args.graph) if args.graph else None
    if graph is not None and graph.ont.n_nodes != X.vocab_size:
        raise ConfigError("graph", f"vocabulary has {graph.ont.n_nodes} concepts, matrix has {X.vocab_size}")
    if anchor is not None:
        anchor = _load_embedding(anchor, graph, kind="anchor")
        if graph is None and anchor.vocab_size != X.vocab_size:
            raise ConfigError("anchor", f"{anchor.vocab_size} rows, matrix has {X.vocab_size}")
        anchor = EmbeddingMatrix(anchor.values.astype(np.float64), ids=anchor.ids, kind="anchor")
    model = train_keep(X, anchor, _keep_config(args, lam), n_jobs=args.threads)
    if model.ids is None:
        model.ids = graph.ont.ids if graph is not None else np.arange(X.vocab_size)
    embio.save(export_final(model), args.out)
    trace = Path(f"{args.out}.loss.csv")
    with open(trace, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("epoch,loss\n")
        for e, loss in enumerate(model.loss_trace, 1):
            fh.write(f"{e},{loss:.17g}\n")
    inputs = [Path(args.cooc)] + inputs + (graph.files if graph is not None else [])
    write_manifest(args.out, stage, args, inputs, [Path(args.out), trace])
    logger.info("final loss %.6g after %d epochs", model.loss_trace[-1], len(model.loss_trace))


def cmd_train_keep(args):
    if args.lam < 0:
        raise ConfigError("lambda", f"must be >= 0, got {args.lam}")
    _train_and_write(args, args.anchor, args.lam, "train-keep", [Path(args.anchor)])


def cmd_train_glove(args):
    _train_and_write(args, None, 0.0, "train-glove", [])


def _method_name(path, name=None):
    return name or Path(path).name.split(".")[0]


def cmd_eval_impact(args):
    graph = Graph(args.graph)
    X = load_matrix(_need(args.cooc))
    emb = _load_embedding(args.embedding, graph)
    ic = information_content(graph.ont)
    result = impact_assessment(emb, graph.ont, ic, X, repetitions=args.repetitions,
                               seed=args.seed, method=args.method)
    report = EvalReport()
    report.add_correlations(_method_name(args.embedding, args.name), result)
    report.meta["impact"] = {"repetitions": args.repetitions, "method": args.method,
                             "n_codes": result.n_codes}
    report.save(args.out)
    write_manifest(args.out, "eval-impact", args,
                   [Path(args.embedding), Path(args.cooc)] + graph.files, [Path(args.out)])
    print(report.render_text(), end="")


def _discrimination(report, name, emb, relsets, args):
    for k, rs in enumerate(relsets):
        res = intrinsic_discrimination(emb, rs, null_size=args.null_size,
                                       bootstrap_iters=args.bootstrap_iters,
                                       seed=args.seed + k, repetitions=args.repetitions)
        report.add_discrimination(name, rs.core, res)


def cmd_eval_intrinsic(args):
    graph = Graph(args.graph) if args.graph else None
    emb = _load_embedding(args.embedding, graph)
    relsets = read_relationship_sets(_need(args.relationships))
    report = EvalReport()
    _discrimination(report, _method_name(args.embedding, args.name), emb, relsets, args)
    report.meta["intrinsic"] = {"null_size": args.null_size, "bootstrap_iters": args.bootstrap_iters,
                                "repetitions": args.repetitions}
    report.save(args.out)
    inputs = [Path(args.embedding), Path(args.relationships)] + (graph.files if graph else [])
    write_manifest(args.out, "eval-intrinsic", args, inputs, [Path(args.out)])
    print(report.render_text(), end="")


def _parse_named(specs):
    out = {}
    for spec in specs:
        name, sep, path = spec.partition("=")
        if not sep:
            name, path = _method_name(spec), spec
        if name in out:
            raise ConfigError("embedding", f"duplicate method name {name!r}")
        out[name] = path
    return out


def cmd_compare(args):
    named = _parse_named(args.embedding)
    if len(named) < 2:
        raise ConfigError("embedding", "compare needs at least two embeddings")
    graph = Graph(args.graph) if args.graph else None
    relsets = read_relationship_sets(_need(args.relationships))
    report = EvalReport()
    for name, path in named.items():
        _discrimination(report, name, _load_embedding(path, graph), relsets, args)
    if args.cooc:
        if graph is None:
            raise ConfigError("graph", "--cooc requires --graph")
        X = load_matrix(_need(args.cooc))
        ic = information_content(graph.ont)
        for name, path in named.items():
            emb = _load_embedding(path, graph)
            report.add_correlations(name, impact_assessment(
                emb, graph.ont, ic, X, repetitions=args.impact_repetitions, seed=args.seed))
    report.add_ranking(rank_methods(report.discrimination_scores()))
    report.save(args.out)
    inputs = [Path(p) for p in named.values()] + [Path(args.relationships)]
    inputs += (graph.files if graph else []) + ([Path(args.cooc)] if args.cooc else [])
    write_manifest(args.out, "compare", args, inputs, [Path(args.out)])
    print(report.render_text(), end="")


def cmd_report(args):
    report = EvalReport()
    for path in args.reports:
        report.merge(EvalReport.load(_need(path)))
    text = report.render_text()
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    print(text, end="")


# ---------------------------------------------------------------- parser

def _keep_options(p, with_lambda):
    d = KeepConfig()
    p.add_argument("--cooc", required=True, help="co-occurrence matrix from build-cooc")
    p.add_argument("--graph", help="build-graph directory (attaches concept ids)")
    p.add_argument("--out", required=True)
    p.add_argument("--dim", type=int, default=d.dim)
    p.add_argument("--learning-rate", type=float, default=d.learning_rate)
    p.add_argument("--epochs", type=int, default=d.epochs)
    p.add_argument("--batch-size", type=int, default=d.batch_size)
    p.add_argument("--x-max-percentile", type=float, default=d.x_max_percentile)
    p.add_argument("--alpha", type=float, default=d.alpha)
    p.add_argument("--weight-decay", type=float, default=d.weight_decay)
    p.add_argument("--bias", action=argparse.BooleanOptionalAction, default=d.use_bias)
    if with_lambda:
        p.add_argument("--lambda", dest="lam", type=float, default=d.lam)
    _stochastic(p)


def _intrinsic_options(p):
    p.add_argument("--relationships", required=True)
    p.add_argument("--graph")
    p.add_argument("--null-size", type=int, default=1000)
    p.add_argument("--bootstrap-iters", type=int, default=1000)
    p.add_argument("--repetitions", type=int, default=250)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)


def build_parser():
    parser = _Parser(prog="keep", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="key=value file of option defaults")
        p.set_defaults(func=func)
        return p

    s = SynthConfig()
    p = add("gen-synth", cmd_gen_synth, "synthetic ontology, patients and planted relationships")
    p.add_argument("--out", required=True, help="output directory")
    for f in fields(SynthConfig):
        if f.name in ("rng_seed", "extra_parent_fraction", "prune_depth", "n_days"):
            continue
        p.add_argument("--" + f.name.replace("_", "-"), type=type(getattr(s, f.name)),
                       default=getattr(s, f.name))
    _stochastic(p)

    p = add("build-graph", cmd_build_graph, "validate, prune and index an is-a edge list")
    p.add_argument("--edges", required=True)
    p.add_argument("--root", type=int)
    p.add_argument("--labels")
    p.add_argument("--max-depth", type=int, default=5)
    p.add_argument("--out", required=True, help="output directory")

    w = WalkConfig()
    p = add("walk", cmd_walk, "second-order random walks over the pruned graph")
    p.add_argument("--graph", required=True)
    p.add_argument("--out", required=True, help="corpus file (.gz to compress)")
    p.add_argument("--walk-length", type=int, default=w.walk_length)
    p.add_argument("--walks-per-node", type=int, default=w.walks_per_node)
    p.add_argument("--p", type=float, default=w.p)
    p.add_argument("--q", type=float, default=w.q)
    _stochastic(p)

    c = SgnsConfig()
    p = add("train-n2v", cmd_train_n2v, "skip-gram anchors from a walk corpus")
    p.add_argument("--walks", required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--out", required=True, help="embedding file (.bin for binary)")
    p.add_argument("--dim", type=int, default=c.dim)
    p.add_argument("--window", type=int, default=c.window)
    p.add_argument("--negatives", type=int, default=c.negatives_per_positive)
    p.add_argument("--min-count", type=int, default=c.min_count)
    p.add_argument("--epochs", type=int, default=c.epochs)
    p.add_argument("--learning-rate", type=float, default=c.learning_rate)
    p.add_argument("--batch-size", type=int, default=c.batch_size)
    _stochastic(p)

    p = add("build-cooc", cmd_build_cooc, "patient-level co-occurrence counts")
    p.add_argument("--patients", required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--strict", action="store_true", help="fail on unknown concepts")

    p = add("train-keep", cmd_train_keep, "anchored co-occurrence embeddings")
    p.add_argument("--anchor", required=True)
    _keep_options(p, with_lambda=True)

    p = add("train-glove", cmd_train_glove, "plain GloVe baseline")
    _keep_options(p, with_lambda=False)

    p = add("eval-impact", cmd_eval_impact, "cosine vs Resnik / co-occurrence correlation")
    p.add_argument("--embedding", required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--cooc", required=True)
    p.add_argument("--repetitions", type=int, default=250)
    p.add_argument("--method", choices=("spearman", "pearson"), default="spearman")
    p.add_argument("--name")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)

    p = add("eval-intrinsic", cmd_eval_intrinsic, "known-relationship discrimination")
    p.add_argument("--embedding", required=True)
    p.add_argument("--name")
    _intrinsic_options(p)

    p = add("compare", cmd_compare, "rank several embeddings across relationship sets")
    p.add_argument("--embedding", action="append", required=True, metavar="NAME=PATH")
    p.add_argument("--cooc", help="also run the impact assessment (needs --graph)")
    p.add_argument("--impact-repetitions", type=int, default=25)
    _intrinsic_options(p)

    p = add("report", cmd_report, "render JSON reports as text tables")
    p.add_argument("reports", nargs="+")
    p.add_argument("--out")
    return parser


def _run(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        sub = parser._subparsers._group_actions[0].choices[args.command]
        verbose, command = args.verbose, args.command
        args = _apply_config(sub, args, argv[argv.index(command) + 1:])
        args.verbose, args.command = verbose, command
    if hasattr(args, "threads"):
        if args.threads is None:
            args.threads = _default_threads()
        if args.threads < 1:
            raise ConfigError("threads", f"must be >= 1, got {args.threads}")
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    args.func(args)


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        _run(argv)
    except MissingInput as e:
        print(f"keep: error: {e}", file=sys.stderr)
        return EXIT_MISSING
    except FileNotFoundError as e:
        print(f"keep: error: input file not found: {e.filename}", file=sys.stderr)
        return EXIT_MISSING
    except UsageError as e:
        print(f"keep: error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as e:
        print(f"keep: error: invalid configuration: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DivergenceError, FloatingPointError) as e:
        print(f"keep: error: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (KeepError, ValueError) as e:
        print(f"keep: error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    return 0


if __name__ == "__main__":
    sys.exit(main())
