"""Command-line entry points: decode, train, evaluate, compare, rescore.

Settings come from an optional flat ``key = value`` config file; any flag
given on the command line wins over the file. Exit codes: 0 success,
1 internal error, 2 usage or resource error.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

from . import __version__
from .decoder import DecoderConfig, decode_corpus, load_grammar, load_lm, rescore_nbest
from .decoder.search import DecodeError
from .features import FormatError, ParallelCorpus, read_lines, read_nbest, write_nbest
from .metrics import bootstrap_significance, corpus_stats, format_breakdown
from .network import load_model, model_to_string, parse_scorer_kind
from .tuning import (REPORT_HEADER, Criterion, IterationReport, OptimizationError,
                     OptimizerSettings, TrainerConfig, read_pool, train, write_pool)

logger = logging.getLogger("nlsmt")

EXIT_OK, EXIT_INTERNAL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    """Bad input from the user: missing file, malformed config, misaligned data."""


def _bool(text):
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _floats(text):
    return [float(v) for v in str(text).replace(",", " ").split()]


def _ints(text):
    return [int(v) for v in str(text).replace(",", " ").split()]


# key -> (type, default).
SETTINGS = {
    "grammar": (str, None),
    "lm": (str, None),
    "source": (str, None),
    "refs": (str, None),          # comma separated reference files
    "model": (str, None),
    "scorer": (str, "standard:20"),
    "criterion": (str, "bw"),
    "max_iterations": (int, 10),
    "nbest": (int, 20),
    "beam": (int, 20),
    "max_span": (int, 10),
    "l1": (float, 1e-4),
    "l1_sweep": (_floats, [0.01, 0.001, 0.0001, 0.00001]),
    "hidden_sizes": (_ints, [20, 30, 50]),
    "w_current": (float, 1.0),
    "w_past": (float, 0.1),
    "pw_samples": (int, 5000),
    "pw_threshold": (float, 0.05),
    "pw_keep": (int, 50),
    "current_only": (_bool, False),
    "max_evaluations": (int, 200),
    "tolerance": (float, 1e-6),
    "seed": (int, 1),
    "threads": (int, 1),
    "unknown_penalty": (float, -10.0),
    "allow_null": (_bool, False),
    "draws": (int, 1000),
}


def read_config(path):
    values = {}
    try:
        with open(path, encoding="utf-8") as f:
            lines = f.readlines()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or key not in SETTINGS:
            raise UsageError(f"{path}:{lineno}: unknown or malformed setting {line!r}")
        values[key] = value.strip()
    return values


def resolve(args):
    """Merge defaults, config file and flags into one namespace of typed values."""
    merged = {k: default for k, (_, default) in SETTINGS.items()}
    if getattr(args, "config", None):
        for k, v in read_config(args.config).items():
            try:
                merged[k] = SETTINGS[k][0](v)
            except ValueError as exc:
                raise UsageError(f"{args.config}: bad value for {k}: {exc}") from None
    for k in SETTINGS:
        v = getattr(args, k, None)
        if v is not None:
            merged[k] = v
    return argparse.Namespace(**merged)


def _need(cfg, *keys):
    for k in keys:
        value = getattr(cfg, k)
        if value is None:
            raise UsageError(f"missing setting {k!r} (flag --{k.replace('_', '-')} "
                             "or config key)")
        paths = value.split(",") if k == "refs" else [value]
        for p in paths:
            if k in ("grammar", "lm", "source", "refs", "model") and not os.path.exists(p):
                raise UsageError(f"{k} file not found: {p}")


def _decoder_config(cfg):
    return DecoderConfig(beam=cfg.beam, nbest=cfg.nbest, unknown_penalty=cfg.unknown_penalty,
                         allow_null=cfg.allow_null)


def _trainer_config(cfg):
    crit = Criterion(cfg.criterion, cfg.pw_samples, cfg.pw_threshold, cfg.pw_keep)
    return TrainerConfig(
        criterion=crit, max_iterations=cfg.max_iterations, nbest_size=cfg.nbest,
        beam=cfg.beam, l1=cfg.l1,
        optimizer=OptimizerSettings(cfg.max_evaluations, cfg.tolerance),
        seed=cfg.seed, current_only=cfg.current_only, w_current=cfg.w_current,
        w_past=cfg.w_past, threads=cfg.threads, unknown_penalty=cfg.unknown_penalty,
        allow_null=cfg.allow_null)


def _write_lines(path, lines):
    with open(path, "w", encoding="utf-8") as f:
        for line in lines:
            f.write(line + "\n")


# -- decode / rescore --------------------------------------------------------------

def cmd_decode(args):
    cfg = resolve(args)
    _need(cfg, "grammar", "lm", "source", "model")
    grammar = load_grammar(cfg.grammar, cfg.max_span)
    lm = load_lm(cfg.lm)
    model = load_model(cfg.model)
    sentences = [line.split() for line in read_lines(cfg.source)]
    nbests = decode_corpus(sentences, grammar, lm, model, _decoder_config(cfg), cfg.threads)
    if args.nbest_out:
        with open(args.nbest_out, "w", encoding="utf-8") as f:
            write_nbest(f, nbests)
    one_best = [" ".join(nb.best().tokens) for nb in nbests]
    if args.output:
        _write_lines(args.output, one_best)
    else:
        for line in one_best:
            print(line)
    return EXIT_OK


def cmd_rescore(args):
    cfg = resolve(args)
    _need(cfg, "model")
    if not os.path.exists(args.nbest_in):
        raise UsageError(f"n-best file not found: {args.nbest_in}")
    model = load_model(cfg.model)
    nbests = [rescore_nbest(nb, model) for nb in read_nbest(args.nbest_in)]
    if args.nbest_out:
        with open(args.nbest_out, "w", encoding="utf-8") as f:
            write_nbest(f, nbests)
    one_best = [" ".join(nb.best().tokens) for nb in nbests]
    if args.output:
        _write_lines(args.output, one_best)
    else:
        for line in one_best:
            print(line)
    return EXIT_OK


# -- train ---------------------------------------------------------------------------

CHECKPOINT = "checkpoint.txt"


def _parse_report_line(line):
    it, new, pool, acc, bleu = line.split("\t")[:5]
    return IterationReport(int(it), int(new), int(pool), float(acc), float(bleu))


def _load_checkpoint(outdir):
    path = os.path.join(outdir, CHECKPOINT)
    if not os.path.exists(path):
        return None
    state = {}
    for line in read_lines(path):
        k, _, v = line.partition("=")
        state[k.strip()] = v.strip()
    model = load_model(os.path.join(outdir, "model.txt"))
    with open(os.path.join(outdir, "pool.txt"), encoding="utf-8") as f:
        pool = read_pool(f, os.path.join(outdir, "pool.txt"))
    reports = [_parse_report_line(line)
               for line in read_lines(os.path.join(outdir, "report.tsv"))[1:]]
    return int(state["next_iteration"]), model, pool, reports


def _atomic_write(path, writer):
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        writer(f)
    os.replace(tmp, path)


def cmd_train(args):
    cfg = resolve(args)
    _need(cfg, "grammar", "lm", "source", "refs")
    try:
        topology = parse_scorer_kind(cfg.scorer)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    config = _trainer_config(cfg)
    grammar = load_grammar(cfg.grammar, cfg.max_span)
    lm = load_lm(cfg.lm)
    corpus = ParallelCorpus.from_files(cfg.source, cfg.refs.split(","))
    outdir = args.output_dir
    os.makedirs(outdir, exist_ok=True)

    start = _load_checkpoint(outdir) if args.resume else None
    if start is not None:
        logger.info("resuming at iteration %d", start[0])
    reports = list(start[3]) if start else []

    def checkpoint(i, model, pool, report):
        # written after the iteration completes, so a crash keeps the last good state
        reports.append(report)
        _atomic_write(os.path.join(outdir, "model.txt"),
                      lambda f: f.write(model_to_string(model)))
        _atomic_write(os.path.join(outdir, "pool.txt"), lambda f: write_pool(pool, f))
        _atomic_write(os.path.join(outdir, "report.tsv"), lambda f: f.write(
            "\n".join([REPORT_HEADER] + [r.to_line() for r in reports]) + "\n"))
        _atomic_write(os.path.join(outdir, CHECKPOINT),
                      lambda f: f.write(f"next_iteration = {i + 1}\n"))

    result = train(corpus, grammar, lm, config, topology=topology, on_iteration=checkpoint,
                   start_state=start)
    _write_lines(os.path.join(outdir, "train.1best"), [" ".join(t) for t in result.final_outputs])
    from .plotting import plot_training
    plot_training(result.reports, os.path.join(outdir, "report.png"),
                  title=f"{cfg.scorer}, {cfg.criterion}{' (current only)' if cfg.current_only else ''}")
    print(REPORT_HEADER)
    for r in result.reports:
        print(r.to_line())
    print(f"final\tBLEU = {result.final_bleu:.4f}")
    return EXIT_OK


# -- evaluate / compare --------------------------------------------------------------

def _aligned(hyp_path, ref_paths):
    for p in [hyp_path] + ref_paths:
        if not os.path.exists(p):
            raise UsageError(f"file not found: {p}")
    hyps = read_lines(hyp_path)
    ref_sets = [read_lines(p) for p in ref_paths]
    for p, refs in zip(ref_paths, ref_sets):
        if len(refs) != len(hyps):
            raise UsageError(f"{hyp_path} has {len(hyps)} lines but {p} has {len(refs)}")
    return hyps, [list(r) for r in zip(*ref_sets)]


def cmd_evaluate(args):
    hyps, refs = _aligned(args.hyp, args.refs)
    if not hyps:
        raise UsageError(f"{args.hyp} is empty")
    print(format_breakdown(corpus_stats(hyps, refs)))
    return EXIT_OK


def cmd_compare(args):
    cfg = resolve(args)
    a, refs = _aligned(args.hyp_a, args.refs)
    b, _ = _aligned(args.hyp_b, args.refs)
    if not a:
        raise UsageError("empty test set")
    try:
        p = bootstrap_significance(a, b, refs, draws=cfg.draws, seed=cfg.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    print(f"p = {p:.4f}")
    return EXIT_OK


# -- argument parsing ----------------------------------------------------------------

def _add_settings(p, keys):
    for k in keys:
        typ, default = SETTINGS[k]
        flag = "--" + k.replace("_", "-")
        if typ is _bool:
            p.add_argument(flag, dest=k, action="store_const", const=True, default=None)
        else:
            p.add_argument(flag, dest=k, type=typ, default=None,
                           help=f"default: {default}" if default is not None else None)


def build_parser():
    parser = argparse.ArgumentParser(prog="nlsmt", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    decoding = ["grammar", "lm", "model", "beam", "nbest", "max_span", "threads",
                "unknown_penalty", "allow_null"]

    p = sub.add_parser("decode", help="decode a source file to n-best and 1-best output")
    p.add_argument("--config")
    _add_settings(p, decoding + ["source"])
    p.add_argument("--nbest-out")
    p.add_argument("--output", help="1-best file (stdout if omitted)")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("train", help="iterative pairwise training")
    p.add_argument("--config")
    _add_settings(p, [k for k in SETTINGS if k not in ("model", "draws", "l1_sweep",
                                                       "hidden_sizes")])
    p.add_argument("--output-dir", required=True)
    p.add_argument("--resume", action="store_true",
                   help="continue from the last completed iteration in --output-dir")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="corpus BLEU breakdown")
    p.add_argument("hyp")
    p.add_argument("refs", nargs="+")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", help="paired bootstrap significance of A over B")
    p.add_argument("hyp_a")
    p.add_argument("hyp_b")
    p.add_argument("refs", nargs="+")
    p.add_argument("--config")
    _add_settings(p, ["draws", "seed"])
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("rescore", help="re-rank an n-best file with a model")
    p.add_argument("nbest_in")
    p.add_argument("--config")
    _add_settings(p, ["model"])
    p.add_argument("--nbest-out")
    p.add_argument("--output")
    p.set_defaults(func=cmd_rescore)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, FormatError, OSError, ValueError) as exc:
        print(f"nlsmt {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DecodeError, OptimizationError) as exc:
        print(f"nlsmt {args.command}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception:  # noqa: BLE001
        logger.exception("internal error")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
