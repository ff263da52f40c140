#!/usr/bin/env python3
"""Desk-scale reproduction on the committed synthetic task.

Trains every pair criterion (BR_c, BR, BW, PW) with the standard network and
every scorer (linear, standard, TDN, GN) with BW, then writes a Markdown
report and figures. Numbers are properties of the toy task only.

    python repro/run_repro.py --out repro/out
"""
import argparse
import logging
import os
import time

from nlsmt.metrics import bootstrap_significance
from nlsmt.network import parse_scorer_kind
from nlsmt.plotting import plot_runs
from nlsmt.synthetic import load_task
from nlsmt.tuning import BR, BW, PW, Criterion, TrainerConfig, train

logger = logging.getLogger("repro")

CRITERIA = [("BR_c", BR, True), ("BR", BR, False), ("BW", BW, False), ("PW", PW, False)]
SCORERS = [("linear", "linear"), ("standard m=20", "standard:20"), ("TDN", "tdn"), ("GN", "gn")]


def run(corpus, grammar, lm, criterion, current_only, scorer, args):
    cfg = TrainerConfig(Criterion(criterion), max_iterations=args.iterations, seed=args.seed,
                        current_only=current_only, l1=args.l1, threads=args.threads)
    t0 = time.time()
    result = train(corpus, grammar, lm, cfg, topology=parse_scorer_kind(scorer))
    logger.info("%s %s%s: BLEU %.4f (%.1fs)", scorer, criterion,
                " current-only" if current_only else "", result.final_bleu, time.time() - t0)
    return result


def refs_of(corpus):
    return [[" ".join(r) for r in refs] for refs in corpus.references]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default=os.path.join(os.path.dirname(__file__), "out"))
    ap.add_argument("--iterations", type=int, default=5)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--l1", type=float, default=1e-4)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    os.makedirs(args.out, exist_ok=True)
    grammar, lm, corpus = load_task()
    refs = refs_of(corpus)

    lines = ["# Desk-scale results on the synthetic task", "",
             f"50 sentences, I = {args.iterations}, seed {args.seed}, lambda = {args.l1}, "
             "beam 20, n-best 20. Training-corpus BLEU of the 1-best output after the final "
             "iteration.", ""]

    # criteria, standard network
    by_criterion = {}
    for label, crit, current_only in CRITERIA:
        by_criterion[label] = run(corpus, grammar, lm, crit, current_only, "standard:20", args)
    lines += ["## Pair criteria (standard network, m = 20)", "",
              "| criterion | BLEU iter 0 | final BLEU | pairs / iteration | final pair accuracy |",
              "|---|---|---|---|---|"]
    for label, res in by_criterion.items():
        per_iter = sum(r.new_pairs for r in res.reports) / len(res.reports) / len(corpus)
        lines.append(f"| {label} | {res.reports[0].train_bleu:.4f} | {res.final_bleu:.4f} | "
                     f"{per_iter:.1f} per sentence | {res.reports[-1].pair_accuracy:.3f} |")
    plot_runs({k: v.reports for k, v in by_criterion.items()},
              os.path.join(args.out, "criteria_bleu.png"))
    plot_runs({k: v.reports for k, v in by_criterion.items()},
              os.path.join(args.out, "criteria_accuracy.png"), ylabel="pair accuracy",
              key="pair_accuracy")

    # scorers, BW
    by_scorer = {}
    for label, kind in SCORERS:
        by_scorer[label] = run(corpus, grammar, lm, BW, False, kind, args)
    base = [" ".join(t) for t in by_scorer["linear"].final_outputs]
    lines += ["", "## Scorers (BW criterion)", "",
              "| scorer | hidden nodes | parameters | final BLEU | p (scorer > linear) |",
              "|---|---|---|---|---|"]
    for label, kind in SCORERS:
        res = by_scorer[label]
        topo = parse_scorer_kind(kind)
        out = [" ".join(t) for t in res.final_outputs]
        p = "-" if kind == "linear" else f"{bootstrap_significance(out, base, refs, 1000, 0):.3f}"
        nodes = "-" if topo is None else str(topo.hidden_size)
        params = 11 if topo is None else topo.num_parameters
        lines.append(f"| {label} | {nodes} | {params} | {res.final_bleu:.4f} | {p} |")
    plot_runs({k: v.reports for k, v in by_scorer.items()},
              os.path.join(args.out, "scorers_bleu.png"))

    lines += ["", "Figures: `criteria_bleu.png`, `criteria_accuracy.png`, `scorers_bleu.png`.", ""]
    path = os.path.join(args.out, "results.md")
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines))
    print("\n".join(lines))
    logger.info("wrote %s", path)


if __name__ == "__main__":
    main()
