"""Generator for the committed toy translation task.

Each source word has one correct translation and three distractors. The
correct rule scores high on p_fe, lex_fe and lex_ef; each distractor is low
on exactly one of them, and p_ef is noise. A scorer therefore has to weigh
all three positively, which a random initialisation rarely does. The
particle ``de`` swaps its neighbours, and capitalised names are unknown to
the grammar. The LM is trained on references mixed with many corrupted
copies, so that correct words and distractors are about equally frequent.

The files under ``nlsmt/data/synthetic`` are the output of ``write_task()``
with the default seed; a test checks that they stay in sync.
"""
from __future__ import annotations

import io
import os
from importlib import resources

import numpy as np

from .decoder.grammar import read_grammar
from .decoder.lm import read_arpa, train_add_k, write_arpa
from .features import ParallelCorpus

SOURCE_WORDS = ["ka", "mo", "ri", "tsu", "ne", "ho", "yu", "sa", "ki", "no", "te", "wa"]
TARGET_WORDS = ["cat", "dog", "tree", "river", "house", "bird",
                "sun", "moon", "road", "stone", "fish", "rain"]
DISTRACTORS = ["cap", "car", "cot", "dot", "dig", "dug", "tray", "three", "trek",
               "liver", "rover", "ribbon", "mouse", "hose", "horse", "bard", "word", "beard",
               "son", "sin", "sum", "mood", "noon", "mould", "rod", "load", "rode",
               "tone", "stow", "stem", "dish", "fist", "fig", "ran", "rein", "rail"]
N_DISTRACTORS = 3
NAMES = ["Zorba", "Quill", "Mira"]
DEFAULT_SEED = 2015
N_SENTENCES = 50
LM_COPIES = 6
LM_CORRUPTION = 0.9

TASK_FILES = ("grammar.txt", "lm.arpa", "train.src", "train.ref0")


HIGH = (-0.5, -0.2)
LOW = (-1.8, -1.2)
NOISE = (-1.2, -0.2)
# positions of p_fe, lex_fe, lex_ef in the four rule scores
SIGNAL_SLOTS = (0, 2, 3)


def _scores(rng, low_slot=None):
    """Rule scores; ``low_slot`` picks the one signal feature that is low."""
    out = []
    for slot in range(4):
        if slot not in SIGNAL_SLOTS:
            out.append(rng.uniform(*NOISE))
        elif slot == low_slot:
            out.append(rng.uniform(*LOW))
        else:
            out.append(rng.uniform(*HIGH))
    return tuple(out)


def _rule(src, tgt, scores):
    return f"[X] ||| {src} ||| {tgt} ||| " + " ".join(f"{v:.4f}" for v in scores)


def build_task(seed=DEFAULT_SEED, n_sentences=N_SENTENCES):
    """Return (grammar text, ARPA text, source lines, reference lines)."""
    rng = np.random.default_rng(seed)
    rules = []
    lexicon = dict(zip(SOURCE_WORDS, TARGET_WORDS))
    for i, (src, tgt) in enumerate(lexicon.items()):
        rules.append(_rule(src, tgt, _scores(rng)))
        for slot, d in zip(SIGNAL_SLOTS, DISTRACTORS[N_DISTRACTORS * i:N_DISTRACTORS * (i + 1)]):
            rules.append(_rule(src, d, _scores(rng, slot)))
    rules.append(_rule("[X,1] de [X,2]", "[X,2] of [X,1]", _scores(rng)))
    rules.append(_rule("[X,1] de [X,2]", "[X,1] of [X,2]", _scores(rng, 0)))
    rules.append(_rule("[X,1] de [X,2]", "of [X,1] [X,2]", _scores(rng, 3)))
    rules.append(_rule("de", "of", _scores(rng, 2)))
    # a few two-word phrases
    for a, b in [("ka", "mo"), ("ri", "tsu"), ("yu", "sa")]:
        rules.append(_rule(f"{a} {b}", f"{lexicon[a]} {lexicon[b]}", _scores(rng)))

    sources, references = [], []
    for _ in range(n_sentences):
        length = int(rng.integers(3, 7))
        words = [SOURCE_WORDS[k] for k in rng.integers(0, len(SOURCE_WORDS), size=length)]
        ref = [lexicon[w] for w in words]
        if rng.random() < 0.4:
            pos = int(rng.integers(1, length))
            words = words[:pos] + ["de"] + words[pos:]
            ref = ref[:pos - 1] + [ref[pos], "of", ref[pos - 1]] + ref[pos + 1:]
        if rng.random() < 0.2:
            name = NAMES[int(rng.integers(0, len(NAMES)))]
            words = [name] + words
            ref = [name] + ref
        sources.append(" ".join(words))
        references.append(" ".join(ref))

    # LM text: references plus corrupted copies (distractors, monotone "of")
    lm_text = [r.split() for r in references]
    reverse = {t: s for s, t in lexicon.items()}
    for r in references:
        for _ in range(LM_COPIES):
            out = []
            for tok in r.split():
                if tok in reverse and rng.random() < LM_CORRUPTION:
                    i = SOURCE_WORDS.index(reverse[tok])
                    out.append(DISTRACTORS[N_DISTRACTORS * i + int(rng.integers(0, N_DISTRACTORS))])
                else:
                    out.append(tok)
            lm_text.append(out)
    lm = train_add_k(lm_text, order=3, k=0.5)
    buf = io.StringIO()
    write_arpa(lm, buf)
    return "\n".join(rules) + "\n", buf.getvalue(), sources, references


def write_task(directory, seed=DEFAULT_SEED, n_sentences=N_SENTENCES):
    os.makedirs(directory, exist_ok=True)
    grammar, arpa, sources, refs = build_task(seed, n_sentences)
    contents = dict(zip(TASK_FILES, [grammar, arpa, "\n".join(sources) + "\n",
                                     "\n".join(refs) + "\n"]))
    for name, text in contents.items():
        with open(os.path.join(directory, name), "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
    return {name: os.path.join(directory, name) for name in TASK_FILES}


def task_dir():
    return resources.files("nlsmt") / "data" / "synthetic"


def load_task(directory=None):
    """Load (grammar, lm, corpus) of the committed synthetic task."""
    base = task_dir() if directory is None else directory
    join = (lambda n: base / n) if directory is None else (lambda n: os.path.join(base, n))
    with open(join("grammar.txt"), encoding="utf-8") as f:
        grammar = read_grammar(f, "grammar.txt")
    with open(join("lm.arpa"), encoding="utf-8") as f:
        lm = read_arpa(f, "lm.arpa")
    corpus = ParallelCorpus.from_files(join("train.src"), [join("train.ref0")])
    return grammar, lm, corpus
