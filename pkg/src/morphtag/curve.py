"""Learning curve over the low-resource training set (no analyzer).

For every fraction of the low-resource training corpus three models are
trained: low-resource data only, multitask with the high-resource corpus, and
multitask with adversarial adaptation on unlabeled low-resource text. Each is
scored by FEATS accuracy on the low-resource test set.
"""
from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .data import build_vocabularies
from .tagger import ModelConfig, TaggerModel, features_accuracy, train

log = logging.getLogger(__name__)

MODES = ("single", "mtl", "adv")
DEFAULT_FRACTIONS = (1.0, 0.5, 0.25, 0.12, 0.06, 0.015)


def check_fractions(fractions):
    out = sorted({float(f) for f in fractions}, reverse=True)
    for f in out:
        if not 0.0 < f <= 1.0:
            raise ValueError(f"fraction {f} outside (0, 1]")
    if not out:
        raise ValueError("no fractions given")
    return out


def nested_subsets(corpus, fractions, seed=0):
    """``{fraction: Corpus}`` prefixes of one seeded permutation, so smaller ⊂ larger.

    Each subset keeps at least one sentence; fraction 1.0 is the corpus itself.
    """
    order = np.random.default_rng(seed).permutation(len(corpus))
    out = {}
    for f in check_fractions(fractions):
        n = len(corpus) if f == 1.0 else max(1, int(math.ceil(f * len(corpus))))
        out[f] = corpus.subset(sorted(order[:n]))
    return out


@dataclass
class CurveResult:
    fractions: list
    modes: list
    seeds: list
    cells: dict = field(default_factory=dict)    # (fraction, mode, seed) -> accuracy
    tokens: dict = field(default_factory=dict)   # fraction -> low-resource training tokens
    seconds: dict = field(default_factory=dict)

    def mean(self, fraction, mode):
        vals = [self.cells[(fraction, mode, s)] for s in self.seeds if (fraction, mode, s) in self.cells]
        return float(np.mean(vals)) if vals else float("nan")

    def rows(self):
        for f in self.fractions:
            yield f, self.tokens.get(f), [self.mean(f, m) for m in self.modes]

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["fraction", "tokens"] + list(self.modes))
        for f, n, accs in self.rows():
            w.writerow([f"{f:g}", n] + [f"{100 * a:.2f}" for a in accs])
        return buf.getvalue()

    def to_markdown(self):
        head = "| train (tokens, %) | " + " | ".join(m.upper() for m in self.modes) + " |"
        lines = [head, "|" + "---|" * (len(self.modes) + 1)]
        for f, n, accs in self.rows():
            lines.append(f"| {n} ({100 * f:g}%) | " + " | ".join(f"{100 * a:.1f}" for a in accs) + " |")
        return "\n".join(lines) + "\n"

    def to_json(self):
        return {"fractions": self.fractions, "modes": self.modes, "seeds": self.seeds,
                "tokens": {f"{f:g}": n for f, n in self.tokens.items()},
                "cells": [{"fraction": f, "mode": m, "seed": s, "feats": a}
                          for (f, m, s), a in sorted(self.cells.items())],
                "mean": {f"{f:g}": {m: self.mean(f, m) for m in self.modes} for f in self.fractions}}


def train_cell(mode, high, low, unlabeled, test, config, seed):
    """Train one curve cell and return its FEATS accuracy on ``test``."""
    if mode not in MODES:
        raise ValueError(f"unknown curve mode {mode!r}")
    if mode == "adv" and (unlabeled is None or not len(unlabeled)):
        raise ValueError("adversarial curve cells need an unlabeled corpus")
    labeled = [low] if mode == "single" else [high, low]
    extra = [unlabeled] if unlabeled is not None else []
    extra_words = {}
    if unlabeled is not None:
        extra_words[unlabeled.dialect] = sorted({t.norm for s in unlabeled.sentences for t in s.tokens})
    vocabs = build_vocabularies(labeled, None, extra_corpora=extra, extra_words=extra_words)
    cfg = config.replace(seed=seed, adversarial=(mode == "adv"),
                         shared_heads=config.shared_heads and mode != "single")
    model = TaggerModel(cfg, vocabs)
    train(model, labeled, unlabeled if mode == "adv" else None)
    return features_accuracy(model, test)


def run_curve(high, low_train, low_test, unlabeled, fractions=DEFAULT_FRACTIONS, config=None,
              seeds=(0,), modes=MODES, progress=None):
    """Full fraction x mode x seed grid; see the module docstring."""
    config = (config or ModelConfig()).validate()
    fractions = check_fractions(fractions)
    result = CurveResult(fractions, list(modes), list(seeds))
    for seed in seeds:
        subsets = nested_subsets(low_train, fractions, seed)
        for f in fractions:
            result.tokens[f] = subsets[f].n_tokens
            for mode in modes:
                t0 = time.time()
                acc = train_cell(mode, high, subsets[f], unlabeled, low_test, config, seed)
                result.cells[(f, mode, seed)] = acc
                result.seconds[(f, mode, seed)] = time.time() - t0
                log.info("curve seed=%d fraction=%g mode=%s feats=%.4f (%.1fs)",
                         seed, f, mode, acc, result.seconds[(f, mode, seed)])
                if progress:
                    progress(f, mode, seed, acc)
    return result
