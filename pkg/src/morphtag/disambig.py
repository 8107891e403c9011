"""Weighted analysis ranking and the POS/FEATS/DIAC/LEX/FULL metrics."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

from .data import FEATURES, Analysis


class AlignmentError(ValueError):
    pass


class MatchWeights(dict):
    """feature -> non-negative weight; features not listed weigh 1.0."""

    def __init__(self, weights=None):
        super().__init__()
        for f, w in (weights or {}).items():
            w = float(w)
            if w < 0 or w != w:
                raise ValueError(f"weight for {f!r} must be non-negative, got {w}")
            self[f] = w

    def __missing__(self, feature):
        return 1.0

    @classmethod
    def load(cls, path):
        weights = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip() or line.startswith("#"):
                    continue
                cells = line.rstrip("\n").split("\t")
                if len(cells) != 2:
                    raise ValueError(f"{path}:{lineno}: expected 'feature<TAB>weight'")
                try:
                    weights[cells[0]] = float(cells[1])
                except ValueError:
                    raise ValueError(f"{path}:{lineno}: weight is not a number") from None
        return cls(weights)


def match_score(analysis, predicted, weights=None, features=None):
    """Sum of weights of the features on which ``analysis`` agrees with ``predicted``."""
    weights = weights if weights is not None else MatchWeights()
    features = features or list(predicted)
    return sum(weights[f] for f in features if analysis.tags.get(f) == predicted[f])


def _prob_sum(analysis, probs, features):
    return sum(probs[f].get(analysis.tags.get(f), 0.0) for f in features)


def rank_analyses(analyses, predicted, weights=None, probs=None, extra_scores=None,
                  features=None):
    """Best-matching analysis for one token.

    Ties on the weighted match score go to the higher sum of predicted
    probabilities of the analysis's tags (when ``probs`` -- feature ->
    {tag: prob} -- is given), then to the earlier analysis. ``extra_scores``
    are optional per-analysis additive scores (e.g. lemma/diac language
    models). With no analyses, the predicted tags are returned as an
    analysis with empty diac and lex.
    """
    features = features or list(predicted)
    if not analyses:
        return Analysis("", "", {f: predicted[f] for f in features})
    best, best_key = None, None
    for i, a in enumerate(analyses):
        score = match_score(a, predicted, weights, features)
        if extra_scores is not None:
            score += extra_scores[i]
        key = (score, _prob_sum(a, probs, features) if probs else 0.0)
        if best_key is None or key > best_key:
            best, best_key = a, key
    return best


def disambiguate(predictions, sentences, lexicon, weights=None, features=FEATURES):
    """Chosen analysis per token; ``predictions`` rows are tag dicts or (tags, probs)."""
    out = []
    for rows, sent in zip(predictions, sentences):
        chosen = []
        for row, tok in zip(rows, sent.tokens):
            tags, probs = row if isinstance(row, tuple) else (row, None)
            cands = lexicon.analyze(tok) if lexicon is not None else []
            chosen.append(rank_analyses(cands, tags, weights, probs, features=features))
        out.append(chosen)
    return out


@dataclass
class MetricsReport:
    pos: float
    feats: float
    diac: float
    lex: float
    full: float
    n_tokens: int
    per_feature: dict = field(default_factory=dict)

    def to_json(self):
        return {"pos": self.pos, "feats": self.feats, "diac": self.diac, "lex": self.lex,
                "full": self.full, "n_tokens": self.n_tokens, "per_feature": self.per_feature}

    def dumps(self):
        return json.dumps(self.to_json(), indent=2, sort_keys=True)

    def table(self):
        rows = [("POS", self.pos), ("FEATS", self.feats), ("DIAC", self.diac),
                ("LEX", self.lex), ("FULL", self.full)]
        lines = [f"{'metric':<8} {'acc':>7}"]
        lines += [f"{name:<8} {100 * v:7.2f}" for name, v in rows]
        lines.append(f"{'tokens':<8} {self.n_tokens:7d}")
        if self.per_feature:
            lines.append("")
            lines += [f"{f:<8} {100 * v:7.2f}" for f, v in self.per_feature.items()]
        return "\n".join(lines)


def _analyses(item):
    if isinstance(item, Analysis):
        return item
    return item.gold   # Token


def evaluate(predicted, gold, features=FEATURES):
    """Metrics of predicted analyses against gold, token by token.

    Both arguments are corpora, or lists of sentences whose items are
    :class:`Analysis` or labeled tokens. Diac and lex are compared as exact
    strings.
    """
    pred_sents = predicted.sentences if hasattr(predicted, "sentences") else predicted
    gold_sents = gold.sentences if hasattr(gold, "sentences") else gold
    if len(pred_sents) != len(gold_sents):
        raise AlignmentError(f"{len(pred_sents)} predicted vs {len(gold_sents)} gold sentences")
    n = pos = feats = diac = lex = full = 0
    per_feature = {f: 0 for f in features}
    for k, (ps, gs) in enumerate(zip(pred_sents, gold_sents)):
        p_items = ps.tokens if hasattr(ps, "tokens") else ps
        g_items = gs.tokens if hasattr(gs, "tokens") else gs
        if len(p_items) != len(g_items):
            raise AlignmentError(f"sentence {k}: {len(p_items)} predicted vs {len(g_items)} gold tokens")
        for pi, gi in zip(p_items, g_items):
            p, g = _analyses(pi), _analyses(gi)
            if p is None or g is None:
                raise AlignmentError(f"sentence {k}: token without an analysis")
            n += 1
            ok = {f: p.tags.get(f) == g.tags[f] for f in features}
            for f in features:
                per_feature[f] += ok[f]
            all_ok = all(ok.values())
            pos += ok.get("pos", False)
            feats += all_ok
            diac += p.diac == g.diac
            lex += p.lex == g.lex
            full += all_ok and p.diac == g.diac and p.lex == g.lex
    if n == 0:
        raise AlignmentError("no tokens to evaluate")
    return MetricsReport(pos / n, feats / n, diac / n, lex / n, full / n, n,
                         {f: c / n for f, c in per_feature.items()})
