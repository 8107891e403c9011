"""Synthetic high/low-resource dialect pairs with consistent analyzer lexicons.

The generated language is a toy concatenative morphology. Stems are
consonant strings; affixes are fixed-length codes over a disjoint letter set,
so every surface form segments unambiguously once its stem is known.

* every stem belongs to one or two word classes (``pos``); homographs make
  POS ambiguous out of context;
* each class has a set of active features. Overt features are spelled as
  affixes (clitic features as prefixes, the rest as suffixes); covert features
  only show up as vowels in the diacritized form, so the surface form is
  ambiguous between them;
* covert values follow the class of the previous word and agreement features
  follow a sentence-level value, so context disambiguates.

The low-resource dialect departs from the high-resource one by a divergence
rate ``r``: a fraction ``r`` of stems are respelled with dialect-only letters,
a fraction ``r`` of affixes change, some clitic features gain dialect-only
values, and class transitions and context rules are partly redrawn.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .data import FEATURES, Analysis, AnalyzerLexicon, Corpus, Sentence, Token

CONSONANTS = "bcdfghjklmnpqrstv"
VOWELS = "aiuoe"
AFFIX_LETTERS = "aeiouywxz"   # disjoint from stem letters

DEFAULT_VALUES = {
    "pos": ["noun", "verb", "adj", "prep", "pron", "conj", "part", "adv", "noun_prop", "noun_num"],
    "asp": ["p", "i", "c"],
    "cas": ["n", "a", "g"],
    "gen": ["m", "f"],
    "per": ["1", "2", "3"],
    "num": ["s", "d", "p"],
    "mod": ["i", "s", "j"],
    "stt": ["d", "i", "c"],
    "vox": ["a", "p"],
    "prc0": ["Al_det", "mA_neg"],
    "prc1": ["bi_prep", "li_prep", "ka_prep"],
    "prc2": ["wa_conj", "fa_conj"],
    "prc3": [">a_ques"],
    "enc0": ["1p_dobj", "3ms_poss", "1s_poss", "2ms_dobj"],
}
COVERT = ("cas", "mod", "stt", "vox")
AGREEMENT = ("gen", "num", "per")


@dataclass
class SyntheticConfig:
    n_stems: int = 300
    features: tuple = FEATURES
    tagset_sizes: dict = field(default_factory=dict)  # feature -> number of non-"na" values
    divergence: float = 0.3
    n_sentences_a: int = 400
    n_sentences_b: int = 400
    n_unlabeled_b: int = 400
    sentence_len: tuple = (5, 12)
    unlabeled_len: tuple = (3, 20)
    active_prob: float = 0.45
    homograph_rate: float = 0.15
    agreement: float = 0.9
    rule_strength: float = 0.9
    zipf: float = 1.0
    dialects: tuple = ("msa", "egy")

    def __post_init__(self):
        if not 0.0 <= self.divergence <= 1.0:
            raise ValueError(f"divergence must be in [0, 1], got {self.divergence}")
        if "pos" not in self.features:
            raise ValueError("synthetic generator needs a 'pos' feature")


class SyntheticPair(NamedTuple):
    labeled_a: Corpus
    labeled_b: Corpus
    unlabeled_b: Corpus
    lexicons: dict


def _values(cfg, f):
    n = cfg.tagset_sizes.get(f)
    base = DEFAULT_VALUES.get(f, [])
    if n is None:
        n = len(base) if base else 3
    return [base[i] if i < len(base) else f"{f}{i}" for i in range(n)]


def _rand_string(rng, n, letters=CONSONANTS):
    return "".join(rng.choice(list(letters), size=n))


class _Dialect:
    """Realization rules for one dialect."""

    def __init__(self, name):
        self.name = name
        self.spelling = {}       # stem id -> surface stem
        self.affix = {}          # (feature, value) -> string
        self.values = {}         # feature -> list of values usable in this dialect
        self.transition = None   # (n_pos + 1) x n_pos, row n_pos = sentence start
        self.rules = {}          # covert feature -> array prev class -> value index


class _Language:
    def __init__(self, cfg, rng):
        self.cfg = cfg
        feats = list(cfg.features)
        self.features = feats
        self.values = {f: _values(cfg, f) for f in feats}
        self.classes = self.values["pos"]
        n_pos = len(self.classes)
        others = [f for f in feats if f != "pos"]
        self.overt = [f for f in others if f not in COVERT]
        self.covert = [f for f in others if f in COVERT]
        self.prefix_feats = [f for f in self.overt if f.startswith("prc")]
        # active features per class; the first two classes are always rich
        self.active = []
        for c in range(n_pos):
            p = 0.6 if c < 2 else cfg.active_prob
            act = [f for f in others if rng.random() < p]
            self.active.append(act)
        # stems: spelling, vowel pattern, classes, frequency
        self.stems = []
        seen = set()
        while len(self.stems) < cfg.n_stems:
            s = _rand_string(rng, int(rng.integers(2, 5)))
            if s in seen:
                continue
            seen.add(s)
            self.stems.append(s)
        self.stem_vowels = [_rand_string(rng, len(s), VOWELS) for s in self.stems]
        self.stem_classes = []
        for _ in self.stems:
            cls = [int(rng.integers(n_pos))]
            if rng.random() < cfg.homograph_rate:
                other = int(rng.integers(n_pos))
                if other != cls[0]:
                    cls.append(other)
            self.stem_classes.append(cls)
        self.by_class = [[k for k, cl in enumerate(self.stem_classes) if c in cl]
                         for c in range(n_pos)]
        # a class with no stems would stall generation; give it one
        for c in range(n_pos):
            if not self.by_class[c]:
                k = int(rng.integers(len(self.stems)))
                self.stem_classes[k].append(c)
                self.by_class[c].append(k)
        ranks = rng.permutation(len(self.stems)) + 1
        self.stem_weight = 1.0 / ranks ** cfg.zipf

        hi, lo = cfg.dialects
        a = _Dialect(hi)
        for k, s in enumerate(self.stems):
            a.spelling[k] = s
        # affixes are distinct fixed-length codes, so a word segments uniquely
        n_codes = 2 * sum(len(self.values[f]) + 1 for f in self.overt)
        size = 2 if n_codes <= len(AFFIX_LETTERS) ** 2 else 3
        codes = ["".join(t) for t in itertools.product(AFFIX_LETTERS, repeat=size)]
        codes = [codes[i] for i in rng.permutation(len(codes))]
        for f in self.overt:
            for i, v in enumerate(self.values[f]):
                # the first value of non-clitic features is often unmarked
                if i == 0 and f not in self.prefix_feats and rng.random() < 0.5:
                    a.affix[(f, v)] = ""
                else:
                    a.affix[(f, v)] = codes.pop()
        a.values = {f: list(self.values[f]) for f in feats}
        a.transition = rng.dirichlet(np.full(n_pos, 0.5), size=n_pos + 1)
        for f in self.covert:
            a.rules[f] = rng.integers(len(self.values[f]), size=n_pos + 1)

        r = cfg.divergence
        b = _Dialect(lo)
        b.values = {f: list(self.values[f]) for f in feats}
        b.spelling = dict(a.spelling)
        for k in rng.permutation(len(self.stems))[:int(round(r * len(self.stems)))]:
            s = self.stems[k]
            pos = int(rng.integers(len(s)))
            b.spelling[k] = s[:pos] + s[pos].upper() + s[pos + 1:]
        for key, aff in a.affix.items():
            b.affix[key] = aff
            if r > 0 and rng.random() < r:
                b.affix[key] = codes.pop()
        for f in self.overt:
            if f in self.prefix_feats or f.startswith("enc"):
                if r > 0 and rng.random() < r:
                    v = f"{f}_{lo}"
                    b.values[f].append(v)
                    b.affix[(f, v)] = codes.pop()
        noise = rng.dirichlet(np.full(n_pos, 0.5), size=n_pos + 1)
        b.transition = (1 - r) * a.transition + r * noise
        for f in self.covert:
            rule = a.rules[f].copy()
            flip = rng.random(rule.shape) < r
            rule[flip] = rng.integers(len(self.values[f]), size=int(flip.sum()))
            b.rules[f] = rule
        self.dialects = {hi: a, lo: b}

    # -- realization ------------------------------------------------------------

    def realize(self, dialect, stem, cls, tags):
        d = self.dialects[dialect]
        pre = "".join(d.affix[(f, tags[f])] for f in self.prefix_feats if tags[f] != "na")
        suf = "".join(d.affix[(f, tags[f])] for f in self.overt
                      if f not in self.prefix_feats and tags[f] != "na")
        surface = pre + d.spelling[stem] + suf
        stem_diac = "".join(c + v for c, v in zip(d.spelling[stem], self.stem_vowels[stem]))
        marks = "".join(VOWELS[self.values[f].index(tags[f]) % len(VOWELS)]
                        for f in self.covert if tags[f] != "na")
        diac = pre + stem_diac + suf + marks
        lex = stem_diac + VOWELS[cls % len(VOWELS)]
        return surface, diac, lex

    def sentence(self, dialect, length, rng):
        d = self.dialects[dialect]
        n_pos = len(self.classes)
        agree = {f: str(rng.choice(d.values[f])) for f in AGREEMENT if f in self.features}
        prev = n_pos
        tokens = []
        for _ in range(length):
            cls = int(rng.choice(n_pos, p=d.transition[prev]))
            cand = self.by_class[cls]
            w = self.stem_weight[cand]
            stem = cand[int(rng.choice(len(cand), p=w / w.sum()))]
            tags = {"pos": self.classes[cls]}
            for f in self.features:
                if f == "pos":
                    continue
                if f not in self.active[cls]:
                    tags[f] = "na"
                elif f in agree and rng.random() < self.cfg.agreement:
                    tags[f] = agree[f]
                elif f in d.rules and rng.random() < self.cfg.rule_strength:
                    tags[f] = self.values[f][d.rules[f][prev]]
                else:
                    vals = d.values[f]
                    # skewed: the first value is the most frequent
                    p = np.array([2.0] + [1.0] * (len(vals) - 1))
                    tags[f] = vals[int(rng.choice(len(vals), p=p / p.sum()))]
            surface, diac, lex = self.realize(dialect, stem, cls, tags)
            tags = {f: tags[f] for f in self.features}
            tokens.append(Token(surface, gold=Analysis(diac, lex, tags)))
            prev = cls
        return Sentence(tokens, dialect)

    def _parse_affixes(self, d, text, feats, cls):
        """All value assignments to ``feats`` whose affixes concatenate to ``text``."""
        if not feats:
            return [{}] if not text else []
        f, rest = feats[0], feats[1:]
        if f not in self.active[cls]:
            return [dict(tail, **{f: "na"}) for tail in self._parse_affixes(d, text, rest, cls)]
        out = []
        for v in d.values[f]:
            aff = d.affix[(f, v)]
            if text.startswith(aff):
                out.extend(dict(tail, **{f: v})
                           for tail in self._parse_affixes(d, text[len(aff):], rest, cls))
        return out

    def analyses(self, dialect, surface):
        """Every (stem, class, tags) reading of a surface form, as Analyses."""
        d = self.dialects[dialect]
        suffix_feats = [f for f in self.overt if f not in self.prefix_feats]
        if not hasattr(d, "by_spelling"):
            d.by_spelling = {}
            for stem, spelled in d.spelling.items():
                d.by_spelling.setdefault(spelled, []).append(stem)
        found = []
        n = len(surface)
        for start in range(n):
            for end in range(start + 1, n + 1):
                stems = d.by_spelling.get(surface[start:end])
                if not stems:
                    continue
                pre, suf = surface[:start], surface[end:]
                for stem in stems:
                    for cls in self.stem_classes[stem]:
                        found.extend(self._readings(dialect, d, stem, cls, pre, suf, suffix_feats))
        return found

    def _readings(self, dialect, d, stem, cls, pre, suf, suffix_feats):
        out = []
        for pv in self._parse_affixes(d, pre, self.prefix_feats, cls):
            for sv in self._parse_affixes(d, suf, suffix_feats, cls):
                covert = [f for f in self.covert if f in self.active[cls]]
                for combo in itertools.product(*(self.values[f] for f in covert)):
                    tags = {"pos": self.classes[cls], **pv, **sv}
                    tags.update({f: "na" for f in self.covert})
                    tags.update(zip(covert, combo))
                    _, diac, lex = self.realize(dialect, stem, cls, tags)
                    out.append(Analysis(diac, lex, {f: tags[f] for f in self.features}))
        return out

    def lexicon(self, dialect, surfaces):
        """Analyzer entries for the given surface forms (complete over the language)."""
        return AnalyzerLexicon(dialect, {s: self.analyses(dialect, s) for s in sorted(surfaces)})


def generate_synthetic_dialect_pair(config=None, seed=0):
    """Labeled high-resource corpus, labeled and unlabeled low-resource corpora, lexicons.

    Deterministic for a given ``(config, seed)``. With ``divergence=0`` both
    dialects share every realization rule.
    """
    cfg = config or SyntheticConfig()
    rng = np.random.default_rng(seed)
    lang = _Language(cfg, rng)
    hi, lo = cfg.dialects

    def corpus(dialect, n, lengths, labeled=True):
        sents = []
        for _ in range(n):
            L = int(rng.integers(lengths[0], lengths[1] + 1))
            s = lang.sentence(dialect, L, rng)
            if not labeled:
                s = Sentence([Token(t.raw) for t in s.tokens], dialect)
            sents.append(s)
        return Corpus(sents, dialect, labeled)

    a = corpus(hi, cfg.n_sentences_a, cfg.sentence_len)
    b = corpus(lo, cfg.n_sentences_b, cfg.sentence_len)
    u = corpus(lo, cfg.n_unlabeled_b, cfg.unlabeled_len, labeled=False)
    lexicons = {}
    for dialect, corpora in ((hi, [a]), (lo, [b, u])):
        surfaces = {t.raw for c in corpora for s in c.sentences for t in s.tokens}
        lexicons[dialect] = lang.lexicon(dialect, surfaces)
    pair = SyntheticPair(a, b, u, lexicons)
    return pair


def split_corpus(corpus, fractions, seed=0):
    """Deterministic disjoint split by sentence, e.g. ``fractions=(0.8, 0.1, 0.1)``."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(corpus))
    bounds = np.cumsum([int(round(f * len(corpus))) for f in fractions])
    bounds[-1] = len(corpus) if abs(sum(fractions) - 1.0) < 1e-9 else bounds[-1]
    parts, start = [], 0
    for end in bounds:
        parts.append(corpus.subset(sorted(order[start:end])))
        start = end
    return parts
