"""Corpora, analyzer lexicons, feature schemas, vocabularies and batching."""
from __future__ import annotations

import json
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FEATURES = ("pos", "asp", "cas", "gen", "per", "num", "mod", "stt", "vox",
            "prc0", "prc1", "prc2", "prc3", "enc0")

PAD_TOKEN, UNK_TOKEN = "<pad>", "<unk>"
UNK_TAG = "<unk>"

# Alif/Ya and Hamza normalization; values may be "" to delete a character.
DEFAULT_NORMALIZATION = {
    "أ": "ا",  # alif with hamza above
    "إ": "ا",  # alif with hamza below
    "آ": "ا",  # alif with madda
    "ٱ": "ا",  # alif wasla
    "ى": "ي",  # alif maqsura -> ya
    "ؤ": "ء",  # waw with hamza
    "ئ": "ء",  # ya with hamza
}
DIACRITICS = [chr(c) for c in range(0x064B, 0x0653)] + ["\u0670"]


class CorpusFormatError(ValueError):
    def __init__(self, path, lineno, message):
        super().__init__(f"{path}:{lineno}: {message}")
        self.path = path
        self.lineno = lineno


def normalization_table(overrides=None, strip_diacritics=True):
    table = dict(DEFAULT_NORMALIZATION)
    if strip_diacritics:
        table.update({d: "" for d in DIACRITICS})
    table.update(overrides or {})
    return str.maketrans(table)


_DEFAULT_TABLE = normalization_table()


def normalize_token(raw, table=None):
    """Orthographic normalization of one surface token (idempotent for the default table)."""
    table = table or _DEFAULT_TABLE
    text = raw
    # iterate: NFC can compose newly adjacent characters into mapped forms
    for _ in range(8):
        new = unicodedata.normalize("NFC", text).translate(table)
        if new == text:
            break
        text = new
    return text


@dataclass(frozen=True)
class Analysis:
    diac: str
    lex: str
    tags: dict

    def key(self):
        return (self.diac, self.lex, frozenset(self.tags.items()))

    def to_json(self):
        return {"diac": self.diac, "lex": self.lex, "tags": dict(self.tags)}

    @classmethod
    def from_json(cls, obj, features=FEATURES):
        tags = obj["tags"]
        missing = [f for f in features if f not in tags]
        if missing:
            raise ValueError(f"analysis lacks features {missing}")
        return cls(obj.get("diac", ""), obj.get("lex", ""), {f: tags[f] for f in features})


@dataclass
class Token:
    raw: str
    norm: str | None = None
    gold: Analysis | None = None

    def __post_init__(self):
        if self.norm is None:
            self.norm = normalize_token(self.raw)


@dataclass
class Sentence:
    tokens: list
    dialect: str

    def __len__(self):
        return len(self.tokens)


@dataclass
class Corpus:
    sentences: list
    dialect: str
    labeled: bool = True

    def __len__(self):
        return len(self.sentences)

    @property
    def n_tokens(self):
        return sum(len(s) for s in self.sentences)

    def subset(self, indices):
        return Corpus([self.sentences[i] for i in indices], self.dialect, self.labeled)


def parse_corpus(path, features=FEATURES, table=None, dialect=None):
    """Read the token-per-line TSV format.

    Columns are surface, diac, lex and one column per feature; a line with only
    the surface column is an unlabeled token. Blank lines separate sentences.
    Header comments: ``#dialect:<id>`` and optionally ``#columns:<f1> <f2> ...``
    to declare the feature order.
    """
    path = Path(path)
    features = list(features)
    columns = features
    sentences, current = [], []
    labeled_seen = unlabeled_seen = False
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if line.startswith("#"):
                key, _, value = line[1:].partition(":")
                if key == "dialect":
                    dialect = dialect or value.strip()
                elif key == "columns":
                    columns = value.split()
                    unknown = [c for c in columns if c not in features]
                    if unknown:
                        raise CorpusFormatError(path, lineno, f"unknown feature column {unknown[0]!r}")
                    if sorted(columns) != sorted(features):
                        raise CorpusFormatError(path, lineno, "columns header must list every feature")
                continue
            if not line.strip():
                if current:
                    sentences.append(current)
                    current = []
                continue
            cells = line.split("\t")
            if len(cells) == 1:
                current.append(Token(cells[0], normalize_token(cells[0], table)))
                unlabeled_seen = True
            elif len(cells) == 3 + len(columns):
                tags = dict(zip(columns, cells[3:]))
                if any(not v for v in tags.values()):
                    raise CorpusFormatError(path, lineno, "empty feature value")
                gold = Analysis(cells[1], cells[2], {f: tags[f] for f in features})
                current.append(Token(cells[0], normalize_token(cells[0], table), gold))
                labeled_seen = True
            else:
                raise CorpusFormatError(
                    path, lineno,
                    f"expected 1 or {3 + len(columns)} tab-separated columns, got {len(cells)}")
    if current:
        sentences.append(current)
    if dialect is None:
        raise CorpusFormatError(path, 1, "missing #dialect header")
    if labeled_seen and unlabeled_seen:
        raise CorpusFormatError(path, 1, "corpus mixes labeled and unlabeled tokens")
    return Corpus([Sentence(toks, dialect) for toks in sentences], dialect, labeled=not unlabeled_seen)


def format_corpus(corpus, features=FEATURES):
    lines = [f"#dialect:{corpus.dialect}"]
    for sent in corpus.sentences:
        for tok in sent.tokens:
            if tok.gold is None:
                lines.append(tok.raw)
            else:
                cells = [tok.raw, tok.gold.diac, tok.gold.lex] + [tok.gold.tags[f] for f in features]
                lines.append("\t".join(cells))
        lines.append("")
    return "\n".join(lines) + "\n"


def write_corpus(corpus, path, features=FEATURES):
    Path(path).write_text(format_corpus(corpus, features), encoding="utf-8")


class AnalyzerLexicon:
    """Surface form -> candidate analyses, keyed by normalized form."""

    def __init__(self, dialect, entries=None, table=None):
        self.dialect = dialect
        self.table = table
        self.entries = {}
        self._keys = {}
        for surface, analyses in (entries or {}).items():
            for a in analyses:
                self.add(surface, a)

    def add(self, surface, analysis):
        norm = normalize_token(surface, self.table)
        keys = self._keys.setdefault(norm, set())
        key = analysis.key()
        if key not in keys:
            keys.add(key)
            self.entries.setdefault(norm, []).append(analysis)

    def analyze(self, token):
        """All analyses for a token or string; empty list when out of vocabulary."""
        norm = token.norm if isinstance(token, Token) else normalize_token(token, self.table)
        return list(self.entries.get(norm, ()))

    def __contains__(self, surface):
        return normalize_token(surface, self.table) in self.entries

    def __len__(self):
        return len(self.entries)

    def tag_values(self, feature):
        return {a.tags[feature] for analyses in self.entries.values() for a in analyses}

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps({"dialect": self.dialect}, ensure_ascii=False) + "\n")
            for surface in sorted(self.entries):
                record = {"surface": surface,
                          "analyses": [a.to_json() for a in self.entries[surface]]}
                fh.write(json.dumps(record, ensure_ascii=False) + "\n")

    @classmethod
    def load(cls, path, features=FEATURES, table=None):
        lex = None
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    record = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise CorpusFormatError(path, lineno, f"invalid JSON: {exc}") from None
                if "surface" not in record:
                    lex = cls(record.get("dialect", "unknown"), table=table)
                    continue
                if lex is None:
                    lex = cls("unknown", table=table)
                if not record.get("analyses"):
                    raise CorpusFormatError(path, lineno, "entry without analyses")
                for obj in record["analyses"]:
                    try:
                        lex.add(record["surface"], Analysis.from_json(obj, features))
                    except (KeyError, ValueError) as exc:
                        raise CorpusFormatError(path, lineno, str(exc)) from None
        return lex or cls("unknown", table=table)


def analyze(lexicon, token):
    return [] if lexicon is None else lexicon.analyze(token)


class Vocab:
    """String <-> id map with PAD=0 and UNK=1."""

    def __init__(self, items=(), specials=(PAD_TOKEN, UNK_TOKEN)):
        self.itos = list(specials)
        self.stoi = {s: i for i, s in enumerate(self.itos)}
        for item in items:
            self.add(item)

    def add(self, item):
        if item not in self.stoi:
            self.stoi[item] = len(self.itos)
            self.itos.append(item)
        return self.stoi[item]

    def __len__(self):
        return len(self.itos)

    def __contains__(self, item):
        return item in self.stoi

    def __getitem__(self, item):
        return self.stoi.get(item, 1)

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.itos == other.itos

    def to_json(self):
        return list(self.itos)

    @classmethod
    def from_json(cls, itos):
        v = cls(specials=())
        for s in itos:
            v.add(s)
        return v


class FeatureSchema:
    """Ordered features with per-dialect and (optionally) merged tag vocabularies.

    Every tag vocabulary starts with the ``<unk>`` tag at id 0, followed by the
    tags in sorted order.
    """

    def __init__(self, features=FEATURES, vocabs=None, merged=None):
        self.features = list(features)
        self.vocabs = {d: {f: list(v) for f, v in fv.items()} for d, fv in (vocabs or {}).items()}
        self.merged = None if merged is None else {f: list(v) for f, v in merged.items()}
        self._index = {}

    @property
    def dialects(self):
        return sorted(self.vocabs)

    def vocab(self, feature, dialect=None):
        return self.merged[feature] if dialect is None else self.vocabs[dialect][feature]

    def tag_id(self, feature, tag, dialect=None):
        key = (dialect, feature)
        if key not in self._index:
            self._index[key] = {t: i for i, t in enumerate(self.vocab(feature, dialect))}
        return self._index[key].get(tag, 0)

    def to_merged(self, dialect, feature, tag_id):
        return self.tag_id(feature, self.vocabs[dialect][feature][tag_id])

    def from_merged(self, dialect, feature, merged_id):
        return self.tag_id(feature, self.merged[feature][merged_id], dialect)

    def to_json(self):
        return {"features": self.features, "vocabs": self.vocabs, "merged": self.merged}

    @classmethod
    def from_json(cls, obj):
        return cls(obj["features"], obj["vocabs"], obj.get("merged"))

    def __eq__(self, other):
        return isinstance(other, FeatureSchema) and self.to_json() == other.to_json()


def _tag_list(values):
    return [UNK_TAG] + sorted(set(values) - {UNK_TAG})


def merge_target_spaces(schema):
    """Schema whose merged vocabulary per feature is the sorted union over dialects."""
    merged = {}
    for f in schema.features:
        values = set()
        for d in schema.vocabs:
            values.update(schema.vocabs[d][f])
        merged[f] = _tag_list(values)
    return FeatureSchema(schema.features, schema.vocabs, merged)


@dataclass
class Vocabularies:
    schema: FeatureSchema
    words: dict            # dialect -> Vocab
    chars: dict            # dialect -> Vocab
    merged_words: Vocab
    merged_chars: Vocab

    def word_vocab(self, dialect, shared):
        return self.merged_words if shared else self.words[dialect]

    def char_vocab(self, dialect, shared):
        return self.merged_chars if shared else self.chars[dialect]

    def to_json(self):
        return {"schema": self.schema.to_json(),
                "words": {d: v.to_json() for d, v in self.words.items()},
                "chars": {d: v.to_json() for d, v in self.chars.items()},
                "merged_words": self.merged_words.to_json(),
                "merged_chars": self.merged_chars.to_json()}

    @classmethod
    def from_json(cls, obj):
        return cls(FeatureSchema.from_json(obj["schema"]),
                   {d: Vocab.from_json(v) for d, v in obj["words"].items()},
                   {d: Vocab.from_json(v) for d, v in obj["chars"].items()},
                   Vocab.from_json(obj["merged_words"]),
                   Vocab.from_json(obj["merged_chars"]))


def build_vocabularies(corpora, lexicons=None, features=FEATURES, min_count=1,
                       extra_corpora=(), extra_words=None):
    """Tag, word and character vocabularies from labeled corpora and lexicons.

    Per-dialect tag vocabularies are the union of gold tags and lexicon tags
    for that dialect. ``extra_corpora`` (e.g. unlabeled text) contribute only
    characters; ``extra_words`` maps dialect -> iterable of words to include
    regardless of count (e.g. pretrained vector vocabularies).
    """
    corpora = list(corpora)
    labeled = [c for c in corpora if c.labeled and c.n_tokens > 0]
    if not labeled:
        raise ValueError("build_vocabularies needs at least one non-empty labeled corpus")
    lexicons = {lx.dialect: lx for lx in (lexicons or [])}
    tag_values = {}
    counts = {}
    chars = {}
    for corpus in labeled:
        d = corpus.dialect
        tv = tag_values.setdefault(d, {f: set() for f in features})
        cnt = counts.setdefault(d, {})
        cs = chars.setdefault(d, set())
        for sent in corpus.sentences:
            for tok in sent.tokens:
                cnt[tok.norm] = cnt.get(tok.norm, 0) + 1
                cs.update(tok.norm)
                for f in features:
                    tv[f].add(tok.gold.tags[f])
    for d, lex in lexicons.items():
        if d in tag_values:
            for f in features:
                tag_values[d][f].update(lex.tag_values(f))
    for corpus in extra_corpora:
        cs = chars.setdefault(corpus.dialect, set())
        for sent in corpus.sentences:
            for tok in sent.tokens:
                cs.update(tok.norm)
    schema = FeatureSchema(features, {d: {f: _tag_list(v) for f, v in tv.items()}
                                      for d, tv in tag_values.items()})
    if len(schema.vocabs) >= 2:
        schema = merge_target_spaces(schema)
    else:
        # single dialect: merged space is that dialect's space
        only = next(iter(schema.vocabs.values()))
        schema = FeatureSchema(features, schema.vocabs, only)
    words, char_vocabs = {}, {}
    merged_words, merged_chars = Vocab(), Vocab()
    for d in sorted(set(counts) | set(chars)):
        kept = sorted(w for w, n in counts.get(d, {}).items() if n >= min_count)
        kept += sorted(set((extra_words or {}).get(d, ())) - set(kept))
        words[d] = Vocab(kept)
        char_vocabs[d] = Vocab(sorted(chars.get(d, ())))
    for d in sorted(words):
        for w in words[d].itos[2:]:
            merged_words.add(w)
    for c in sorted(set().union(*chars.values())):
        merged_chars.add(c)
    return Vocabularies(schema, words, char_vocabs, merged_words, merged_chars)


@dataclass
class Batch:
    """A group of sentences plus (after :func:`tensorize`) padded id arrays.

    ``dialect`` is set for dialect-homogeneous batches; ``labeled`` and
    ``dialect_labels`` are per sentence.
    """
    sentences: list
    dialect: str | None
    labeled: list
    dialect_labels: list
    arrays: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.sentences)

    @property
    def n_labeled(self):
        return sum(self.labeled)


def make_batches(corpus, batch_size, rng=None):
    """Shuffle ``corpus`` and cut it into dialect-homogeneous batches."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    rng = np.random.default_rng(rng)
    order = rng.permutation(len(corpus.sentences))
    batches = []
    for start in range(0, len(order), batch_size):
        sents = [corpus.sentences[i] for i in order[start:start + batch_size]]
        batches.append(Batch(sents, corpus.dialect, [corpus.labeled] * len(sents),
                             [s.dialect for s in sents]))
    return batches


def make_adversarial_batch(labeled_pool, unlabeled_pool, batch_size, min_unlabeled_len=14,
                           rng=None):
    """Half labeled sentences, half unlabeled sentences of length >= ``min_unlabeled_len``.

    Pools are lists of sentences. Sampling is without replacement when the
    pool is large enough.
    """
    if batch_size < 2 or batch_size % 2:
        raise ValueError(f"adversarial batch size must be even, got {batch_size}")
    rng = np.random.default_rng(rng)
    half = batch_size // 2
    pool_u = [s for s in unlabeled_pool if len(s) >= min_unlabeled_len]
    if not labeled_pool:
        raise ValueError("empty labeled pool")
    if not pool_u:
        raise ValueError(f"no unlabeled sentence has length >= {min_unlabeled_len}")

    def draw(pool):
        idx = rng.choice(len(pool), size=half, replace=len(pool) < half)
        return [pool[i] for i in idx]

    labeled = draw(labeled_pool)
    unlabeled = draw(pool_u)
    sents = labeled + unlabeled
    dialects = {s.dialect for s in labeled}
    return Batch(sents, dialects.pop() if len(dialects) == 1 else None,
                 [True] * half + [False] * half, [s.dialect for s in sents])


def candidate_ids(lexicon, token, schema, cache=None):
    """Merged-space tag ids of the distinct candidate values, per feature."""
    if cache is not None and token.norm in cache:
        return cache[token.norm]
    out = {f: sorted({schema.tag_id(f, a.tags[f]) for a in lexicon.analyze(token)})
           for f in schema.features}
    if cache is not None:
        cache[token.norm] = out
    return out


def tensorize(sentences, word_vocab, char_vocab, schema, tag_dialect=None, lexicon=None,
              with_gold=True, cache=None):
    """Padded arrays for a list of sentences.

    Returns a dict with ``words`` (B, T), ``chars`` (B*T, C), ``char_len``
    (B*T,), ``mask`` (B, T), ``cands`` {feature: (B, T, V_merged)} multi-hot
    candidate indicators in the merged tag space, and when ``with_gold``
    ``gold`` {feature: (B, T)} tag ids in ``tag_dialect``'s space (merged
    space when ``tag_dialect`` is None).
    """
    B = len(sentences)
    T = max(len(s) for s in sentences)
    words = np.zeros((B, T), dtype=np.int64)
    mask = np.zeros((B, T))
    C = max(len(t.norm) for s in sentences for t in s.tokens)
    C = max(C, 1)
    chars = np.zeros((B * T, C), dtype=np.int64)
    char_len = np.zeros(B * T, dtype=np.int64)
    features = schema.features
    cands = {f: np.zeros((B, T, len(schema.merged[f]))) for f in features}
    gold = {f: np.zeros((B, T), dtype=np.int64) for f in features} if with_gold else None
    for b, sent in enumerate(sentences):
        for t, tok in enumerate(sent.tokens):
            mask[b, t] = 1.0
            words[b, t] = word_vocab[tok.norm]
            row = b * T + t
            char_len[row] = len(tok.norm)
            chars[row, :len(tok.norm)] = [char_vocab[c] for c in tok.norm]
            if lexicon is not None:
                for f, ids in candidate_ids(lexicon, tok, schema, cache).items():
                    cands[f][b, t, ids] = 1.0
            if with_gold:
                if tok.gold is None:
                    raise ValueError("tensorize(with_gold=True) on an unlabeled token")
                for f in features:
                    gold[f][b, t] = schema.tag_id(f, tok.gold.tags[f], tag_dialect)
    out = {"words": words, "chars": chars, "char_len": char_len, "mask": mask, "cands": cands}
    if with_gold:
        out["gold"] = gold
    return out
