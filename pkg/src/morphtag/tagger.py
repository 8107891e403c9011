"""Multitask Bi-LSTM morphological tagger with optional adversarial dialect adaptation.

Each word is represented by ``[word embedding; char-LSTM state; candidate-tag
sums]``; a shared Bi-LSTM encoder feeds one softmax head per feature (per
dialect, or shared over a merged tag space). In adversarial mode a dialect
discriminator reads mean-pooled encoder states through a gradient reversal
node.
"""
from __future__ import annotations

import hashlib
import json
import logging
import struct
import warnings
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import layers as L
from .autodiff import DTYPE, Adam, Graph, dropout_mask, parameter
from .data import (Batch, Vocabularies, candidate_ids, make_adversarial_batch, make_batches,
                   tensorize)

log = logging.getLogger(__name__)

SHARED = "*"
WORD_MODES = ("separate", "merged", "mapped")
CHECKPOINT_MAGIC = b"MTAGCKPT"
CHECKPOINT_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    hidden_size: int = 800
    layers: int = 2
    keep_prob: float = 0.7
    lr: float = 0.0005
    epochs: int = 70
    char_dim: int = 50
    char_hidden: int = 100
    char_layers: int = 2
    word_dim: int = 250
    tag_dim: int = 10
    disc_hidden: int = 128
    lam: float = 1.0
    batch_size: int = 32
    word_emb_mode: str = "separate"
    shared_chars: bool = True
    shared_heads: bool = False
    adversarial: bool = False
    finetune_embeddings: bool = True
    min_unlabeled_len: int = 14
    dialect_loss_on: str = "all"      # "all" or "unlabeled"
    min_steps: int = 0                # lower bound on optimizer steps
    disc_lr_scale: float = 1.0        # discriminator learning rate = lr * disc_lr_scale
    disc_steps: int = 0               # extra discriminator-only updates per adversarial batch
    adv_warmup: int = 0               # leading epochs trained with lam = 0
    word_dropout: float = 0.0         # training-time rate of replacing word ids with UNK
    adv_lr_scale: float = 1.0         # learning-rate factor for epochs with lam > 0
    seed: int = 0

    def validate(self):
        for name in ("hidden_size", "layers", "epochs", "char_dim", "char_hidden", "char_layers",
                     "word_dim", "tag_dim", "disc_hidden", "batch_size"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if not 0.0 <= self.word_dropout < 1.0:
            raise ConfigError("word_dropout must be in [0, 1)")
        if not 0.0 < self.keep_prob <= 1.0:
            raise ConfigError("keep_prob must be in (0, 1]")
        if self.lam < 0:
            raise ConfigError("lam must be non-negative")
        if self.disc_steps < 0 or self.adv_warmup < 0:
            raise ConfigError("disc_steps and adv_warmup must be non-negative")
        if self.lr <= 0 or self.disc_lr_scale <= 0 or self.adv_lr_scale <= 0:
            raise ConfigError("learning rates must be positive")
        if self.word_emb_mode not in WORD_MODES:
            raise ConfigError(f"word_emb_mode must be one of {WORD_MODES}")
        if self.dialect_loss_on not in ("all", "unlabeled"):
            raise ConfigError("dialect_loss_on must be 'all' or 'unlabeled'")
        if self.adversarial and self.batch_size % 2:
            raise ConfigError("adversarial training needs an even batch_size")
        return self

    def replace(self, **changes):
        unknown = set(changes) - {f.name for f in fields(self)}
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        return ModelConfig(**{**asdict(self), **changes}).validate()


class TaggerModel:
    """All learned parameters plus the vocabularies they are indexed by.

    ``pretrained`` maps dialect (or ``"*"`` for the merged space) to an
    :class:`~morphtag.embeddings.EmbeddingSpace` used to initialize word
    tables; ``mappings`` maps dialect to a ``W`` applied to that dialect's
    pretrained vectors (``mapped`` mode).
    """

    def __init__(self, config, vocabs, pretrained=None, mappings=None):
        self.config = config.validate()
        self.vocabs = vocabs
        schema = vocabs.schema
        self.schema = schema
        self.features = list(schema.features)
        self.dialects = sorted(schema.vocabs)
        if config.shared_heads and schema.merged is None:
            raise ConfigError("shared heads need a merged tag space (merge_target_spaces)")
        if config.word_emb_mode == "mapped" and not mappings:
            warnings.warn("mapped word embeddings without a mapping; using identity")
        rng = np.random.default_rng(config.seed)
        self.rng = np.random.default_rng(config.seed + 1)

        self.word_tables = {}
        for key in self._word_keys():
            vocab = vocabs.merged_words if key == SHARED else vocabs.words[key]
            init = None
            space = (pretrained or {}).get(key)
            if space is not None:
                W = (mappings or {}).get(key)
                init = _init_from_space(vocab, space if W is None else space.mapped(W),
                                        config.word_dim, rng)
            self.word_tables[key] = L.EmbeddingTable(len(vocab), config.word_dim, rng,
                                                     f"word[{key}]", init=init)
            self.word_tables[key].table.requires_grad = config.finetune_embeddings

        self.char_tables, self.char_lstms = {}, {}
        for key in self._char_keys():
            vocab = vocabs.merged_chars if key == SHARED else vocabs.chars[key]
            self.char_tables[key] = L.EmbeddingTable(len(vocab), config.char_dim, rng, f"char[{key}]")
            stack, size = [], config.char_dim
            for k in range(config.char_layers):
                stack.append(L.LstmParams(size, config.char_hidden, rng, f"charlstm[{key}].{k}"))
                size = config.char_hidden
            self.char_lstms[key] = stack

        self.tag_tables = {f: L.EmbeddingTable(len(schema.merged[f]), config.tag_dim, rng, f"tag[{f}]")
                           for f in self.features}
        self.input_size = config.word_dim + config.char_hidden + len(self.features) * config.tag_dim
        self.encoder = L.BiLstmStack(self.input_size, config.hidden_size, rng, layers=config.layers,
                                     keep_prob=config.keep_prob, name="encoder")
        H = self.encoder.output_size
        self.heads = {}
        for key in ([SHARED] if config.shared_heads else self.dialects):
            self.heads[key] = {f: L.Head(H, len(schema.vocab(f, None if key == SHARED else key)),
                                         rng, f"head[{key}].{f}")
                               for f in self.features}
        self.discriminator = None
        if config.adversarial:
            self.discriminator = {
                "W1": parameter(L.glorot(rng, H, config.disc_hidden), "disc.W1"),
                "b1": parameter(np.zeros(config.disc_hidden), "disc.b1"),
                "W2": parameter(L.glorot(rng, config.disc_hidden, len(self.dialects)), "disc.W2"),
                "b2": parameter(np.zeros(len(self.dialects)), "disc.b2"),
            }
        self._cand_cache = {}

    # -- structure -------------------------------------------------------------

    def _word_keys(self):
        return [SHARED] if self.config.word_emb_mode == "merged" else self.dialects

    def _char_keys(self):
        return [SHARED] if self.config.shared_chars else self.dialects

    def _check_dialect(self, dialect):
        if dialect not in self.dialects:
            raise KeyError(f"unknown dialect {dialect!r} (model knows {self.dialects})")

    def word_key(self, dialect):
        self._check_dialect(dialect)
        return SHARED if self.config.word_emb_mode == "merged" else dialect

    def char_key(self, dialect):
        self._check_dialect(dialect)
        return SHARED if self.config.shared_chars else dialect

    def head_key(self, dialect):
        self._check_dialect(dialect)
        return SHARED if self.config.shared_heads else dialect

    def named_parameters(self):
        out = []
        for key in sorted(self.word_tables):
            out.append(self.word_tables[key].table)
        for key in sorted(self.char_tables):
            out.append(self.char_tables[key].table)
            for layer in self.char_lstms[key]:
                out.extend(layer.parameters())
        for f in self.features:
            out.append(self.tag_tables[f].table)
        out.extend(self.encoder.parameters())
        for key in sorted(self.heads):
            for f in self.features:
                out.extend(self.heads[key][f].parameters())
        if self.discriminator is not None:
            out.extend(self.discriminator[k] for k in ("W1", "b1", "W2", "b2"))
        return [(p.name, p) for p in out]

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def trainable_parameters(self):
        return [p for p in self.parameters() if p.requires_grad]

    def n_parameters(self):
        return sum(p.value.size for p in self.parameters())

    # -- batch preparation -----------------------------------------------------

    def arrays(self, sentences, dialect, lexicon=None, with_gold=True):
        self._check_dialect(dialect)
        shared = self.config.word_emb_mode == "merged"
        cache = None
        if lexicon is not None:
            cache = self._cand_cache.setdefault(id(lexicon), {})
        return tensorize(sentences, self.vocabs.word_vocab(dialect, shared),
                         self.vocabs.char_vocab(dialect, self.config.shared_chars), self.schema,
                         tag_dialect=None if self.config.shared_heads else dialect,
                         lexicon=lexicon, with_gold=with_gold, cache=cache)


def _init_from_space(vocab, space, dim, rng):
    if space.dim != dim:
        raise ConfigError(f"pretrained vectors have dim {space.dim}, model expects {dim}")
    scale = np.sqrt(3.0 / dim)
    init = rng.uniform(-scale, scale, size=(len(vocab), dim))
    init[L.UNK] = space.vectors.mean(axis=0)
    for i, w in enumerate(vocab.itos):
        if w in space:
            init[i] = space[w]
    return init


# -- graph construction ---------------------------------------------------------

def _dropout(g, x, keep, rng, train):
    if not train or keep >= 1.0:
        return x
    return g.dropout(x, dropout_mask(x.shape, keep, rng))


def char_states(g, model, dialect, chars, char_len, rng=None, train=False):
    """Final top-layer char-LSTM state per word, ``(N, char_hidden)``; zero for empty rows.

    The LSTM runs once per distinct spelling in the batch and the states are
    gathered back to their positions.
    """
    key = model.char_key(dialect)
    H = model.config.char_hidden
    N = chars.shape[0]
    real = np.flatnonzero(char_len > 0)
    if real.size == 0:
        return g.constant(np.zeros((N, H)))
    uniq, first, inverse = np.unique(chars[real], axis=0, return_index=True, return_inverse=True)
    lengths = char_len[real][first]
    uniq = uniq[:, :lengths.max()]
    x = model.char_tables[key].lookup(g, uniq)
    for k, layer in enumerate(model.char_lstms[key]):
        if k > 0:
            x = _dropout(g, x, model.config.keep_prob, rng, train)
        x = L.run_lstm(g, layer, x)
    s = g.reshape(g.take_along(x, (lengths - 1)[:, None], axis=1), (len(uniq), H))
    table = g.concat([g.constant(np.zeros((1, H))), s], axis=0)
    ids = np.zeros(N, dtype=np.int64)
    ids[real] = inverse.reshape(-1) + 1
    return g.gather(table, ids)


def candidate_block(g, model, cands):
    """Concatenation over features of the summed candidate-tag embeddings."""
    blocks = [g.matmul(cands[f], model.tag_tables[f].table) for f in model.features]
    return g.concat(blocks, axis=-1)


def assemble_inputs(g, model, arrays, dialect, rng=None, train=False):
    """``v_j = [w_j; s_j; a_j]`` for every position, ``(B, T, input_size)``."""
    B, T = arrays["words"].shape
    words = arrays["words"]
    if train and model.config.word_dropout > 0 and rng is not None:
        drop = (rng.random(words.shape) < model.config.word_dropout) & (words != L.PAD)
        words = np.where(drop, L.UNK, words)
    w = model.word_tables[model.word_key(dialect)].lookup(g, words)
    s = char_states(g, model, dialect, arrays["chars"], arrays["char_len"], rng, train)
    s = g.reshape(s, (B, T, model.config.char_hidden))
    a = candidate_block(g, model, arrays["cands"])
    return g.concat([w, s, a], axis=-1)


def encode(g, model, arrays, dialect, rng=None, train=False):
    v = assemble_inputs(g, model, arrays, dialect, rng, train)
    v = _dropout(g, v, model.config.keep_prob, rng, train)
    return L.bilstm_encode(g, model.encoder, v, arrays["mask"], rng, train)


def head_logits(g, model, h, dialect, rng=None, train=False):
    h = _dropout(g, h, model.config.keep_prob, rng, train)
    heads = model.heads[model.head_key(dialect)]
    return {f: heads[f].logits(g, h) for f in model.features}


def tagging_loss(g, model, logits, gold, mask):
    """Mean over features of the token-averaged cross-entropy."""
    losses = [g.cross_entropy(logits[f], gold[f], mask) for f in model.features]
    total = losses[0]
    for x in losses[1:]:
        total = g.add(total, x)
    return g.scale(total, 1.0 / len(losses))


def pooled(g, h, mask):
    mask = np.asarray(mask, dtype=DTYPE)
    lengths = mask.sum(axis=1, keepdims=True)
    return g.mul(g.sum(h, axis=1), 1.0 / lengths)


def discriminator_logits(g, model, features, lam):
    d = model.discriminator
    x = g.grl(features, lam)
    x = g.tanh(g.add(g.matmul(x, d["W1"]), d["b1"]))
    return g.add(g.matmul(x, d["W2"]), d["b2"])


# -- public operations ------------------------------------------------------------

def encode_chars(model, token, dialect=None):
    """Character representation ``s_j`` of one token (inference mode)."""
    dialect = dialect or model.dialects[0]
    text = token if isinstance(token, str) else token.norm
    if not text:
        raise ValueError("cannot encode an empty token")
    vocab = model.vocabs.char_vocab(dialect, model.config.shared_chars)
    chars = np.array([[vocab[c] for c in text]], dtype=np.int64)
    g = Graph()
    return char_states(g, model, dialect, chars, np.array([len(text)])).value[0]


def embed_candidate_tags(model, token, feature, lexicon):
    """``a_j^f``: sum of embeddings of the distinct candidate values of ``feature``."""
    table = model.tag_tables[feature].table.value
    if lexicon is None:
        return np.zeros(table.shape[1])
    ids = candidate_ids(lexicon, token, model.schema)[feature]
    return table[ids].sum(axis=0) if ids else np.zeros(table.shape[1])


def assemble_input(model, sentence, dialect, lexicon=None):
    """``v_j`` for every token of a sentence, ``(L, input_size)`` (inference mode)."""
    arrays = model.arrays([sentence], dialect, lexicon, with_gold=False)
    g = Graph()
    return assemble_inputs(g, model, arrays, dialect).value[0]


def forward_tag(model, sentences, dialect, lexicon=None):
    """Per-token, per-feature probability distributions.

    Returns ``(probs, vocabs)``: ``probs[f]`` is ``(B, T, V_f)`` (padding rows
    are meaningless) and ``vocabs[f]`` the tag list the columns refer to.
    """
    single = not isinstance(sentences, (list, tuple))
    sentences = [sentences] if single else list(sentences)
    arrays = model.arrays(sentences, dialect, lexicon, with_gold=False)
    g = Graph()
    h = encode(g, model, arrays, dialect)
    logits = head_logits(g, model, h, dialect)
    probs = {f: g.softmax(logits[f]).value for f in model.features}
    key = model.head_key(dialect)
    vocabs = {f: model.schema.vocab(f, None if key == SHARED else key) for f in model.features}
    return probs, vocabs, arrays["mask"]


def predict(model, sentence, dialect, lexicon=None, return_probs=False):
    """Argmax tag per feature for each token of one sentence."""
    return predict_batch(model, [sentence], dialect, lexicon, return_probs)[0]


def predict_batch(model, sentences, dialect, lexicon=None, return_probs=False):
    probs, vocabs, mask = forward_tag(model, list(sentences), dialect, lexicon)
    out = []
    for b, sent in enumerate(sentences):
        rows = []
        for t in range(len(sent)):
            tags = {f: vocabs[f][int(np.argmax(probs[f][b, t]))] for f in model.features}
            if return_probs:
                dist = {f: dict(zip(vocabs[f], probs[f][b, t])) for f in model.features}
                rows.append((tags, dist))
            else:
                rows.append(tags)
        out.append(rows)
    return out


def predict_corpus(model, corpus, lexicon=None, batch_size=64, return_probs=False):
    out = []
    for start in range(0, len(corpus.sentences), batch_size):
        chunk = corpus.sentences[start:start + batch_size]
        out.extend(predict_batch(model, chunk, corpus.dialect, lexicon, return_probs))
    return out


def multitask_loss(distributions, gold, mask=None):
    """Mean over features of token-averaged cross-entropy of given distributions.

    ``distributions[f]`` is ``(..., V_f)`` probabilities, ``gold[f]`` integer
    ids of shape ``(...)``; ``mask`` excludes padding.
    """
    if set(gold) != set(distributions):
        missing = sorted(set(distributions) - set(gold))
        raise KeyError(f"missing gold for features {missing}")
    per_feature = []
    for f, p in distributions.items():
        p = np.asarray(p, dtype=DTYPE)
        y = np.asarray(gold[f], dtype=np.int64)
        w = np.ones(y.shape) if mask is None else np.asarray(mask, dtype=DTYPE)
        picked = np.take_along_axis(p, y[..., None], axis=-1)[..., 0]
        with np.errstate(divide="ignore"):
            nll = -np.log(picked)
        nll = np.where(w > 0, nll, 0.0)
        per_feature.append(float((w * nll).sum() / w.sum()))
    return float(np.mean(per_feature))


def batch_loss(g, model, batch, lexicons=None, rng=None, train=True):
    """Tagging loss of a dialect-homogeneous labeled batch."""
    lexicon = (lexicons or {}).get(batch.dialect)
    arrays = model.arrays(batch.sentences, batch.dialect, lexicon)
    h = encode(g, model, arrays, batch.dialect, rng, train)
    logits = head_logits(g, model, h, batch.dialect, rng, train)
    return tagging_loss(g, model, logits, arrays["gold"], arrays["mask"])


def adversarial_losses(g, model, batch, lexicons=None, rng=None, train=True, lam=None,
                       extras=None):
    """Tagging loss on the labeled half and dialect loss through the GRL.

    Returns ``(tag_loss, dialect_loss, dialect_logits, dialect_targets)``.
    Sentences are encoded in per-dialect, per-labeling groups so each uses
    its own word table; the pooled states are concatenated for the
    discriminator. A dict passed as ``extras`` receives the pooled feature
    values and the per-sentence dialect-loss weights.
    """
    if model.discriminator is None:
        raise ConfigError("model was built without adversarial mode")
    if not batch.dialect_labels or len(batch.dialect_labels) != len(batch.sentences):
        raise ValueError("adversarial batch lacks per-sentence dialect labels")
    lam = model.config.lam if lam is None else lam
    lexicons = lexicons or {}
    groups = {}
    for i, (sent, lab, d) in enumerate(zip(batch.sentences, batch.labeled, batch.dialect_labels)):
        groups.setdefault((bool(lab), d), []).append(i)
    tag_losses, pooled_parts, targets, weights = [], [], [], []
    n_labeled_tokens = 0
    for (lab, d), idx in sorted(groups.items(), key=lambda kv: (not kv[0][0], kv[0][1])):
        sents = [batch.sentences[i] for i in idx]
        arrays = model.arrays(sents, d, lexicons.get(d), with_gold=lab)
        h = encode(g, model, arrays, d, rng, train)
        if lab:
            logits = head_logits(g, model, h, d, rng, train)
            n = arrays["mask"].sum()
            tag_losses.append((tagging_loss(g, model, logits, arrays["gold"], arrays["mask"]), n))
            n_labeled_tokens += n
        pooled_parts.append(pooled(g, h, arrays["mask"]))
        targets += [model.dialects.index(d)] * len(idx)
        on = model.config.dialect_loss_on == "all" or not lab
        weights += [1.0 if on else 0.0] * len(idx)
    if len(set(targets)) < 2:
        warnings.warn("adversarial batch has a single dialect; the dialect loss carries no signal",
                      stacklevel=2)
    tag_loss = None
    for loss, n in tag_losses:
        part = g.scale(loss, n / n_labeled_tokens)
        tag_loss = part if tag_loss is None else g.add(tag_loss, part)
    features = pooled_parts[0] if len(pooled_parts) == 1 else g.concat(pooled_parts, axis=0)
    logits = discriminator_logits(g, model, features, lam)
    targets = np.array(targets)
    dialect_loss = g.cross_entropy(logits, targets, np.array(weights))
    if extras is not None:
        extras["features"], extras["weights"] = features.value, np.array(weights)
    return tag_loss, dialect_loss, logits, targets


def refit_discriminator(model, features, targets, weights, optimizer, steps):
    """``steps`` discriminator-only updates on fixed pooled ``features``."""
    for _ in range(steps):
        g = Graph(check_finite=False)
        logits = discriminator_logits(g, model, g.constant(features), 0.0)
        g.backward(g.cross_entropy(logits, targets, weights))
        optimizer.step()
        optimizer.zero_grad()


class _Optimizers:
    def __init__(self, parts):
        self.parts = [p for p in parts if p.params]

    def step(self):
        for p in self.parts:
            p.step()

    def zero_grad(self):
        for p in self.parts:
            p.zero_grad()


def make_optimizer(model):
    """Adam over the tagger parameters, plus one for the discriminator when it has its own rate."""
    cfg = model.config
    disc = {id(p) for p in (model.discriminator or {}).values()}
    params = model.trainable_parameters()
    main = [p for p in params if id(p) not in disc]
    own = [p for p in params if id(p) in disc]
    if cfg.disc_lr_scale == 1.0:
        return Adam(params, lr=cfg.lr)
    return _Optimizers([Adam(main, lr=cfg.lr), Adam(own, lr=cfg.lr * cfg.disc_lr_scale)])


def discriminator_step(model, batch, lexicons=None, optimizer=None, rng=None):
    """One joint update on an adversarial batch; returns ``(tag_loss, dialect_loss)``."""
    g = Graph(check_finite=False)
    tag_loss, dialect_loss, _, _ = adversarial_losses(g, model, batch, lexicons, rng)
    total = g.add(tag_loss, dialect_loss)
    g.backward(total)
    if optimizer is not None:
        optimizer.step()
        optimizer.zero_grad()
    return float(tag_loss.value), float(dialect_loss.value)


def discriminator_accuracy(model, corpora, lexicons=None, batch_size=64):
    """Held-out dialect accuracy of the trained discriminator over ``{dialect: corpus}``."""
    if model.discriminator is None:
        raise ConfigError("model has no discriminator")
    correct = total = 0
    for d, corpus in corpora.items():
        target = model.dialects.index(d)
        lexicon = (lexicons or {}).get(d)
        for start in range(0, len(corpus.sentences), batch_size):
            sents = corpus.sentences[start:start + batch_size]
            arrays = model.arrays(sents, d, lexicon, with_gold=False)
            g = Graph()
            h = encode(g, model, arrays, d)
            logits = discriminator_logits(g, model, pooled(g, h, arrays["mask"]), 0.0)
            correct += int((logits.value.argmax(axis=1) == target).sum())
            total += len(sents)
    return correct / total


def pooled_features(model, corpus, lexicon=None, batch_size=64):
    """Mean-pooled encoder outputs per sentence (no dropout), ``(N, H)``."""
    rows = []
    for start in range(0, len(corpus.sentences), batch_size):
        sents = corpus.sentences[start:start + batch_size]
        arrays = model.arrays(sents, corpus.dialect, lexicon, with_gold=False)
        g = Graph()
        rows.append(pooled(g, encode(g, model, arrays, corpus.dialect), arrays["mask"]).value)
    return np.concatenate(rows, axis=0)


def fit_discriminator(model, corpora, lexicons=None, epochs=50, lr=0.005, batch_size=32, seed=0):
    """Train only the discriminator on frozen encoder features of ``{dialect: corpus}``.

    Returns the final training accuracy. The encoder is untouched.
    """
    if model.discriminator is None:
        raise ConfigError("model has no discriminator")
    feats, targets = [], []
    for d, corpus in corpora.items():
        feats.append(pooled_features(model, corpus, (lexicons or {}).get(d)))
        targets += [model.dialects.index(d)] * len(corpus)
    X, y = np.concatenate(feats), np.array(targets)
    opt = Adam(list(model.discriminator.values()), lr=lr)
    rng = np.random.default_rng(seed)
    for _ in range(epochs):
        order = rng.permutation(len(y))
        for start in range(0, len(y), batch_size):
            idx = order[start:start + batch_size]
            refit_discriminator(model, X[idx], y[idx], np.ones(len(idx)), opt, 1)
    g = Graph()
    logits = discriminator_logits(g, model, g.constant(X), 0.0)
    return float((logits.value.argmax(axis=1) == y).mean())


# -- training -----------------------------------------------------------------------

def interleave_batches(batches):
    """Round-robin over dialects, proportional to their batch counts.

    ``batches`` maps dialect -> list; the result spreads each dialect's
    batches evenly over the epoch.
    """
    keyed = []
    for order, d in enumerate(sorted(batches)):
        n = len(batches[d])
        keyed += [((i + 0.5) / n, order, i, batches[d][i]) for i in range(n)]
    keyed.sort(key=lambda k: k[:3])
    return [k[3] for k in keyed]


@dataclass
class EpochLog:
    epoch: int
    losses: dict
    steps: int
    dialect_loss: float | None = None
    disc_accuracy: float | None = None
    lam: float | None = None
    dev: dict = field(default_factory=dict)

    def to_json(self):
        return {k: v for k, v in asdict(self).items() if v is not None}


def features_accuracy(model, corpus, lexicon=None):
    """Fraction of tokens with every feature predicted correctly (no ranking step)."""
    preds = predict_corpus(model, corpus, lexicon)
    right = total = 0
    for sent, rows in zip(corpus.sentences, preds):
        for tok, tags in zip(sent.tokens, rows):
            total += 1
            right += all(tags[f] == tok.gold.tags[f] for f in model.features)
    return right / max(total, 1)


def constant_lambda(config):
    """Default schedule: 0 for the first ``adv_warmup`` epochs, then ``config.lam``."""
    return lambda epoch: 0.0 if epoch <= config.adv_warmup else config.lam


def train(model, labeled, unlabeled=None, lexicons=None, dev=None, log_path=None,
          checkpoint_path=None, epoch_callback=None, lam_schedule=None):
    """Train ``model`` in place; returns the list of :class:`EpochLog`.

    ``labeled`` is a list of labeled corpora (one per dialect). Each epoch
    shuffles every corpus into dialect-homogeneous batches and interleaves
    them. In adversarial mode the batches of every dialect other than the
    unlabeled corpus's hold ``batch_size/2`` labeled sentences and are
    completed with as many unlabeled sentences (length >= ``min_unlabeled_len``);
    the dialect loss then sees labeled high-resource against unlabeled
    low-resource text. Labeled batches of the unlabeled dialect itself are
    plain tagging batches. ``lam_schedule`` maps the 1-based epoch to the
    GRL weight (default :func:`constant_lambda`).
    """
    cfg = model.config
    lam_schedule = lam_schedule or constant_lambda(cfg)
    labeled = [c for c in labeled if len(c)]
    if not labeled:
        raise ValueError("train needs at least one non-empty labeled corpus")
    for c in labeled:
        if not c.labeled:
            raise ValueError(f"corpus for {c.dialect} is not labeled")
        model._check_dialect(c.dialect)
    if cfg.adversarial:
        if model.discriminator is None:
            raise ConfigError("adversarial config but model has no discriminator")
        if unlabeled is None or not len(unlabeled):
            raise ConfigError("adversarial training needs an unlabeled corpus")
        pool_u = [s for s in unlabeled.sentences if len(s) >= cfg.min_unlabeled_len]
        if not pool_u:
            raise ConfigError(f"no unlabeled sentence reaches length {cfg.min_unlabeled_len}")
        if all(c.dialect == unlabeled.dialect for c in labeled):
            raise ConfigError("adversarial training needs labeled text from a dialect other "
                              "than the unlabeled corpus's")
    lexicons = lexicons or {}
    rng = np.random.default_rng(cfg.seed + 2)
    drop_rng = model.rng
    optimizer = make_optimizer(model)
    disc_opt = None
    if cfg.adversarial and cfg.disc_steps:
        disc_opt = Adam(list(model.discriminator.values()), lr=cfg.lr * cfg.disc_lr_scale)
    adams = getattr(optimizer, "parts", [optimizer]) + ([disc_opt] if disc_opt else [])
    base_lr = [a.state.lr for a in adams]
    half = cfg.batch_size // 2

    def paired(dialect):
        return cfg.adversarial and dialect != unlabeled.dialect

    history = []
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    steps = 0
    epoch = 0
    try:
        while epoch < cfg.epochs or steps < cfg.min_steps:
            epoch += 1
            lam = float(lam_schedule(epoch))
            if lam < 0:
                raise ConfigError(f"lambda schedule gave {lam} at epoch {epoch}")
            factor = cfg.adv_lr_scale if cfg.adversarial and lam > 0 else 1.0
            for a, lr in zip(adams, base_lr):
                a.state.lr = lr * factor
            batches = {c.dialect: make_batches(c, half if paired(c.dialect) else cfg.batch_size, rng)
                       for c in labeled}
            losses = {d: [] for d in batches}
            d_losses, d_correct, d_total = [], 0, 0
            for batch in interleave_batches(batches):
                g = Graph(check_finite=False)
                extras = {}
                if paired(batch.dialect):
                    adv = make_adversarial_batch(batch.sentences, pool_u, 2 * len(batch),
                                                 cfg.min_unlabeled_len, rng)
                    with warnings.catch_warnings():
                        warnings.simplefilter("ignore")
                        tag_loss, dialect_loss, logits, targets = adversarial_losses(
                            g, model, adv, lexicons, drop_rng, lam=lam, extras=extras)
                    loss = g.add(tag_loss, dialect_loss)
                    d_losses.append(float(dialect_loss.value))
                    d_correct += int((logits.value.argmax(axis=1) == targets).sum())
                    d_total += len(targets)
                    losses[batch.dialect].append(float(tag_loss.value))
                else:
                    loss = batch_loss(g, model, batch, lexicons, drop_rng)
                    losses[batch.dialect].append(float(loss.value))
                if not np.isfinite(loss.value):
                    raise FloatingPointError(f"non-finite loss at epoch {epoch}")
                g.backward(loss)
                optimizer.step()
                optimizer.zero_grad()
                if disc_opt is not None and paired(batch.dialect):
                    refit_discriminator(model, extras["features"], targets, extras["weights"],
                                        disc_opt, cfg.disc_steps)
                steps += 1
            entry = EpochLog(epoch, {d: float(np.mean(v)) for d, v in losses.items() if v}, steps)
            if cfg.adversarial:
                entry.dialect_loss = float(np.mean(d_losses))
                entry.disc_accuracy = d_correct / max(d_total, 1)
                entry.lam = lam
            for d, corpus in (dev or {}).items():
                entry.dev[d] = {"feats": features_accuracy(model, corpus, lexicons.get(d))}
            history.append(entry)
            log.info("epoch %d %s", epoch, entry.to_json())
            if log_fh:
                log_fh.write(json.dumps(entry.to_json(), sort_keys=True) + "\n")
                log_fh.flush()
            if epoch_callback:
                epoch_callback(model, entry)
    finally:
        if log_fh:
            log_fh.close()
    if checkpoint_path:
        save_checkpoint(model, checkpoint_path)
    return history


# -- checkpoints ---------------------------------------------------------------------

def _vocab_hash(obj):
    return hashlib.sha256(json.dumps(obj, sort_keys=True, ensure_ascii=False).encode()).hexdigest()


def save_checkpoint(model, path):
    """Binary checkpoint: magic, version, JSON header length, JSON header, float64 blocks."""
    params = model.named_parameters()
    vocabs = model.vocabs.to_json()
    entries, offset = [], 0
    for name, p in params:
        entries.append({"name": name, "shape": list(p.value.shape), "offset": offset})
        offset += p.value.size
    header = {
        "format": "morphtag-checkpoint",
        "config": asdict(model.config),
        "vocabularies": vocabs,
        "vocab_hashes": {k: _vocab_hash(v) for k, v in vocabs.items()},
        "params": entries,
    }
    blob = json.dumps(header, sort_keys=True, ensure_ascii=False).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        for _, p in params:
            fh.write(np.ascontiguousarray(p.value, dtype="<f8").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        if fh.read(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
            raise ValueError(f"{path} is not a morphtag checkpoint")
        version, n = struct.unpack("<IQ", fh.read(12))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        header = json.loads(fh.read(n).decode("utf-8"))
        data = np.frombuffer(fh.read(), dtype="<f8")
    vocabs_json = header["vocabularies"]
    for k, h in header["vocab_hashes"].items():
        if _vocab_hash(vocabs_json[k]) != h:
            raise ValueError(f"checkpoint vocabulary {k!r} fails its hash check")
    config = ModelConfig(**header["config"])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        model = TaggerModel(config, Vocabularies.from_json(vocabs_json))
    by_name = dict(model.named_parameters())
    for entry in header["params"]:
        p = by_name[entry["name"]]
        size = int(np.prod(entry["shape"]))
        block = data[entry["offset"]:entry["offset"] + size]
        p.value = block.reshape(entry["shape"]).astype(DTYPE)
    return model


def batch_from_sentences(sentences, dialect):
    return Batch(list(sentences), dialect, [True] * len(sentences), [dialect] * len(sentences))
