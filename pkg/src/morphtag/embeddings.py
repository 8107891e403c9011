"""Word vectors: skip-gram training, text I/O and seed-dictionary space mapping."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Corpus

log = logging.getLogger(__name__)


class VectorFormatError(ValueError):
    pass


@dataclass
class EmbeddingSpace:
    words: list
    vectors: np.ndarray
    label: str = ""
    loss_history: list = field(default_factory=list)

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or self.vectors.shape[0] != len(self.words):
            raise ValueError("need exactly one vector per word")
        self.index = {w: i for i, w in enumerate(self.words)}
        if len(self.index) != len(self.words):
            raise ValueError("duplicate words in embedding space")

    @property
    def dim(self):
        return self.vectors.shape[1]

    def __len__(self):
        return len(self.words)

    def __contains__(self, word):
        return word in self.index

    def __getitem__(self, word):
        return self.vectors[self.index[word]]

    def cosine(self, a, b):
        u, v = self[a], self[b]
        return float(u @ v / (np.linalg.norm(u) * np.linalg.norm(v) + 1e-12))

    def mapped(self, W, label=None):
        """Space with every vector replaced by ``W @ x``."""
        return EmbeddingSpace(list(self.words), self.vectors @ np.asarray(W).T,
                              label or self.label)


def _sentences(corpus):
    if isinstance(corpus, Corpus):
        return [[t.norm for t in s.tokens] for s in corpus.sentences]
    return [list(s) for s in corpus]


def train_skipgram(corpus, dim=250, window=2, negatives=5, epochs=5, seed=0, lr=0.025,
                   min_count=2, subsample=None, batch_size=256, label=""):
    """Skip-gram with negative sampling (plain numpy SGD, single-threaded).

    ``corpus`` is a :class:`Corpus` or an iterable of token lists. Words below
    ``min_count`` are dropped before windowing. ``subsample`` is the usual
    frequent-word threshold (e.g. 1e-3); ``None`` disables it. The mean loss
    of every epoch is kept in ``space.loss_history``.
    """
    if dim <= 0:
        raise ValueError(f"dim must be positive, got {dim}")
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    sents = _sentences(corpus)
    counts = {}
    for s in sents:
        for w in s:
            counts[w] = counts.get(w, 0) + 1
    words = sorted(w for w, c in counts.items() if c >= min_count)
    if not words:
        raise ValueError("empty corpus (no word reaches min_count)")
    index = {w: i for i, w in enumerate(words)}
    freq = np.array([counts[w] for w in words], dtype=np.float64)
    noise = freq ** 0.75
    noise /= noise.sum()
    noise_cdf = np.cumsum(noise)
    rng = np.random.default_rng(seed)
    V = len(words)
    w_in = (rng.random((V, dim)) - 0.5) / dim
    w_out = np.zeros((V, dim))
    ids = [np.array([index[w] for w in s if w in index], dtype=np.int64) for s in sents]
    keep_prob = None
    if subsample:
        f = freq / freq.sum()
        keep_prob = np.minimum(1.0, np.sqrt(subsample / f) + subsample / f)

    history = []
    total_steps = None
    step = 0
    for epoch in range(epochs):
        centers, contexts = [], []
        for s in ids:
            if keep_prob is not None:
                s = s[rng.random(len(s)) < keep_prob[s]]
            n = len(s)
            for off in range(1, window + 1):
                if n > off:
                    centers += [s[:-off], s[off:]]
                    contexts += [s[off:], s[:-off]]
        if not centers:
            raise ValueError("corpus has no context pairs")
        centers = np.concatenate(centers)
        contexts = np.concatenate(contexts)
        order = rng.permutation(len(centers))
        centers, contexts = centers[order], contexts[order]
        if total_steps is None:
            total_steps = epochs * len(centers)
        losses = []
        for start in range(0, len(centers), batch_size):
            c = centers[start:start + batch_size]
            o = contexts[start:start + batch_size]
            neg = np.searchsorted(noise_cdf, rng.random((len(c), negatives)))
            neg = np.minimum(neg, V - 1)
            alpha = lr * max(1e-4, 1.0 - step / total_steps)
            step += len(c)
            v = w_in[c]
            u_pos = w_out[o]
            u_neg = w_out[neg]
            s_pos = np.einsum("bd,bd->b", v, u_pos)
            s_neg = np.einsum("bd,bkd->bk", v, u_neg)
            p_pos = 0.5 * (np.tanh(0.5 * s_pos) + 1.0)
            p_neg = 0.5 * (np.tanh(0.5 * s_neg) + 1.0)
            losses.append(float(-np.log(p_pos + 1e-12).sum() - np.log(1.0 - p_neg + 1e-12).sum()))
            g_pos = p_pos - 1.0
            grad_v = g_pos[:, None] * u_pos + np.einsum("bk,bkd->bd", p_neg, u_neg)
            np.add.at(w_out, o, -alpha * g_pos[:, None] * v)
            np.add.at(w_out, neg.reshape(-1), -alpha * (p_neg[..., None] * v[:, None, :]).reshape(-1, dim))
            np.add.at(w_in, c, -alpha * grad_v)
        history.append(sum(losses) / len(centers))
        log.debug("skipgram epoch %d loss %.4f", epoch + 1, history[-1])
    return EmbeddingSpace(words, w_in, label, history)


def interleave(corpus_a, corpus_b):
    """Alternate sentences (documents) from two corpora, then append the remainder."""
    a, b = _sentences(corpus_a), _sentences(corpus_b)
    out = []
    for i in range(max(len(a), len(b))):
        if i < len(a):
            out.append(a[i])
        if i < len(b):
            out.append(b[i])
    return out


def merge_corpora_and_train(corpus_a, corpus_b, **config):
    """Single space trained on both corpora, tagged ``merged``."""
    config.setdefault("label", "merged")
    return train_skipgram(interleave(corpus_a, corpus_b), **config)


@dataclass
class Mapping:
    W: np.ndarray
    mode: str
    pairs_used: int
    pairs_skipped: list
    mean_distance_before: float
    mean_distance_after: float
    rank: int

    def apply(self, space, label=None):
        return space.mapped(self.W, label)


def map_spaces(src, tgt, pairs, mode="orthogonal"):
    """Linear map ``W`` with ``W @ src[x] ~= tgt[y]`` over seed pairs ``(x, y)``.

    ``mode="orthogonal"`` solves the Procrustes problem (``W = U V^T`` from the
    SVD of the cross-covariance); ``mode="least-squares"`` is the unconstrained
    minimizer, using the pseudo-inverse when the system is rank-deficient.
    """
    if mode not in ("orthogonal", "least-squares"):
        raise ValueError(f"unknown mapping mode {mode!r}")
    if src.dim != tgt.dim:
        raise ValueError(f"dimension mismatch: {src.dim} vs {tgt.dim}")
    usable, skipped = [], []
    for x, y in pairs:
        (usable if x in src and y in tgt else skipped).append((x, y))
    if skipped:
        log.warning("%d seed pairs skipped (word missing from a space)", len(skipped))
    if not usable:
        raise ValueError("no usable seed-dictionary pairs")
    d = src.dim
    if len(usable) < d:
        log.warning("only %d usable seed pairs for dimension %d", len(usable), d)
    X = np.array([src[x] for x, _ in usable])
    Y = np.array([tgt[y] for _, y in usable])
    rank = int(np.linalg.matrix_rank(X))
    if mode == "orthogonal":
        U, _, Vt = np.linalg.svd(Y.T @ X)
        W = U @ Vt
    else:
        if rank < d:
            log.warning("rank-deficient seed system (rank %d < %d); using pseudo-inverse", rank, d)
        W = (np.linalg.pinv(X) @ Y).T
    before = float(np.linalg.norm(X - Y, axis=1).mean())
    after = float(np.linalg.norm(X @ W.T - Y, axis=1).mean())
    return Mapping(W, mode, len(usable), skipped, before, after, rank)


def save_vectors(space, path, precision=9):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{len(space)} {space.dim}\n")
        for w, v in zip(space.words, space.vectors):
            fh.write(w + " " + " ".join(f"{x:.{precision}g}" for x in v) + "\n")


def load_vectors(path, label=""):
    """Read ``word v1 ... vd`` lines, with or without a ``<count> <dim>`` header."""
    words, rows = [], []
    seen = set()
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split(" ")
            if not line.strip():
                continue
            if lineno == 1 and len(parts) == 2 and all(p.isdigit() for p in parts):
                dim = int(parts[1])
                continue
            word, values = parts[0], parts[1:]
            if dim is None:
                dim = len(values)
            if len(values) != dim:
                raise VectorFormatError(f"{path}:{lineno}: word {word!r} has {len(values)} "
                                        f"components, expected {dim}")
            if word in seen:
                raise VectorFormatError(f"{path}:{lineno}: duplicate word {word!r}")
            seen.add(word)
            words.append(word)
            try:
                rows.append([float(x) for x in values])
            except ValueError:
                raise VectorFormatError(f"{path}:{lineno}: non-numeric component") from None
    return EmbeddingSpace(words, np.array(rows).reshape(len(words), dim or 0), label or Path(path).stem)


def load_seed_dictionary(path):
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip() or line.startswith("#"):
                continue
            cells = line.rstrip("\n").split("\t")
            if len(cells) != 2:
                raise VectorFormatError(f"{path}:{lineno}: expected 2 tab-separated columns")
            pairs.append((cells[0], cells[1]))
    return pairs
