"""
Skip-gram vectors and seed-dictionary mapping
=============================================

Train small spaces for each dialect, then map one onto the other with an
orthogonal (Procrustes) map fit on shared words.
"""
from morphtag.embeddings import map_spaces, train_skipgram
from morphtag.synthetic import SyntheticConfig, generate_synthetic_dialect_pair

pair = generate_synthetic_dialect_pair(SyntheticConfig(n_sentences_a=300, n_unlabeled_b=300), seed=0)
msa = train_skipgram(pair.labeled_a, dim=20, epochs=3, seed=0, label="msa")
egy = train_skipgram(pair.unlabeled_b, dim=20, epochs=3, seed=0, label="egy")
print(len(msa), "msa words;", len(egy), "egy words; loss", [round(x, 3) for x in msa.loss_history])

# identically spelled words serve as the seed dictionary
shared = sorted(set(msa.words) & set(egy.words))
m = map_spaces(egy, msa, [(w, w) for w in shared], mode="orthogonal")
print(f"{m.pairs_used} pairs, mean distance {m.mean_distance_before:.3f} -> {m.mean_distance_after:.3f}")
