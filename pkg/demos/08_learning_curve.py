"""
A small learning curve
======================

Single-dialect, multitask and adversarial models over shrinking fractions
of the low-resource training set, scored by FEATS accuracy. The full
experiment uses larger corpora, more epochs and three seeds.
"""
import warnings

from morphtag.curve import run_curve
from morphtag.synthetic import SyntheticConfig, generate_synthetic_dialect_pair, split_corpus
from morphtag.tagger import ModelConfig

warnings.simplefilter("ignore")
# regular context rules and few active features keep it learnable in a few epochs
pair = generate_synthetic_dialect_pair(
    SyntheticConfig(n_sentences_a=200, n_sentences_b=120, rule_strength=0.97, agreement=0.97,
                    active_prob=0.25), seed=0)
low_train, low_test = split_corpus(pair.labeled_b, (0.75, 0.25))
cfg = ModelConfig(hidden_size=64, char_hidden=32, char_dim=16, word_dim=32, tag_dim=5, epochs=12,
                  batch_size=16, lr=0.005, shared_heads=True, word_emb_mode="merged",
                  adv_warmup=6, disc_steps=5, adv_lr_scale=0.1, min_unlabeled_len=10)
res = run_curve(pair.labeled_a, low_train, low_test, pair.unlabeled_b, (1.0, 0.1), cfg,
                progress=lambda f, m, s, a: print(f"{f:g} {m}: {100 * a:.1f}"))
print(res.to_markdown())
