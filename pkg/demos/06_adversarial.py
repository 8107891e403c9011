"""
Adversarial dialect adaptation
==============================

Pair labeled high-resource batches with unlabeled low-resource text and
train a dialect discriminator through the gradient reversal layer. The
first epochs run with lambda 0; afterwards the encoder is pushed to make
the dialects indistinguishable.
"""
import warnings

from morphtag.data import build_vocabularies
from morphtag.synthetic import SyntheticConfig, generate_synthetic_dialect_pair, split_corpus
from morphtag.tagger import ModelConfig, TaggerModel, discriminator_accuracy, train

warnings.simplefilter("ignore")
pair = generate_synthetic_dialect_pair(
    SyntheticConfig(n_sentences_a=120, n_sentences_b=120, rule_strength=0.97, agreement=0.97,
                    active_prob=0.25), seed=0)
atr, ate = split_corpus(pair.labeled_a, (0.75, 0.25))
btr, bte = split_corpus(pair.labeled_b, (0.75, 0.25))
vocabs = build_vocabularies([atr, btr], extra_corpora=[pair.unlabeled_b])

cfg = ModelConfig(hidden_size=32, char_hidden=16, char_dim=8, word_dim=16, tag_dim=4,
                  epochs=6, batch_size=16, lr=0.005, adversarial=True, shared_heads=True,
                  adv_warmup=3, disc_steps=5, adv_lr_scale=0.1, min_unlabeled_len=10)
model = TaggerModel(cfg, vocabs)
for e in train(model, [atr, btr], pair.unlabeled_b):
    print(f"epoch {e.epoch} lam {e.lam} dialect loss {e.dialect_loss:.3f} "
          f"disc acc {e.disc_accuracy:.2f}")
print("held-out discriminator accuracy",
      round(discriminator_accuracy(model, {"msa": ate, "egy": bte}), 3))
