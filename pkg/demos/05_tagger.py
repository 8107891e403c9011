"""
Training a joint tagger and disambiguating
==========================================

Train one encoder on both dialects with dialect-specific heads, predict
feature values, and rank the analyzer's candidates against them.
"""
import warnings

from morphtag.data import build_vocabularies
from morphtag.disambig import disambiguate, evaluate
from morphtag.synthetic import SyntheticConfig, generate_synthetic_dialect_pair, split_corpus
from morphtag.tagger import ModelConfig, TaggerModel, predict, predict_corpus, train

warnings.simplefilter("ignore")
pair = generate_synthetic_dialect_pair(SyntheticConfig(n_sentences_a=80, n_sentences_b=80), seed=0)
lex = pair.lexicons
egy_train, egy_test = split_corpus(pair.labeled_b, (0.8, 0.2))
vocabs = build_vocabularies([pair.labeled_a, egy_train], list(lex.values()))

cfg = ModelConfig(hidden_size=32, char_hidden=16, char_dim=8, word_dim=16, tag_dim=4,
                  epochs=8, batch_size=16, lr=0.005)
model = TaggerModel(cfg, vocabs)
for entry in train(model, [pair.labeled_a, egy_train], lexicons=lex):
    print(entry.epoch, {d: round(v, 3) for d, v in entry.losses.items()})

sent = egy_test.sentences[0]
print([tags["pos"] for tags in predict(model, sent, "egy", lex["egy"])])

preds = predict_corpus(model, egy_test, lex["egy"], return_probs=True)
chosen = disambiguate(preds, egy_test.sentences, lex["egy"])
print(evaluate(chosen, egy_test).table())
