"""
Corpora, normalization and analyzer lexicons
============================================

Normalize Arabic spellings, look up a toy analyzer entry, and build the
merged tag space of two dialects from a synthetic pair.
"""
from morphtag.data import FEATURES, Analysis, AnalyzerLexicon, build_vocabularies, normalize_token
from morphtag.synthetic import SyntheticConfig, generate_synthetic_dialect_pair

print(normalize_token("إلى"), normalize_token("دَرَسْنَا"))

na = {f: "na" for f in FEATURES}
lex = AnalyzerLexicon("msa")
lex.add("درسنا", Analysis("دَرَسْنا", "دَرَس", {**na, "pos": "verb", "per": "1", "num": "p"}))
lex.add("درسنا", Analysis("دَرَّسَنا", "دَرَّس", {**na, "pos": "verb", "enc0": "1p_dobj"}))
lex.add("درسنا", Analysis("دَرْسُنا", "دَرْس", {**na, "pos": "noun", "enc0": "1p_poss"}))
for a in lex.analyze("دَرَسْنَا"):
    print(a.diac, a.tags["pos"], a.tags["enc0"])

# a synthetic high/low-resource pair with complete lexicons
pair = generate_synthetic_dialect_pair(SyntheticConfig(n_sentences_a=50, n_sentences_b=50), seed=0)
print(pair.labeled_a.sentences[0].tokens[0])
vocabs = build_vocabularies([pair.labeled_a, pair.labeled_b], list(pair.lexicons.values()))
schema = vocabs.schema
for f in ("prc0", "enc0"):
    print(f, "msa", len(schema.vocab(f, "msa")), "egy", len(schema.vocab(f, "egy")),
          "merged", len(schema.vocab(f)))
