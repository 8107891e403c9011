import pytest

from morphtag.data import FEATURES, Analysis, AnalyzerLexicon, Sentence, Token
from morphtag.disambig import (AlignmentError, MatchWeights, disambiguate, evaluate,
                               match_score, rank_analyses)


def tags(**kw):
    out = {f: "na" for f in FEATURES}
    out.update(kw)
    return out


def test_match_score_examples():
    a = Analysis("", "", tags(pos="noun"))
    assert match_score(a, tags(pos="noun")) == 14
    assert match_score(a, {f: "zz" for f in FEATURES}) == 0
    pred = {f: "zz" for f in FEATURES}
    pred["pos"] = "noun"
    assert match_score(a, pred, MatchWeights({"pos": 2})) == 2


def test_negative_weight_rejected():
    with pytest.raises(ValueError):
        MatchWeights({"pos": -1})


def drsna():
    we_studied = Analysis("دَرَسْنا", "دَرَس", tags(pos="verb", asp="p", per="1", num="p"))
    he_taught_us = Analysis("دَرَّسَنا", "دَرَّس", tags(pos="verb", asp="p", per="3", num="s",
                                                     gen="m", enc0="1p_dobj"))
    our_lesson = Analysis("دَرْسُنا", "دَرْس", tags(pos="noun", num="s", enc0="1p_poss"))
    return [our_lesson, he_taught_us, we_studied]


def test_drsna_ranking():
    pred = tags(pos="verb", asp="p", per="1", num="p")
    assert rank_analyses(drsna(), pred).lex == "دَرَس"


def test_ties_broken_by_probability_then_order():
    a = Analysis("a", "a", tags(pos="noun"))
    b = Analysis("b", "b", tags(pos="adj"))
    pred = tags(pos="verb")
    assert rank_analyses([a, b], pred) is a
    probs = {f: {} for f in FEATURES}
    probs["pos"] = {"noun": 0.1, "adj": 0.3}
    assert rank_analyses([a, b], pred, probs=probs) is b


def test_singleton_and_empty_candidates():
    only = Analysis("x", "y", tags(pos="noun"))
    assert rank_analyses([only], {f: "zz" for f in FEATURES}) is only
    fallback = rank_analyses([], tags(pos="verb"))
    assert fallback.tags["pos"] == "verb" and fallback.diac == ""


def test_disambiguate_uses_lexicon():
    lex = AnalyzerLexicon("msa", {"درسنا": drsna()})
    sent = Sentence([Token("درسنا")], "msa")
    chosen = disambiguate([[tags(pos="noun", num="s", enc0="1p_poss")]], [sent], lex)
    assert chosen[0][0].lex == "دَرْس"


def test_perfect_prediction_scores_one():
    gold = [[Analysis("d", "l", tags(pos="noun")), Analysis("e", "m", tags(pos="verb"))]]
    rep = evaluate(gold, gold)
    assert (rep.pos, rep.feats, rep.diac, rep.lex, rep.full) == (1, 1, 1, 1, 1)


def test_one_feature_wrong():
    gold = [[Analysis("d", "l", tags(pos="noun", gen="m"))]]
    pred = [[Analysis("d", "l", tags(pos="noun", gen="f"))]]
    rep = evaluate(pred, gold)
    assert rep.pos == 1 and rep.feats == 0 and rep.full == 0 and rep.diac == 1
    assert rep.per_feature["gen"] == 0 and rep.per_feature["num"] == 1


def test_hand_counted_corpus():
    g = [Analysis(f"d{i}", f"l{i}", tags(pos="noun")) for i in range(5)]
    p = [g[0],                                           # all correct
         Analysis("d1", "l1", tags(pos="verb")),         # pos wrong
         Analysis("xx", "l2", tags(pos="noun")),         # diac wrong
         Analysis("d3", "xx", tags(pos="noun", cas="n")),  # lex and cas wrong
         Analysis("d4", "l4", tags(pos="noun"))]
    rep = evaluate([p[:3], p[3:]], [g[:3], g[3:]])
    assert rep.n_tokens == 5
    assert rep.pos == 4 / 5 and rep.feats == 3 / 5
    assert rep.diac == 4 / 5 and rep.lex == 4 / 5 and rep.full == 2 / 5


def test_alignment_errors():
    a = Analysis("", "", tags())
    with pytest.raises(AlignmentError):
        evaluate([[a]], [[a], [a]])
    with pytest.raises(AlignmentError):
        evaluate([[a, a]], [[a]])
    with pytest.raises(AlignmentError):
        evaluate([[Token("x")]], [[a]])
