import pytest

from morphtag.curve import CurveResult, check_fractions, nested_subsets, run_curve
from morphtag.synthetic import SyntheticConfig, generate_synthetic_dialect_pair, split_corpus
from morphtag.tagger import ModelConfig


@pytest.fixture(scope="module")
def pair():
    cfg = SyntheticConfig(n_stems=30, n_sentences_a=10, n_sentences_b=16, n_unlabeled_b=6,
                          sentence_len=(3, 5), unlabeled_len=(4, 6))
    return generate_synthetic_dialect_pair(cfg, seed=0)


def test_nested_subsets(pair):
    subs = nested_subsets(pair.labeled_b, [0.25, 1.0, 0.5], seed=2)
    assert subs[1.0].sentences == pair.labeled_b.sentences
    ids = {f: {id(s) for s in c.sentences} for f, c in subs.items()}
    assert ids[0.25] < ids[0.5] < ids[1.0]
    assert len(subs[0.25]) == 4
    assert len(nested_subsets(pair.labeled_b, [0.001])[0.001]) == 1


def test_fraction_validation():
    assert check_fractions([0.5, 1.0, 0.5]) == [1.0, 0.5]
    for bad in ([0.0], [1.5], []):
        with pytest.raises(ValueError):
            check_fractions(bad)


def test_run_curve_grid(pair):
    train, test = split_corpus(pair.labeled_b, (0.75, 0.25), seed=0)
    cfg = ModelConfig(hidden_size=4, layers=1, char_dim=2, char_hidden=3, char_layers=1,
                      word_dim=3, tag_dim=2, disc_hidden=3, epochs=1, batch_size=4,
                      min_unlabeled_len=4)
    res = run_curve(pair.labeled_a, train, test, pair.unlabeled_b, (1.0, 0.5), cfg, seeds=[0])
    assert len(res.cells) == 6
    assert res.tokens[1.0] == train.n_tokens
    assert all(0 <= a <= 1 for a in res.cells.values())
    rows = list(res.rows())
    assert [r[0] for r in rows] == [1.0, 0.5] and all(len(r[2]) == 3 for r in rows)
    assert res.to_csv().splitlines()[0] == "fraction,tokens,single,mtl,adv"
    assert res.to_markdown().count("\n") == 4


def test_mean_ignores_missing_seeds():
    res = CurveResult([1.0], ["single"], [0, 1], {(1.0, "single", 0): 0.5})
    assert res.mean(1.0, "single") == 0.5
