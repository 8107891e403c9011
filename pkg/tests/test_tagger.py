import numpy as np
import pytest

from morphtag.autodiff import Graph, numeric_gradient
from morphtag.data import (FEATURES, Analysis, AnalyzerLexicon, Corpus, Sentence, Token,
                           build_vocabularies, make_adversarial_batch)
from morphtag.synthetic import SyntheticConfig, generate_synthetic_dialect_pair
from morphtag.tagger import (ConfigError, ModelConfig, TaggerModel, adversarial_losses,
                             assemble_input, batch_from_sentences, batch_loss, embed_candidate_tags,
                             encode_chars, forward_tag, load_checkpoint, multitask_loss, predict,
                             save_checkpoint, train)

TINY = dict(hidden_size=6, layers=1, char_dim=3, char_hidden=4, char_layers=1, word_dim=5,
            tag_dim=2, disc_hidden=4, batch_size=4, epochs=1, keep_prob=1.0)


@pytest.fixture(scope="module")
def pair():
    cfg = SyntheticConfig(n_stems=30, n_sentences_a=12, n_sentences_b=8, n_unlabeled_b=8,
                          sentence_len=(3, 6), unlabeled_len=(14, 16))
    return generate_synthetic_dialect_pair(cfg, seed=0)


def make_model(pair, **kw):
    vocabs = build_vocabularies([pair.labeled_a, pair.labeled_b], list(pair.lexicons.values()),
                                extra_corpora=[pair.unlabeled_b])
    return TaggerModel(ModelConfig(**{**TINY, **kw}), vocabs)


def test_forward_shapes_and_distributions(pair):
    model = make_model(pair)
    sents = pair.labeled_b.sentences[:3]
    probs, vocabs, mask = forward_tag(model, sents, "egy", pair.lexicons["egy"])
    T = max(len(s) for s in sents)
    for f in FEATURES:
        assert probs[f].shape == (3, T, len(vocabs[f]))
        np.testing.assert_allclose(probs[f].sum(axis=-1), 1.0, atol=1e-12)
    row = predict(model, sents[0], "egy", pair.lexicons["egy"])
    assert len(row) == len(sents[0]) and set(row[0]) == set(FEATURES)


def test_shared_heads_use_merged_vocab(pair):
    model = make_model(pair, shared_heads=True)
    va = forward_tag(model, pair.labeled_a.sentences[:1], "msa")[1]
    vb = forward_tag(model, pair.labeled_b.sentences[:1], "egy")[1]
    assert va == vb == {f: model.schema.vocab(f) for f in FEATURES}


def test_purity(pair):
    model = make_model(pair)
    s = pair.labeled_a.sentences[0]
    a = assemble_input(model, s, "msa", pair.lexicons["msa"])
    b = assemble_input(model, s, "msa", pair.lexicons["msa"])
    assert np.array_equal(a, b)
    assert predict(model, s, "msa") == predict(model, s, "msa")


def test_char_states_are_order_sensitive(pair):
    model = make_model(pair, char_layers=2)
    assert encode_chars(model, "bc").shape == (4,)
    assert not np.allclose(encode_chars(model, "bc"), encode_chars(model, "cb"))
    assert np.all(np.isfinite(encode_chars(model, "b")))


def test_identical_tokens_identical_inputs(pair):
    model = make_model(pair)
    w = pair.labeled_a.sentences[0].tokens[0].raw
    v = assemble_input(model, Sentence([Token(w), Token(w)], "msa"), "msa", pair.lexicons["msa"])
    assert np.array_equal(v[0], v[1])


def test_candidate_embedding_is_sum(pair):
    model = make_model(pair)
    lex = AnalyzerLexicon("msa", {"x": [Analysis("", "", {**{f: "na" for f in FEATURES},
                                                           "pos": p}) for p in ("noun", "verb")]})
    table = model.tag_tables["pos"].table.value
    ids = [model.schema.tag_id("pos", p) for p in ("noun", "verb")]
    np.testing.assert_allclose(embed_candidate_tags(model, Token("x"), "pos", lex),
                               table[ids[0]] + table[ids[1]])
    assert np.all(embed_candidate_tags(model, Token("zzz"), "pos", lex) == 0)


def test_input_width_arithmetic(pair):
    vocabs = build_vocabularies([pair.labeled_a])
    model = TaggerModel(ModelConfig(hidden_size=4, layers=1, char_layers=1), vocabs)
    assert model.input_size == 250 + 100 + 140


def test_multitask_loss_examples():
    p = {"a": np.array([[np.exp(-2.0), 1 - np.exp(-2.0)]]),
         "b": np.array([[np.exp(-4.0), 1 - np.exp(-4.0)]])}
    gold = {"a": np.array([0]), "b": np.array([0])}
    assert abs(multitask_loss(p, gold) - 3.0) < 1e-12
    for k in (2, 5):
        u = {f: np.full((3, k), 1.0 / k) for f in "ab"}
        assert abs(multitask_loss(u, {f: np.zeros(3, int) for f in "ab"}) - np.log(k)) < 1e-12
    onehot = {"a": np.eye(3)}
    assert multitask_loss(onehot, {"a": np.arange(3)}) == 0.0
    with pytest.raises(KeyError):
        multitask_loss(p, {"a": np.array([0])})


def adv_batch(pair):
    return make_adversarial_batch(pair.labeled_a.sentences, pair.unlabeled_b.sentences, 4,
                                  min_unlabeled_len=14, rng=0)


def test_lambda_zero_blocks_dialect_gradient(pair):
    model = make_model(pair, adversarial=True)
    g = Graph()
    _, dialect_loss, _, _ = adversarial_losses(g, model, adv_batch(pair), pair.lexicons, lam=0.0)
    g.backward(dialect_loss)
    assert all(p.grad is None or not np.any(p.grad) for p in model.encoder.parameters())
    assert np.any(model.discriminator["W2"].grad)


def test_adversarial_grad_with_flip(pair):
    # finite differences see tag + L_d; the analytic encoder grad is tag' - lam * L_d'
    model = make_model(pair, adversarial=True)
    lam = 0.5
    g = Graph()
    tag, dl, _, _ = adversarial_losses(g, model, adv_batch(pair), pair.lexicons, train=False,
                                       lam=lam)
    total = g.add(tag, dl)
    params = [model.encoder.W_out, model.encoder.b_out, model.encoder.fwd[0].p_f]
    analytic = g.backward(total, params)

    def value_of(node):
        def f():
            g.evaluate()
            return float(node.value)
        return f

    for p, a in zip(params, analytic):
        expected = (numeric_gradient(value_of(tag), p.value)
                    - lam * numeric_gradient(value_of(dl), p.value))
        err = np.linalg.norm(a - expected) / max(np.linalg.norm(expected), 1e-12)
        assert err < 1e-4, (p.name, err)


def test_single_dialect_batch_warns(pair):
    model = make_model(pair, adversarial=True)
    batch = batch_from_sentences(pair.labeled_a.sentences[:2], "msa")
    with pytest.warns(UserWarning, match="single dialect"):
        adversarial_losses(Graph(), model, batch, pair.lexicons)


def test_msa_only_training_leaves_egy_heads(pair):
    model = make_model(pair)
    before = {f: h.W.value.copy() for f, h in model.heads["egy"].items()}
    train(model, [pair.labeled_a], lexicons=pair.lexicons)
    assert all(np.array_equal(before[f], model.heads["egy"][f].W.value) for f in FEATURES)
    assert not np.array_equal(model.heads["msa"]["pos"].W.value,
                              TaggerModel(model.config, model.vocabs).heads["msa"]["pos"].W.value)


def test_training_is_deterministic(pair):
    losses = []
    for _ in range(2):
        model = make_model(pair, keep_prob=0.7)
        losses.append(train(model, [pair.labeled_a, pair.labeled_b], lexicons=pair.lexicons)[0].losses)
    assert losses[0] == losses[1]


def test_adversarial_training_runs(pair):
    model = make_model(pair, adversarial=True, epochs=2, adv_warmup=1, disc_steps=2,
                       adv_lr_scale=0.5)
    hist = train(model, [pair.labeled_a, pair.labeled_b], pair.unlabeled_b, pair.lexicons)
    assert [h.lam for h in hist] == [0.0, 1.0]
    assert all(0 <= h.disc_accuracy <= 1 for h in hist)


def test_checkpoint_round_trip(pair, tmp_path):
    model = make_model(pair, adversarial=True)
    save_checkpoint(model, tmp_path / "m.ckpt")
    back = load_checkpoint(tmp_path / "m.ckpt")
    for (n1, p1), (n2, p2) in zip(model.named_parameters(), back.named_parameters()):
        assert n1 == n2 and np.array_equal(p1.value, p2.value)
    s = pair.labeled_b.sentences[0]
    assert predict(model, s, "egy") == predict(back, s, "egy")
    (tmp_path / "bad.ckpt").write_bytes(b"nope")
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "bad.ckpt")


def test_config_validation(pair):
    for bad in (dict(hidden_size=0), dict(keep_prob=0.0), dict(lam=-1.0),
                dict(word_emb_mode="other"), dict(adversarial=True, batch_size=5),
                dict(adv_warmup=-1)):
        with pytest.raises(ConfigError):
            ModelConfig(**bad).validate()
    with pytest.raises(ConfigError):
        ModelConfig().replace(nonsense=1)
    model = make_model(pair)
    with pytest.raises(ConfigError):
        adversarial_losses(Graph(), model, adv_batch(pair))
    with pytest.raises(KeyError):
        predict(model, pair.labeled_a.sentences[0], "lev")


def test_adversarial_training_requirements(pair):
    model = make_model(pair, adversarial=True)
    with pytest.raises(ConfigError):
        train(model, [pair.labeled_a])
    with pytest.raises(ConfigError):
        train(model, [pair.labeled_b], pair.unlabeled_b)
