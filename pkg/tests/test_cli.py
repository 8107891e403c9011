import json

import numpy as np
import pytest

from morphtag.cli import main, parse_config_text
from morphtag.embeddings import EmbeddingSpace, save_vectors

TINY = """
dim = 4
[model]
hidden_size = 6
layers = 1
char_dim = 3
char_hidden = 4
char_layers = 1
word_dim = 5
tag_dim = 2
batch_size = 8
epochs = 3
"""


@pytest.fixture(scope="module")
def synth(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--out", str(out), "--n-sentences", "15", "--seed", "1"]) == 0
    return out


def test_pipeline(synth, tmp_path, capsys):
    cfg = tmp_path / "tiny.toml"
    cfg.write_text(TINY, encoding="utf-8")
    run = tmp_path / "run"
    assert main(["train", "--config", str(cfg), "--out", str(run), "--set", "epochs=1",
                 "--train", str(synth / "msa_train.tsv"), "--train", str(synth / "egy_train.tsv"),
                 "--lexicon", str(synth / "msa_lexicon.jsonl"),
                 "--lexicon", str(synth / "egy_lexicon.jsonl")]) == 0
    manifest = json.loads((run / "manifest.json").read_text())
    assert manifest["model_config"]["epochs"] == 1          # flag beats config file
    assert manifest["model_config"]["hidden_size"] == 6     # config file beats default
    assert manifest["epochs"] == 1
    assert (run / "model.ckpt").is_file()

    tagged = tmp_path / "tag"
    assert main(["tag", "--out", str(tagged), "--model", str(run / "model.ckpt"),
                 "--input", str(synth / "egy_test.tsv"),
                 "--lexicon", str(synth / "egy_lexicon.jsonl")]) == 0
    assert main(["eval", "--out", str(tmp_path / "ev"), "--pred", str(tagged / "predicted.tsv"),
                 "--gold", str(synth / "egy_test.tsv")]) == 0
    metrics = json.loads((tmp_path / "ev" / "metrics.json").read_text())
    assert metrics["full"] <= min(metrics["feats"], metrics["diac"], metrics["lex"])
    assert "FEATS" in capsys.readouterr().out


def test_eval_self_comparison(synth, tmp_path):
    gold = str(synth / "egy_test.tsv")
    assert main(["eval", "--out", str(tmp_path), "--pred", gold, "--gold", gold]) == 0
    metrics = json.loads((tmp_path / "metrics.json").read_text())
    assert all(metrics[k] == 1.0 for k in ("pos", "feats", "diac", "lex", "full"))


def test_shared_heads_need_merged_tags(synth, tmp_path, capsys):
    code = main(["train", "--out", str(tmp_path), "--set", "shared_heads=true",
                 "--no-merge-tags", "--train", str(synth / "msa_train.tsv")])
    assert code == 2
    err = json.loads(capsys.readouterr().err)
    assert err["command"] == "train" and "merged" in err["message"]
    assert not (tmp_path / "model.ckpt").exists()


def test_errors_are_structured(tmp_path, capsys):
    assert main(["eval", "--out", str(tmp_path), "--pred", "missing.tsv",
                 "--gold", "missing.tsv"]) == 2
    err = capsys.readouterr().err
    assert "Traceback" not in err and json.loads(err)["error"]
    bad = tmp_path / "bad.toml"
    bad.write_text("[nonsense]\n", encoding="utf-8")
    assert main(["eval", "--config", str(bad), "--out", str(tmp_path)]) == 2


def test_embed_and_map(synth, tmp_path):
    out = tmp_path / "emb"
    assert main(["embed", "--out", str(out), "--corpus", str(synth / "egy_unlabeled.tsv"),
                 "--dim", "6", "--epochs", "1", "--min-count", "1"]) == 0
    assert (out / "vectors.txt").is_file()
    rng = np.random.default_rng(0)
    words = [f"w{i}" for i in range(12)]
    src = EmbeddingSpace(words, rng.normal(size=(12, 3)))
    R, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    save_vectors(src, tmp_path / "src.txt")
    save_vectors(src.mapped(R), tmp_path / "tgt.txt")
    (tmp_path / "dict.tsv").write_text("".join(f"{w}\t{w}\n" for w in words), encoding="utf-8")
    assert main(["map", "--out", str(tmp_path / "map"), "--src", str(tmp_path / "src.txt"),
                 "--tgt", str(tmp_path / "tgt.txt"),
                 "--dictionary", str(tmp_path / "dict.tsv")]) == 0
    W = np.load(tmp_path / "map" / "map.npy")
    assert np.linalg.norm(W - R) < 1e-6


def test_config_routing():
    exp, model = parse_config_text('seed = 2\nhidden_size = 8\n[model]\nlam = 0.5\n')
    assert exp == {"seed": 2} and model == {"hidden_size": 8, "lam": 0.5}
    with pytest.raises(ValueError):
        parse_config_text("hidden_size = = 3")
