"""Command-line entry point: ``morphtag {synth,train,tag,eval,embed,map,curve}``.

Every command writes into a run directory (``--out``) holding its artifacts
and a ``manifest.json`` with the resolved configuration. Settings come from
built-in defaults, then the ``--config`` file, then flags (flags win).

Config files are TOML; ``[model]`` introduces
tagger hyperparameters (any :class:`~morphtag.tagger.ModelConfig` field),
everything else is experiment plumbing::

    train = ["data/msa.tsv", "data/egy.tsv"]
    unlabeled = "data/egy_raw.tsv"
    fractions = [1.0, 0.25, 0.06, 0.015]

    [model]
    hidden_size = 64
    shared_heads = true
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import warnings

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .curve import DEFAULT_FRACTIONS, MODES, check_fractions, run_curve
from .data import (FEATURES, Analysis, AnalyzerLexicon, Corpus, Sentence, Token,
                   build_vocabularies, normalization_table, parse_corpus, write_corpus)
from .disambig import MatchWeights, disambiguate, evaluate
from .embeddings import (load_seed_dictionary, load_vectors, map_spaces, merge_corpora_and_train,
                         save_vectors, train_skipgram)
from .synthetic import SyntheticConfig, generate_synthetic_dialect_pair, split_corpus
from .tagger import (ConfigError, ModelConfig, TaggerModel, load_checkpoint, predict_corpus,
                     train)

log = logging.getLogger("morphtag")

MODEL_KEYS = {f.name for f in fields(ModelConfig)}


class UsageError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    train: list = field(default_factory=list)        # labeled corpora, one per dialect
    dev: list = field(default_factory=list)
    unlabeled: str | None = None
    lexicons: list = field(default_factory=list)
    vectors: dict = field(default_factory=dict)       # dialect (or "*") -> vector file
    mappings: dict = field(default_factory=dict)      # dialect -> .npy map applied to its vectors
    merge_tags: bool = True
    model: str | None = None                          # checkpoint for tag
    input: str | None = None
    dialect: str | None = None
    weights: str | None = None
    pred: str | None = None
    gold: str | None = None
    corpus: list = field(default_factory=list)        # embed inputs
    dim: int = 250
    window: int = 2
    negatives: int = 5
    embed_epochs: int = 5
    min_count: int = 2
    src: str | None = None
    tgt: str | None = None
    dictionary: str | None = None
    map_mode: str = "orthogonal"
    high: str | None = None
    low_train: str | None = None
    low_test: str | None = None
    fractions: list = field(default_factory=lambda: list(DEFAULT_FRACTIONS))
    modes: list = field(default_factory=lambda: list(MODES))
    seeds: list = field(default_factory=lambda: [0])
    divergence: float = 0.3
    n_sentences: int = 400
    norm_overrides: dict = field(default_factory=dict)
    keep_diacritics: bool = False
    seed: int = 0


# -- config files ---------------------------------------------------------------------

def _parse_value(text):
    """A ``--set`` value as a TOML scalar; bare words stay strings."""
    text = text.strip()
    if text.lower() in ("true", "false"):
        text = text.lower()
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text.strip("\"'")


def parse_config_text(text, source="<config>"):
    """``(experiment, model)`` dicts from TOML text.

    Top-level keys are experiment settings, except that bare
    :class:`ModelConfig` field names (other than ``seed``) go to the model;
    ``[model]`` and ``[experiment]`` tables are explicit.
    """
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise UsageError(f"{source}: {exc}") from None
    experiment, model = {}, {}
    for key, value in doc.items():
        key = key.replace("-", "_")
        if isinstance(value, dict):
            if key not in ("model", "experiment"):
                raise UsageError(f"{source}: unknown section [{key}]")
            target = model if key == "model" else experiment
            target.update({k.replace("-", "_"): v for k, v in value.items()})
        elif key in MODEL_KEYS and key != "seed":
            model[key] = value
        else:
            experiment[key] = value
    return experiment, model


def _pairs(items, what):
    out = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise UsageError(f"{what} expects KEY=VALUE, got {item!r}")
        out[key] = value
    return out


def resolve_config(args):
    """Defaults < config file < flags. Returns ``(ExperimentConfig, ModelConfig)``."""
    experiment, model = {}, {}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config file {path} does not exist")
        experiment, model = parse_config_text(path.read_text(encoding="utf-8"), str(path))
    for key in {f.name for f in fields(ExperimentConfig)}:
        value = getattr(args, key, None)
        if value is not None and value != [] and value != {}:
            experiment[key] = value
    if getattr(args, "vector", None):
        experiment["vectors"] = {**experiment.get("vectors", {}), **_pairs(args.vector, "--vector")}
    if getattr(args, "mapping", None):
        experiment["mappings"] = {**experiment.get("mappings", {}), **_pairs(args.mapping, "--mapping")}
    if getattr(args, "norm", None):
        experiment["norm_overrides"] = {**experiment.get("norm_overrides", {}),
                                        **_pairs(args.norm, "--norm")}
    for key, value in _pairs(getattr(args, "set", None), "--set").items():
        model[key.replace("-", "_")] = _parse_value(value)
    unknown = set(experiment) - {f.name for f in fields(ExperimentConfig)}
    if unknown:
        raise UsageError(f"unknown config keys {sorted(unknown)}")
    for key in ("train", "dev", "lexicons", "corpus", "fractions", "modes", "seeds"):
        if key in experiment and not isinstance(experiment[key], list):
            experiment[key] = [experiment[key]]
    exp = ExperimentConfig(**experiment)
    exp.fractions = check_fractions(exp.fractions)
    bad = [m for m in exp.modes if m not in MODES]
    if bad:
        raise UsageError(f"unknown curve modes {bad}; choose from {list(MODES)}")
    model.setdefault("seed", exp.seed)
    cfg = ModelConfig().replace(**model)
    return exp, cfg


# -- helpers --------------------------------------------------------------------------

def _table(exp):
    overrides = {k: v for k, v in exp.norm_overrides.items()}
    return normalization_table(overrides, strip_diacritics=not exp.keep_diacritics)


def _need(path, what):
    if not path:
        raise UsageError(f"missing {what}")
    if not Path(path).is_file():
        raise UsageError(f"{what} {path} does not exist")
    return path


def _read(path, exp, what="corpus"):
    return parse_corpus(_need(path, what), table=_table(exp))


def _lexicons(exp):
    out = {}
    for path in exp.lexicons:
        lex = AnalyzerLexicon.load(_need(path, "lexicon"), table=_table(exp))
        out[lex.dialect] = lex
    return out


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out, command, exp, cfg, artifacts, extra=None):
    manifest = {
        "command": command,
        "version": __version__,
        "experiment": asdict(exp),
        "model_config": asdict(cfg) if cfg is not None else None,
        "artifacts": {name: {"path": Path(p).name, "sha256": _sha256(p)}
                      for name, p in sorted(artifacts.items())},
    }
    if extra:
        manifest.update(extra)
    path = Path(out) / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n",
                    encoding="utf-8")
    return manifest


def _out(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- commands -------------------------------------------------------------------------

def cmd_synth(args, exp, cfg):
    """Synthetic high/low-resource pair with lexicons, as TSV/JSON-lines files."""
    out = _out(args)
    scfg = SyntheticConfig(divergence=exp.divergence, n_sentences_a=exp.n_sentences,
                           n_sentences_b=exp.n_sentences, n_unlabeled_b=exp.n_sentences)
    pair = generate_synthetic_dialect_pair(scfg, seed=exp.seed)
    hi, lo = scfg.dialects
    b_train, b_dev, b_test = split_corpus(pair.labeled_b, (0.6, 0.2, 0.2), seed=exp.seed)
    a_train, a_dev = split_corpus(pair.labeled_a, (0.8, 0.2), seed=exp.seed)
    files = {f"{hi}_train": a_train, f"{hi}_dev": a_dev, f"{lo}_train": b_train,
             f"{lo}_dev": b_dev, f"{lo}_test": b_test, f"{lo}_unlabeled": pair.unlabeled_b}
    artifacts = {}
    for name, corpus in files.items():
        path = out / f"{name}.tsv"
        write_corpus(corpus, path)
        artifacts[name] = path
    for d, lex in pair.lexicons.items():
        path = out / f"{d}_lexicon.jsonl"
        lex.save(path)
        artifacts[f"{d}_lexicon"] = path
    write_manifest(out, "synth", exp, None, artifacts)
    print(f"wrote {len(artifacts)} files to {out}")
    return 0


def build_model(exp, cfg, labeled, unlabeled, lexicons):
    if cfg.shared_heads and not exp.merge_tags:
        raise ConfigError("shared output heads need merged tag spaces (merge_tags = true)")
    extra_words = {}
    pretrained = {}
    for key, path in exp.vectors.items():
        pretrained[key] = load_vectors(_need(path, "vector file"), label=key)
        targets = [c.dialect for c in labeled] if key == "*" else [key]
        for d in targets:
            extra_words.setdefault(d, set()).update(pretrained[key].words)
    if unlabeled is not None:
        extra_words.setdefault(unlabeled.dialect, set()).update(
            t.norm for s in unlabeled.sentences for t in s.tokens)
    vocabs = build_vocabularies(labeled, list(lexicons.values()),
                                extra_corpora=[unlabeled] if unlabeled is not None else [],
                                extra_words={d: sorted(w) for d, w in extra_words.items()})
    mappings = {d: np.load(_need(p, "mapping")) for d, p in exp.mappings.items()}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return TaggerModel(cfg, vocabs, pretrained=pretrained or None, mappings=mappings or None)


def cmd_train(args, exp, cfg):
    if not exp.train:
        raise UsageError("train needs at least one --train corpus")
    labeled = [_read(p, exp) for p in exp.train]
    dialects = [c.dialect for c in labeled]
    if len(set(dialects)) != len(dialects):
        raise UsageError(f"one labeled corpus per dialect, got {dialects}")
    unlabeled = _read(exp.unlabeled, exp, "unlabeled corpus") if exp.unlabeled else None
    if cfg.adversarial and unlabeled is None:
        raise ConfigError("adversarial training needs --unlabeled")
    lexicons = _lexicons(exp)
    dev = {}
    for p in exp.dev:
        c = _read(p, exp, "dev corpus")
        dev[c.dialect] = c
    model = build_model(exp, cfg, labeled, unlabeled, lexicons)
    out = _out(args)
    log_path, ckpt = out / "train.log.jsonl", out / "model.ckpt"
    history = train(model, labeled, unlabeled, lexicons, dev or None, log_path=log_path,
                    checkpoint_path=ckpt)
    write_manifest(out, "train", exp, cfg, {"checkpoint": ckpt, "log": log_path},
                   {"n_parameters": model.n_parameters(), "epochs": len(history)})
    last = history[-1].to_json() if history else {}
    print(json.dumps({"checkpoint": str(ckpt), "last_epoch": last}, sort_keys=True))
    return 0


def cmd_tag(args, exp, cfg):
    model = load_checkpoint(_need(exp.model, "--model checkpoint"))
    corpus = _read(exp.input, exp, "--input corpus")
    dialect = exp.dialect or corpus.dialect
    if dialect not in model.dialects:
        raise UsageError(f"model knows dialects {model.dialects}, not {dialect!r}")
    corpus = Corpus(corpus.sentences, dialect, corpus.labeled)
    lexicon = _lexicons(exp).get(dialect)
    weights = MatchWeights.load(exp.weights) if exp.weights else None
    preds = predict_corpus(model, corpus, lexicon, return_probs=True)
    chosen = disambiguate(preds, corpus.sentences, lexicon, weights, model.features)
    sentences = [Sentence([Token(t.raw, t.norm, Analysis(a.diac, a.lex, dict(a.tags)))
                           for t, a in zip(s.tokens, row)], dialect)
                 for s, row in zip(corpus.sentences, chosen)]
    out = _out(args)
    path = out / "predicted.tsv"
    write_corpus(Corpus(sentences, dialect, True), path, model.features)
    write_manifest(out, "tag", exp, model.config, {"predicted": path})
    print(f"tagged {corpus.n_tokens} tokens -> {path}")
    return 0


def cmd_eval(args, exp, cfg):
    pred = _read(exp.pred, exp, "--pred corpus")
    gold = _read(exp.gold, exp, "--gold corpus")
    if not pred.labeled or not gold.labeled:
        raise UsageError("eval needs labeled predicted and gold corpora")
    report = evaluate(pred, gold, FEATURES)
    out = _out(args)
    path = out / "metrics.json"
    path.write_text(report.dumps() + "\n", encoding="utf-8")
    write_manifest(out, "eval", exp, None, {"metrics": path})
    print(report.table())
    return 0


def cmd_embed(args, exp, cfg):
    if not exp.corpus or len(exp.corpus) > 2:
        raise UsageError("embed takes one corpus, or two to train a merged space")
    corpora = [_read(p, exp) for p in exp.corpus]
    params = dict(dim=exp.dim, window=exp.window, negatives=exp.negatives,
                  epochs=exp.embed_epochs, seed=exp.seed, min_count=exp.min_count)
    if len(corpora) == 2:
        space = merge_corpora_and_train(corpora[0], corpora[1], **params)
    else:
        space = train_skipgram(corpora[0], label=corpora[0].dialect, **params)
    out = _out(args)
    path = out / "vectors.txt"
    save_vectors(space, path)
    write_manifest(out, "embed", exp, None, {"vectors": path},
                   {"loss_history": space.loss_history, "n_words": len(space)})
    print(f"{len(space)} vectors of dim {space.dim} -> {path}")
    return 0


def cmd_map(args, exp, cfg):
    src = load_vectors(_need(exp.src, "--src vectors"))
    tgt = load_vectors(_need(exp.tgt, "--tgt vectors"))
    pairs = load_seed_dictionary(_need(exp.dictionary, "--dictionary"))
    mapping = map_spaces(src, tgt, pairs, exp.map_mode)
    out = _out(args)
    w_path, v_path = out / "map.npy", out / "mapped_vectors.txt"
    np.save(w_path, mapping.W)
    save_vectors(mapping.apply(src), v_path)
    stats = {"mode": mapping.mode, "pairs_used": mapping.pairs_used,
             "pairs_skipped": len(mapping.pairs_skipped), "rank": mapping.rank,
             "mean_distance_before": mapping.mean_distance_before,
             "mean_distance_after": mapping.mean_distance_after}
    write_manifest(out, "map", exp, None, {"map": w_path, "mapped_vectors": v_path}, {"stats": stats})
    print(json.dumps(stats, sort_keys=True))
    return 0


def cmd_curve(args, exp, cfg):
    high = _read(exp.high, exp, "--high corpus")
    low_train = _read(exp.low_train, exp, "--low-train corpus")
    low_test = _read(exp.low_test, exp, "--low-test corpus")
    unlabeled = _read(exp.unlabeled, exp, "unlabeled corpus") if exp.unlabeled else None
    if "adv" in exp.modes and unlabeled is None:
        raise UsageError("the adversarial curve mode needs --unlabeled")

    def progress(f, mode, seed, acc):
        print(f"fraction={f:g} mode={mode} seed={seed} feats={100 * acc:.2f}", flush=True)

    result = run_curve(high, low_train, low_test, unlabeled, exp.fractions, cfg,
                       seeds=exp.seeds, modes=exp.modes, progress=progress)
    out = _out(args)
    paths = {"csv": out / "curve.csv", "markdown": out / "curve.md", "json": out / "curve.json"}
    paths["csv"].write_text(result.to_csv(), encoding="utf-8")
    paths["markdown"].write_text(result.to_markdown(), encoding="utf-8")
    paths["json"].write_text(json.dumps(result.to_json(), indent=2, sort_keys=True) + "\n",
                             encoding="utf-8")
    write_manifest(out, "curve", exp, cfg, paths)
    print(result.to_markdown())
    return 0


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "tag": cmd_tag, "eval": cmd_eval,
            "embed": cmd_embed, "map": cmd_map, "curve": cmd_curve}


# -- argument parsing -----------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="random seed (default 0)")
    common.add_argument("--config", default=None, help="TOML-like key = value config file")
    common.add_argument("--out", default="run", help="run directory for outputs")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="model hyperparameter override, e.g. --set hidden_size=64")
    common.add_argument("--norm", action="append", metavar="CHAR=REPL",
                        help="normalization-table override (REPL may be empty)")
    common.add_argument("--keep-diacritics", dest="keep_diacritics", action="store_const",
                        const=True, default=None, help="do not strip diacritics when normalizing")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="morphtag", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="write a synthetic dialect pair")
    s.add_argument("--divergence", type=float)
    s.add_argument("--n-sentences", dest="n_sentences", type=int)

    s = sub.add_parser("train", parents=[common], help="train a tagger")
    s.add_argument("--train", action="append", help="labeled corpus (repeat per dialect)")
    s.add_argument("--dev", action="append")
    s.add_argument("--unlabeled")
    s.add_argument("--lexicon", dest="lexicons", action="append")
    s.add_argument("--vector", action="append", metavar="DIALECT=PATH",
                   help="pretrained vectors; DIALECT '*' for a merged space")
    s.add_argument("--mapping", action="append", metavar="DIALECT=PATH",
                   help=".npy map applied to that dialect's vectors")
    s.add_argument("--no-merge-tags", dest="merge_tags", action="store_const", const=False,
                   default=None)

    s = sub.add_parser("tag", parents=[common], help="tag and disambiguate a corpus")
    s.add_argument("--model")
    s.add_argument("--input")
    s.add_argument("--dialect")
    s.add_argument("--lexicon", dest="lexicons", action="append")
    s.add_argument("--weights", help="feature<TAB>weight file for analysis ranking")

    s = sub.add_parser("eval", parents=[common], help="score predicted against gold")
    s.add_argument("--pred")
    s.add_argument("--gold")

    s = sub.add_parser("embed", parents=[common], help="train skip-gram vectors")
    s.add_argument("--corpus", action="append", help="one corpus, or two for a merged space")
    s.add_argument("--dim", type=int)
    s.add_argument("--window", type=int)
    s.add_argument("--negatives", type=int)
    s.add_argument("--epochs", dest="embed_epochs", type=int)
    s.add_argument("--min-count", dest="min_count", type=int)

    s = sub.add_parser("map", parents=[common], help="map one vector space onto another")
    s.add_argument("--src")
    s.add_argument("--tgt")
    s.add_argument("--dictionary", help="seed dictionary, src<TAB>tgt per line")
    s.add_argument("--mode", dest="map_mode", choices=["orthogonal", "least-squares"])

    s = sub.add_parser("curve", parents=[common], help="learning curve over low-resource data")
    s.add_argument("--high")
    s.add_argument("--low-train", dest="low_train")
    s.add_argument("--low-test", dest="low_test")
    s.add_argument("--unlabeled")
    s.add_argument("--fractions", type=lambda t: [float(x) for x in t.split(",")])
    s.add_argument("--modes", type=lambda t: t.split(","))
    s.add_argument("--seeds", type=lambda t: [int(x) for x in t.split(",")])
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        exp, cfg = resolve_config(args)
        return COMMANDS[args.command](args, exp, cfg)
    except (ValueError, OSError, KeyError, FloatingPointError) as exc:
        # ConfigError, CorpusFormatError, UsageError, ... are ValueErrors
        msg = {"error": type(exc).__name__, "command": args.command, "message": str(exc)}
        print(json.dumps(msg, ensure_ascii=False), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
