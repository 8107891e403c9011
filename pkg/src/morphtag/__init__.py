"""Multitask Bi-LSTM morphological tagging with dialect adaptation, in numpy."""

__version__ = "0.1.0"

from .autodiff import Graph, Tensor, gradient_check, parameter
from .data import (FEATURES, Analysis, AnalyzerLexicon, Corpus, Sentence, Token,
                   build_vocabularies, make_adversarial_batch, make_batches, parse_corpus)
from .disambig import MatchWeights, MetricsReport, evaluate, rank_analyses
from .embeddings import EmbeddingSpace, map_spaces, train_skipgram
from .synthetic import SyntheticConfig, generate_synthetic_dialect_pair
from .tagger import ModelConfig, TaggerModel, load_checkpoint, predict, save_checkpoint, train

__all__ = [
    "Analysis", "AnalyzerLexicon", "Corpus", "EmbeddingSpace", "FEATURES", "Graph",
    "MatchWeights", "MetricsReport", "ModelConfig", "Sentence", "SyntheticConfig",
    "TaggerModel", "Tensor", "Token", "build_vocabularies", "evaluate",
    "generate_synthetic_dialect_pair", "gradient_check", "load_checkpoint",
    "make_adversarial_batch", "make_batches", "map_spaces", "parameter", "parse_corpus",
    "predict", "rank_analyses", "save_checkpoint", "train", "train_skipgram",
]
