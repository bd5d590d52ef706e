"""Reverse contrastive learning for Chinese spelling check.

Pushes apart the hidden representations of same-pinyin and confusion-set
characters that share a minibatch, on top of a pluggable correction backbone.
"""

from .corpus import Batch, SentencePair, inject_errors, load_corpus, make_batches
from .evaluation import EvalReport, case_report, evaluate, postfilter_de
from .kernels import BACKEND
from .lexicon import Lexicon, in_confusion, load_lexicon, same_pinyin, simplify
from .model import BackboneConfig, TransformerBackbone, correction_loss, predict
from .rcl import (LossBreakdown, NegativeSets, RclConfig, mine_pairs, rcl_confusion_loss,
                  rcl_gradients, rcl_pinyin_loss, total_loss)
from .train import TrainConfig, sweep_alpha, train

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "Batch", "BackboneConfig", "EvalReport", "Lexicon", "LossBreakdown",
    "NegativeSets", "RclConfig", "SentencePair", "TrainConfig", "TransformerBackbone",
    "case_report", "correction_loss", "evaluate", "in_confusion", "inject_errors",
    "load_corpus", "load_lexicon", "make_batches", "mine_pairs", "postfilter_de", "predict",
    "rcl_confusion_loss", "rcl_gradients", "rcl_pinyin_loss", "same_pinyin", "simplify",
    "sweep_alpha", "total_loss", "train",
]
