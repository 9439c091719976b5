"""Sequence tagger for product-attribute extraction: BiLSTM encoder with
optional self-attention and a linear-chain CRF output layer, trained by
plain SGD with hand-derived gradients."""

from .corpus import BioTag, LabeledSequence, Span, Vocab, build_vocab, decode_spans, encode_bio, tokenize
from .evaluation import EvalReport
from .training import Model, ModelConfig, train

__all__ = [
    "BioTag", "LabeledSequence", "Span", "Vocab", "build_vocab", "decode_spans", "encode_bio",
    "tokenize", "EvalReport", "Model", "ModelConfig", "train",
]
__version__ = "0.1.0"
