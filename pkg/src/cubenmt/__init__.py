"""Attention encoder-decoder inference with beam search and cube-pruning decoders."""

from .decoder import ACP, NBS, NCP, STRATEGIES, beam_search, translate
from .model import BOS, EOS, UNK, Dims, ModelParams, Vocabulary, decode_step, encode

__version__ = "0.1.0"

__all__ = ["ACP", "NBS", "NCP", "STRATEGIES", "beam_search", "translate", "BOS", "EOS", "UNK", "Dims",
           "ModelParams", "Vocabulary", "decode_step", "encode"]
