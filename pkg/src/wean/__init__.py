"""Sequence-to-sequence text generation with a retrieval-style word generator.

The package provides a small float64 autodiff engine, LSTM encoder-decoder
layers with attention, two interchangeable word generators (a conventional
linear-softmax head and a WEAN head that scores shared word embeddings
against a query vector), training with Adam, greedy/beam decoding, and
BLEU/ROUGE evaluation.
"""

from wean.tensor import Tensor, Graph, backward, no_grad

__all__ = ["Tensor", "Graph", "backward", "no_grad"]

__version__ = "0.1.0"
