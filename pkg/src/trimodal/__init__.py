"""Unified text/speech/motion token pipeline.

Subpackages cover the full loop: 6D rotation geometry, the residual-VQ
motion codec, the unified token vocabulary and response grammar, segment
recombination, the rehearsal training mixture, a toy autoregressive model,
grammar-constrained decoding, and gesture evaluation metrics.
"""

__version__ = "0.1.0"
