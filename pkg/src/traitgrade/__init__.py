"""traitgrade: holistic and trait-level essay scoring, end to end.

Raw essay text in, integer scores out: tokenizer and vocabulary, a small
reverse-mode tensor engine, the CNN-attention-LSTM scoring stacks (single-
and multi-task), RMSProp training with five-fold evaluation, and quadratic
weighted kappa reporting.
"""

__version__ = "0.1.0"
