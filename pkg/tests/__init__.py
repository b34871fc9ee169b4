"""
IsoFormer Test Suite

Unit tests for tokenization, encoders, aggregation, the end-to-end model,
data preparation, training and attention analysis, plus command-line tests.
"""

__version__ = "0.1.0"
