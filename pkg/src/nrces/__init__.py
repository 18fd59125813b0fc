"""Noise-robust span-based NER: loss kernels, a small span classifier, and
the experiment harness around them."""

__version__ = "0.1.0"
