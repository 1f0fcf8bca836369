"""Respiratory sound classification: Mel spectrograms, oversampling, a small CNN, k-fold evaluation."""

__version__ = "0.1.0"
