"""Noise-robustness workbench for retrieval-augmented LLM translation."""

__version__ = "0.1.0"
