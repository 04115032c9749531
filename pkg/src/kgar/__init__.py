"""Attention-weighted relational graph convolution for knowledge graphs."""

__version__ = "0.1.0"
