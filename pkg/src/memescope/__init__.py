"""Explanation toolkit for single-stream text + region transformer classifiers."""

__version__ = "0.1.0"
