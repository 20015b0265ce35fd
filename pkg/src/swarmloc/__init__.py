"""Synthetic training data, two-stage robot localization and evaluation tools."""
__version__ = "0.1.0"
