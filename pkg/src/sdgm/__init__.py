"""Statistic-based dynamic gradient modulation for triplet descriptor learning."""

__version__ = "0.1.0"
