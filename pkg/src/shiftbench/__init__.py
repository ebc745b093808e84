"""Benchmark uncertainty quantification on 1-D biosignals under controlled dataset shift."""

__version__ = "0.1.0"
