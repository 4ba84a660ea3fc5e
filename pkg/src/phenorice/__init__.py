"""Phenology-driven paddy rice mapping with district-calibrated thresholds."""

__version__ = "0.1.0"
