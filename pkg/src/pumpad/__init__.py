"""Vibration anomaly-detection benchmark: windowing, features, detectors,
cross-validated sweeps and group comparisons."""

__version__ = "0.1.0"
