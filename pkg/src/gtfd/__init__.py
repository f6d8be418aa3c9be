"""Learning denoisers from noisy measurements and noise samples with two Wasserstein critics."""

__version__ = "0.1.0"
