"""Random-forest estimation of first-order quantile-oriented sensitivity indices."""

__version__ = "0.1.0"
