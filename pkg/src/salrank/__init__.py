"""Instance-level relative saliency ranking toolkit."""

__version__ = "0.1.0"
