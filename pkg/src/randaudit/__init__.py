"""Tools for checking whether a defense's robustness comes from its randomness."""

__version__ = "0.1.0"
