"""Coherent interferometric imaging followed by l1 deconvolution in random media."""

__version__ = "0.1.0"
