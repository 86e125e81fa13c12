"""Back-propagation network with batch normalization for tabular diabetes diagnosis."""

__version__ = "0.1.0"
