"""Ground states of spin lattices by a power method learned with kernel ridge regression."""

__version__ = "0.1.0"
