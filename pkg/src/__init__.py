"""Inverse determinant sums, DMT bounds and simulations for matrix lattice codes"""

__version__ = "0.1.0"
