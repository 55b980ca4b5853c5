"""
Shared fixtures: the three shipped lattices, a seeded generator and a
brute-force box scan used as an enumeration oracle
"""
import importlib.util
import itertools
import math
import sys
from pathlib import Path

import numpy as np
import pytest

# Add project root to path
ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT))

from src.codes import diagonal_nf_code, gaussian_diagonal, golden_code
from src.lattice import in_ball


@pytest.fixture(scope="session")
def zi():
    """Z[i] as the rank-2 lattice of 1x1 complex matrices"""
    return gaussian_diagonal(1)


@pytest.fixture(scope="session")
def golden():
    return golden_code()


@pytest.fixture(scope="session")
def diag_nf():
    return diagonal_nf_code(2)


@pytest.fixture
def rng():
    return np.random.default_rng(20131101)


def coefficient_bound(lattice, M: float) -> int:
    """|z_j| <= M sqrt((G^-1)_jj) for every point of L(M)"""
    inv = np.linalg.inv(lattice.gram_real)
    return int(math.floor(M * math.sqrt(float(np.max(np.diag(inv)))) + 1e-9)) + 1


def scan_box(lattice, M: float, bound: int = None):
    """
    Every nonzero point of L(M) by scanning the coefficient box [-bound, bound]^k

    Returns:
        (coeffs, X, norm_sq) sorted lexicographically by coefficients
    """
    bound = coefficient_bound(lattice, M) if bound is None else bound
    coeffs = np.array(list(itertools.product(range(-bound, bound + 1), repeat=lattice.k)), dtype=np.int64)
    coeffs = coeffs[np.any(coeffs != 0, axis=1)]
    X = lattice.realize(coeffs)
    norm_sq = np.sum(np.abs(X) ** 2, axis=(1, 2))
    keep = in_ball(norm_sq, M)
    return coeffs[keep], X[keep], norm_sq[keep]


@pytest.fixture(scope="session")
def box_scan():
    return scan_box


@pytest.fixture(scope="session")
def cli():
    """The scripts/detsum.py module"""
    spec = importlib.util.spec_from_file_location("detsum_cli", ROOT / "scripts" / "detsum.py")
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module
