"""
Small dense complex matrix arithmetic and the symmetric-polynomial
decomposition of the shifted determinant det(I + cXX*)

For a matrix X with Gram matrix XX* (eigenvalues l_1..l_n) we use the
normalized elementary symmetric means

    p_i = e_i(l_1, ..., l_n) / binom(n, i),   p_0 = 1

so that det(I + cXX*) = sum_i binom(n, i) p_i c^i, p_1 = tr(XX*)/n and
p_n = det(XX*).
"""
import itertools
import logging
from dataclasses import dataclass
from math import comb
from typing import Dict, Optional, Tuple

import numpy as np

from .errors import DimensionMismatch, InvalidArgument


logger = logging.getLogger(__name__)

# Principal-minor expansion is used up to this size, Faddeev-LeVerrier above
MINOR_EXPANSION_MAX_N = 4
CLAMP_RELATIVE = 1e-12


@dataclass(frozen=True)
class SymPolyVector:
    """Normalized symmetric means p_1..p_n of the eigenvalues of XX*"""
    n: int
    p: Tuple[float, ...]

    def __getitem__(self, i: int) -> float:
        """1-based access, p[0] = 1"""
        if i == 0:
            return 1.0
        return self.p[i - 1]

    @property
    def trace(self) -> float:
        """tr(XX*) = ||X||_F^2"""
        return self.n * self.p[0]

    @property
    def det(self) -> float:
        """det(XX*)"""
        return self.p[-1]

    def elementary(self) -> np.ndarray:
        """e_0..e_n"""
        return np.array([1.0] + [comb(self.n, i) * self.p[i - 1] for i in range(1, self.n + 1)])


def as_matrix(X) -> np.ndarray:
    """Validate and convert to a finite 2-D complex128 array"""
    X = np.asarray(X, dtype=np.complex128)
    if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
        raise DimensionMismatch(f"expected a non-empty 2-D matrix, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise InvalidArgument("matrix entries must be finite")
    return X


def gram(X) -> np.ndarray:
    """
    Hermitian Gram matrix XX*

    The lower triangle is the exact conjugate of the stored upper triangle
    and the diagonal is real.
    """
    X = as_matrix(X)
    G = X @ X.conj().T
    return _hermitize(G)


def gram_batch(Xs: np.ndarray) -> np.ndarray:
    """Gram matrices of a stack of shape (N, n, T)"""
    G = Xs @ np.conj(np.swapaxes(Xs, -1, -2))
    return _hermitize(G)


def _hermitize(G: np.ndarray) -> np.ndarray:
    upper = np.triu(G, 1)
    diag = np.real(np.diagonal(G, axis1=-2, axis2=-1))
    H = upper + np.conj(np.swapaxes(upper, -1, -2))
    idx = np.arange(G.shape[-1])
    H[..., idx, idx] = diag
    return H


def elementary_symmetric_batch(G: np.ndarray) -> np.ndarray:
    """
    Elementary symmetric polynomials e_1..e_n of the eigenvalues of a stack
    of Hermitian matrices, without an eigensolver

    Args:
        G: array of shape (N, n, n)

    Returns:
        Real array of shape (N, n), column i-1 holding e_i
    """
    N, n = G.shape[0], G.shape[-1]
    e = np.empty((N, n), dtype=np.float64)
    if n <= MINOR_EXPANSION_MAX_N:
        # e_i = sum of the i x i principal minors
        e[:, 0] = np.real(np.trace(G, axis1=1, axis2=2))
        for i in range(2, n + 1):
            total = np.zeros(N)
            for idx in itertools.combinations(range(n), i):
                sub = G[:, idx, :][:, :, idx]
                total += np.real(np.linalg.det(sub))
            e[:, i - 1] = total
        return e

    # Faddeev-LeVerrier: det(tI - G) = sum_j c_j t^j, e_k = (-1)^k c_{n-k}
    eye = np.broadcast_to(np.eye(n, dtype=G.dtype), G.shape)
    Mk = np.zeros_like(G)
    c_prev = np.ones(N, dtype=G.dtype)
    for k in range(1, n + 1):
        Mk = G @ Mk + c_prev[:, np.newaxis, np.newaxis] * eye
        c_k = -np.trace(G @ Mk, axis1=1, axis2=2) / k
        e[:, k - 1] = (-1) ** k * np.real(c_k)
        c_prev = c_k
    return e


def symmetric_polys_batch(Xs: np.ndarray) -> np.ndarray:
    """
    Normalized symmetric means p_1..p_n for a stack of matrices

    Args:
        Xs: array of shape (N, n, T)

    Returns:
        Array of shape (N, n)
    """
    G = gram_batch(Xs)
    n = G.shape[-1]
    e = elementary_symmetric_batch(G)
    binoms = np.array([comb(n, i) for i in range(1, n + 1)], dtype=np.float64)
    p = e / binoms

    # PSD forces p_i >= 0; clamp round-off below 1e-12 * p_1^i
    powers = np.arange(1, n + 1)
    scale = CLAMP_RELATIVE * np.power(np.abs(p[:, :1]), powers)
    tiny_negative = (p < 0) & (-p <= scale)
    if np.any(tiny_negative):
        p = np.where(tiny_negative, 0.0, p)
    if np.any(p < 0):
        logger.warning(f"{int(np.sum(p < 0))} symmetric means negative beyond round-off")
    return p


def symmetric_polys(X) -> SymPolyVector:
    """p_1..p_n of XX* via principal minors of the Gram matrix"""
    X = as_matrix(X)
    p = symmetric_polys_batch(X[np.newaxis])[0]
    return SymPolyVector(n=X.shape[0], p=tuple(float(v) for v in p))


def shifted_det_from_polys(p: np.ndarray, c: float) -> np.ndarray:
    """
    det(I + cXX*) = 1 + sum_i binom(n, i) p_i c^i, evaluated by Horner

    Args:
        p: array (..., n) of symmetric means
        c: nonnegative shift
    """
    if c < 0:
        raise InvalidArgument(f"shift c must be nonnegative, got {c}")
    p = np.asarray(p, dtype=np.float64)
    n = p.shape[-1]
    acc = np.zeros(p.shape[:-1])
    for i in range(n, 0, -1):
        acc = (acc + comb(n, i) * p[..., i - 1]) * c
    return 1.0 + acc


def shifted_det(X, c: float) -> float:
    """det(I + cXX*) >= 1"""
    sym = symmetric_polys(X)
    return float(shifted_det_from_polys(np.array(sym.p), c))


def inequality_report(sym: SymPolyVector, slack: float = 1e-9) -> Dict[str, Optional[bool]]:
    """
    Check McLaurin, Newton and the doubling-root corollary on one vector

    Returns:
        Dictionary with keys mclaurin, newton, doubling_root (None when
        det(XX*) < 1, where the corollary makes no claim)
    """
    n = sym.n
    p = [1.0] + list(sym.p)

    mclaurin = all(
        p[i] ** (1.0 / i) >= p[i + 1] ** (1.0 / (i + 1)) * (1 - slack)
        for i in range(1, n)
    )
    newton = all(
        p[i] ** 2 >= p[i - 1] * p[i + 1] * (1 - slack)
        for i in range(1, n)
    )
    doubling_root = None
    if p[n] >= 1.0:
        doubling_root = all(
            p[k] >= p[1] ** (1.0 / 2 ** (k - 1)) * (1 - slack)
            for k in range(1, n)
        )
    return {"mclaurin": mclaurin, "newton": newton, "doubling_root": doubling_root}
