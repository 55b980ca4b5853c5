"""
Rank-k matrix lattices L = ZB_1 + ... + ZB_k in M_{n x T}(C) and sphere
enumeration of L(M) = {X in L : 0 < ||X||_F <= M}

An n x T complex matrix is identified with a vector of R^{2nT}
(interleaved real/imaginary parts, row-major), so the Frobenius norm becomes
the Euclidean norm and all geometry lives in the k x k real Gram matrix of
the basis.  Enumeration is Fincke-Pohst style: Cholesky factor of the Gram
matrix, top coordinate first, with the per-level intervals expanded as numpy
batches.  Every value of the top coordinate is one partition; partitions are
disjoint and can be processed by independent workers.
"""
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, List, Optional, Sequence, Tuple, TypeVar

import numpy as np
from scipy.special import gammaln

from .errors import BudgetExceeded, DependentBasis, DimensionMismatch, InvalidArgument
from .linalg import SymPolyVector, symmetric_polys

logger = logging.getLogger(__name__)

DEFAULT_BUDGET = 2 ** 31
# relative slack on M^2 so that points exactly on the sphere are kept
BALL_TOLERANCE = 1e-9
CONDITION_LIMIT = 1e12
CHUNK_ROWS = 1 << 16

R = TypeVar("R")


def in_ball(norm_sq, M: float):
    """Membership rule shared by the engine and every oracle: ||X||^2 <= M^2 (1 + 1e-9)"""
    return norm_sq <= M * M * (1.0 + BALL_TOLERANCE)


def realify(Xs: np.ndarray) -> np.ndarray:
    """(..., n, T) complex -> (..., 2nT) real, interleaved real/imag parts"""
    Xs = np.asarray(Xs, dtype=np.complex128)
    stacked = np.stack([Xs.real, Xs.imag], axis=-1)
    return stacked.reshape(*Xs.shape[:-2], -1)


@dataclass(frozen=True, eq=False)
class LatticePoint:
    """A realized lattice point X = sum z_i B_i"""
    coeffs: Tuple[int, ...]
    X: np.ndarray = field(repr=False)
    norm_f: float
    sym: Optional[SymPolyVector] = None

    def with_sym(self) -> "LatticePoint":
        if self.sym is not None:
            return self
        return LatticePoint(self.coeffs, self.X, self.norm_f, symmetric_polys(self.X))


@dataclass
class PointBatch:
    """A block of enumerated points: integer coefficients, matrices and squared norms"""
    coeffs: np.ndarray
    X: np.ndarray
    norm_sq: np.ndarray

    def __len__(self) -> int:
        return len(self.norm_sq)


class MatrixLattice:
    """Validated matrix lattice with cached Cholesky data"""

    def __init__(self, basis: np.ndarray, name: str = "custom"):
        """
        Args:
            basis: complex array of shape (k, n, T)
            name: label carried into reports
        """
        self.basis = np.array(basis, dtype=np.complex128)
        self.basis.setflags(write=False)
        self.name = name

        real_basis = realify(self.basis)              # (k, 2nT)
        self.gram_real = real_basis @ real_basis.T
        self.gram_real.setflags(write=False)

        eig = np.linalg.eigvalsh(self.gram_real)
        if eig[0] <= eig[-1] / CONDITION_LIMIT:
            raise DependentBasis(
                f"basis is linearly dependent over R (Gram eigenvalues {eig[0]:.3e} .. {eig[-1]:.3e})"
            )
        # G = R^T R with R upper triangular
        self._R = np.linalg.cholesky(self.gram_real).T
        diag = np.diag(self._R)
        self._mu = self._R / diag[:, np.newaxis]
        self.min_norm_sq = self._shortest_norm_sq()

    @property
    def k(self) -> int:
        return self.basis.shape[0]

    @property
    def n(self) -> int:
        return self.basis.shape[1]

    @property
    def T(self) -> int:
        return self.basis.shape[2]

    @property
    def covolume(self) -> float:
        return float(np.sqrt(np.linalg.det(self.gram_real)))

    def __repr__(self) -> str:
        return f"MatrixLattice(name={self.name!r}, n={self.n}, T={self.T}, k={self.k})"

    def realize(self, coeffs) -> np.ndarray:
        """Integer coefficients (N, k) or (k,) -> matrices (N, n, T) or (n, T)"""
        coeffs = np.asarray(coeffs)
        return np.tensordot(coeffs.astype(np.float64), self.basis, axes=(-1, 0))

    def point(self, coeffs: Sequence[int]) -> LatticePoint:
        X = self.realize(np.asarray(coeffs, dtype=np.int64))
        return LatticePoint(tuple(int(z) for z in coeffs), X, float(np.linalg.norm(X)))

    def scaled(self, beta: float, name: Optional[str] = None) -> "MatrixLattice":
        """The lattice beta * L"""
        if beta <= 0:
            raise InvalidArgument(f"scale must be positive, got {beta}")
        return MatrixLattice(beta * self.basis, name=name or self.name)

    def predicted_count(self, M: float) -> float:
        """Volume heuristic V_k M^k / covolume"""
        log_vk = 0.5 * self.k * math.log(math.pi) - gammaln(0.5 * self.k + 1)
        return float(math.exp(log_vk + self.k * math.log(M)) / self.covolume)

    # ------------------------------------------------------------------
    # enumeration
    # ------------------------------------------------------------------

    def _top_values(self, M: float) -> np.ndarray:
        r2 = M * M * (1.0 + BALL_TOLERANCE)
        half = math.sqrt(r2) / self._R[-1, -1]
        bound = int(math.floor(half + 1e-9))
        return np.arange(-bound, bound + 1, dtype=np.int64)

    def _check_budget(self, M: float, budget: Optional[float]):
        if M <= 0:
            raise InvalidArgument(f"radius M must be positive, got {M}")
        if budget is None:
            return
        predicted = self.predicted_count(M)
        if predicted > budget:
            raise BudgetExceeded(
                f"predicted {predicted:.3e} points in L({M:g}) for rank {self.k}, budget {budget:.3e}"
            )

    def _expand(self, Z: np.ndarray, rem: np.ndarray, level: int) -> Tuple[np.ndarray, np.ndarray]:
        """All integer values of coordinate `level` compatible with the remaining budget"""
        r_ll = self._R[level, level]
        center = -(Z[:, level + 1:] @ self._mu[level, level + 1:])
        half = np.sqrt(np.maximum(rem, 0.0)) / r_ll
        lo = np.ceil(center - half - 1e-9).astype(np.int64)
        hi = np.floor(center + half + 1e-9).astype(np.int64)
        counts = np.maximum(hi - lo + 1, 0)
        total = int(counts.sum())
        rows = np.repeat(np.arange(len(Z)), counts)
        starts = np.cumsum(counts) - counts
        offsets = np.arange(total, dtype=np.int64) - np.repeat(starts, counts)
        values = lo[rows] + offsets

        Z2 = Z[rows]
        Z2[:, level] = values
        rem2 = rem[rows] - (r_ll * (values - center[rows])) ** 2
        return Z2, rem2

    def _descend(self, Z: np.ndarray, rem: np.ndarray, level: int) -> Iterator[np.ndarray]:
        if level < 0:
            yield Z
            return
        Z2, rem2 = self._expand(Z, rem, level)
        for start in range(0, len(Z2), CHUNK_ROWS):
            yield from self._descend(Z2[start:start + CHUNK_ROWS], rem2[start:start + CHUNK_ROWS], level - 1)

    def _partition_batches(self, value: int, M: float, dedup_signs: bool) -> Iterator[PointBatch]:
        """All points of L(M) whose top coordinate equals `value`"""
        if dedup_signs and value < 0:
            return
        k = self.k
        r2 = M * M * (1.0 + BALL_TOLERANCE)
        Z = np.zeros((1, k), dtype=np.int64)
        Z[0, k - 1] = value
        rem = np.array([r2 - (self._R[-1, -1] * value) ** 2])
        for coeffs in self._descend(Z, rem, k - 2):
            coeffs = coeffs[np.any(coeffs != 0, axis=1)]
            if dedup_signs:
                # keep the representative whose last nonzero coefficient is positive
                last = k - 1 - np.argmax(coeffs[:, ::-1] != 0, axis=1)
                coeffs = coeffs[coeffs[np.arange(len(coeffs)), last] > 0]
            if len(coeffs) == 0:
                continue
            X = self.realize(coeffs)
            norm_sq = np.sum(np.abs(X) ** 2, axis=(1, 2))
            keep = in_ball(norm_sq, M)
            if not np.all(keep):
                coeffs, X, norm_sq = coeffs[keep], X[keep], norm_sq[keep]
            if len(norm_sq):
                yield PointBatch(coeffs, X, norm_sq)

    def map_partitions(
        self,
        M: float,
        fn: Callable[[Iterator[PointBatch]], R],
        dedup_signs: bool = False,
        budget: Optional[float] = DEFAULT_BUDGET,
        threads: int = 1,
    ) -> List[R]:
        """
        Apply `fn` to the batch stream of every partition of L(M)

        Returns:
            Per-partition results, ordered by top coordinate value (independent
            of the number of worker threads)
        """
        self._check_budget(M, budget)
        values = self._top_values(M)

        def work(value):
            return fn(self._partition_batches(int(value), M, dedup_signs))

        if threads <= 1:
            return [work(v) for v in values]
        with ThreadPoolExecutor(max_workers=threads) as executor:
            return list(executor.map(work, values))

    def enumerate_batches(
        self,
        M: float,
        dedup_signs: bool = False,
        budget: Optional[float] = DEFAULT_BUDGET,
    ) -> Iterator[PointBatch]:
        """Stream L(M) as numpy batches"""
        self._check_budget(M, budget)
        for value in self._top_values(M):
            yield from self._partition_batches(int(value), M, dedup_signs)

    def enumerate(
        self,
        M: float,
        dedup_signs: bool = False,
        budget: Optional[float] = DEFAULT_BUDGET,
    ) -> Iterator[LatticePoint]:
        """
        Every nonzero point with ||X||_F <= M exactly once (both of +-X unless
        dedup_signs is set)
        """
        for batch in self.enumerate_batches(M, dedup_signs=dedup_signs, budget=budget):
            for coeffs, X, nsq in zip(batch.coeffs, batch.X, batch.norm_sq):
                yield LatticePoint(tuple(int(z) for z in coeffs), X, float(math.sqrt(nsq)))

    def shell_counts(self, radii: Sequence[float], budget: Optional[float] = DEFAULT_BUDGET) -> List[int]:
        """|L(M)| for each radius of an increasing list, from one enumeration"""
        radii = [float(r) for r in radii]
        if any(b <= a for a, b in zip(radii, radii[1:])):
            raise InvalidArgument(f"radii must be increasing, got {radii}")
        # bin edges follow the same membership rule as in_ball
        edges = np.array(radii) ** 2 * (1.0 + BALL_TOLERANCE)
        counts = np.zeros(len(radii), dtype=np.int64)
        for batch in self.enumerate_batches(radii[-1], budget=budget):
            bins = np.searchsorted(edges, batch.norm_sq, side="left")
            counts += np.bincount(bins, minlength=len(radii) + 1)[:len(radii)]
        return [int(c) for c in np.cumsum(counts)]

    def _shortest_norm_sq(self) -> float:
        # the shortest basis vector bounds the shortest lattice vector
        radius = math.sqrt(float(np.min(np.diag(self.gram_real))))
        best = math.inf
        for batch in self.enumerate_batches(radius, budget=None):
            best = min(best, float(batch.norm_sq.min()))
        return best


def build_lattice(basis: Sequence, name: str = "custom", size_reduce: bool = False) -> MatrixLattice:
    """
    Validate basis matrices and build a MatrixLattice

    Args:
        basis: nonempty list of equally shaped complex matrices
        name: lattice label
        size_reduce: apply a size-reduction pass to the basis first

    Returns:
        MatrixLattice with gramReal and minNormSq computed
    """
    if len(basis) == 0:
        raise DimensionMismatch("basis must be nonempty")
    mats = []
    for B in basis:
        B = np.asarray(B, dtype=np.complex128)
        if B.ndim == 0:
            B = B.reshape(1, 1)
        if B.ndim != 2:
            raise DimensionMismatch(f"basis matrices must be 2-D, got shape {B.shape}")
        mats.append(B)
    shapes = {B.shape for B in mats}
    if len(shapes) != 1:
        raise DimensionMismatch(f"inconsistent basis shapes: {sorted(shapes)}")
    stacked = np.stack(mats)
    if not np.all(np.isfinite(stacked)):
        raise DimensionMismatch("basis entries must be finite")
    n, T = stacked.shape[1:]
    if len(mats) > 2 * n * T:
        raise DependentBasis(f"rank {len(mats)} exceeds real dimension {2 * n * T}")
    if size_reduce:
        stacked = _size_reduce(stacked)
    lattice = MatrixLattice(stacked, name=name)
    logger.debug(f"Built {lattice}: min_norm_sq={lattice.min_norm_sq:.6g}, covolume={lattice.covolume:.6g}")
    return lattice


def _size_reduce(basis: np.ndarray) -> np.ndarray:
    """Size reduction |mu_ij| <= 1/2 against the Gram-Schmidt vectors (no swaps)"""
    vecs = realify(basis).copy()
    k = len(vecs)
    coeffs = np.eye(k, dtype=np.int64)
    for i in range(1, k):
        for j in range(i - 1, -1, -1):
            ortho = _gram_schmidt(vecs)
            mu = vecs[i] @ ortho[j] / (ortho[j] @ ortho[j])
            q = int(round(mu))
            if q:
                vecs[i] -= q * vecs[j]
                coeffs[i] -= q * coeffs[j]
    return np.tensordot(coeffs.astype(np.float64), basis, axes=(1, 0))


def _gram_schmidt(vecs: np.ndarray) -> np.ndarray:
    ortho = np.zeros_like(vecs)
    for i, v in enumerate(vecs):
        w = v.copy()
        for j in range(i):
            w -= (v @ ortho[j]) / (ortho[j] @ ortho[j]) * ortho[j]
        ortho[i] = w
    return ortho


def load_basis_json(path: str, name: Optional[str] = None) -> MatrixLattice:
    """
    Load {"n":..., "T":..., "basis": [[[re, im], ...], ...]} with one flat
    row-major entry list per basis matrix
    """
    path = Path(path)
    with open(path, "r", encoding="utf-8") as f:
        payload = json.load(f)
    return build_lattice(basis_from_payload(payload), name=name or path.stem)


def basis_from_payload(payload: dict) -> List[np.ndarray]:
    n, T = int(payload["n"]), int(payload["T"])
    mats = []
    for entries in payload["basis"]:
        if len(entries) != n * T:
            raise DimensionMismatch(f"basis matrix has {len(entries)} entries, expected {n * T}")
        flat = np.array([complex(re, im) for re, im in entries], dtype=np.complex128)
        mats.append(flat.reshape(n, T))
    return mats


def save_basis_json(lattice: MatrixLattice, path: str):
    payload = {
        "n": lattice.n,
        "T": lattice.T,
        "basis": [
            [[float(z.real), float(z.imag)] for z in B.reshape(-1)]
            for B in lattice.basis
        ],
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2)
