"""
Concrete lattices: the Golden code, a diagonal number field code over
Q(i, sqrt5) and the Gaussian diagonal baseline
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from .errors import ConfigError, UnsupportedDegree
from .lattice import DEFAULT_BUDGET, MatrixLattice, basis_from_payload, build_lattice, load_basis_json
from .linalg import symmetric_polys_batch

logger = logging.getLogger(__name__)

THETA = (1 + math.sqrt(5)) / 2
THETA_BAR = 1 - THETA
ALPHA = 1 + 1j * (1 - THETA)
ALPHA_BAR = 1 + 1j * (1 - THETA_BAR)

CODE_KINDS = ("golden", "diagonal-nf", "gaussian-diagonal", "custom")
NORMALIZATIONS = ("raw", "unit-minnorm")


def golden_codeword(a: complex, b: complex, c: complex, d: complex) -> np.ndarray:
    """(1/sqrt5) [[a(a+b t), a(c+d t)], [i a'(c+d t'), a'(a+b t')]]"""
    return np.array([
        [ALPHA * (a + b * THETA), ALPHA * (c + d * THETA)],
        [1j * ALPHA_BAR * (c + d * THETA_BAR), ALPHA_BAR * (a + b * THETA_BAR)],
    ], dtype=np.complex128) / math.sqrt(5)


def golden_code() -> MatrixLattice:
    """
    The Golden code as a rank-8 lattice in M_2(C)

    Basis order: a=1, a=i, b=1, b=i, c=1, c=i, d=1, d=i.
    """
    basis = []
    for slot in range(4):
        for unit in (1, 1j):
            symbols = [0j] * 4
            symbols[slot] = unit
            basis.append(golden_codeword(*symbols))
    return build_lattice(basis, name="golden")


def diagonal_nf_code(n: int) -> MatrixLattice:
    """
    Diagonal number field code diag(s_1(x), ..., s_n(x))

    Only n = 2 is implemented: x = a + b*theta with a, b in Z[i],
    embeddings theta -> theta and theta -> 1 - theta.  Coefficient order
    (Re a, Im a, Re b, Im b).
    """
    if n != 2:
        raise UnsupportedDegree(f"diagonal number field code implemented for n = 2 only, got n = {n}")
    basis = [
        np.diag([1.0, 1.0]).astype(np.complex128),
        np.diag([1j, 1j]),
        np.diag([THETA, THETA_BAR]).astype(np.complex128),
        np.diag([1j * THETA, 1j * THETA_BAR]),
    ]
    return build_lattice(basis, name="diagonal-nf-2")


def gaussian_diagonal(n: int) -> MatrixLattice:
    """{diag(z_1, ..., z_n) : z_j in Z[i]}; coefficient order (Re z_1, Im z_1, Re z_2, ...)"""
    if n < 1:
        raise UnsupportedDegree(f"n must be positive, got {n}")
    basis = []
    for j in range(n):
        for unit in (1.0, 1j):
            B = np.zeros((n, n), dtype=np.complex128)
            B[j, j] = unit
            basis.append(B)
    return build_lattice(basis, name=f"gaussian-diagonal-{n}")


def golden_field_norm(a: Tuple[int, int], b: Tuple[int, int]) -> Tuple[int, int]:
    """
    Relative norm N(a + b*theta) = a^2 + ab - b^2 in Z[i], exact

    Equal to the resultant of a + b*t and t^2 - t - 1.  Gaussian integers are
    given as (re, im) pairs.
    """
    def mul(u, v):
        return (u[0] * v[0] - u[1] * v[1], u[0] * v[1] + u[1] * v[0])

    aa, ab, bb = mul(a, a), mul(a, b), mul(b, b)
    return (aa[0] + ab[0] - bb[0], aa[1] + ab[1] - bb[1])


@dataclass
class NvdScan:
    """Minimum |det| observed over a finite set of lattice points"""
    min_abs_det: float
    argmin: Tuple[int, ...]
    points: int
    attained_by: int


def nvd_scan(lattice: MatrixLattice, M: float, budget: Optional[float] = DEFAULT_BUDGET) -> NvdScan:
    """
    Smallest sqrt(det(XX*)) (= |det X| for square codes) over L(M)

    Points within 1e-9 relative of the minimum count as attaining it.
    """
    best, argmin, total = math.inf, (), 0
    values = []
    for batch in lattice.enumerate_batches(M, budget=budget):
        p = symmetric_polys_batch(batch.X)
        dets = np.sqrt(np.maximum(p[:, -1], 0.0))
        values.append(dets)
        j = int(np.argmin(dets))
        if dets[j] < best:
            best, argmin = float(dets[j]), tuple(int(z) for z in batch.coeffs[j])
        total += len(dets)
    attained = 0
    if values:
        all_dets = np.concatenate(values)
        attained = int(np.sum(np.abs(all_dets - best) <= 1e-9 * max(best, 1e-300)))
    return NvdScan(min_abs_det=best, argmin=argmin, points=total, attained_by=attained)


@dataclass
class CodeSpec:
    """Which lattice to build and how to scale it"""
    kind: str
    params: Dict = field(default_factory=dict)
    normalization: str = "raw"

    @classmethod
    def from_dict(cls, payload: Dict) -> "CodeSpec":
        if not isinstance(payload, dict) or "kind" not in payload:
            raise ConfigError(f"code section needs a 'kind', got {payload!r}")
        spec = cls(
            kind=str(payload["kind"]),
            params=dict(payload.get("params") or {}),
            normalization=str(payload.get("normalization", "raw")),
        )
        spec.validate()
        return spec

    def to_dict(self) -> Dict:
        return {"kind": self.kind, "params": dict(self.params), "normalization": self.normalization}

    def validate(self):
        if self.kind not in CODE_KINDS:
            raise ConfigError(f"unknown code kind '{self.kind}', expected one of {CODE_KINDS}")
        if self.normalization not in NORMALIZATIONS:
            raise ConfigError(f"unknown normalization '{self.normalization}', expected one of {NORMALIZATIONS}")

    def resolve(self) -> MatrixLattice:
        """Build the lattice and apply the normalization rule"""
        self.validate()
        if self.kind == "golden":
            lattice = golden_code()
        elif self.kind == "diagonal-nf":
            lattice = diagonal_nf_code(int(self.params.get("n", 2)))
        elif self.kind == "gaussian-diagonal":
            lattice = gaussian_diagonal(int(self.params.get("n", 1)))
        elif "path" in self.params:
            lattice = load_basis_json(self.params["path"])
        elif "basis" in self.params:
            lattice = build_lattice(basis_from_payload(self.params), name=self.params.get("name", "custom"))
        else:
            raise ConfigError("custom code needs params.path or params.n/T/basis")

        if self.normalization == "unit-minnorm":
            beta = 1.0 / math.sqrt(lattice.min_norm_sq)
            lattice = lattice.scaled(beta, name=f"{lattice.name}-unit")
            logger.info(f"Scaled {lattice.name} by {beta:.6g} so that min ||X||_F = 1")
        return lattice
