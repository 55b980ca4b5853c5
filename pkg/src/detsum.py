"""
Inverse determinant sums over L(M)

Families:
    approximate  sum |det X|^{-m}                                  (square codes)
    shifted      sum det(I + cXX*)^{-m}
    mixed        sum ||X||_F^{-2i} det(XX*)^{-(m-i)}               (c-free factor)

plus the dyadic summing machinery used to turn partial-sum hypotheses into
explicit bounds.  All sums are accumulated per partition with exactly
rounded batch sums merged by a compensated accumulator, in enumeration order.
"""
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, Iterator, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .errors import HypothesisViolated, InvalidArgument, SingularPoint
from .lattice import BALL_TOLERANCE, DEFAULT_BUDGET, MatrixLattice, PointBatch
from .linalg import shifted_det_from_polys, symmetric_polys_batch
from .utils import NeumaierSum

logger = logging.getLogger(__name__)

FAMILIES = ("approximate", "shifted", "mixed")
# det(XX*) <= 1e-12 * (||X||_F^2 / n)^n counts as a vanishing determinant
SINGULAR_RTOL = 1e-12
ORDER_RTOL = 1e-9
SATURATION_FRACTION = 0.01


@dataclass(frozen=True)
class SumSpec:
    """One sum family with its parameters"""
    family: str
    m: float
    c: float = 0.0
    i: int = 0
    M: float = 1.0
    dedup_signs: bool = False
    skip_singular: bool = False

    def validate(self, lattice: Optional[MatrixLattice] = None):
        if self.family not in FAMILIES:
            raise InvalidArgument(f"unknown sum family '{self.family}', expected one of {FAMILIES}")
        if self.m <= 0:
            raise InvalidArgument(f"exponent m must be positive, got {self.m}")
        if self.c < 0:
            raise InvalidArgument(f"shift c must be nonnegative, got {self.c}")
        if self.M <= 0:
            raise InvalidArgument(f"radius M must be positive, got {self.M}")
        if self.family == "mixed" and not (0 <= self.i <= self.m):
            raise InvalidArgument(f"mixed split index must satisfy 0 <= i <= m, got i={self.i}, m={self.m}")
        if self.family == "approximate" and lattice is not None and lattice.n != lattice.T:
            raise InvalidArgument(f"approximate sum needs square codewords, got {lattice.n}x{lattice.T}")

    @property
    def label(self) -> str:
        if self.family == "approximate":
            return f"approximate(m={self.m:g})"
        if self.family == "shifted":
            return f"shifted(m={self.m:g},c={self.c:g})"
        return f"mixed(m={self.m:g},i={self.i})"

    def at(self, M: float) -> "SumSpec":
        return replace(self, M=float(M))


@dataclass
class SumCurve:
    """(M, value, pointCount) samples of one sum family"""
    spec: SumSpec
    points: List[Tuple[float, float, int]] = field(default_factory=list)
    error_bound: float = 0.0

    @property
    def radii(self) -> np.ndarray:
        return np.array([p[0] for p in self.points], dtype=np.float64)

    @property
    def values(self) -> np.ndarray:
        return np.array([p[1] for p in self.points], dtype=np.float64)

    @property
    def counts(self) -> np.ndarray:
        return np.array([p[2] for p in self.points], dtype=np.int64)

    def to_frame(self, with_spec: bool = False) -> pd.DataFrame:
        df = pd.DataFrame(self.points, columns=["M", "value", "pointCount"])
        if with_spec:
            df.insert(0, "curve", self.spec.label)
            df.insert(1, "family", self.spec.family)
            df.insert(2, "m", self.spec.m)
            df.insert(3, "c", self.spec.c)
            df.insert(4, "i", self.spec.i)
        return df

    def to_csv(self, path: str):
        self.to_frame().to_csv(path, index=False, float_format="%.17g", lineterminator="\n")

    def to_json(self) -> Dict:
        spec = asdict(self.spec)
        spec.pop("M")
        return {
            "spec": spec,
            "points": [{"M": M, "value": v, "pointCount": n} for M, v, n in self.points],
            "error_bound": self.error_bound,
        }

    @classmethod
    def from_frame(cls, df: pd.DataFrame, spec: Optional[SumSpec] = None) -> "SumCurve":
        spec = spec or SumSpec(family="approximate", m=1)
        points = [(float(r.M), float(r.value), int(r.pointCount)) for r in df.itertuples(index=False)]
        return cls(spec=spec, points=points)


class SumResult(NamedTuple):
    value: float
    point_count: int
    error_bound: float


class BoundCheck(NamedTuple):
    lhs: float
    rhs: float
    holds: bool


class DyadicResult(NamedTuple):
    empirical_sum: float
    proof_bound: float
    regime: str
    partition_bound: float


# ----------------------------------------------------------------------
# term evaluation
# ----------------------------------------------------------------------

def _singular_mask(det_gram: np.ndarray, norm_sq: np.ndarray, n: int) -> np.ndarray:
    return det_gram <= SINGULAR_RTOL * (norm_sq / n) ** n


def _terms(batch: PointBatch, spec: SumSpec, n: int) -> np.ndarray:
    """Per-point terms of the requested family (singular points dropped or rejected)"""
    if spec.family == "shifted":
        p = symmetric_polys_batch(batch.X)
        return shifted_det_from_polys(p, spec.c) ** (-spec.m)

    needs_det = spec.family == "approximate" or spec.i < spec.m
    if spec.family == "approximate":
        det_gram = np.abs(np.linalg.det(batch.X)) ** 2
    else:
        det_gram = symmetric_polys_batch(batch.X)[:, -1]

    keep = None
    if needs_det:
        singular = _singular_mask(det_gram, batch.norm_sq, n)
        if np.any(singular):
            if not spec.skip_singular:
                j = int(np.argmax(singular))
                raise SingularPoint(
                    f"det(X) = 0 at coefficients {tuple(int(z) for z in batch.coeffs[j])} ({spec.label})"
                )
            keep = ~singular

    if spec.family == "approximate":
        terms = det_gram ** (-0.5 * spec.m)
    else:
        terms = batch.norm_sq ** (-float(spec.i)) * det_gram ** (-(spec.m - spec.i)) if needs_det \
            else batch.norm_sq ** (-float(spec.i))
    if keep is not None:
        terms = terms[keep]
    return terms


def _partition_sum(spec: SumSpec, n: int):
    def reduce(batches: Iterator[PointBatch]) -> Tuple[NeumaierSum, int]:
        acc, count = NeumaierSum(), 0
        for batch in batches:
            terms = _terms(batch, spec, n)
            acc.add_batch(terms)
            count += len(terms)
        return acc, count
    return reduce


def evaluate(
    lattice: MatrixLattice,
    spec: SumSpec,
    threads: int = 1,
    budget: Optional[float] = DEFAULT_BUDGET,
) -> SumResult:
    """Evaluate one sum over L(spec.M)"""
    spec.validate(lattice)
    parts = lattice.map_partitions(
        spec.M, _partition_sum(spec, lattice.n),
        dedup_signs=spec.dedup_signs, budget=budget, threads=threads,
    )
    total, count = NeumaierSum(), 0
    for acc, n_points in parts:
        total.merge(acc)
        count += n_points
    value, error = total.value, total.error_bound
    if spec.dedup_signs:
        # every family is invariant under X -> -X
        value, count, error = 2.0 * value, 2 * count, 2.0 * error
    return SumResult(value=value, point_count=count, error_bound=error)


def approximate_sum(lattice: MatrixLattice, m: float, M: float, skip_singular: bool = False,
                    dedup_signs: bool = False, threads: int = 1,
                    budget: Optional[float] = DEFAULT_BUDGET) -> float:
    """S_L^m(M) = sum over L(M) of |det X|^{-m}"""
    spec = SumSpec("approximate", m=m, M=M, skip_singular=skip_singular, dedup_signs=dedup_signs)
    return evaluate(lattice, spec, threads=threads, budget=budget).value


def shifted_sum(lattice: MatrixLattice, m: float, c: float, M: float, dedup_signs: bool = False,
                threads: int = 1, budget: Optional[float] = DEFAULT_BUDGET) -> float:
    """sum over L(M) of det(I + cXX*)^{-m}"""
    spec = SumSpec("shifted", m=m, c=c, M=M, dedup_signs=dedup_signs)
    return evaluate(lattice, spec, threads=threads, budget=budget).value


def mixed_sum(lattice: MatrixLattice, m: float, i: int, M: float, skip_singular: bool = False,
              dedup_signs: bool = False, threads: int = 1,
              budget: Optional[float] = DEFAULT_BUDGET) -> float:
    """sum over L(M) of ||X||_F^{-2i} det(XX*)^{-(m-i)}"""
    spec = SumSpec("mixed", m=m, i=i, M=M, skip_singular=skip_singular, dedup_signs=dedup_signs)
    return evaluate(lattice, spec, threads=threads, budget=budget).value


def mixed_c_exponent(n: int, m: float, i: int) -> float:
    """Power of c in the i-th mixed term: i + n(m - i)"""
    return i + n * (m - i)


def shifted_dominated_by_mixed(lattice: MatrixLattice, m: float, c: float, M: float, i: int,
                               threads: int = 1,
                               budget: Optional[float] = DEFAULT_BUDGET) -> BoundCheck:
    """
    Compare the shifted sum with c^{-(i + n(m-i))} * mixed_sum

    With c = 0 the c-factor is taken as 1, so the right side is the bare
    mixed sum.
    """
    lhs = shifted_sum(lattice, m, c, M, threads=threads, budget=budget)
    factor = c ** (-mixed_c_exponent(lattice.n, m, i)) if c > 0 else 1.0
    rhs = factor * mixed_sum(lattice, m, i, M, threads=threads, budget=budget)
    return BoundCheck(lhs=lhs, rhs=rhs, holds=bool(lhs <= rhs * (1 + ORDER_RTOL)))


# ----------------------------------------------------------------------
# curves
# ----------------------------------------------------------------------

def sum_curve(
    lattice: MatrixLattice,
    spec: SumSpec,
    radii: Sequence[float],
    threads: int = 1,
    budget: Optional[float] = DEFAULT_BUDGET,
) -> SumCurve:
    """
    The sum at every radius of an increasing grid from a single enumeration

    Terms are binned by the first radius whose ball contains the point and
    the bins are accumulated into cumulative values.
    """
    radii = [float(r) for r in radii]
    if not radii or any(b <= a for a, b in zip(radii, radii[1:])):
        raise InvalidArgument(f"radii must be a nonempty increasing list, got {radii}")
    spec = spec.at(radii[-1])
    spec.validate(lattice)
    edges = np.array(radii) ** 2 * (1.0 + BALL_TOLERANCE)
    nbins = len(radii)
    n = lattice.n

    def reduce(batches: Iterator[PointBatch]):
        accs = [NeumaierSum() for _ in range(nbins)]
        counts = np.zeros(nbins, dtype=np.int64)
        for batch in batches:
            # singular points are dropped (skip mode) before binning, so bin on the kept ones
            if spec.family != "shifted" and spec.skip_singular:
                batch = _drop_singular(batch, spec, n)
            terms = _terms(batch, spec, n)
            bins = np.searchsorted(edges, batch.norm_sq, side="left")
            for b in np.unique(bins):
                sel = bins == b
                accs[b].add_batch(terms[sel])
                counts[b] += int(sel.sum())
        return accs, counts

    parts = lattice.map_partitions(radii[-1], reduce, dedup_signs=spec.dedup_signs,
                                   budget=budget, threads=threads)
    totals = [NeumaierSum() for _ in range(nbins)]
    counts = np.zeros(nbins, dtype=np.int64)
    for accs, part_counts in parts:
        for b in range(nbins):
            totals[b].merge(accs[b])
        counts += part_counts

    scale = 2 if spec.dedup_signs else 1
    running, running_count, points = NeumaierSum(), 0, []
    for b, M in enumerate(radii):
        running.merge(totals[b])
        running_count += int(counts[b])
        points.append((M, scale * running.value, scale * running_count))
    return SumCurve(spec=spec, points=points, error_bound=scale * running.error_bound)


def _drop_singular(batch: PointBatch, spec: SumSpec, n: int) -> PointBatch:
    if spec.family == "mixed" and spec.i >= spec.m:
        return batch
    if spec.family == "approximate":
        det_gram = np.abs(np.linalg.det(batch.X)) ** 2
    else:
        det_gram = symmetric_polys_batch(batch.X)[:, -1]
    keep = ~_singular_mask(det_gram, batch.norm_sq, n)
    if np.all(keep):
        return batch
    return PointBatch(batch.coeffs[keep], batch.X[keep], batch.norm_sq[keep])


def convergence_probe(
    lattice: MatrixLattice,
    m: float,
    c: float,
    radii: Sequence[float],
    threads: int = 1,
    budget: Optional[float] = DEFAULT_BUDGET,
) -> Tuple[SumCurve, bool]:
    """
    Shifted sum over a dyadic radius grid

    Returns:
        (curve, saturated) where saturated means the last increment is below
        1% of the running total
    """
    if lattice.min_norm_sq < 1.0 - 1e-9:
        raise HypothesisViolated(
            f"convergence probe needs ||X||_F >= 1 on nonzero points, min_norm_sq = {lattice.min_norm_sq:.6g}"
        )
    radii = [float(r) for r in radii]
    if any(not math.isclose(b, 2 * a, rel_tol=1e-9) for a, b in zip(radii, radii[1:])):
        logger.warning(f"convergence probe grid is not dyadic: {radii}")
    if m <= lattice.k / 2:
        logger.info(f"m = {m:g} <= k/2 = {lattice.k / 2:g}: saturation not expected")

    curve = sum_curve(lattice, SumSpec("shifted", m=m, c=c), radii, threads=threads, budget=budget)
    values = curve.values
    if len(values) < 2 or values[-1] <= 0:
        return curve, False
    increment = values[-1] - values[-2]
    saturated = bool(increment < SATURATION_FRACTION * values[-1])
    logger.info(f"Convergence probe m={m:g}, c={c:g}: last increment {increment:.4g} "
                f"of total {values[-1]:.4g} -> saturated={saturated}")
    return curve, saturated


# ----------------------------------------------------------------------
# dyadic summing
# ----------------------------------------------------------------------

def _regime(s: float, t: float) -> str:
    if math.isclose(t, s, rel_tol=1e-12, abs_tol=1e-12):
        return "logarithmic"
    return "convergent" if t > s else "polynomial"


def dyadic_bound(
    xs: Sequence[float],
    fs: Sequence[float],
    K: float,
    s: float,
    t: float,
    M: Optional[float] = None,
) -> DyadicResult:
    """
    Weighted sum sum_{x in I, 1 <= x <= M} f(x)/x^t against the dyadic bound

    The hypothesis sum_{1 <= x <= P} f(x) <= K P^s is checked on the dyadic
    prefixes P = min(2^j, M), j = 0..J with J = max(1, ceil(log2 M)).

    Returns:
        empirical_sum, proof_bound (the M-uniform constant 2^max(t,0) K / (1 - 2^{s-t})
        in the convergent regime, otherwise the partition sum), regime, and the
        partition sum 2^max(t,0) K sum_{i=1}^{J} 2^{(s-t) i}
    """
    xs = np.asarray(xs, dtype=np.float64)
    fs = np.asarray(fs, dtype=np.float64)
    if xs.shape != fs.shape:
        raise InvalidArgument(f"xs and fs differ in shape: {xs.shape} vs {fs.shape}")
    if np.any(fs <= 0):
        raise InvalidArgument("f must be positive on I")
    if M is None:
        M = float(xs.max())
    inside = (xs >= 1.0) & (xs <= M)
    xs, fs = xs[inside], fs[inside]

    J = max(1, math.ceil(math.log2(M))) if M > 1 else 1
    for j in range(J + 1):
        P = min(2.0 ** j, M)
        partial = math.fsum(fs[xs <= P])
        if partial > K * P ** s * (1 + 1e-12):
            raise HypothesisViolated(
                f"prefix sum {partial:.6g} exceeds K P^s = {K * P ** s:.6g} at P = {P:g}"
            )

    empirical = math.fsum(fs / xs ** t)
    # on the shell 2^{i-1} < x <= 2^i, x^{-t} <= 2^{max(t, 0)} 2^{-t i}
    lead = 2.0 ** max(t, 0.0)
    partition = lead * K * math.fsum(2.0 ** ((s - t) * i) for i in range(1, J + 1))
    regime = _regime(s, t)
    proof = lead * K / (1.0 - 2.0 ** (s - t)) if regime == "convergent" else partition
    if empirical > partition * (1 + 1e-12):
        raise HypothesisViolated(f"weighted sum {empirical:.6g} exceeds dyadic bound {partition:.6g}")
    return DyadicResult(empirical_sum=empirical, proof_bound=proof, regime=regime, partition_bound=partition)


def reduction_bound(
    lattice: MatrixLattice,
    g: SumSpec,
    K: float,
    s: float,
    t: float,
    M: float,
    budget: Optional[float] = DEFAULT_BUDGET,
) -> DyadicResult:
    """
    Dyadic summing on a lattice: f(x) = sum of g(X) over the shell ||X||_F = x

    `g` names the per-point weight through a sum family (e.g. mixed with
    i = 0 for det(XX*)^{-l}); the result bounds sum g(X)/||X||_F^t.
    """
    if lattice.min_norm_sq < 1.0 - 1e-9:
        raise HypothesisViolated(f"reduction needs ||X||_F >= 1, min_norm_sq = {lattice.min_norm_sq:.6g}")
    g = g.at(M)
    g.validate(lattice)
    norms, terms = [], []
    for batch in lattice.enumerate_batches(M, budget=budget):
        if g.skip_singular:
            batch = _drop_singular(batch, g, lattice.n)
        terms.append(_terms(batch, g, lattice.n))
        norms.append(np.sqrt(batch.norm_sq))
    norms = np.concatenate(norms) if norms else np.zeros(0)
    terms = np.concatenate(terms) if terms else np.zeros(0)
    shells, inverse = np.unique(np.round(norms, 9), return_inverse=True)
    f = np.bincount(inverse, weights=terms, minlength=len(shells))
    return dyadic_bound(shells, f, K=K, s=s, t=t, M=M)


def diagonal_shift_profile(
    lattice: MatrixLattice,
    m: float,
    cs: Sequence[float],
    M: float,
    threads: int = 1,
    budget: Optional[float] = DEFAULT_BUDGET,
) -> pd.DataFrame:
    """
    Shifted sums scaled by c^{nm-1}

    For an NVD diagonal code with det(XX*) >= 1 and m > 1 the scaled values
    stay bounded in c and M.
    """
    if m <= 1:
        raise InvalidArgument(f"the c^(-nm+1) bound needs m > 1, got m = {m}")
    exponent = lattice.n * m - 1
    rows = []
    for c in cs:
        value = shifted_sum(lattice, m, c, M, threads=threads, budget=budget)
        rows.append({"c": float(c), "M": float(M), "shifted": value, "scaled": value * c ** exponent})
    return pd.DataFrame(rows)
