"""
Bound analysis: growth fits of sum curves, the W_i envelope of the shifted
sum, DMT lower bounds and SNR thresholds

DMT line coefficients are kept as Fractions so that the published lines
(8 - 5r, 6 - 3r, 2(2 - r), ...) are reproduced exactly.
"""
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from numbers import Rational
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .errors import DegenerateFit, InvalidArgument, MissingExponent

logger = logging.getLogger(__name__)

# |t| below this is reported as "no log factor"
LOG_FACTOR_THRESHOLD = 0.25
MIN_FIT_SAMPLES = 4
REGIMES = ("constant", "log", "poly")

Number = Union[int, float, Fraction]


# ----------------------------------------------------------------------
# growth fits
# ----------------------------------------------------------------------

@dataclass
class GrowthFit:
    """log value = logK + s log M + t log log M"""
    s: float
    t: float
    logK: float
    residual: float
    samples: int
    log_term: bool = True

    @property
    def has_log_factor(self) -> bool:
        return self.log_term and abs(self.t) >= LOG_FACTOR_THRESHOLD

    @property
    def description(self) -> str:
        if not self.has_log_factor:
            return f"K M^{self.s:.3g} (no log factor)"
        return f"K M^{self.s:.3g} (log M)^{self.t:.3g}"

    def predict(self, M) -> np.ndarray:
        M = np.asarray(M, dtype=np.float64)
        log_value = self.logK + self.s * np.log(M)
        if self.log_term:
            log_value = log_value + self.t * np.log(np.log(M))
        return np.exp(log_value)

    def to_json(self) -> Dict:
        return {
            "s": self.s, "t": self.t, "logK": self.logK, "residual": self.residual,
            "samples": self.samples, "log_term": self.log_term,
            "has_log_factor": self.has_log_factor,
        }


def growth_fit(curve, log_term: bool = True) -> GrowthFit:
    """
    Least-squares fit of a SumCurve (or an (M, value) pair of sequences)

    Samples with M < 2 are dropped when the log log M column is used; at
    least 4 samples must remain.

    Raises:
        DegenerateFit: too few samples, non-positive values or a
            rank-deficient design matrix
    """
    if hasattr(curve, "radii"):
        Ms, values = curve.radii, curve.values
    else:
        Ms, values = (np.asarray(v, dtype=np.float64) for v in curve)
    Ms = np.asarray(Ms, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)

    keep = Ms >= 2.0 if log_term else Ms > 0
    Ms, values = Ms[keep], values[keep]
    if len(Ms) < MIN_FIT_SAMPLES:
        raise DegenerateFit(f"growth fit needs >= {MIN_FIT_SAMPLES} samples, got {len(Ms)}")
    if np.any(values <= 0) or not np.all(np.isfinite(values)):
        raise DegenerateFit("growth fit needs positive finite values")

    columns = [np.ones_like(Ms), np.log(Ms)]
    if log_term:
        columns.append(np.log(np.log(Ms)))
    A = np.column_stack(columns)
    if np.linalg.matrix_rank(A) < A.shape[1]:
        raise DegenerateFit(f"design matrix is rank deficient for radii {Ms.tolist()}")

    y = np.log(values)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    residual = float(np.sqrt(np.mean((A @ coef - y) ** 2)))
    fit = GrowthFit(
        s=float(coef[1]),
        t=float(coef[2]) if log_term else 0.0,
        logK=float(coef[0]),
        residual=residual,
        samples=len(Ms),
        log_term=log_term,
    )
    logger.info(f"Growth fit over {fit.samples} radii: {fit.description}, rms {residual:.3g}")
    return fit


def growth_ratio(curve, exponent: float) -> pd.DataFrame:
    """
    S(M) / M^exponent on every radius of a curve

    A ratio that stops growing at the large radii supports a growth
    exponent at most `exponent`, independently of the least-squares fit.

    Returns:
        DataFrame with columns M, value, ratio
    """
    if not math.isfinite(exponent):
        raise InvalidArgument(f"ratio exponent must be finite, got {exponent}")
    if hasattr(curve, "radii"):
        Ms, values = curve.radii, curve.values
    else:
        Ms, values = curve
    Ms = np.asarray(Ms, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if Ms.shape != values.shape:
        raise InvalidArgument(f"radii and values differ in shape: {Ms.shape} vs {values.shape}")
    if np.any(Ms <= 0):
        raise InvalidArgument("radii must be positive")
    return pd.DataFrame({"M": Ms, "value": values, "ratio": values / Ms ** exponent})


# ----------------------------------------------------------------------
# W_i envelope
# ----------------------------------------------------------------------

@dataclass
class WiEntry:
    i: int
    c_exponent: float
    M_exponent: float
    log_power: float
    regime: str
    s_used: Optional[float] = None

    def shape(self, c: float, M: float) -> float:
        """c^{-cExp} M^{MExp} (1 + log M)^{logPower}, the envelope term up to its constant"""
        value = c ** (-self.c_exponent) * M ** self.M_exponent
        if self.log_power:
            value *= (1.0 + math.log(M)) ** self.log_power
        return value


@dataclass
class WiEnvelope:
    n: int
    k: int
    m: int
    s_table: Dict[int, float]
    entries: List[WiEntry]
    source: str = "config"
    notes: List[str] = field(default_factory=list)

    def entry(self, i: int) -> WiEntry:
        for e in self.entries:
            if e.i == i:
                return e
        raise KeyError(i)

    def shapes(self, c: float, M: float) -> np.ndarray:
        return np.array([e.shape(c, M) for e in self.entries])

    def active_index(self, c: float, M: float) -> int:
        """Index i whose term is the smallest at (c, M)"""
        return self.entries[int(np.argmin(self.shapes(c, M)))].i

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([vars(e) for e in self.entries])

    def to_json(self) -> Dict:
        return {
            "n": self.n, "k": self.k, "m": self.m,
            "s_table": {str(l): s for l, s in sorted(self.s_table.items())},
            "source": self.source,
            "entries": [dict(vars(e)) for e in self.entries],
            "notes": list(self.notes),
        }


def _normalize_s_table(s_table: Mapping) -> Dict[int, float]:
    table = {}
    for l, s in (s_table or {}).items():
        if isinstance(s, GrowthFit):
            s = s.s
        table[int(l)] = float(s)
    return table


def _trichotomy(s: float, bound: float) -> str:
    if math.isclose(s, bound, rel_tol=1e-9, abs_tol=1e-9):
        return "log"
    return "constant" if s < bound else "poly"


def wi_envelope(
    n: int,
    k: int,
    m: int,
    s_table: Mapping,
    indices: Optional[Iterable[int]] = None,
    source: str = "config",
) -> WiEnvelope:
    """
    Envelope terms W_i(M) ~ c^{-(i + n(m-i))} * (M-growth) for i in `indices`

    Args:
        n, k, m: code size, lattice rank and sum exponent
        s_table: l -> s(l), growth exponent of sum |det(XX*)|^{-l} over L(M)
        indices: which i to include (default 0..m)
        source: where the s(l) came from ("config" or "fit")

    Raises:
        MissingExponent: a needed s(m - i) is absent
    """
    if n < 1 or k < 1 or m < 1:
        raise InvalidArgument(f"n, k, m must be positive, got n={n}, k={k}, m={m}")
    table = _normalize_s_table(s_table)
    indices = list(range(m + 1)) if indices is None else sorted({int(i) for i in indices})
    if any(i < 0 or i > m for i in indices):
        raise InvalidArgument(f"indices must lie in 0..{m}, got {indices}")

    entries, notes = [], []
    for i in indices:
        c_exp = i + n * (m - i)
        if i == m:
            regime = _trichotomy(k, 2 * m)
            M_exp = float(k - 2 * m) if regime == "poly" else 0.0
            log_power = 1.0 if regime == "log" else 0.0
            if regime == "log":
                notes.append(f"W_{m} carries a log M factor since k = 2m = {k}")
            entries.append(WiEntry(i, c_exp, M_exp, log_power, regime))
            continue

        l = m - i
        if l not in table:
            raise MissingExponent(f"s({l}) is required for W_{i} but missing from the exponent table")
        s = table[l]
        if i == 0:
            # no 1/||X||^{2i} weight: the hypothesis bound applies directly
            regime = "poly" if s > 1e-9 else "constant"
            entries.append(WiEntry(i, c_exp, max(s, 0.0), 0.0, regime, s_used=s))
            continue
        regime = _trichotomy(s, 2 * i)
        M_exp = s - 2 * i if regime == "poly" else 0.0
        log_power = 1.0 if regime == "log" else 0.0
        entries.append(WiEntry(i, c_exp, M_exp, log_power, regime, s_used=s))

    env = WiEnvelope(n=n, k=k, m=m, s_table=table, entries=entries, source=source, notes=notes)
    logger.info(f"W_i envelope (n={n}, k={k}, m={m}): " + ", ".join(
        f"i={e.i}: c^-{e.c_exponent:g} [{e.regime}]" for e in entries))
    return env


def diagonal_nf_c_exponent(n: int, m: float) -> float:
    """Exponent nm - 1 of the K c^{-nm+1} bound for NVD diagonal codes"""
    if m <= 1:
        raise InvalidArgument(f"the diagonal code bound needs m > 1, got m = {m}")
    return n * m - 1


# ----------------------------------------------------------------------
# DMT curves
# ----------------------------------------------------------------------

def _exact(x: Number) -> Fraction:
    if isinstance(x, Rational):
        return Fraction(x)
    if isinstance(x, float) and x.is_integer():
        return Fraction(int(x))
    return Fraction(x).limit_denominator(10 ** 9)


@dataclass(frozen=True)
class DmtSegment:
    """One line d = intercept + slope * r and the bound it came from"""
    slope: Fraction
    intercept: Fraction
    source: str = ""

    def value(self, r: Number) -> Fraction:
        return self.intercept + self.slope * _exact(r)

    def zero_crossing(self) -> Optional[Fraction]:
        if self.slope >= 0:
            return None
        return -self.intercept / self.slope

    def to_json(self) -> Dict:
        return {
            "slope": str(self.slope), "intercept": str(self.intercept),
            "slope_float": float(self.slope), "intercept_float": float(self.intercept),
            "source": self.source,
        }


class DmtCurve:
    """
    Pointwise maximum of lines on [0, r_max], clipped at 0

    Segments are kept in a canonical order without duplicate lines so that
    taking envelopes is idempotent and commutative.
    """

    def __init__(self, segments: Sequence[DmtSegment], r_max: Number):
        if not segments:
            raise InvalidArgument("a DMT curve needs at least one segment")
        canonical = {}
        for seg in sorted(segments, key=lambda s: (s.slope, s.intercept, s.source)):
            canonical.setdefault((seg.slope, seg.intercept), seg)
        self.segments: Tuple[DmtSegment, ...] = tuple(canonical.values())
        self.r_max = _exact(r_max)
        if self.r_max < 0:
            raise InvalidArgument(f"r_max must be nonnegative, got {r_max}")

    def __eq__(self, other) -> bool:
        if not isinstance(other, DmtCurve):
            return NotImplemented
        lines = lambda c: [(s.slope, s.intercept) for s in c.segments]
        return lines(self) == lines(other) and self.r_max == other.r_max

    def __repr__(self) -> str:
        lines = ", ".join(f"{s.intercept} {'-' if s.slope < 0 else '+'} {abs(s.slope)}r" for s in self.segments)
        return f"DmtCurve([{lines}], r_max={self.r_max})"

    def evaluate_exact(self, r: Number) -> Fraction:
        best = max(seg.value(r) for seg in self.segments)
        return max(best, Fraction(0))

    def evaluate(self, r) -> Union[float, np.ndarray]:
        if np.ndim(r) == 0:
            return float(self.evaluate_exact(r))
        r = np.asarray(r, dtype=np.float64)
        lines = np.array([[float(s.intercept), float(s.slope)] for s in self.segments])
        values = lines[:, :1] + lines[:, 1:] * r[np.newaxis, :]
        return np.maximum(values.max(axis=0), 0.0)

    def active_segment(self, r: Number) -> Optional[DmtSegment]:
        """Segment attaining the maximum at r (None where the curve is clipped)"""
        best = max(self.segments, key=lambda s: (s.value(r), -s.slope))
        return best if best.value(r) > 0 else None

    def breakpoints(self) -> List[Fraction]:
        """Interior points of (0, r_max) where the active line changes or the curve hits 0"""
        candidates = set()
        segs = self.segments
        for a in range(len(segs)):
            z = segs[a].zero_crossing()
            if z is not None:
                candidates.add(z)
            for b in range(a + 1, len(segs)):
                if segs[a].slope != segs[b].slope:
                    candidates.add((segs[b].intercept - segs[a].intercept) / (segs[a].slope - segs[b].slope))
        points = []
        for r in sorted(x for x in candidates if 0 < x < self.r_max):
            eps = Fraction(1, 10 ** 9)
            left, right = self.active_segment(r - eps), self.active_segment(r + eps)
            if left != right:
                points.append(r)
        return points

    def is_nonincreasing(self) -> bool:
        grid = [Fraction(0)] + self.breakpoints() + [self.r_max]
        values = [self.evaluate_exact(r) for r in grid]
        return all(b <= a for a, b in zip(values, values[1:]))

    def to_frame(self, grid: Sequence[float]) -> pd.DataFrame:
        grid = [float(r) for r in grid]
        return pd.DataFrame({"r": grid, "d": [float(self.evaluate_exact(_exact(r))) for r in grid]})

    def to_json(self) -> Dict:
        return {
            "r_max": str(self.r_max),
            "segments": [s.to_json() for s in self.segments],
            "breakpoints": [str(b) for b in self.breakpoints()],
        }


def _require_positive(**kwargs):
    for name, value in kwargs.items():
        if value <= 0:
            raise InvalidArgument(f"{name} must be positive, got {value}")


def dmt_ml_bound(a: Number, b: Number, k: int, T: int, r_max: Optional[Number] = None,
                 source: Optional[str] = None) -> DmtCurve:
    """
    d(r) = (a - rT(2a + b)/k)^+ for ML decoding of the coding scheme

    r_max defaults to the zero crossing of the line.
    """
    _require_positive(a=a, k=k, T=T)
    a, b = _exact(a), _exact(b)
    slope = -Fraction(T) * (2 * a + b) / k
    seg = DmtSegment(slope=slope, intercept=a, source=source or f"ml(a={a},b={b},k={k},T={T})")
    return DmtCurve([seg], r_max if r_max is not None else seg.zero_crossing() or 0)


def dmt_naive_bound(a: Number, k: int, T: int, r_max: Optional[Number] = None,
                    source: Optional[str] = None) -> DmtCurve:
    """d(r) = (a (1 - 2rT/k))^+ under naive lattice decoding"""
    _require_positive(a=a, k=k, T=T)
    a = _exact(a)
    slope = -2 * Fraction(T) * a / k
    seg = DmtSegment(slope=slope, intercept=a, source=source or f"naive(a={a},k={k},T={T})")
    return DmtCurve([seg], r_max if r_max is not None else seg.zero_crossing())


def dmt_envelope(curves: Sequence[DmtCurve]) -> DmtCurve:
    """Pointwise maximum of several curves"""
    if not curves:
        raise InvalidArgument("dmt_envelope needs at least one curve")
    segments = [seg for curve in curves for seg in curve.segments]
    return DmtCurve(segments, max(curve.r_max for curve in curves))


def dmt_from_envelope(env: WiEnvelope, T: int, r_max: Optional[Number] = None) -> DmtCurve:
    """
    ML DMT line of every W_i term (a = c-exponent, b = M-exponent) and their envelope

    Log factors do not change exponents and are ignored.
    """
    curves = [
        dmt_ml_bound(e.c_exponent, e.M_exponent, env.k, T, r_max=r_max, source=f"W_{e.i}")
        for e in env.entries
    ]
    return dmt_envelope(curves)


def full_multiplexing_check(n: int, T: int, n_r: int, k: int) -> Optional[DmtCurve]:
    """
    d(r) = n_r (1 - r/n) on [0, n] for a full-rank code with n_r > nT + 1

    Returns None when the corollary does not apply.
    """
    if k != 2 * n * T or n_r <= n * T + 1:
        logger.info(f"Full multiplexing corollary not applicable (k={k}, 2nT={2 * n * T}, n_r={n_r})")
        return None
    return dmt_ml_bound(n_r, 0, k, T, r_max=n, source=f"full-multiplexing(n_r={n_r})")


# ----------------------------------------------------------------------
# error probability bounds and thresholds
# ----------------------------------------------------------------------

def pe_upper_bound(K: float, d: float, t: float, M: float, rho: float) -> float:
    """P_e(rho) <= K M^{d+t} rho^{-d}"""
    _require_positive(K=K, M=M, rho=rho)
    return K * M ** (d + t) * rho ** (-d)


def snr_threshold(d: Number, t: Number, M: float = 1.0) -> Tuple[Fraction, float]:
    """
    SNR above which diversity d shows: rho >= K' M^{(t+d)/d}

    Returns:
        (exponent (t + d)/d as an exact fraction, M^{exponent})
    """
    if d <= 0:
        raise InvalidArgument(f"diversity d must be positive, got {d}")
    if M <= 0:
        raise InvalidArgument(f"radius M must be positive, got {M}")
    exponent = (_exact(t) + _exact(d)) / _exact(d)
    return exponent, float(M) ** float(exponent)


def scheme_pe_bound(K: float, a: float, b: float, r: float, T: int, k: int, rho: float) -> float:
    """Error bound of the coding scheme: K rho^{-a + 2arT/k} (2 rho^{rT/k})^b"""
    _require_positive(K=K, rho=rho, k=k, T=T)
    e = r * T / k
    return K * rho ** (-a + 2 * a * e) * (2.0 * rho ** e) ** b
