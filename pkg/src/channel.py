"""
Monte Carlo Rayleigh block-fading simulation

    Y = sqrt(rho/n) H theta X + N,   H: n_r x n_t,  N: n_r x T,  unit-variance
    complex circular Gaussian entries

Finite codes come from the coding scheme rho^{-rT/k} L(rho^{rT/k}) (scheme
mode) or from a fixed ball L(M).  Energy normalization is per channel use:
E ||theta X||_F^2 = T.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.stats import norm

from .detsum import shifted_sum
from .errors import CodeTooLarge, InsufficientStatistics, InvalidArgument, RadiusOverflow
from .lattice import DEFAULT_BUDGET, LatticePoint, MatrixLattice, realify
from .utils import progress

logger = logging.getLogger(__name__)

DECODERS = ("ml-exhaustive", "naive-lattice")
SNR_SCALINGS = ("direct", "chernoff")
# trials per RNG stream; streams are keyed by (seed, snr index, block index)
BLOCK_TRIALS = 500
# candidate-axis chunk for the exhaustive ML metric
ML_CHUNK_ELEMENTS = 1 << 22
MIN_ERRORS = 20


@dataclass
class ChannelConfig:
    """Simulation parameters (exactly one of r / radius selects the code)"""
    n_t: int
    n_r: int
    T: int
    snr_grid_db: List[float]
    trials_per_point: int = 10000
    seed: int = 0
    decoder: str = "ml-exhaustive"
    r: Optional[float] = None
    radius: Optional[float] = None
    ml_cap: int = 4096
    noise_scale: float = 1.0
    overflow_factor: float = 10.0
    threads: int = 1

    @classmethod
    def from_dict(cls, payload: Dict) -> "ChannelConfig":
        payload = dict(payload)
        payload["snr_grid_db"] = [float(x) for x in payload.get("snr_grid_db", [])]
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(payload) - known
        if unknown:
            raise InvalidArgument(f"unknown channel config keys: {sorted(unknown)}")
        return cls(**payload)

    def to_dict(self) -> Dict:
        return asdict(self)

    def validate(self, lattice: Optional[MatrixLattice] = None):
        for name in ("n_t", "n_r", "T", "trials_per_point", "ml_cap"):
            if getattr(self, name) < 1:
                raise InvalidArgument(f"{name} must be a positive integer, got {getattr(self, name)}")
        if self.decoder not in DECODERS:
            raise InvalidArgument(f"unknown decoder '{self.decoder}', expected one of {DECODERS}")
        if not self.snr_grid_db:
            raise InvalidArgument("SNR grid is empty")
        if any(b <= a for a, b in zip(self.snr_grid_db, self.snr_grid_db[1:])):
            raise InvalidArgument(f"SNR grid must be strictly increasing, got {self.snr_grid_db}")
        if (self.r is None) == (self.radius is None):
            raise InvalidArgument("exactly one of multiplexing gain r and fixed radius must be set")
        if self.r is not None and self.r < 0:
            raise InvalidArgument(f"multiplexing gain must be nonnegative, got {self.r}")
        if self.radius is not None and self.radius <= 0:
            raise InvalidArgument(f"radius must be positive, got {self.radius}")
        if self.noise_scale < 0:
            raise InvalidArgument(f"noise scale must be nonnegative, got {self.noise_scale}")
        if lattice is not None and (lattice.n != self.n_t or lattice.T != self.T):
            raise InvalidArgument(
                f"lattice codewords are {lattice.n}x{lattice.T}, channel expects {self.n_t}x{self.T}"
            )
        if lattice is not None and self.decoder == "naive-lattice" and 2 * self.n_r * self.T < lattice.k:
            raise InvalidArgument(
                f"naive lattice decoding needs 2 n_r T >= k, got 2*{self.n_r}*{self.T} < {lattice.k}"
            )


@dataclass
class FiniteCode:
    """scale * L(radius) as coefficient and matrix arrays"""
    lattice: MatrixLattice
    coeffs: np.ndarray
    X: np.ndarray
    scale: float
    radius: float

    @property
    def size(self) -> int:
        return len(self.coeffs)

    @property
    def codewords(self) -> np.ndarray:
        return self.scale * self.X

    @property
    def points(self) -> List[LatticePoint]:
        return [
            LatticePoint(tuple(int(z) for z in c), X, float(np.linalg.norm(X)))
            for c, X in zip(self.coeffs, self.X)
        ]


def fixed_code(lattice: MatrixLattice, M: float, budget: Optional[float] = DEFAULT_BUDGET) -> FiniteCode:
    """The finite code L(M) without scaling"""
    batches = list(lattice.enumerate_batches(M, budget=budget))
    if not batches:
        raise InvalidArgument(f"L({M:g}) is empty for {lattice.name}")
    coeffs = np.concatenate([b.coeffs for b in batches])
    X = np.concatenate([b.X for b in batches])
    return FiniteCode(lattice=lattice, coeffs=coeffs, X=X, scale=1.0, radius=float(M))


def coding_scheme(lattice: MatrixLattice, r: float, rho: float,
                  budget: Optional[float] = DEFAULT_BUDGET) -> FiniteCode:
    """
    C_L(rho) = rho^{-rT/k} L(rho^{rT/k})

    The code has about rho^{rT} points; its size is logged.
    """
    if rho < 1:
        raise InvalidArgument(f"coding scheme needs rho >= 1, got {rho}")
    if r < 0:
        raise InvalidArgument(f"multiplexing gain must be nonnegative, got {r}")
    exponent = r * lattice.T / lattice.k
    radius = rho ** exponent
    code = fixed_code(lattice, radius, budget=budget)
    code.scale = rho ** (-exponent)
    logger.info(f"Coding scheme r={r:g}, rho={rho:.4g}: radius {radius:.4g}, {code.size} codewords")
    return code


def normalize_energy(code, T: Optional[int] = None) -> float:
    """
    theta with theta^2 = T |code| / sum ||X||_F^2

    Args:
        code: FiniteCode, list of LatticePoint, or array of matrices (N, n, T)
        T: channel uses per codeword (default: matrix column count)
    """
    if isinstance(code, FiniteCode):
        X = code.codewords
    elif len(code) and isinstance(code[0], LatticePoint):
        X = np.stack([p.X for p in code])
    else:
        X = np.asarray(code, dtype=np.complex128)
        if X.ndim == 1:
            X = X[:, np.newaxis, np.newaxis]
    if len(X) == 0:
        raise InvalidArgument("cannot normalize an empty code")
    T = X.shape[-1] if T is None else T
    energy = float(np.sum(np.abs(X) ** 2))
    if energy <= 0:
        raise InvalidArgument("code has zero energy")
    return math.sqrt(T * len(X) / energy)


def union_bound(
    code: FiniteCode,
    theta: float,
    n_r: int,
    rho: float,
    snr_scaling: str = "direct",
    threads: int = 1,
    budget: Optional[float] = DEFAULT_BUDGET,
) -> float:
    """
    sum over the difference ball L(2M) of det(I + c DD*)^{-n_r}

    c = rho theta^2 scale^2 ("direct", the 1/(4n) factor omitted) or
    rho theta^2 scale^2 / (4n) ("chernoff", the ML pairwise error bound).
    """
    if snr_scaling not in SNR_SCALINGS:
        raise InvalidArgument(f"unknown snr scaling '{snr_scaling}', expected one of {SNR_SCALINGS}")
    if rho < 0:
        raise InvalidArgument(f"rho must be nonnegative, got {rho}")
    c = rho * theta ** 2 * code.scale ** 2
    if snr_scaling == "chernoff":
        c /= 4 * code.lattice.n
    return shifted_sum(code.lattice, n_r, c, 2 * code.radius, threads=threads, budget=budget)


# ----------------------------------------------------------------------
# results
# ----------------------------------------------------------------------

def wilson_half_width(errors: int, trials: int, confidence: float = 0.95) -> float:
    """Half width of the Wilson score interval"""
    if trials <= 0:
        return float("nan")
    z = norm.ppf(0.5 + confidence / 2)
    p = errors / trials
    return float(z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / (1 + z * z / trials))


@dataclass
class SnrPoint:
    snr_db: float
    rho: float
    errors: int
    trials: int
    code_size: int
    theta: float

    @property
    def error_rate(self) -> float:
        return self.errors / self.trials if self.trials else 0.0

    @property
    def ci_halfwidth(self) -> float:
        return wilson_half_width(self.errors, self.trials)


@dataclass
class SimResult:
    points: List[SnrPoint]
    decoder: str
    seed: int
    normalization: str = "per-channel-use: E||theta X||_F^2 = T"
    notes: List[str] = field(default_factory=list)

    @property
    def code_size(self) -> int:
        return self.points[-1].code_size if self.points else 0

    @property
    def theta(self) -> float:
        return self.points[-1].theta if self.points else float("nan")

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "snr_db": [p.snr_db for p in self.points],
            "error_rate": [p.error_rate for p in self.points],
            "errors": [p.errors for p in self.points],
            "trials": [p.trials for p in self.points],
            "ci_halfwidth": [p.ci_halfwidth for p in self.points],
        })

    def to_json(self) -> Dict:
        return {
            "decoder": self.decoder,
            "seed": self.seed,
            "normalization": self.normalization,
            "points": [
                {**asdict(p), "error_rate": p.error_rate, "ci_halfwidth": p.ci_halfwidth}
                for p in self.points
            ],
            "notes": list(self.notes),
        }


# ----------------------------------------------------------------------
# decoding
# ----------------------------------------------------------------------

def _sphere_search(R: np.ndarray, y: np.ndarray, radius_sq: float) -> Tuple[Optional[np.ndarray], float]:
    """Schnorr-Euchner depth-first search for min ||y - Rz|| within radius_sq"""
    k = R.shape[0]
    z = np.zeros(k, dtype=np.int64)
    best = [None, radius_sq]

    def search(level: int, partial: float):
        r_ll = R[level, level]
        center = (y[level] - R[level, level + 1:] @ z[level + 1:]) / r_ll
        lo = math.floor(center)
        hi = lo + 1
        while True:
            # visit integers in order of distance from the center
            if center - lo <= hi - center:
                v, lo = lo, lo - 1
            else:
                v, hi = hi, hi + 1
            d = partial + (r_ll * (center - v)) ** 2
            if d > best[1]:
                return
            z[level] = v
            if level == 0:
                best[0], best[1] = z.copy(), d
            else:
                search(level - 1, d)

    search(k - 1, 0.0)
    return best[0], best[1]


def _babai(R: np.ndarray, y: np.ndarray) -> np.ndarray:
    k = R.shape[0]
    z = np.zeros(k, dtype=np.int64)
    for level in range(k - 1, -1, -1):
        center = (y[level] - R[level, level + 1:] @ z[level + 1:]) / R[level, level]
        z[level] = int(np.rint(center))
    return z


def naive_lattice_decode(
    lattice: MatrixLattice,
    H: np.ndarray,
    y: np.ndarray,
    theta: float = 1.0,
    scale: float = 1.0,
    snr_gain: float = 1.0,
    overflow_factor: float = 10.0,
) -> LatticePoint:
    """
    Closest point of the whole lattice to y under ||y - snr_gain * theta * scale * H X||_F

    Sphere decoding starts at the Babai distance and doubles the radius
    while no point is found.

    Raises:
        RadiusOverflow: the radius passed overflow_factor times the Babai distance
        InvalidArgument: the channel image of the lattice has fewer real dimensions than k
    """
    H = np.atleast_2d(np.asarray(H, dtype=np.complex128))
    y = np.asarray(y, dtype=np.complex128).reshape(H.shape[0], lattice.T)
    gain = snr_gain * theta * scale
    generator = realify(gain * np.einsum("rn,knt->krt", H, lattice.basis)).T   # (2 n_r T, k)
    target = realify(y)
    if generator.shape[0] < lattice.k:
        raise InvalidArgument(
            f"received signal has {generator.shape[0]} real dimensions, fewer than the lattice rank {lattice.k}"
        )

    Q, R = np.linalg.qr(generator)
    proj = Q.T @ target
    z_babai = _babai(R, proj)
    babai_sq = float(np.sum((proj - R @ z_babai) ** 2))
    # absolute slack keeps the Babai point inside when the residual is pure round-off
    slack = 1e-12 * (float(proj @ proj) + 1.0)
    radius_sq = babai_sq * (1.0 + 1e-9) + slack
    limit_sq = (overflow_factor ** 2) * radius_sq
    while True:
        z, _ = _sphere_search(R, proj, radius_sq)
        if z is not None:
            return lattice.point(z)
        radius_sq *= 4.0
        if radius_sq > limit_sq:
            raise RadiusOverflow(
                f"sphere decoder radius exceeded {overflow_factor:g}x the Babai distance"
            )


# ----------------------------------------------------------------------
# simulation
# ----------------------------------------------------------------------

def _block_rng(seed: int, snr_idx: int, block_idx: int) -> np.random.Generator:
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, (snr_idx << 32) | block_idx], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _complex_gaussian(rng: np.random.Generator, shape) -> np.ndarray:
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)


def _ml_decode(Y: np.ndarray, H: np.ndarray, C: np.ndarray, gain: float) -> np.ndarray:
    """argmin_j ||Y - gain H C_j||_F^2 for a block of received matrices"""
    B, N = len(Y), len(C)
    chunk = max(1, ML_CHUNK_ELEMENTS // max(1, B * Y.shape[1] * Y.shape[2]))
    best = np.full(B, np.inf)
    arg = np.zeros(B, dtype=np.int64)
    for start in range(0, N, chunk):
        cand = C[start:start + chunk]
        HC = gain * np.einsum("brn,jnt->bjrt", H, cand)
        metric = np.sum(np.abs(Y[:, np.newaxis] - HC) ** 2, axis=(2, 3))
        j = np.argmin(metric, axis=1)
        m = metric[np.arange(B), j]
        better = m < best
        best[better] = m[better]
        arg[better] = j[better] + start
    return arg


def _run_block(code: FiniteCode, cfg: ChannelConfig, rho: float, theta: float,
               snr_idx: int, block_idx: int, trials: int) -> int:
    rng = _block_rng(cfg.seed, snr_idx, block_idx)
    n_t = code.lattice.n
    sent = rng.integers(0, code.size, size=trials)
    H = _complex_gaussian(rng, (trials, cfg.n_r, n_t))
    N = _complex_gaussian(rng, (trials, cfg.n_r, cfg.T)) * cfg.noise_scale
    C = code.codewords
    snr_gain = math.sqrt(rho / n_t)
    Y = snr_gain * theta * (H @ C[sent]) + N

    if cfg.decoder == "ml-exhaustive":
        decoded = _ml_decode(Y, H, C, snr_gain * theta)
        return int(np.sum(decoded != sent))

    errors = 0
    for j in range(trials):
        try:
            point = naive_lattice_decode(code.lattice, H[j], Y[j], theta=theta, scale=code.scale,
                                         snr_gain=snr_gain, overflow_factor=cfg.overflow_factor)
        except RadiusOverflow:
            errors += 1
            continue
        if point.coeffs != tuple(int(z) for z in code.coeffs[sent[j]]):
            errors += 1
    return errors


def simulate(lattice: MatrixLattice, cfg: ChannelConfig, show_progress: bool = False,
             budget: Optional[float] = DEFAULT_BUDGET) -> SimResult:
    """
    Block error rate per SNR point

    Deterministic given the config: every block of trials draws from its own
    counter-based stream, and error counts are integers.
    """
    cfg.validate(lattice)
    fixed = fixed_code(lattice, cfg.radius, budget=budget) if cfg.radius is not None else None
    points = []

    logger.info("=" * 60)
    logger.info(f"Simulating {lattice.name}: decoder={cfg.decoder}, n_r={cfg.n_r}, "
                f"{cfg.trials_per_point} trials x {len(cfg.snr_grid_db)} SNR points")
    logger.info("=" * 60)

    for snr_idx, snr_db in enumerate(progress(cfg.snr_grid_db, desc="snr", enabled=show_progress)):
        rho = 10.0 ** (snr_db / 10.0)
        code = fixed if fixed is not None else coding_scheme(lattice, cfg.r, rho, budget=budget)
        if cfg.decoder == "ml-exhaustive" and code.size > cfg.ml_cap:
            raise CodeTooLarge(f"{code.size} codewords exceed the exhaustive ML cap {cfg.ml_cap}")
        theta = normalize_energy(code, cfg.T)

        sizes = [min(BLOCK_TRIALS, cfg.trials_per_point - start)
                 for start in range(0, cfg.trials_per_point, BLOCK_TRIALS)]

        def work(block):
            return _run_block(code, cfg, rho, theta, snr_idx, block, sizes[block])

        if cfg.threads <= 1:
            errors = sum(work(b) for b in range(len(sizes)))
        else:
            with ThreadPoolExecutor(max_workers=cfg.threads) as executor:
                errors = sum(executor.map(work, range(len(sizes))))

        point = SnrPoint(snr_db=float(snr_db), rho=rho, errors=errors, trials=cfg.trials_per_point,
                         code_size=code.size, theta=theta)
        logger.info(f"  {snr_db:6.2f} dB: {errors}/{point.trials} errors "
                    f"(rate {point.error_rate:.3e} +- {point.ci_halfwidth:.1e})")
        points.append(point)

    return SimResult(points=points, decoder=cfg.decoder, seed=cfg.seed)


def diversity_slope(result: SimResult, window: int = 3, min_errors: int = MIN_ERRORS) -> float:
    """
    Least-squares slope of -log10 P_e against log10 rho over the highest
    `window` SNR points having at least `min_errors` errors
    """
    usable = [p for p in result.points if p.errors >= min_errors and p.error_rate > 0]
    if len(usable) < max(window, 2):
        raise InsufficientStatistics(
            f"{len(usable)} SNR points with >= {min_errors} errors, need {max(window, 2)}"
        )
    top = sorted(usable, key=lambda p: p.snr_db)[-window:]
    x = np.log10([p.rho for p in top])
    y = -np.log10([p.error_rate for p in top])
    slope, _ = np.polyfit(x, y, 1)
    return float(slope)
