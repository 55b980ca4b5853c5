"""
Common utilities for determinant-sum experiments
"""
import hashlib
import json
import logging
import math
from datetime import datetime
from pathlib import Path
from typing import Iterable, List, Optional

from tqdm import tqdm


DEFAULT_LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def setup_logging(level: str = "INFO", log_file: Optional[str] = None, log_format: Optional[str] = None):
    """
    Configure the root logger for a CLI run

    Args:
        level: logging level name
        log_file: optional file; a _YYYYmmdd_HHMMSS suffix is added to its stem
        log_format: format string, DEFAULT_LOG_FORMAT when None
    """
    handlers: List[logging.Handler] = [logging.StreamHandler()]
    log_path = None
    if log_file:
        base = Path(log_file)
        stamp = datetime.now().strftime("%Y%m%d_%H%M%S")
        log_path = base.with_name(f"{base.stem}_{stamp}{base.suffix}")
        log_path.parent.mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(log_path, encoding="utf-8"))

    logging.basicConfig(
        level=getattr(logging, str(level).upper(), logging.INFO),
        format=log_format or DEFAULT_LOG_FORMAT,
        handlers=handlers,
        force=True,
    )
    if log_path is not None:
        logging.getLogger(__name__).info(f"Log file: {log_path}")


class NeumaierSum:
    """
    Compensated accumulator (Kahan-Babuska-Neumaier)

    Batches are first reduced with math.fsum, so the result only depends on
    the batch partition through the compensated merge, which is accurate to
    a few ulps of the total.
    """

    def __init__(self, value: float = 0.0):
        self.total = float(value)
        self.compensation = 0.0
        self.terms = 0

    def add(self, value: float):
        value = float(value)
        t = self.total + value
        if abs(self.total) >= abs(value):
            self.compensation += (self.total - t) + value
        else:
            self.compensation += (value - t) + self.total
        self.total = t
        self.terms += 1

    def add_batch(self, values: Iterable[float]):
        """Add an array of terms as one exactly-rounded partial sum"""
        self.add(math.fsum(values))

    def merge(self, other: "NeumaierSum"):
        self.add(other.total)
        self.add(other.compensation)

    @property
    def value(self) -> float:
        return self.total + self.compensation

    @property
    def error_bound(self) -> float:
        """Conservative bound on the accumulated rounding error"""
        return 2.0 * max(self.terms, 1) * 2.0 ** -53 * abs(self.value)


def parse_geometric_grid(text: str) -> List[float]:
    """
    Parse a "start:factor:count" radius grid

    Args:
        text: e.g. "1:2:6" -> [1, 2, 4, 8, 16, 32]

    Returns:
        List of radii
    """
    parts = text.split(":")
    if len(parts) != 3:
        raise ValueError(f"expected start:factor:count, got '{text}'")
    start, factor, count = float(parts[0]), _parse_number(parts[1]), int(parts[2])
    if start <= 0 or factor <= 1 or count < 1:
        raise ValueError(f"invalid geometric grid '{text}'")
    return [start * factor ** j for j in range(count)]


def parse_linear_grid(text: str) -> List[float]:
    """
    Parse a "start:stop:step" grid, stop included

    Args:
        text: e.g. "0:2:0.5" -> [0, 0.5, 1, 1.5, 2]
    """
    parts = text.split(":")
    if len(parts) != 3:
        raise ValueError(f"expected start:stop:step, got '{text}'")
    start, stop, step = (float(p) for p in parts)
    if step <= 0 or stop < start:
        raise ValueError(f"invalid linear grid '{text}'")
    count = int(math.floor((stop - start) / step + 1e-9)) + 1
    return [round(start + j * step, 12) for j in range(count)]


def _parse_number(text: str) -> float:
    # "sqrt2" is accepted for the half-dyadic grids used with rank-8 lattices
    if text.strip().lower() in ("sqrt2", "sqrt(2)"):
        return math.sqrt(2.0)
    return float(text)


def config_hash(payload: dict) -> str:
    """First 8 hex chars of the MD5 of the canonical JSON dump"""
    return hashlib.md5(json.dumps(payload, sort_keys=True, default=str).encode()).hexdigest()[:8]


def progress(iterable: Iterable, total: Optional[int] = None, desc: str = "", enabled: bool = False):
    """Wrap an iterable in a stderr progress counter when enabled"""
    return tqdm(iterable, total=total, desc=desc, disable=not enabled, leave=False)
