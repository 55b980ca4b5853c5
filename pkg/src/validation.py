"""
Data validation utilities for curve tables and experiment configs
"""
import logging
import math
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from .utils import parse_geometric_grid


logger = logging.getLogger(__name__)

CURVE_COLUMNS = ["M", "value", "pointCount"]


def validate_curve_frame(
    df: pd.DataFrame,
    required_columns: Optional[List[str]] = None,
    check_nulls: bool = True,
    check_negative: bool = True,
    check_monotone: bool = True,
) -> Dict[str, any]:
    """
    Validate a sum-curve DataFrame

    Args:
        df: DataFrame with one row per radius
        required_columns: Columns that must be present (default M, value, pointCount)
        check_nulls: Check for NaN values
        check_negative: Check for negative sums and counts
        check_monotone: Sums of positive terms and point counts must not decrease in M

    Returns:
        Dictionary with validation results
    """
    required_columns = required_columns or CURVE_COLUMNS
    results = {
        "valid": True,
        "errors": [],
        "warnings": [],
        "stats": {}
    }

    if df.empty:
        results["errors"].append("DataFrame is empty")
        results["valid"] = False
        return results

    missing_cols = set(required_columns) - set(df.columns)
    if missing_cols:
        results["errors"].append(f"Missing required columns: {sorted(missing_cols)}")
        results["valid"] = False
        return results

    if check_nulls:
        null_counts = df[required_columns].isnull().sum()
        if null_counts.sum() > 0:
            null_cols = {k: int(v) for k, v in null_counts[null_counts > 0].items()}
            results["errors"].append(f"Null values found: {null_cols}")
            results["stats"]["null_values"] = null_cols
            results["valid"] = False

    if check_negative:
        for col in ("value", "pointCount"):
            if col in df.columns:
                negative_count = int((df[col] < 0).sum())
                if negative_count > 0:
                    results["errors"].append(f"Found {negative_count} negative values in {col}")
                    results["valid"] = False

    groups = [g for _, g in df.groupby("curve", sort=False)] if "curve" in df.columns else [df]
    for g in groups:
        radii = g["M"].to_numpy()
        if np.any(np.diff(radii) <= 0):
            results["errors"].append("Radii are not strictly increasing")
            results["valid"] = False
        if check_monotone:
            for col in ("value", "pointCount"):
                if col in g.columns and np.any(np.diff(g[col].to_numpy()) < 0):
                    results["warnings"].append(f"{col} decreases with M")

    results["stats"]["row_count"] = len(df)
    results["stats"]["radius_range"] = {"min": float(df["M"].min()), "max": float(df["M"].max())}
    if "curve" in df.columns:
        results["stats"]["curves"] = int(df["curve"].nunique())
    return results


def validate_experiment_config(config: Dict) -> Dict[str, any]:
    """
    Check an experiment config dictionary before it is run

    Returns:
        Dictionary with validation results
    """
    results = {
        "valid": True,
        "errors": [],
        "warnings": [],
        "stats": {}
    }

    if "code" not in config:
        results["errors"].append("Missing 'code' section")
        results["valid"] = False

    sums = config.get("sums") or {}
    specs = sums.get("specs") or []
    radii = sums.get("radii") or []
    if isinstance(radii, str):
        try:
            radii = parse_geometric_grid(radii)
        except ValueError as e:
            results["errors"].append(str(e))
            results["valid"] = False
            radii = []
    if specs and not radii:
        results["errors"].append("Sum specs given without a radius grid")
        results["valid"] = False
    if radii:
        if any(b <= a for a, b in zip(radii, radii[1:])):
            results["errors"].append(f"Radius grid is not increasing: {radii}")
            results["valid"] = False
        fit_requested = bool((config.get("fit") or {}).get("enabled", False))
        # factor 2, or sqrt2 for the half-dyadic grids
        dyadic = any(
            all(abs(b - f * a) <= 1e-9 * b for a, b in zip(radii, radii[1:])) for f in (2.0, math.sqrt(2.0))
        )
        if fit_requested and not dyadic:
            results["errors"].append(f"Growth fitting needs a dyadic radius grid, got {radii}")
            results["valid"] = False
        elif len(radii) < 4 and fit_requested:
            results["warnings"].append("Growth fitting with fewer than 4 radii")

    ratio_exponent = (config.get("fit") or {}).get("ratio_exponent")
    if ratio_exponent is not None and (isinstance(ratio_exponent, bool)
                                       or not isinstance(ratio_exponent, (int, float))):
        results["errors"].append(f"fit.ratio_exponent must be a number, got {ratio_exponent!r}")
        results["valid"] = False

    env = config.get("envelope") or {}
    if env:
        m = env.get("m")
        s_table = {int(k) for k in (env.get("s_table") or {})}
        indices = env.get("indices")
        needed = {m - i for i in (indices if indices is not None else range(m + 1)) if i < m} if m else set()
        fit_exponents = set()
        for spec in specs:
            if spec.get("family") == "mixed" and spec.get("i", 0) == 0:
                fit_exponents.add(int(spec["m"]))
            elif spec.get("family") == "approximate" and float(spec["m"]) % 2 == 0:
                fit_exponents.add(int(spec["m"]) // 2)
        missing = needed - s_table - fit_exponents
        if missing:
            results["errors"].append(f"Exponents s(l) undefined for l in {sorted(missing)}")
            results["valid"] = False

    results["stats"]["sum_specs"] = len(specs)
    results["stats"]["radii"] = len(radii)
    return results
