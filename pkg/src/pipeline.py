"""
End-to-end experiments: build a code, compute sum curves, fit growth,
assemble the W_i envelope, DMT curves and SNR thresholds, optionally
cross-check by simulation, and persist everything under a config hash
"""
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from .bounds import (
    DmtCurve, GrowthFit, WiEnvelope, diagonal_nf_c_exponent, dmt_envelope, dmt_from_envelope,
    dmt_ml_bound, dmt_naive_bound, full_multiplexing_check, growth_fit, growth_ratio, snr_threshold,
    wi_envelope,
)
from .channel import ChannelConfig, SimResult, fixed_code, normalize_energy, simulate, union_bound
from .codes import CodeSpec, nvd_scan
from .config import apply_cli_overrides, default_output_dir, load_config
from .detsum import SumCurve, SumSpec, sum_curve
from .errors import ConfigError, stage
from .lattice import DEFAULT_BUDGET, MatrixLattice
from .manifest import ArtifactManifest
from .utils import config_hash, parse_geometric_grid, parse_linear_grid
from .validation import validate_curve_frame, validate_experiment_config

logger = logging.getLogger(__name__)

HASH_EXCLUDED_SECTIONS = ("output", "logging")
DEFAULT_DMT_GRID = "0:2:0.05"
RATIO_SLACK = 1e-9


def _parse_radii(value) -> List[float]:
    if value is None:
        return []
    if isinstance(value, str):
        return parse_geometric_grid(value)
    return [float(v) for v in value]


@dataclass
class ExperimentConfig:
    """Parsed experiment config; `raw` is the merged dictionary it came from"""
    raw: Dict
    name: str
    seed: int
    code: CodeSpec
    sum_specs: List[SumSpec]
    radii: List[float]
    fit: Dict
    envelope: Dict
    dmt: Dict
    thresholds: Dict
    compare: Dict
    simulation: Optional[ChannelConfig]
    union: Dict
    threads: int = 1
    budget: Optional[float] = DEFAULT_BUDGET
    progress: bool = False
    nvd_radius: float = 0.0
    output_dir: str = "reports"

    @classmethod
    def from_dict(cls, raw: Dict) -> "ExperimentConfig":
        check = validate_experiment_config(raw)
        if not check["valid"]:
            raise ConfigError("; ".join(check["errors"]))
        for warning in check["warnings"]:
            logger.warning(f"Config: {warning}")

        experiment = raw.get("experiment") or {}
        runtime = raw.get("runtime") or {}
        sums = raw.get("sums") or {}
        try:
            code = CodeSpec.from_dict(raw["code"])
            radii = _parse_radii(sums.get("radii"))
            specs = []
            for item in sums.get("specs") or []:
                item = dict(item)
                item.setdefault("dedup_signs", sums.get("dedup_signs", False))
                item.setdefault("skip_singular", sums.get("skip_singular", False))
                specs.append(SumSpec(
                    family=str(item["family"]), m=float(item["m"]), c=float(item.get("c", 0.0)),
                    i=int(item.get("i", 0)), dedup_signs=bool(item["dedup_signs"]),
                    skip_singular=bool(item["skip_singular"]),
                ))
            for spec in specs:
                spec.validate()
            sim_section = raw.get("simulation") or {}
            simulation = None
            if sim_section.get("enabled", False):
                channel = dict(sim_section.get("channel") or {})
                # the experiment seed drives the simulation unless the channel pins its own
                channel.setdefault("seed", int(experiment.get("seed", 0)))
                simulation = ChannelConfig.from_dict(channel)
                simulation.validate()
            budget = runtime.get("budget", DEFAULT_BUDGET)
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"invalid experiment config: {e}") from e

        return cls(
            raw=raw,
            name=str(experiment.get("name", code.kind)),
            seed=int(experiment.get("seed", 0)),
            code=code,
            sum_specs=specs,
            radii=radii,
            fit=dict(raw.get("fit") or {}),
            envelope=dict(raw.get("envelope") or {}),
            dmt=dict(raw.get("dmt") or {}),
            thresholds=dict(raw.get("thresholds") or {}),
            compare=dict(raw.get("compare") or {}),
            simulation=simulation,
            union=dict(sim_section.get("union_bound") or {}),
            threads=int(runtime.get("threads", 1)),
            budget=None if budget is None else float(budget),
            progress=bool(runtime.get("progress", False)),
            nvd_radius=float((raw.get("construct") or {}).get("nvd_radius", 0.0)),
            output_dir=str((raw.get("output") or {}).get("dir") or default_output_dir()),
        )

    @classmethod
    def from_file(cls, path: str, overrides: Optional[List[str]] = None) -> "ExperimentConfig":
        raw = load_config(path)
        if overrides:
            raw = apply_cli_overrides(raw, overrides)
        return cls.from_dict(raw)

    @property
    def config_hash(self) -> str:
        payload = {k: v for k, v in self.raw.items() if k not in HASH_EXCLUDED_SECTIONS}
        return config_hash(payload)


@dataclass
class ExperimentReport:
    config_hash: str
    name: str
    construction: Dict
    curves: Dict[str, SumCurve] = field(default_factory=dict)
    fits: Dict[str, GrowthFit] = field(default_factory=dict)
    growth: Optional[pd.DataFrame] = None
    envelope: Optional[WiEnvelope] = None
    dmt: Dict[str, DmtCurve] = field(default_factory=dict)
    dmt_grid: List[float] = field(default_factory=list)
    thresholds: Optional[pd.DataFrame] = None
    compare: Optional[pd.DataFrame] = None
    simulation: Optional[SimResult] = None
    union_bounds: List[float] = field(default_factory=list)
    notes: List[str] = field(default_factory=list)
    report_dir: Optional[Path] = None

    def curves_frame(self) -> pd.DataFrame:
        frames = [c.to_frame(with_spec=True) for c in self.curves.values()]
        if not frames:
            return pd.DataFrame(columns=["curve", "family", "m", "c", "i", "M", "value", "pointCount"])
        return pd.concat(frames, ignore_index=True)

    def dmt_frame(self) -> pd.DataFrame:
        rows = []
        for name, curve in self.dmt.items():
            df = curve.to_frame(self.dmt_grid)
            df.insert(0, "curve", name)
            rows.append(df)
        return pd.concat(rows, ignore_index=True) if rows else pd.DataFrame(columns=["curve", "r", "d"])

    def simulation_frame(self) -> Optional[pd.DataFrame]:
        if self.simulation is None:
            return None
        df = self.simulation.to_frame()
        if self.union_bounds:
            df["union_bound"] = self.union_bounds
        return df

    def to_json(self) -> Dict:
        return {
            "config_hash": self.config_hash,
            "name": self.name,
            "construction": self.construction,
            "curves": {k: v.to_json() for k, v in self.curves.items()},
            "fits": {k: v.to_json() for k, v in self.fits.items()},
            "growth": self.growth.to_dict(orient="records") if self.growth is not None else [],
            "envelope": self.envelope.to_json() if self.envelope else None,
            "dmt": {k: v.to_json() for k, v in self.dmt.items()},
            "thresholds": self.thresholds.to_dict(orient="records") if self.thresholds is not None else [],
            "simulation": self.simulation.to_json() if self.simulation else None,
            "union_bounds": list(self.union_bounds),
            "notes": list(self.notes),
        }

    def summary_text(self) -> str:
        c = self.construction
        lines = ["=" * 60, f"Experiment {self.name} (config {self.config_hash})", "=" * 60,
                 f"Code: {c['name']}  n={c['n']} T={c['T']} k={c['k']}  "
                 f"min ||X||^2 = {c['min_norm_sq']:.6g}  covolume = {c['covolume']:.6g}"]
        if "min_abs_det" in c:
            lines.append(f"NVD scan (M <= {c['nvd_radius']:g}): min |det| = {c['min_abs_det']:.6g} "
                         f"over {c['nvd_points']} points")
        for label, curve in self.curves.items():
            M, value, count = curve.points[-1]
            lines.append(f"Sum {label}: {value:.6g} at M = {M:g} ({count} points)")
        for label, fit in self.fits.items():
            lines.append(f"Fit {label}: {fit.description}, rms {fit.residual:.3g}")
        if self.growth is not None:
            for label, rows in self.growth.groupby("curve", sort=False):
                ratios = ", ".join(f"{r:.4g}" for r in rows["ratio"])
                lines.append(f"Ratio {label}: S(M)/M^{rows['exponent'].iloc[0]:g} = {ratios}")
        if self.envelope is not None:
            for e in self.envelope.entries:
                lines.append(f"W_{e.i}: c^-{e.c_exponent:g} M^{e.M_exponent:g} (log M)^{e.log_power:g} [{e.regime}]")
        for name, curve in self.dmt.items():
            values = ", ".join(f"{float(curve.evaluate_exact(r)):g}" for r in range(int(curve.r_max) + 1))
            lines.append(f"DMT {name}: d(0..{int(curve.r_max)}) = {values}")
        if self.thresholds is not None:
            for row in self.thresholds.itertuples(index=False):
                lines.append(f"Threshold d={row.d:g}, t={row.t:g}: rho >= K' M^{row.exponent} (M={row.M:g}: {row.threshold:.6g})")
        if self.simulation is not None:
            lines.append(f"Simulation ({self.simulation.decoder}, {self.simulation.normalization}):")
            for p in self.simulation.points:
                lines.append(f"  {p.snr_db:6.2f} dB  {p.errors}/{p.trials}  rate {p.error_rate:.3e}")
        for note in self.notes:
            lines.append(f"Note: {note}")
        return "\n".join(lines) + "\n"

    def write(self, output_dir: str) -> Path:
        """Persist every artifact into <output_dir>/<name>_<hash>/"""
        report_dir = Path(output_dir) / f"{self.name}_{self.config_hash}"
        manifest = ArtifactManifest(report_dir, self.config_hash)
        report_dir.mkdir(parents=True, exist_ok=True)

        def write_csv(name: str, df: pd.DataFrame, producer: str):
            df.to_csv(report_dir / name, index=False, float_format="%.17g", lineterminator="\n")
            manifest.record(name, "csv", rows=len(df), producer=producer)

        def write_json(name: str, payload, producer: str):
            with open(report_dir / name, "w", encoding="utf-8", newline="\n") as f:
                json.dump(payload, f, indent=2, sort_keys=True, default=str)
                f.write("\n")
            manifest.record(name, "json", producer=producer)

        with open(report_dir / "summary.txt", "w", encoding="utf-8", newline="\n") as f:
            f.write(self.summary_text())
        manifest.record("summary.txt", "txt", producer="run")
        write_json("report.json", self.to_json(), "run")

        if self.curves:
            curves = self.curves_frame()
            check = validate_curve_frame(curves)
            for warning in check["warnings"] + check["errors"]:
                logger.warning(f"sum_curves: {warning}")
            write_csv("sum_curves.csv", curves, "sum_curve")
            curves.to_parquet(report_dir / "sum_curves.parquet", index=False)
            manifest.record("sum_curves.parquet", "parquet", rows=len(curves), producer="sum_curve")
        if self.fits:
            write_json("fits.json", {k: v.to_json() for k, v in self.fits.items()}, "growth_fit")
        if self.growth is not None:
            write_csv("growth.csv", self.growth, "growth_ratio")
        if self.envelope is not None:
            write_json("envelope.json", self.envelope.to_json(), "wi_envelope")
        if self.dmt:
            write_csv("dmt.csv", self.dmt_frame(), "dmt_envelope")
            write_json("dmt.json", {k: v.to_json() for k, v in self.dmt.items()}, "dmt_envelope")
        if self.thresholds is not None:
            write_csv("thresholds.csv", self.thresholds, "snr_threshold")
        if self.compare is not None:
            write_csv("compare.csv", self.compare, "compare_bound_vs_truth")
        sim = self.simulation_frame()
        if sim is not None:
            write_csv("simulation.csv", sim, "simulate")

        manifest.save()
        self.report_dir = report_dir
        logger.info(f"Report written to {report_dir} ({manifest.get_summary()['total_artifacts']} artifacts)")
        return report_dir


# ----------------------------------------------------------------------
# stages
# ----------------------------------------------------------------------

def _construction_summary(lattice: MatrixLattice, config: ExperimentConfig) -> Dict:
    summary = {
        "name": lattice.name, "n": lattice.n, "T": lattice.T, "k": lattice.k,
        "covolume": lattice.covolume, "min_norm_sq": lattice.min_norm_sq,
        "code": config.code.to_dict(),
    }
    if config.nvd_radius > 0:
        scan = nvd_scan(lattice, config.nvd_radius, budget=config.budget)
        summary.update({
            "nvd_radius": config.nvd_radius, "min_abs_det": scan.min_abs_det,
            "nvd_argmin": list(scan.argmin), "nvd_points": scan.points, "nvd_attained_by": scan.attained_by,
        })
    return summary


def _growth_frame(curves: Dict[str, SumCurve], exponent: float) -> pd.DataFrame:
    frames = []
    for label, curve in curves.items():
        df = growth_ratio(curve, exponent)
        df.insert(0, "exponent", exponent)
        df.insert(0, "curve", label)
        frames.append(df)
    return pd.concat(frames, ignore_index=True)


def _fitted_s_table(fits: Dict[str, GrowthFit], curves: Dict[str, SumCurve]) -> Dict[int, float]:
    """s(l) from fits of sum det(XX*)^{-l}: mixed with i = 0 and m = l, or approximate with m = 2l"""
    table = {}
    for label, fit in fits.items():
        spec = curves[label].spec
        if spec.family == "mixed" and spec.i == 0:
            l = spec.m
        elif spec.family == "approximate":
            l = spec.m / 2
        else:
            continue
        if float(l).is_integer():
            table[int(l)] = fit.s
    return table


def _build_envelope(config: ExperimentConfig, lattice: MatrixLattice,
                    fits: Dict[str, GrowthFit], curves: Dict[str, SumCurve]) -> WiEnvelope:
    env_cfg = config.envelope
    source = env_cfg.get("source", "config")
    if source == "fit":
        s_table = _fitted_s_table(fits, curves)
    elif source == "config":
        s_table = env_cfg.get("s_table") or {}
    else:
        raise ConfigError(f"unknown envelope source '{source}', expected 'config' or 'fit'")
    return wi_envelope(
        n=int(env_cfg.get("n", lattice.n)),
        k=int(env_cfg.get("k", lattice.k)),
        m=int(env_cfg["m"]),
        s_table=s_table,
        indices=env_cfg.get("indices"),
        source=source,
    )


def _build_dmt(config: ExperimentConfig, lattice: MatrixLattice,
               envelope: Optional[WiEnvelope]) -> Dict[str, DmtCurve]:
    dmt_cfg = config.dmt
    k = int(dmt_cfg.get("k") or lattice.k)
    T = int(dmt_cfg.get("T") or lattice.T)
    n_r = dmt_cfg.get("n_r")
    r_max = dmt_cfg.get("r_max")
    curves: Dict[str, DmtCurve] = {}
    ml_curves = []

    for line in dmt_cfg.get("lines") or []:
        bound = line.get("bound", "ml")
        if line.get("a_from") == "diagonal-nf":
            if n_r is None:
                raise ConfigError("a_from: diagonal-nf needs dmt.n_r")
            a = diagonal_nf_c_exponent(lattice.n, int(n_r))
        else:
            a = line["a"]
        name = line.get("name") or f"{bound}-{a}"
        if bound == "ml":
            curve = dmt_ml_bound(a, line.get("b", 0), k, T, r_max=r_max, source=name)
            ml_curves.append(curve)
        elif bound == "naive":
            curve = dmt_naive_bound(a, k, T, r_max=r_max, source=name)
        else:
            raise ConfigError(f"unknown DMT bound '{bound}', expected 'ml' or 'naive'")
        curves[name] = curve

    if envelope is not None and dmt_cfg.get("from_envelope", True):
        curves["envelope-wi"] = dmt_from_envelope(envelope, T, r_max=r_max)
        ml_curves.append(curves["envelope-wi"])
    if len(ml_curves) > 1:
        curves["envelope"] = dmt_envelope(ml_curves)

    if n_r is not None and dmt_cfg.get("full_multiplexing", False):
        full = full_multiplexing_check(lattice.n, T, int(n_r), k)
        if full is not None:
            curves["full-multiplexing"] = full
    return curves


def _build_thresholds(config: ExperimentConfig) -> Optional[pd.DataFrame]:
    pairs = config.thresholds.get("pairs") or []
    if not pairs:
        return None
    radii = [float(M) for M in config.thresholds.get("M", [1.0])]
    rows = []
    for pair in pairs:
        for M in radii:
            exponent, value = snr_threshold(pair["d"], pair.get("t", 0), M)
            rows.append({
                "d": float(pair["d"]), "t": float(pair.get("t", 0)), "M": M,
                "exponent": str(exponent), "exponent_value": float(exponent), "threshold": value,
            })
    return pd.DataFrame(rows)


def compare_bound_vs_truth(
    lattice: MatrixLattice,
    envelope: WiEnvelope,
    m: float,
    cs: List[float],
    radii: List[float],
    slack: float = RATIO_SLACK,
    threads: int = 1,
    budget: Optional[float] = DEFAULT_BUDGET,
) -> pd.DataFrame:
    """
    Empirical shifted sums against min_i W_i anchored at (largest c, largest M)

    The unknown constant is fixed by making the envelope equal the empirical
    value at the anchor; every other cell then tests the shape only.

    Returns:
        DataFrame with columns c, M, empirical, envelope, ratio, within, active_i
    """
    cs = sorted(float(c) for c in cs)
    radii = sorted(float(M) for M in radii)
    if not cs or not radii:
        raise ConfigError("compare needs at least one shift and one radius")
    empirical = {}
    for c in cs:
        curve = sum_curve(lattice, SumSpec("shifted", m=m, c=c), radii, threads=threads, budget=budget)
        for M, value, _ in curve.points:
            empirical[(c, M)] = value

    anchor = (cs[-1], radii[-1])
    scale = empirical[anchor] / float(np.min(envelope.shapes(*anchor)))
    rows = []
    for c in cs:
        for M in radii:
            emp = empirical[(c, M)]
            bound = emp if (c, M) == anchor else scale * float(np.min(envelope.shapes(c, M)))
            ratio = emp / bound if bound > 0 else float("inf")
            rows.append({
                "c": c, "M": M, "empirical": emp, "envelope": bound, "ratio": ratio,
                "within": bool(ratio <= 1 + slack), "active_i": envelope.active_index(c, M),
            })
    df = pd.DataFrame(rows)
    logger.info(f"Bound vs truth: {int(df['within'].sum())}/{len(df)} cells within the anchored envelope")
    return df


def run(config: ExperimentConfig, output_dir: Optional[str] = None, write: bool = True) -> ExperimentReport:
    """
    Run every configured stage and (by default) persist the report

    Module errors propagate with the failing stage set.
    """
    logger.info("=" * 60)
    logger.info(f"Experiment {config.name} (config hash {config.config_hash})")
    logger.info("=" * 60)

    with stage("construct"):
        lattice = config.code.resolve()
        report = ExperimentReport(
            config_hash=config.config_hash, name=config.name,
            construction=_construction_summary(lattice, config),
        )
        logger.info(f"Built {lattice!r}, min ||X||^2 = {lattice.min_norm_sq:.6g}")

    with stage("sums"):
        for spec in config.sum_specs:
            curve = sum_curve(lattice, spec, config.radii, threads=config.threads, budget=config.budget)
            report.curves[spec.label] = curve
            logger.info(f"{spec.label}: {len(curve.points)} radii, last value {curve.points[-1][1]:.6g}")

    with stage("fit"):
        if config.fit.get("enabled", False):
            log_term = bool(config.fit.get("log_term", True))
            for label, curve in report.curves.items():
                report.fits[label] = growth_fit(curve, log_term=log_term)
            exponent = config.fit.get("ratio_exponent")
            if exponent is not None and report.curves:
                report.growth = _growth_frame(report.curves, float(exponent))

    with stage("envelope"):
        if config.envelope:
            report.envelope = _build_envelope(config, lattice, report.fits, report.curves)
            report.notes.extend(report.envelope.notes)

    with stage("dmt"):
        report.dmt = _build_dmt(config, lattice, report.envelope)
        report.dmt_grid = parse_linear_grid(str(config.dmt.get("grid", DEFAULT_DMT_GRID)))

    with stage("thresholds"):
        report.thresholds = _build_thresholds(config)

    with stage("compare"):
        if config.compare and report.envelope is not None:
            report.compare = compare_bound_vs_truth(
                lattice, report.envelope,
                m=float(config.compare.get("m", report.envelope.m)),
                cs=config.compare.get("cs", [1.0]),
                radii=_parse_radii(config.compare.get("radii")) or config.radii[-1:],
                threads=config.threads, budget=config.budget,
            )

    with stage("simulate"):
        if config.simulation is not None:
            sim_cfg = config.simulation
            report.simulation = simulate(lattice, sim_cfg, show_progress=config.progress, budget=config.budget)
            if sim_cfg.radius is not None:
                code = fixed_code(lattice, sim_cfg.radius, budget=config.budget)
                theta = normalize_energy(code, sim_cfg.T)
                scaling = config.union.get("snr_scaling", "direct")
                report.union_bounds = [
                    union_bound(code, theta, sim_cfg.n_r, p.rho, snr_scaling=scaling,
                                threads=config.threads, budget=config.budget)
                    for p in report.simulation.points
                ]
            report.notes.append(f"energy normalization {report.simulation.normalization}")

    if write:
        with stage("persist"):
            report.write(output_dir or config.output_dir)
    return report
