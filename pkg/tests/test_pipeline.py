"""
Tests for experiment configs, the end-to-end pipeline and its artifacts

Covers:
1. YAML inheritance, CLI overrides and the config hash
2. Config validation
3. Golden and diagonal presets (DMT envelope, naive line, thresholds)
4. Byte-identical reruns and the artifact ownership check
5. The anchored bound-versus-truth comparison and the growth ratio artifact
6. Seed and sign deduplication defaults
"""
import json
from fractions import Fraction

import pandas as pd
import pytest
import yaml

from src.bounds import wi_envelope
from src.config import CONFIG_DIR, apply_cli_overrides, load_config, preset_path
from src.errors import ArtifactConflict, ConfigError
from src.manifest import ArtifactManifest
from src.pipeline import ExperimentConfig, compare_bound_vs_truth, run
from src.validation import validate_curve_frame, validate_experiment_config

FAST_GOLDEN = ["sums.radii=1:2:2", "compare.radii=[1, 2]", "construct.nvd_radius=1"]
FAST_DIAGONAL = ["sums.radii=2:2:4", "construct.nvd_radius=2"]


def write_yaml(path, payload):
    path.write_text(yaml.safe_dump(payload), encoding="utf-8")
    return path


def test_extends_and_overrides(tmp_path):
    base = write_yaml(tmp_path / "base.yaml", {"sums": {"radii": "1:2:3", "dedup_signs": True}, "seed": 1})
    child = write_yaml(tmp_path / "child.yaml", {"extends": "base.yaml", "sums": {"radii": "1:2:5"}})
    config = load_config(child)
    assert config == {"sums": {"radii": "1:2:5", "dedup_signs": True}, "seed": 1}

    overridden = apply_cli_overrides(config, ["--param.sums.dedup_signs=false", "runtime.threads=4"])
    assert overridden["sums"]["dedup_signs"] is False
    assert overridden["runtime"]["threads"] == 4
    assert config["sums"]["dedup_signs"] is True

    grid = apply_cli_overrides(config, ["--param.sums.radii=1:2:2", "dmt.grid=0:2:0.5"])
    assert grid["sums"]["radii"] == "1:2:2"
    assert grid["dmt"]["grid"] == "0:2:0.5"

    with pytest.raises(ConfigError):
        apply_cli_overrides(config, ["sums.radii.start=1"])
    with pytest.raises(ConfigError):
        apply_cli_overrides(config, ["no-equals-sign"])


def test_circular_extends(tmp_path):
    write_yaml(tmp_path / "a.yaml", {"extends": "b.yaml"})
    write_yaml(tmp_path / "b.yaml", {"extends": "a.yaml"})
    with pytest.raises(ConfigError):
        load_config(tmp_path / "a.yaml")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")
    with pytest.raises(ConfigError):
        preset_path("no-such-preset")


def test_config_hash_ignores_output_and_logging():
    first = ExperimentConfig.from_file(str(preset_path("golden")), ["output.dir=/tmp/a", "logging.level=DEBUG"])
    second = ExperimentConfig.from_file(str(preset_path("golden")), ["output.dir=/tmp/b"])
    third = ExperimentConfig.from_file(str(preset_path("golden")), ["experiment.seed=7"])
    assert first.config_hash == second.config_hash
    assert first.config_hash != third.config_hash
    assert len(first.config_hash) == 8


def test_config_validation():
    check = validate_experiment_config({"sums": {"specs": [{"family": "shifted", "m": 1}]}})
    assert not check["valid"]
    assert any("code" in e for e in check["errors"])
    assert any("radius grid" in e for e in check["errors"])

    check = validate_experiment_config({
        "code": {"kind": "golden"},
        "envelope": {"m": 4},
        "sums": {"radii": "1:2:3", "specs": [{"family": "mixed", "m": 4, "i": 0}]},
    })
    assert not check["valid"]
    assert "[1, 2, 3]" in check["errors"][0]

    check = validate_experiment_config({
        "code": {"kind": "golden"}, "fit": {"enabled": True}, "sums": {"radii": [1, 3, 5]},
    })
    assert not check["valid"]
    assert "dyadic" in check["errors"][0]

    half_dyadic = validate_experiment_config({
        "code": {"kind": "golden"}, "fit": {"enabled": True}, "sums": {"radii": "1:sqrt2:7"},
    })
    assert half_dyadic["valid"]
    assert not half_dyadic["warnings"]

    short = validate_experiment_config({
        "code": {"kind": "golden"}, "fit": {"enabled": True}, "sums": {"radii": "2:2:3"},
    })
    assert short["valid"]
    assert short["warnings"]

    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"code": {"kind": "golden"}, "sums": {"radii": "1:0.5:3"}})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"code": {"kind": "golden"}, "sums": {"radii": [1], "specs": [{"m": 1}]}})


def test_curve_frame_validation():
    good = pd.DataFrame({"M": [1.0, 2.0], "value": [1.0, 2.0], "pointCount": [4, 12]})
    assert validate_curve_frame(good)["valid"]
    bad = pd.DataFrame({"M": [2.0, 1.0], "value": [1.0, -2.0], "pointCount": [4, 12]})
    check = validate_curve_frame(bad)
    assert not check["valid"]
    assert len(check["errors"]) == 2
    assert not validate_curve_frame(pd.DataFrame())["valid"]


def test_golden_preset(tmp_path):
    config = ExperimentConfig.from_file(str(preset_path("golden")), FAST_GOLDEN)
    report = run(config, output_dir=str(tmp_path))

    envelope = report.dmt["envelope"]
    assert [envelope.evaluate_exact(r) for r in (0, 1, 2)] == [8, 3, 0]
    assert [report.dmt["envelope-wi"].evaluate_exact(r) for r in (0, 1, 2)] == [8, 3, 0]
    naive = report.dmt["naive"].segments[0]
    assert (naive.slope, naive.intercept) == (Fraction(-2), Fraction(4))

    thresholds = report.thresholds
    assert set(thresholds["exponent"]) == {"3/2", "1"}
    assert report.envelope.entry(4).regime == "log"
    assert report.construction["k"] == 8

    counts = report.curves["shifted(m=4,c=1)"].counts
    assert counts.tolist() == [16, 1712]

    compare = report.compare
    anchor = compare[(compare["c"] == 100.0) & (compare["M"] == 2.0)]
    assert anchor["ratio"].iloc[0] == 1.0

    report_dir = tmp_path / f"golden_{config.config_hash}"
    assert report.report_dir == report_dir
    for name in ("summary.txt", "report.json", "sum_curves.csv", "sum_curves.parquet", "envelope.json",
                 "dmt.csv", "dmt.json", "thresholds.csv", "compare.csv", "manifest.json"):
        assert (report_dir / name).exists(), name

    dmt = pd.read_csv(report_dir / "dmt.csv")
    envelope_rows = dmt[dmt["curve"] == "envelope"].set_index("r")["d"]
    assert envelope_rows.loc[1.0] == pytest.approx(3.0)

    manifest = json.loads((report_dir / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["metadata"]["config_hash"] == config.config_hash
    assert manifest["artifacts"]["sum_curves.csv"]["rows"] == 6


def test_diagonal_preset(tmp_path):
    config = ExperimentConfig.from_file(str(preset_path("diagonal-nf-2")), FAST_DIAGONAL)
    report = run(config, output_dir=str(tmp_path))
    naive = report.dmt["naive"]
    assert (naive.segments[0].slope, naive.segments[0].intercept) == (Fraction(-3), Fraction(3))
    assert naive.r_max == 1
    assert report.construction["min_abs_det"] == pytest.approx(1.0)
    assert set(report.fits) == set(report.curves)
    assert report.envelope.entry(0).regime == "constant"
    assert "envelope-wi" not in report.dmt


def test_empty_sum_specs(tmp_path):
    config = ExperimentConfig.from_dict({"code": {"kind": "gaussian-diagonal", "params": {"n": 1}}})
    report = run(config, output_dir=str(tmp_path))
    assert report.curves == {}
    assert report.dmt == {}
    assert report.construction["k"] == 2
    assert (report.report_dir / "summary.txt").exists()
    assert not (report.report_dir / "sum_curves.csv").exists()


def report_files(report_dir):
    return sorted(p.name for p in report_dir.iterdir()
                  if p.suffix in (".csv", ".json", ".txt") and p.name != "manifest.json")


def test_rerun_is_byte_identical(tmp_path):
    config = ExperimentConfig.from_file(str(preset_path("diagonal-nf-2")), FAST_DIAGONAL)
    first_dir = run(config, output_dir=str(tmp_path / "first")).report_dir
    second_dir = run(config, output_dir=str(tmp_path / "second")).report_dir
    names = report_files(first_dir)
    assert names == report_files(second_dir)
    for name in names:
        assert (first_dir / name).read_bytes() == (second_dir / name).read_bytes(), name

    # rerunning into the same directory keeps the same bytes
    run(config, output_dir=str(tmp_path / "first"))
    for name in names:
        assert (first_dir / name).read_bytes() == (second_dir / name).read_bytes(), name


def test_artifact_conflict(tmp_path):
    report_dir = tmp_path / "owned"
    manifest = ArtifactManifest(report_dir, "aaaaaaaa")
    manifest.save()
    with pytest.raises(ArtifactConflict):
        ArtifactManifest(report_dir, "bbbbbbbb")

    config = ExperimentConfig.from_dict({"code": {"kind": "gaussian-diagonal"}})
    stale = ArtifactManifest(tmp_path / f"{config.name}_{config.config_hash}", "cccccccc")
    stale.save()
    with pytest.raises(ArtifactConflict) as excinfo:
        run(config, output_dir=str(tmp_path))
    assert excinfo.value.stage == "persist"


def test_manifest_records_artifacts(tmp_path):
    manifest = ArtifactManifest(tmp_path, "12345678")
    (tmp_path / "a.csv").write_text("M,value\n1,2\n", encoding="utf-8")
    manifest.record("a.csv", "csv", rows=1, producer="sum_curve")
    assert manifest.artifacts() == ["a.csv"]
    assert manifest.get_artifact_info("a.csv")["rows"] == 1
    assert manifest.get_summary()["by_kind"] == {"csv": 1}


def test_compare_bound_vs_truth(golden):
    env = wi_envelope(n=2, k=8, m=4, s_table={4: 4, 2: 4}, indices=[0, 2, 4])
    df = compare_bound_vs_truth(golden, env, m=4, cs=[1e4], radii=[1.0, 2.0])
    assert list(df.columns) == ["c", "M", "empirical", "envelope", "ratio", "within", "active_i"]
    assert df["active_i"].tolist() == [0, 0]
    assert df.iloc[-1]["ratio"] == 1.0

    single = compare_bound_vs_truth(golden, env, m=4, cs=[10.0], radii=[1.0])
    assert single["ratio"].tolist() == [1.0]
    assert bool(single["within"].iloc[0])


def test_golden_growth_ratio(tmp_path):
    config = ExperimentConfig.from_file(str(preset_path("golden-growth")),
                                        ["sums.radii=1:sqrt2:5", "runtime.progress=false"])
    assert config.radii == pytest.approx([1.0, 2 ** 0.5, 2.0, 2 ** 1.5, 4.0])
    report = run(config, output_dir=str(tmp_path))

    (fit,) = report.fits.values()
    assert 3.0 <= fit.s <= 5.0

    ratios = report.growth["ratio"].to_numpy()
    assert set(report.growth["exponent"]) == {4.5}
    # 16 points of L(1), each with |det X|^-4 = 25
    assert ratios[0] == pytest.approx(400.0, rel=1e-9)
    assert ratios[-2] <= ratios[-3] and ratios[-1] <= ratios[-2]

    growth = pd.read_csv(report.report_dir / "growth.csv")
    assert list(growth.columns) == ["curve", "exponent", "M", "value", "ratio"]
    assert len(growth) == 5
    manifest = json.loads((report.report_dir / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["artifacts"]["growth.csv"]["rows"] == 5
    assert "Ratio" in (report.report_dir / "summary.txt").read_text(encoding="utf-8")


def test_growth_ratio_is_optional(tmp_path):
    config = ExperimentConfig.from_file(str(preset_path("diagonal-nf-2")),
                                        FAST_DIAGONAL + ["fit.ratio_exponent=null"])
    report = run(config, output_dir=str(tmp_path))
    assert report.growth is None
    assert not (report.report_dir / "growth.csv").exists()
    with pytest.raises(ConfigError):
        ExperimentConfig.from_file(str(preset_path("diagonal-nf-2")), ["fit.ratio_exponent=fast"])


def test_experiment_seed_drives_the_simulation():
    channel = {"n_t": 2, "n_r": 2, "T": 2, "snr_grid_db": [0.0], "radius": 1.0}
    raw = {"experiment": {"seed": 41}, "code": {"kind": "golden"},
           "simulation": {"enabled": True, "channel": channel}}
    assert ExperimentConfig.from_dict(raw).simulation.seed == 41

    pinned = {**raw, "simulation": {"enabled": True, "channel": {**channel, "seed": 7}}}
    assert ExperimentConfig.from_dict(pinned).simulation.seed == 7

    golden = ExperimentConfig.from_file(str(preset_path("golden")),
                                        ["simulation.enabled=true", "experiment.seed=99"])
    assert golden.simulation.seed == 2013


def test_sign_deduplication_is_opt_in():
    base = ExperimentConfig.from_dict({
        "code": {"kind": "golden"}, "sums": {"radii": "1:2:2", "specs": [{"family": "shifted", "m": 4}]},
    })
    assert not base.sum_specs[0].dedup_signs
    assert load_config(CONFIG_DIR / "experiment_base.yaml")["sums"]["dedup_signs"] is False

    for preset in ("golden", "golden-growth", "diagonal-nf-2"):
        config = ExperimentConfig.from_file(str(preset_path(preset)))
        assert all(spec.dedup_signs for spec in config.sum_specs), preset
    gaussian = ExperimentConfig.from_file(str(preset_path("gaussian-diagonal-2")))
    assert not any(spec.dedup_signs for spec in gaussian.sum_specs)
