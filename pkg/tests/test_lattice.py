"""
Tests for lattice construction and sphere enumeration

Covers:
1. Basis validation errors
2. Point counts of Z[i] and the Golden code
3. Enumeration against a brute-force coefficient box scan
4. Sign deduplication, thread invariance and the point budget
"""
import numpy as np
import pytest

from src.errors import BudgetExceeded, DependentBasis, DimensionMismatch, InvalidArgument
from src.lattice import build_lattice, load_basis_json, save_basis_json


def coeff_set(points):
    return {p.coeffs for p in points}


def test_dependent_basis_rejected():
    with pytest.raises(DependentBasis):
        build_lattice([np.array([[1.0]]), np.array([[2.0]])])


def test_rank_above_real_dimension_rejected():
    with pytest.raises(DependentBasis):
        build_lattice([np.array([[1.0]]), np.array([[1j]]), np.array([[1.0 + 1j]])])


def test_inconsistent_shapes_rejected():
    with pytest.raises(DimensionMismatch):
        build_lattice([np.eye(2), np.eye(3)])
    with pytest.raises(DimensionMismatch):
        build_lattice([])


def test_gaussian_integers_small_balls(zi):
    assert zi.k == 2 and zi.n == 1 and zi.T == 1
    assert zi.min_norm_sq == pytest.approx(1.0)

    unit = list(zi.enumerate(1.0))
    assert coeff_set(unit) == {(1, 0), (-1, 0), (0, 1), (0, -1)}
    assert all(p.norm_f == pytest.approx(1.0) for p in unit)

    # the four points of norm sqrt2 sit exactly on the sphere
    assert len(list(zi.enumerate(np.sqrt(2.0)))) == 8
    assert zi.shell_counts([1.0, np.sqrt(2.0), 2.0]) == [4, 8, 12]
    assert zi.shell_counts([0.5]) == [0]


def test_non_positive_radius_rejected(zi):
    with pytest.raises(InvalidArgument):
        list(zi.enumerate(0.0))


def test_golden_matches_box_scan(golden, box_scan):
    coeffs, _, _ = box_scan(golden, 2.0, bound=2)
    points = list(golden.enumerate(2.0))
    assert len(points) == len(coeffs)
    assert coeff_set(points) == {tuple(int(z) for z in c) for c in coeffs}


def test_golden_counts_approach_volume_growth(golden):
    n1, n2, n4 = golden.shell_counts([1.0, 2.0, 4.0])
    assert n1 == 16
    assert n2 == 1712
    # |L(2M)| / |L(M)| tends to 2^8
    assert n2 / n1 < n4 / n2 < 256


@pytest.mark.parametrize("seed", range(12))
def test_random_lattices_match_box_scan(seed, box_scan):
    rng = np.random.default_rng(seed)
    k = 2 + seed % 3
    entries = rng.integers(-2, 3, size=(k, 1, 2)) + 1j * rng.integers(-2, 3, size=(k, 1, 2))
    try:
        lattice = build_lattice(list(entries), name=f"random-{seed}")
    except DependentBasis:
        pytest.skip("random basis is dependent")
    M = float(rng.uniform(1.0, 4.0))
    inv = np.linalg.inv(lattice.gram_real)
    if M * np.sqrt(np.max(np.diag(inv))) > 10:
        pytest.skip("coefficient box too large for the brute-force scan")

    coeffs, _, norm_sq = box_scan(lattice, M)
    points = list(lattice.enumerate(M))
    assert len(points) == len(coeffs)
    assert coeff_set(points) == {tuple(int(z) for z in c) for c in coeffs}
    # closed under negation
    assert coeff_set(points) == {tuple(-z for z in p.coeffs) for p in points}


def test_sign_deduplication(golden):
    full = coeff_set(golden.enumerate(2.0))
    half = coeff_set(golden.enumerate(2.0, dedup_signs=True))
    assert 2 * len(half) == len(full)
    assert not any(tuple(-z for z in c) in half for c in half)
    assert half | {tuple(-z for z in c) for c in half} == full


def test_partition_results_independent_of_threads(golden):
    def count(batches):
        return sum(len(b) for b in batches)

    serial = golden.map_partitions(2.0, count, threads=1)
    parallel = golden.map_partitions(2.0, count, threads=4)
    assert serial == parallel
    assert sum(serial) == 1712


def test_budget_exceeded(golden):
    with pytest.raises(BudgetExceeded):
        list(golden.enumerate_batches(100.0, budget=1e6))


def test_point_reconstruction(golden):
    point = golden.point((1, 0, 0, 0, 0, 0, 0, 0))
    np.testing.assert_allclose(point.X, golden.basis[0])
    assert point.with_sym().sym.det == pytest.approx(0.2, rel=1e-12)


def test_scaled_lattice(zi):
    half = zi.scaled(0.5)
    assert half.min_norm_sq == pytest.approx(0.25)
    assert half.shell_counts([0.5]) == [4]
    with pytest.raises(InvalidArgument):
        zi.scaled(0.0)


def test_basis_json_round_trip(golden, tmp_path):
    path = tmp_path / "golden.json"
    save_basis_json(golden, path)
    loaded = load_basis_json(path)
    assert loaded.name == "golden"
    np.testing.assert_allclose(loaded.basis, golden.basis, rtol=0, atol=1e-15)
    assert loaded.shell_counts([1.0]) == [16]
