import numpy as np
import pytest

from epswitch import (
    REFERENCE_PARAMS,
    ScanGrid,
    SystemParams,
    classify_ep_order,
    cluster_diameter,
    explicit_dynamical_matrix,
    refine_ep,
    scan_condition_map,
    search_high_order_ep,
)
from epswitch.errors import AllStartsFailed
from epswitch.eptools import _candidate_at


# ---------------------------------------------------------------------------
# cluster diameter


def test_cluster_diameter_picks_tightest_subset():
    w = np.array([0.0, 1.0, 1.1, 5.0, 5.05, 9.0, 12.0, 20.0])
    d, idx = cluster_diameter(w, 2)
    assert d == pytest.approx(0.05)
    assert set(idx) == {3, 4}
    d3, idx3 = cluster_diameter(w, 3)
    assert set(idx3) == {1, 2, 3} or d3 == pytest.approx(
        max(abs(w[a] - w[b]) for a in idx3 for b in idx3)
    )


def test_cluster_diameter_complex():
    w = np.array([1 + 1j, 1.2 + 1j, 4 - 2j, 4.05 - 2j, 0, 8, 9, 10.0])
    d, idx = cluster_diameter(w, 2)
    assert d == pytest.approx(0.05)
    assert set(idx) == {2, 3}


# ---------------------------------------------------------------------------
# condition-number scan


def test_scan_validation():
    with pytest.raises(ValueError):
        ScanGrid(("delta1", 0.0, 1.0, 1), ("omega1", 0.0, 1.0, 5), REFERENCE_PARAMS)
    with pytest.raises(ValueError):
        ScanGrid(("delta1", 1.0, 0.0, 4), ("omega1", 0.0, 1.0, 5), REFERENCE_PARAMS)
    with pytest.raises(ValueError):
        ScanGrid(("bogus", 0.0, 1.0, 4), ("omega1", 0.0, 1.0, 5), REFERENCE_PARAMS)


def test_scan_without_dissipation_is_flat():
    # coherent-only dynamics: M is antisymmetric, hence normal, hence every
    # eigenvalue has condition number 1
    fixed = SystemParams(omega2=400.0, delta2=1400.0)
    m = explicit_dynamical_matrix(fixed.replace(delta1=-80.0, omega1=225.0))
    assert np.max(np.abs(m + m.T)) < 1e-12
    grid = ScanGrid(("delta1", -500.0, 500.0, 4), ("omega1", 50.0, 400.0, 3), fixed)
    table = scan_condition_map(grid)
    assert table.shape == (4, 3)
    assert np.allclose(table, 1.0, atol=1e-6)


def test_scan_matches_pointwise_evaluation():
    grid = ScanGrid(
        ("delta1", -100.0, -60.0, 2), ("omega1", 200.0, 250.0, 2), REFERENCE_PARAMS
    )
    table = scan_condition_map(grid)
    from epswitch import max_condition_number

    for i, d1 in enumerate(grid.axis_values(1)):
        for j, om1 in enumerate(grid.axis_values(2)):
            direct = max_condition_number(
                explicit_dynamical_matrix(REFERENCE_PARAMS.replace(delta1=d1, omega1=om1))
            )
            assert table[i, j] == pytest.approx(direct, rel=1e-12)


def test_scan_serial_deterministic_and_parallel_equal():
    grid = ScanGrid(
        ("delta1", -120.0, -40.0, 3), ("omega1", 180.0, 260.0, 3), REFERENCE_PARAMS
    )
    a = scan_condition_map(grid)
    b = scan_condition_map(grid)
    assert np.array_equal(a, b)
    c = scan_condition_map(grid, workers=2)
    assert np.allclose(a, c, rtol=0, atol=0)


# ---------------------------------------------------------------------------
# EP2 refinement


@pytest.fixture(scope="module")
def ep2_candidate():
    seed = REFERENCE_PARAMS.replace(delta1=-80.0, omega1=225.0)
    return refine_ep(seed, ("delta1", "omega1"), target_order=2)


def test_refine_isolated_ep2(ep2_candidate):
    cand = ep2_candidate
    assert cand.success
    assert cand.cluster_diameter < 1e-3
    assert cand.max_cond_num > 1e4
    assert abs(cand.location.delta1 + 80.0) < 15.0
    assert abs(cand.location.omega1 - 225.0) < 5.0
    # the coalescing eigenvalues are complex (an isolated EP2, not a point
    # on one of the real-axis degeneracy lines)
    w = np.linalg.eigvals(explicit_dynamical_matrix(cand.location))
    _, idx = cluster_diameter(w, 2)
    assert abs(w[idx[0]].imag) > 100.0


def test_refine_never_increases_diameter(ep2_candidate):
    seed = REFERENCE_PARAMS.replace(delta1=-80.0, omega1=225.0)
    w_seed = np.linalg.eigvals(explicit_dynamical_matrix(seed))
    d_seed, _ = cluster_diameter(w_seed, 2)
    assert ep2_candidate.float64_diameter <= d_seed + 1e-12


def test_refine_without_nearby_ep_reports_failure():
    # without dissipation the generator is normal; eigenvalue collisions are
    # diabolic and the condition number stays at 1, so no candidate passes
    seed = SystemParams(omega2=400.0, delta2=1400.0, delta1=2000.0, omega1=2000.0)
    cand = refine_ep(seed, ("delta1", "omega1"), target_order=2, max_fev=800)
    assert not cand.success
    assert "no convergence" in cand.message


def test_refine_requires_enough_free_params():
    with pytest.raises(ValueError):
        refine_ep(REFERENCE_PARAMS, ("delta1",), target_order=4)


def test_synthetic_jordan_family_recovery():
    # family [[0, 1], [-f, 0]] + diag rest with f = (x-1)^2 + (y-2)^2:
    # an exact EP2 sits at (x, y) = (1, 2) where both eigenvalues vanish
    def matrix_of(p):
        m = np.diag(np.arange(3.0, 11.0))
        m[0, 0] = m[1, 1] = 0.0
        m[0, 1] = 1.0
        m[1, 0] = -((p.delta1 - 1.0) ** 2 + (p.omega1 - 2.0) ** 2)
        return m

    seed = SystemParams(delta1=1.4, omega1=1.7)
    cand = refine_ep(seed, ("delta1", "omega1"), 2, matrix_of=matrix_of)
    assert cand.success
    assert abs(cand.location.delta1 - 1.0) < 1e-6
    assert abs(cand.location.omega1 - 2.0) < 1e-6


# ---------------------------------------------------------------------------
# order classification


def test_classify_ep2(ep2_candidate):
    assert classify_ep_order(ep2_candidate) == 2


def test_classify_stable_under_radius_choice(ep2_candidate):
    assert classify_ep_order(ep2_candidate, radius=1e-2) == 2
    assert classify_ep_order(ep2_candidate, radius=1e-3) == 2


def test_classify_regular_point():
    p = REFERENCE_PARAMS.replace(delta1=700.0, omega1=900.0)
    cand = _candidate_at(p, 2, ("delta1", "omega1"))
    assert classify_ep_order(cand) == 1


# ---------------------------------------------------------------------------
# high-order search


def test_search_order2_delegates_to_refine(ep2_candidate):
    seed = REFERENCE_PARAMS.replace(delta1=-80.0, omega1=225.0)
    best = search_high_order_ep(2, [seed], ("delta1", "omega1"))
    assert best.location == ep2_candidate.location
    assert best.cluster_diameter == ep2_candidate.cluster_diameter


def test_search_all_starts_failed():
    # coherent-only dynamics has no exceptional points at all
    seed = SystemParams(omega2=400.0, delta2=1400.0, delta1=500.0, omega1=500.0)
    with pytest.raises(AllStartsFailed) as err:
        search_high_order_ep(3, [seed], ("delta1", "omega1"), widen=False)
    assert err.value.diagnostics


def test_search_rejects_bad_order():
    with pytest.raises(ValueError):
        search_high_order_ep(7, [REFERENCE_PARAMS], ("delta1", "omega1"))
