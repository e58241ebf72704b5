import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fineassembly.workspace import (
    BimanualObjective,
    DomainError,
    GridMismatchError,
    GridSpec,
    ReachabilityMap,
    bimanual_volumes,
    joint_limit_penalty,
    modified_index,
    optimize_base_distance,
    place_facing_pair,
    shared_dexterity,
    yoshikawa_index,
)


def test_yoshikawa_square_is_abs_det(rng):
    J = rng.normal(size=(6, 6))
    assert yoshikawa_index(J) == pytest.approx(abs(np.linalg.det(J)))


def test_yoshikawa_rank_deficient():
    J = np.zeros((6, 6))
    J[:5, :5] = np.eye(5)
    assert yoshikawa_index(J) == 0.0
    with pytest.raises(ValueError):
        yoshikawa_index(np.full((6, 6), np.nan))


def test_penalty_domain(model):
    q = model.midpoints.copy()
    q[1] = model.upper[1]
    with pytest.raises(DomainError):
        joint_limit_penalty(q, model.limits)
    with pytest.raises(DomainError):
        modified_index(model, q)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0.001, 0.999), min_size=6, max_size=6))
def test_penalty_at_least_n(model, frac):
    q = model.lower + np.array(frac) * (model.upper - model.lower)
    assert joint_limit_penalty(q, model.limits) >= 6.0 - 1e-12


def test_modified_index_divides(model, rng):
    from fineassembly.kinematics import jacobian

    q = rng.uniform(model.lower * 0.9, model.upper * 0.9)
    w = yoshikawa_index(jacobian(model, q))
    assert modified_index(model, q) == pytest.approx(w / joint_limit_penalty(q, model.limits))


def _toy_map(n=9):
    vals = np.zeros((n, n, 2))
    m = n // 2
    idx = np.indices(vals.shape)
    r = np.hypot(idx[0] - m, idx[1] - m)
    vals[r <= 2.5] = 1.0 / (1.0 + r[r <= 2.5])
    return ReachabilityMap([-m * 0.1, -m * 0.1, 0.0], 0.1, vals)


def test_facing_pair_is_mirrored():
    local = _toy_map()
    A, B = place_facing_pair(local, 4)
    assert A.same_grid(B)
    np.testing.assert_array_equal(A.values, B.values[::-1, ::-1, :])
    u, i = bimanual_volumes(A, B)
    assert u == pytest.approx(2 * local.volume() - i)


def test_grid_mismatch():
    a = _toy_map()
    b = ReachabilityMap(a.origin + 0.05, a.resolution, a.values)
    with pytest.raises(GridMismatchError):
        bimanual_volumes(a, b)


def test_shared_dexterity_zero_when_disjoint():
    local = _toy_map()
    A, B = place_facing_pair(local, 20)
    assert shared_dexterity(A, B) == 0.0
    assert bimanual_volumes(A, B)[1] == 0.0


def test_objective_validation():
    with pytest.raises(ValueError):
        BimanualObjective(d_min=1.2, d_max=1.0)
    with pytest.raises(ValueError):
        BimanualObjective(alpha=0.0, beta=0.0)
    assert BimanualObjective(d_min=1.0, d_max=1.1, step=0.05).candidates().tolist() == [1.0, 1.05, 1.1]


def test_scan_on_toy_map_tie_break():
    # alpha = beta makes the objective u + i = 2 * single volume for every d:
    # all candidates tie, and the tie goes to the highest shared dexterity
    local = _toy_map()
    res = optimize_base_distance(None, BimanualObjective(0.5, 0.5, 0.0, 1.0, 0.1), local_map=local)
    objs = {round(r["objective"], 12) for r in res.table}
    assert len(objs) == 1
    best = max(r["shared_dexterity"] for r in res.table)
    assert res.d_best == pytest.approx(min(r["d"] for r in res.table if r["shared_dexterity"] == best))


def test_scan_weights_shift_optimum():
    local = _toy_map()
    near = optimize_base_distance(None, BimanualObjective(0.0, 1.0, 0.0, 1.0, 0.1), local_map=local)
    far = optimize_base_distance(None, BimanualObjective(1.0, 0.0, 0.0, 1.0, 0.1), local_map=local)
    assert near.d_best < far.d_best


def test_coarse_scan_properties(model, tmp_path):
    res = optimize_base_distance(model, BimanualObjective(), GridSpec(resolution=0.1))
    single = res.single_map.volume()
    rows = sorted(res.table, key=lambda r: r["d"])
    for r in rows:
        assert r["union"] <= 2 * single + 1e-12
        assert r["union"] + r["intersection"] == pytest.approx(2 * single)
    res.write_table(tmp_path / "t.csv")
    assert (tmp_path / "t.csv").read_text().startswith("d,union,intersection")
    assert res.d_best in [r["d"] for r in rows]
    assert math.isfinite(res.objective)
