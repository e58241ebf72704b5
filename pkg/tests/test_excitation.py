import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fineassembly.excitation import (
    ExcitationParams,
    InfeasibleError,
    check_constraints,
    eval_trajectory,
    information_matrix,
    load_params,
    log_det,
    optimize_excitation,
    period_grid,
    random_feasible,
    save_params,
    write_trajectory_csv,
)

WF = 2 * math.pi * 0.1


def test_params_shape_checks():
    with pytest.raises(ValueError):
        ExcitationParams(np.zeros((6, 2)), np.zeros((6, 3)), np.zeros(6), WF)
    with pytest.raises(ValueError):
        ExcitationParams(np.zeros((6, 0)), np.zeros((6, 0)), np.zeros(6), WF)
    with pytest.raises(ValueError):
        ExcitationParams.zeros(6, 2, 0.0)


def test_per_joint_layout():
    p = ExcitationParams.zeros(6, 5, WF)
    assert p.params_per_joint == 11
    assert p.per_joint().shape == (6, 11)
    q = ExcitationParams.from_per_joint(np.arange(66.0).reshape(6, 11), WF)
    np.testing.assert_array_equal(q.per_joint(), np.arange(66.0).reshape(6, 11))


def test_zero_coefficients_rest_at_offset():
    p = ExcitationParams.zeros(6, 3, WF, q0=np.arange(6.0) * 0.1)
    st_ = eval_trajectory(p, np.linspace(0, 10, 7))
    np.testing.assert_array_equal(st_.q, np.tile(np.arange(6.0) * 0.1, (7, 1)))
    assert not st_.qd.any() and not st_.qdd.any()


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 6))
def test_velocity_has_zero_mean(seed, N):
    rng = np.random.default_rng(seed)
    p = ExcitationParams(rng.normal(size=(6, N)), rng.normal(size=(6, N)), rng.normal(size=6), WF)
    t = period_grid(p, 512)
    s = eval_trajectory(p, t)
    assert np.abs(s.qd.mean(axis=0)).max() < 1e-10
    assert np.abs(s.qdd.mean(axis=0)).max() < 1e-10


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 6))
def test_random_feasible_respects_limits(model, seed, N):
    p = random_feasible(model, N, WF, np.random.default_rng(seed))
    rep = check_constraints(p, model, t_grid=period_grid(p, 4000))
    assert rep.ok


def test_optimizer_improves_and_stays_feasible(model):
    res = optimize_excitation(model, N=3, wf=WF, budget=300, seed=1, starts=8)
    assert res.evaluations <= 300
    assert res.history == sorted(res.history)
    assert res.log_det == pytest.approx(log_det(information_matrix(res.params, model)))
    assert check_constraints(res.params, model).ok


def test_optimizer_is_deterministic(model):
    a = optimize_excitation(model, N=2, wf=WF, budget=60, seed=3, starts=4)
    b = optimize_excitation(model, N=2, wf=WF, budget=60, seed=3, starts=4)
    np.testing.assert_array_equal(a.params.per_joint(), b.params.per_joint())


def test_optimizer_argument_checks(model):
    with pytest.raises(ValueError):
        optimize_excitation(model, N=0)
    with pytest.raises(ValueError):
        optimize_excitation(model, wf=-1.0)


def test_infeasible_warm_start_is_ignored(model):
    bad = ExcitationParams(np.full((6, 2), 50.0), np.zeros((6, 2)), model.midpoints, WF)
    res = optimize_excitation(model, N=2, wf=WF, budget=20, starts=2, warm_start=bad)
    assert check_constraints(res.params, model).ok


def test_tiny_budget_without_starts_raises(model):
    with pytest.raises(InfeasibleError):
        optimize_excitation(model, N=2, wf=WF, budget=5, starts=0)


def test_log_det_of_singular_matrix():
    assert log_det(np.zeros((3, 3))) == -math.inf


def test_files_round_trip(tmp_path, model):
    p = random_feasible(model, 4, WF, np.random.default_rng(0))
    save_params(tmp_path / "p.json", p, {"note": 1})
    q = load_params(tmp_path / "p.json")
    np.testing.assert_array_equal(p.per_joint(), q.per_joint())
    write_trajectory_csv(tmp_path / "t.csv", p, points=10)
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert len(lines) == 11 and lines[0].startswith("t,q1")
