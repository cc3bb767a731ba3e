import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from predtrig.errors import ConfigurationError, DimensionError
from predtrig.plant import (UNIFORM, LinearModel, NoiseSource, NoiseSpec, SurfaceChange, build_platoon_model,
                            measure, relative_platoon_matrices, step_true_state)


def ex1():
    return LinearModel([[0.98]], np.zeros((1, 0)), [[1.0]], [[0.1]], [[0.1]], [1.0], [[1.0]])


def test_step_identity_without_noise():
    m = LinearModel(np.eye(2), np.zeros((2, 1)), np.eye(2), np.zeros((2, 2)), np.eye(2), [0, 0], np.eye(2))
    x = np.array([1.5, -2.0])
    assert np.array_equal(step_true_state(x, [3.0], m, NoiseSource(1)), x)


def test_step_forced_noise():
    assert step_true_state([1.0], None, ex1(), v=[0.05])[0] == pytest.approx(1.03, abs=1e-15)


def test_measure_forced_noise():
    assert measure([1.2], ex1(), w=[-0.1])[0] == pytest.approx(1.1, abs=1e-15)


def test_measure_exact_when_r_zero():
    m = LinearModel([[1.0]], np.zeros((1, 0)), [[2.0]], [[0.1]], [[0.0]], [0.0], [[1.0]])
    assert measure([0.7], m, NoiseSource(3))[0] == pytest.approx(1.4, abs=1e-15)


def test_dimension_errors():
    with pytest.raises(DimensionError):
        step_true_state([1.0, 2.0], None, ex1())
    with pytest.raises(DimensionError):
        LinearModel(np.eye(2), np.zeros((2, 1)), np.eye(3), np.eye(2), np.eye(2), [0, 0], np.eye(2))


def test_non_psd_rejected():
    with pytest.raises(ConfigurationError):
        LinearModel([[1.0]], np.zeros((1, 0)), [[1.0]], [[-0.1]], [[0.1]], [0.0], [[1.0]])


def test_same_seed_same_samples():
    spec = NoiseSpec(UNIFORM, np.eye(2), 0.3)
    a = NoiseSource(42).draw(spec, 50)
    b = NoiseSource(42).draw(spec, 50)
    assert np.array_equal(a, b)


@pytest.mark.parametrize("spec", [NoiseSpec("gaussian", np.array([[1.0, 0.0], [0.5, 0.3]])),
                                  NoiseSpec(UNIFORM, np.array([[0.1], [0.005]]), 0.1)])
def test_noise_moments(spec):
    n = 100_000
    s = NoiseSource(7).draw(spec, n)
    cov = spec.covariance
    se_mean = np.sqrt(np.diag(cov) / n)
    assert np.all(np.abs(s.mean(axis=0)) <= 3 * se_mean + 1e-15)
    emp = np.cov(s.T)
    # variance of a sample variance ~ (m4 - s^4)/n; use a generous 4th-moment bound
    se_var = np.sqrt(2.0 * np.diag(cov) ** 2 / n)
    assert np.all(np.abs(np.diag(emp) - np.diag(cov)) <= 3 * se_var)


def test_platoon_dimensions():
    pm = build_platoon_model(2, 0.1)
    assert pm.A_rel.shape == (3, 3)
    assert build_platoon_model(10, 0.1).A_rel.shape == (19, 19)
    with pytest.raises(ConfigurationError):
        build_platoon_model(1, 0.1)
    with pytest.raises(ConfigurationError):
        build_platoon_model(3, 0.0)


def test_platoon_relative_matrix_by_hand():
    dt = 0.1
    A, B = relative_platoon_matrices(2, dt)
    A_hand = np.array([[1, 0, 0], [dt, 1, -dt], [0, 0, 1]])
    B_hand = np.array([[dt, 0], [dt**2 / 2, -dt**2 / 2], [0, dt]])
    assert np.allclose(A, A_hand) and np.allclose(B, B_hand)


def test_platoon_relative_model_matches_vehicle_kinematics():
    pm = build_platoon_model(2, 0.1)
    x = np.array([20.0, 0.0, 21.0, -12.0])
    u = np.array([0.3, -0.2])
    nxt = np.concatenate([step_true_state(x[2 * i:2 * i + 2], u[i:i + 1], pm.agents[i], v=np.zeros(2))
                          for i in range(2)])
    assert np.allclose(pm.to_relative(nxt), pm.A_rel @ pm.to_relative(x) + pm.B_rel @ u, atol=1e-12)
    # position advances by dt * velocity (+ input term)
    assert nxt[1] == pytest.approx(0.0 + 0.1 * 20.0 + 0.005 * 0.3)


def test_platoon_surface_switch_factors():
    pm = build_platoon_model(3, 0.1, SurfaceChange())
    a, b = pm.agents[0], pm.switched_agents[0]
    assert b.A[1, 0] == pytest.approx(1.5 * a.A[1, 0])
    assert b.B[0, 0] == pytest.approx(0.5 * a.B[0, 0])


@settings(max_examples=30, deadline=None)
@given(v=st.lists(st.floats(5, 30), min_size=3, max_size=3), gaps=st.lists(st.floats(1, 20), min_size=2, max_size=2))
def test_platoon_gaps_constant_iff_equal_speed(v, gaps):
    pm = build_platoon_model(3, 0.1)
    xr = np.array([v[0], gaps[0], v[1], gaps[1], v[2]])
    nxt = pm.A_rel @ xr
    same = np.isclose(nxt[[1, 3]], xr[[1, 3]], atol=1e-12)
    assert bool(same[0]) == bool(np.isclose(v[0], v[1], atol=1e-11))
    assert bool(same[1]) == bool(np.isclose(v[1], v[2], atol=1e-11))


def test_platoon_uniform_measurement_bounds():
    pm = build_platoon_model(2, 0.1)
    src = NoiseSource(0)
    y = np.array([measure([22.0, 5.0], pm.agents[0], src)[0] for _ in range(2000)])
    assert np.all(np.abs(y - 5.0) <= 0.1)
