import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from predtrig.errors import DimensionError
from predtrig.remote_predictor import RemoteEstimate, predicted_mean, remote_step


def test_reset_on_reception():
    out = remote_step(RemoteEstimate(np.array([5.0]), 3), [0.0], received=[0.7], Abar=[[0.98]])
    assert out.mean[0] == 0.7 and out.k == 4


def test_prediction_without_input():
    assert remote_step(RemoteEstimate(np.array([1.0]), 0), None, Abar=[[0.98]]).mean[0] == pytest.approx(0.98)


def test_prediction_with_input():
    out = remote_step(RemoteEstimate(np.array([1.0]), 0), [0.1], Abar=[[0.48]], B=[[1.0]])
    assert out.mean[0] == pytest.approx(0.58, abs=1e-15)
    assert predicted_mean(np.array([1.0]), np.array([0.1]), np.array([[0.48]]), np.array([[1.0]]))[0] == \
        pytest.approx(0.58, abs=1e-15)


def test_dimension_errors():
    with pytest.raises(DimensionError):
        remote_step(RemoteEstimate(np.zeros(2), 0), None, received=[1.0], Abar=np.eye(2))
    with pytest.raises(DimensionError):
        remote_step(RemoteEstimate(np.zeros(2), 0), None, Abar=np.eye(3))


def test_geometric_decay_between_receptions():
    est = RemoteEstimate(np.array([1.3]), 1)
    for _ in range(9):
        est = remote_step(est, None, Abar=[[0.98]])
    assert est.mean[0] == pytest.approx(0.98**9 * 1.3, rel=1e-14)


@settings(max_examples=40, deadline=None)
@given(seq=st.lists(st.tuples(st.booleans(), st.floats(-5, 5), st.floats(-1, 1)), min_size=1, max_size=30))
def test_sender_copy_and_receiver_stay_in_sync(seq):
    """Both sides apply identical updates, so they never diverge on a lossless link."""
    Abar, B = np.array([[0.9, 0.1], [0.0, 0.7]]), np.array([[0.0], [1.0]])
    a = b = RemoteEstimate(np.zeros(2), 0)
    for got, val, xi in seq:
        rec = np.array([val, -val]) if got else None
        a = remote_step(a, [xi], rec, Abar=Abar, B=B)
        b = remote_step(b, [xi], rec, Abar=Abar, B=B)
        assert np.array_equal(a.mean, b.mean)
        if got:
            assert np.array_equal(a.mean, rec)


def test_always_received_tracks_estimate_exactly():
    rng = np.random.default_rng(0)
    est = RemoteEstimate(np.zeros(3), 0)
    for _ in range(20):
        xh = rng.normal(size=3)
        est = remote_step(est, rng.normal(size=1), received=xh, Abar=np.eye(3), B=np.ones((3, 1)))
        assert np.array_equal(est.mean, xh)
