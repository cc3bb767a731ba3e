import numpy as np
import pytest

from predtrig.control import (aggregate_xi, assemble_closed_loop, closed_loop_radius, control_input, law_for_models,
                              lqr_law, make_law_from_stacked, reconstruct_step)
from predtrig.errors import ContractError, DimensionError
from predtrig.orchestrator import simulate
from predtrig.plant import LinearModel, build_platoon_model
from predtrig.remote_predictor import RemoteEstimate
from predtrig.scenarios import platoon_lqr, scenario_from_dict


def scalar(a=0.9, b=1.0):
    return LinearModel([[a]], [[b]], [[1.0]], [[0.1]], [[0.1]], [0.0], [[1.0]])


def test_aggregate_xi_examples():
    law = make_law_from_stacked([[0.5, 0.3], [0.0, 0.2]], [1, 1], [1, 1])
    xi = aggregate_xi(0, {1: RemoteEstimate(np.array([2.0]), 0, 1)}, law)
    assert xi[0] == pytest.approx(0.6)
    # agent 1 does not use agent 0, so no estimate is needed
    assert aggregate_xi(1, {}, law)[0] == 0.0
    with pytest.raises(ContractError):
        aggregate_xi(0, {}, law)


def test_aggregate_xi_includes_offsets():
    law = make_law_from_stacked([[0.5, 0.3], [0.0, 0.2]], [1, 1], [1, 1], offsets=[1.0, -2.0])
    assert aggregate_xi(0, {1: np.array([2.0])}, law)[0] == pytest.approx(1.6)


def test_control_input_examples():
    assert control_input([1.0], [0.0], [[0.0]])[0] == 0.0
    assert control_input([1.0], [0.1], [[-0.5]])[0] == pytest.approx(-0.4)
    assert control_input([3.0], [0.0], [[2.0]], x_des=[1.0])[0] == pytest.approx(4.0)
    with pytest.raises(DimensionError):
        control_input([1.0, 2.0], [0.0], [[1.0]])


def test_single_agent_closed_loop_is_open_loop_when_gain_zero():
    m = scalar()
    Acl, D, C = assemble_closed_loop([m], law_for_models([m], [[0.0]]))
    assert np.allclose(Acl, m.A) and np.all(D == 0) and np.all(C == 0)


def test_two_agent_assembly_by_hand():
    f = np.array([[-0.4, 0.1], [0.2, -0.3]])
    models = [scalar(), scalar()]
    Acl, D, C = assemble_closed_loop(models, law_for_models(models, f))
    assert np.allclose(Acl, [[0.5, 0.1], [0.2, 0.6]])
    assert np.allclose(D, [[-0.4, 0.0], [0.0, -0.3]])
    assert np.allclose(C, [[0.0, 0.1], [0.2, 0.0]])


def test_dimension_mismatch():
    models = [scalar(), scalar()]
    with pytest.raises(DimensionError):
        law_for_models(models, np.zeros((2, 3)))
    with pytest.raises(DimensionError):
        assemble_closed_loop(models[:1], law_for_models(models, np.zeros((2, 2))))


def test_platoon_lqr_is_stabilising():
    for N in (3, 10):
        pm = build_platoon_model(N, 0.1)
        F = platoon_lqr(N)
        rho = np.max(np.abs(np.linalg.eigvals(pm.A_rel + pm.B_rel @ F)))
        assert rho < 1.0
        # the absolute closed loop keeps the common position mode on the unit circle
        law = law_for_models(pm.agents, F @ pm.transform)
        assert closed_loop_radius(pm.agents, law) == pytest.approx(1.0, abs=1e-9)


def test_lqr_law_on_uncoupled_agents_is_block_diagonal():
    law = lqr_law([scalar(1.0), scalar(1.0)], np.eye(2), np.eye(2))
    assert law.gains[0][1][0, 0] == pytest.approx(0.0, abs=1e-12)
    assert law.own_gain(0)[0, 0] == pytest.approx(-0.6180339887498949, abs=1e-9)


def three_agent_scenario(p_drop=0.0):
    agents = [{"A": [[0.95]], "B": [[1.0]], "H": [[1.0]], "Q": [[0.05]], "R": [[0.1]], "x0": [1.0], "X0": [[0.5]]}
              for _ in range(3)]
    gain = [[-0.4, 0.1, 0.05], [0.1, -0.3, 0.1], [0.05, 0.1, -0.5]]
    return scenario_from_dict({"schema": 1, "agents": agents, "control": {"gain": gain, "offsets": [0.2, 0.0, -0.1]},
                               "trigger": {"kind": "pt", "M": 2, "cost": 0.2}, "p_drop": p_drop, "horizon": 60})


@pytest.mark.parametrize("kind", ["et", "pt", "st"])
def test_ensemble_identity_on_simulated_run(kind):
    sc = three_agent_scenario()
    tr = simulate(sc, kind, 0.2, runs=2, seed=3, record="basic").trace
    law = sc.control_law()
    for r in range(2):
        for k in range(1, 61):
            nxt = reconstruct_step(tr.x[r, k - 1], tr.e_hat[r, k - 1], tr.e[r, k - 1], tr.v[r, k], sc.agents, law)
            assert np.allclose(nxt, tr.x[r, k], atol=1e-12)
