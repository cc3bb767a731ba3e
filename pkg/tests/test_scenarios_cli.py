import json

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from predtrig.cli import main
from predtrig.errors import ConfigurationError, DimensionError
from predtrig.orchestrator import monte_carlo_sweep, simulate
from predtrig.scenarios import (ALLOCATION_COLUMNS, BUILTINS, SWEEP_COLUMNS, emit_outputs, load_scenario,
                                read_table, scenario_from_dict, trace_columns)

GENERIC = {
    "schema": 1,
    "name": "pair",
    "agents": [
        {"A": [[0.9]], "B": [[1.0]], "H": [[1.0]], "Q": [[0.1]], "R": [[0.1]], "x0": [0.0], "X0": [[1.0]]},
        {"A": [[0.8]], "B": [[1.0]], "H": [[1.0]], "Q": [[0.1]], "R": [[0.1]], "x0": [1.0], "X0": [[1.0]],
         "process_noise": {"kind": "uniform", "shaping": [[1.0]], "halfwidth": 0.5477225575051661}},
    ],
    "control": {"lqr": {"Q": 1.0, "R": 1.0}},
    "trigger": {"kind": "pt", "M": 2, "cost": 0.3, "cost_grid": [0.0, 0.3, 1.0]},
    "p_drop": 0.0,
    "horizon": 40,
}


def write(tmp_path, cfg, name="sc.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg, indent=2))
    return p


def test_builtin_example1():
    sc = load_scenario("example1")
    m = sc.agents[0]
    assert (m.A[0, 0], m.H[0, 0], m.Q[0, 0], m.R[0, 0], m.x0_mean[0], m.X0[0, 0]) == (0.98, 1, 0.1, 0.1, 1, 1)
    assert sc.horizon == 200 and m.p == 0


def test_builtin_platoon10():
    sc = load_scenario("platoon10")
    assert sc.N == 10 and sc.dt == 0.1 and sc.p_drop == 0.1 and sc.horizon == 250
    assert sc.x_des_rel[0] == 22.2 and sc.x_des_rel[1] == 10.0
    assert sc.meta["lqr_Q"] == 1.0 and sc.meta["lqr_R"] == 1000.0
    assert sc.closed_loop_radius() < 1 and sc.closed_loop_radius(switched=True) < 1


def test_builtin_platoon3_brake():
    assert load_scenario("platoon3-brake").trigger.cost == 10.0
    sc = BUILTINS["platoon3-brake"]("st")
    assert sc.N == 3 and sc.trigger.cost == 0.7 and sc.meta["brake_step"] == 100


@pytest.mark.parametrize("name", sorted(BUILTINS))
@pytest.mark.parametrize("kind", ["et", "pt", "st"])
def test_builtins_run_under_every_trigger(name, kind):
    sc = BUILTINS[name](kind)
    res = simulate(sc, kind, runs=2, seed=0, horizon=min(sc.horizon, 120))
    assert np.all(np.isfinite(res.err)) and np.all((res.comm > 0) & (res.comm <= 1))


def test_generic_scenario_loads_and_runs(tmp_path):
    sc = load_scenario(write(tmp_path, GENERIC))
    assert sc.N == 2 and sc.agents[1].process_noise.kind == "uniform"
    assert sc.agents[1].Q[0, 0] == pytest.approx(0.1)
    assert simulate(sc, runs=2, seed=0).comm.shape == (2,)


def test_builtin_override(tmp_path):
    sc = load_scenario(write(tmp_path, {"schema": 1, "builtin": "example1", "trigger": {"kind": "et", "cost": 0.4},
                                        "horizon": 50}))
    assert sc.trigger.kind == "et" and sc.trigger.cost == 0.4 and sc.horizon == 50


def _paths(obj, prefix=()):
    if isinstance(obj, dict):
        for k, v in obj.items():
            yield prefix + (k,)
            yield from _paths(v, prefix + (k,))
    elif isinstance(obj, list) and obj and isinstance(obj[0], dict):
        for i, v in enumerate(obj):
            yield from _paths(v, prefix + (i,))


KEY_PATHS = list(_paths(GENERIC))


@settings(max_examples=60, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(path=st.sampled_from(KEY_PATHS), suffix=st.sampled_from(["_", "s", "X", "2"]))
def test_misspelled_key_is_rejected(path, suffix):
    cfg = json.loads(json.dumps(GENERIC))
    node = cfg
    for p in path[:-1]:
        node = node[p]
    node[path[-1] + suffix] = node.pop(path[-1])
    with pytest.raises(ConfigurationError, match="unknown key"):
        scenario_from_dict(cfg)


def test_parse_error_reports_line(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "schema": 1,\n  "agents": [,]\n}\n')
    with pytest.raises(ConfigurationError, match=r"bad\.json:3:"):
        load_scenario(p)


def test_validation_errors(tmp_path):
    cfg = json.loads(json.dumps(GENERIC))
    cfg["schema"] = 7
    with pytest.raises(ConfigurationError, match="schema"):
        scenario_from_dict(cfg)
    cfg = json.loads(json.dumps(GENERIC))
    cfg["agents"][0]["H"] = [[1.0, 2.0]]
    with pytest.raises(DimensionError, match=r"agents\[0\]"):
        scenario_from_dict(cfg)
    cfg = json.loads(json.dumps(GENERIC))
    cfg["control"] = {"gain": [[0.5, 0.0], [0.0, 0.5]]}
    with pytest.raises(ConfigurationError, match="not stable"):
        scenario_from_dict(cfg)
    cfg["allow_unstable"] = True
    assert scenario_from_dict(cfg).allow_unstable
    with pytest.raises(ConfigurationError, match="cannot read"):
        load_scenario(tmp_path / "missing.json")


def test_trace_columns_and_round_trip(tmp_path):
    sc = load_scenario(write(tmp_path, GENERIC))
    res = simulate(sc, runs=1, seed=0, record="basic")
    cols = trace_columns(res.trace)
    assert cols[:3] == ["k", "agent", "x_true_0"]
    assert cols[-6:] == ["gamma", "E_bar", "E_mean", "E_var", "ell", "kappa"]
    for fmt in ("csv", "json"):
        rows = read_table(emit_outputs(res.trace, tmp_path / f"t.{fmt}", fmt))
        assert len(rows) == 41 * 2
        r = rows[2 * 7 + 1]
        assert r["k"] == 7 and r["agent"] == 1
        assert r["x_hat_0"] == float("%.12g" % res.trace.x_hat[0, 7, 1])
        assert r["E_bar"] == float("%.12g" % res.trace.E_bar[0, 7, 1])


def test_sweep_and_allocation_outputs(tmp_path):
    sc = load_scenario(write(tmp_path, GENERIC))
    summary = monte_carlo_sweep(sc, "pt", [0.0, 1.0], runs=3, seed=0)
    path = emit_outputs(summary, tmp_path / "s.csv")
    header = path.read_text().splitlines()[0].split(",")
    assert header == list(SWEEP_COLUMNS) and header[:5] == ["C", "comm_avg", "err_avg", "err_std", "runs"]
    back = read_table(path)
    assert back[0]["comm_avg"] == 1.0 and back[1]["runs"] == 3
    js = json.loads(emit_outputs(summary, tmp_path / "s.json", "json").read_text())
    assert js["columns"] == list(SWEEP_COLUMNS) and js["rows"][0]["perf_avg"] is None
    alloc = simulate(sc, "pt", 0.3, runs=1, seed=0).allocation(0)
    head = emit_outputs(alloc, tmp_path / "a.csv").read_text().splitlines()[0]
    assert head.split(",") == list(ALLOCATION_COLUMNS)


def test_emit_to_unwritable_path(tmp_path):
    with pytest.raises(OSError, match="nope"):
        emit_outputs([], tmp_path / "nope" / "x.csv")


# -- command line ------------------------------------------------------------

def test_cli_run_writes_trace_and_allocation(tmp_path, capsys):
    out, alloc = tmp_path / "t.csv", tmp_path / "a.json"
    code = main(["run", "--scenario", "example1", "--trigger", "pt", "--horizon-m", "2", "--cost", "0.25",
                 "--seed", "3", "--out", str(out), "--allocation-out", str(alloc), "--format", "csv"])
    assert code == 0
    assert "comm=" in capsys.readouterr().out
    assert len(read_table(out)) == 201
    assert read_table(alloc)[0]["round"] == 1


def test_cli_sweep(tmp_path, capsys):
    out = tmp_path / "s.json"
    code = main(["sweep", "--scenario", "example1", "--trigger", "st", "--cost-grid", "0,0.6", "--runs", "3",
                 "--steps", "100", "--out", str(out), "--format", "json"])
    assert code == 0
    rows = json.loads(out.read_text())["rows"]
    assert rows[0]["comm_avg"] == 1.0 and rows[1]["comm_avg"] < 0.2


def test_cli_schedule(capsys):
    assert main(["schedule", "--scenario", "example1", "--cost", "0.6", "--steps", "60"]) == 0
    line = capsys.readouterr().out.strip()
    times = [int(t) for t in line.split(":")[1].split()]
    gaps = np.diff(times)
    assert gaps[-1] == 7 and times[0] == 1


def test_cli_validate(tmp_path, capsys):
    assert main(["validate", "--scenario", str(write(tmp_path, GENERIC))]) == 0
    assert "ok" in capsys.readouterr().out


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["validate", "--scenario", str(tmp_path / "none.json")]) == 2
    bad = json.loads(json.dumps(GENERIC))
    bad["control"] = {"gain": [[0.5, 0.0], [0.0, 0.5]]}
    assert main(["validate", "--scenario", str(write(tmp_path, bad))]) == 2
    unstab = {"schema": 1, "agents": [{"A": [[2.0]], "B": [[0.0]], "H": [[1.0]], "Q": [[1.0]], "R": [[1.0]],
                                       "x0": [0.0], "X0": [[1.0]]}], "control": {"lqr": {"Q": 1.0, "R": 1.0}}}
    assert main(["validate", "--scenario", str(write(tmp_path, unstab, "u.json"))]) == 3
    assert main(["run", "--scenario", "example1", "--out", str(tmp_path / "no" / "t.csv")]) == 3
    assert "error:" in capsys.readouterr().err
