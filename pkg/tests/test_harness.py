import csv
import io
import json
import math
from pathlib import Path

import pytest

from erwre.cli import EXIT_ASSERT, EXIT_IO, EXIT_OK, EXIT_USAGE, main
from erwre.env_model import EnvironmentSpec, ExampleLaw, Fixed, FixedCount, Mask, TwoPoint
from erwre.harness import (COLUMNS, ExperimentConfig, emit_report, render_report,
                           run_experiment)

FIXTURES = Path(__file__).parent / "fixtures"

SMALL = {
    "walk": ["--replicas", "6", "--horizon", "2000", "--lambda", "1", "--beta", "1"],
    "excursion": ["--replicas", "6", "--horizon", "2000", "--mask", "positive",
                  "--lambda", "2", "--beta", "1"],
    "couple": ["--replicas", "6", "--horizon", "5000", "--mask", "positive",
               "--lambda", "2", "--beta", "1"],
    "bpre": ["--replicas", "4", "--horizon", "50", "--lambda", "1", "--beta", "3"],
    "rde": ["--replicas", "50", "--kmax", "10", "--lambda", "2", "--beta", "1"],
    "hitprob": ["--replicas", "2", "--kmax", "3", "--trials", "500"],
    "phase": ["--replicas", "3", "--horizon", "1000", "--lambda", "0.5,2", "--beta", "1"],
}


def run_cli(tmp_path, name, args):
    out = tmp_path / name
    code = main(args + ["--out", str(out)])
    return code, out


def test_schema_fixture_matches():
    fixture = json.loads((FIXTURES / "csv_schemas.json").read_text())
    assert {k: tuple(v) for k, v in fixture.items()} == COLUMNS
    assert COLUMNS["couple"] == ("replica", "t0_or_timeout", "k", "U_k", "V_k",
                                 "indicator", "violation")


@pytest.mark.parametrize("sub", sorted(SMALL))
def test_csv_header_and_rows(tmp_path, sub):
    code, out = run_cli(tmp_path, "a.csv", [sub] + SMALL[sub])
    assert code == EXIT_OK
    text = out.read_text()
    assert text.endswith("\n")
    rows = list(csv.reader(io.StringIO(text)))
    assert tuple(rows[0]) == COLUMNS[sub]
    assert len(rows) > 1
    assert all(len(r) == len(COLUMNS[sub]) for r in rows)


@pytest.mark.parametrize("sub", sorted(SMALL))
def test_json_round_trip(tmp_path, sub):
    code, out = run_cli(tmp_path, "a.json", [sub] + SMALL[sub] + ["--format", "json"])
    assert code == EXIT_OK
    doc = json.loads(out.read_text())
    assert doc["subcommand"] == sub
    assert tuple(doc["columns"]) == COLUMNS[sub]
    assert doc["aggregate"]
    again = json.loads(json.dumps(doc))
    assert again["aggregate"] == doc["aggregate"]


@pytest.mark.parametrize("sub", sorted(SMALL))
def test_byte_identical_across_workers(tmp_path, sub):
    outputs = []
    for i, workers in enumerate(("1", "1", "8")):
        for fmt in ("csv", "json"):
            code, out = run_cli(tmp_path, f"{i}.{fmt}",
                                [sub] + SMALL[sub] + ["--workers", workers, "--format", fmt])
            assert code == EXIT_OK
            outputs.append(out.read_bytes())
    assert outputs[0] == outputs[2] == outputs[4]
    assert outputs[1] == outputs[3] == outputs[5]


def test_replica_rows_independent_of_ensemble_size():
    spec = EnvironmentSpec(TwoPoint(0.3, 0.6, 0.5), ExampleLaw(1.0, 1.0))
    small = run_experiment(ExperimentConfig("walk", spec, seed=5, replicas=3, horizon=500))
    large = run_experiment(ExperimentConfig("walk", spec, seed=5, replicas=9, horizon=500))
    assert small.rows == large.rows[:3]


def test_aggregates_recomputable():
    spec = EnvironmentSpec(Fixed(0.5))
    rep = run_experiment(ExperimentConfig("walk", spec, seed=1, replicas=40, horizon=300))
    finals = sorted(r["final"] for r in rep.rows)
    assert rep.aggregate["median_final"] == (finals[19] + finals[20]) / 2
    positive = sum(f > 0 for f in finals)
    assert rep.aggregate["p_final_positive"]["successes"] == positive


def test_couple_report_has_no_violations():
    spec = EnvironmentSpec(Fixed(1 / 3), ExampleLaw(2.0, 1.0), Mask.POSITIVE_ONLY)
    rep = run_experiment(ExperimentConfig("couple", spec, seed=3, replicas=200,
                                          horizon=10**4))
    assert rep.violations == 0
    assert rep.aggregate["finished"] + rep.aggregate["timeouts"] == 200


def test_phase_report_labels():
    rep = run_experiment(ExperimentConfig("phase", EnvironmentSpec(Fixed(1 / 3)), seed=2,
                                          replicas=4, horizon=1000,
                                          lambdas=(0.5, 1.0, 2.0), betas=(1.0, 3.0)))
    labels = {(g["lambda"], g["beta"]): g["predicted"] for g in rep.aggregate["grid"]}
    assert labels == {(0.5, 1.0): "RightTransient", (0.5, 3.0): "RightTransient",
                      (1.0, 1.0): "RightTransient", (1.0, 3.0): "Recurrent",
                      (2.0, 1.0): "LeftTransient", (2.0, 3.0): "LeftTransient"}
    assert rep.aggregate["mean_log_rho"] == pytest.approx(math.log(2))
    assert len(rep.rows) == 24


def test_json_non_finite_values_become_strings():
    spec = EnvironmentSpec(Fixed(0.5))
    rep = run_experiment(ExperimentConfig("walk", spec, replicas=1, horizon=10))
    rep.aggregate["weird"] = [math.inf, math.nan]
    doc = json.loads(render_report(rep, "json"))
    assert doc["aggregate"]["weird"] == ["inf", "nan"]


def test_config_file_with_flag_override(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# walk setup\np_law=fixed\np=0.5\ncookie_law=fixed\nm=1\n"
                   "seed=4\nreplicas=3\nhorizon=100\nformat=json\n")
    code, out = run_cli(tmp_path, "o.json", ["walk", "--config", str(cfg), "--replicas", "2"])
    assert code == EXIT_OK
    doc = json.loads(out.read_text())
    assert doc["config"]["replicas"] == 2
    assert doc["config"]["seed"] == 4
    assert doc["config"]["cookie_law"] == "fixed"


def test_usage_errors_exit_one(tmp_path, capsys):
    assert main(["fly"]) == EXIT_USAGE
    assert main(["walk", "--replicas", "0"]) == EXIT_USAGE
    assert main(["walk", "--horizon", "0"]) == EXIT_USAGE
    assert main(["walk", "--lambda", "2"]) == EXIT_USAGE
    assert main(["walk", "--p", "1.5"]) == EXIT_USAGE
    assert main(["walk", "--seed", "-1"]) == EXIT_USAGE
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("cookie_law=fixed\nlambda=2\nbeta=1\nm=2\n")
    assert main(["walk", "--config", str(cfg)]) == EXIT_USAGE
    assert "usage error" in capsys.readouterr().err


def test_io_errors_exit_three(tmp_path):
    assert main(["walk", "--replicas", "1", "--horizon", "10",
                 "--out", str(tmp_path / "missing" / "x.csv")]) == EXIT_IO
    assert main(["walk", "--config", str(tmp_path / "nope.cfg")]) == EXIT_IO


def test_violation_exit_code(monkeypatch, tmp_path):
    import erwre.harness as harness
    from erwre.branching_engine import CouplingRow

    def broken(config, r):
        return [{"replica": r, "t0_or_timeout": 1, "k": 1, "U_k": 1, "V_k": 0,
                 "indicator": 1, "violation": int(CouplingRow(1, 1, 0, 1, True).violation)}]

    monkeypatch.setitem(harness._ITEM, "couple", broken)
    code, out = run_cli(tmp_path, "c.csv", ["couple", "--replicas", "2"])
    assert code == EXIT_ASSERT
    assert out.exists()


def test_emit_to_stdout(capsys):
    rep = run_experiment(ExperimentConfig("rde", EnvironmentSpec(Fixed(0.4), FixedCount(2)),
                                          replicas=5, k_max=3))
    emit_report(rep, "csv", None)
    assert capsys.readouterr().out.splitlines()[0] == "sample,x_n,w_n"


def test_config_invariants():
    with pytest.raises(ValueError):
        ExperimentConfig("walk", replicas=0)
    with pytest.raises(ValueError):
        ExperimentConfig("walk", lambdas=(1.0,), betas=(1.0,))
    with pytest.raises(ValueError):
        ExperimentConfig("walk", EnvironmentSpec(cookie_law=ExampleLaw(1, 1)),
                         lambdas=(2.0,), betas=(1.0,))
    with pytest.raises(ValueError):
        ExperimentConfig("nope")
    cfg = ExperimentConfig("bpre")
    assert cfg.horizon == 10**4
    assert ExperimentConfig("walk").horizon == 10**5


def test_excursion_json_carries_upcrossings(tmp_path):
    code, out = run_cli(tmp_path, "e.json", ["excursion"] + SMALL["excursion"] + ["--format", "json"])
    assert code == EXIT_OK
    rows = json.loads(out.read_text())["rows"]
    assert all(r["upcrossings"]["0"] == 1 for r in rows)
