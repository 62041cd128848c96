"""Acceptance criteria, one test per criterion, each printing a PASS/FAIL line."""
import math
import time

import numpy as np
import pytest

from erwre.analysis import (RegimeLabel, classify_regime_thm1, example_tail_descriptor,
                            two_sample_test)
from erwre.branching_engine import simulate_bpre, simulate_Z_decomposed
from erwre.cli import EXIT_OK, main
from erwre.env_model import (EnvironmentSpec, ExampleLaw, Fixed, Mask, NoCookies, TwoPoint,
                             Uniform, draw_m_many)
from erwre.harness import ExperimentConfig, run_experiment

SEED = 2718


@pytest.fixture
def verdict(capsys):
    def emit(name, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
        assert ok, detail
    return emit


def test_coupling_exactness(verdict):
    spec = EnvironmentSpec(Fixed(1 / 3), ExampleLaw(2.0, 1.0), Mask.POSITIVE_ONLY)
    t = time.perf_counter()
    rep = run_experiment(ExperimentConfig("couple", spec, seed=SEED, replicas=10**4,
                                          horizon=10**6))
    dt = time.perf_counter() - t
    agg = rep.aggregate
    ok = agg["replicas"] == 10**4 and agg["violations"] == 0 and dt <= 60
    verdict("1 coupling exactness", ok,
            f"violations={agg['violations']} finished={agg['finished']} "
            f"timeouts={agg['timeouts']} runtime={dt:.1f}s (limit 60s)")


def test_hitting_formula(verdict):
    t = time.perf_counter()
    rep = run_experiment(ExperimentConfig("hitprob", EnvironmentSpec(Uniform(0.2, 0.8)),
                                          seed=SEED, replicas=20, k_max=5, trials=10**5))
    dt = time.perf_counter() - t
    rows = rep.rows
    exact = all(r["abs_diff"] < 1e-10 for r in rows)
    frac = np.mean([r["within_4se"] for r in rows])
    ok = len(rows) == 200 and exact and frac >= 0.95 and dt <= 120
    verdict("2 hitting formula", ok,
            f"cases={len(rows)} max|closed-oracle|={rep.aggregate['max_abs_diff']:.2e} "
            f"MC within 4se={frac:.3f} (need 0.95) runtime={dt:.1f}s (limit 120s)")


def test_rde_law_identity(verdict):
    spec = EnvironmentSpec(TwoPoint(0.25, 1 / 3, 0.5), ExampleLaw(2.0, 1.0))
    t = time.perf_counter()
    accepted = 0
    for rep_i in range(10):
        rep = run_experiment(ExperimentConfig("rde", spec, seed=SEED + rep_i,
                                              replicas=10**4, k_max=10, level=0.01))
        accepted += not rep.aggregate["reject"]
    dt = time.perf_counter() - t
    ok = accepted >= 9 and dt <= 30
    verdict("3 X_n vs W_n law identity", ok,
            f"not rejected in {accepted}/10 (need 9) runtime={dt:.1f}s (limit 30s)")


def test_lineage_decomposition(verdict):
    law = EnvironmentSpec(Fixed(1 / 3), ExampleLaw(2.0, 1.0)).packed()
    spec = EnvironmentSpec(Fixed(1 / 3), ExampleLaw(2.0, 1.0))
    t = time.perf_counter()
    accepted = 0
    for rep_i in range(10):
        rng = np.random.default_rng([SEED, rep_i])
        direct = [simulate_bpre(spec, 8, rng).values[8] for _ in range(10**4)]
        split = []
        for _ in range(10**4):
            m_seq = draw_m_many(law, 1.0 - rng.random(8))
            split.append(simulate_Z_decomposed([1 / 3] * 8, m_seq, 8, rng))
        accepted += not two_sample_test(direct, split, 0.01).reject
    dt = time.perf_counter() - t
    ok = accepted >= 9 and dt <= 60
    verdict("4 lineage decomposition", ok,
            f"not rejected in {accepted}/10 (need 9) runtime={dt:.1f}s (limit 60s)")


def _phase(lam, beta, horizon):
    rep = run_experiment(ExperimentConfig("phase", EnvironmentSpec(Fixed(1 / 3), NoCookies()),
                                          seed=SEED, replicas=200, horizon=horizon,
                                          lambdas=(lam,), betas=(beta,)))
    return rep.aggregate["grid"][0], rep.rows


def test_phase_left_transient(verdict):
    g, _ = _phase(2.0, 1.0, 10**5)
    ok = g["predicted"] == "LeftTransient" and g["median_final"] < -1000
    verdict("5a lambda=2 beta=1", ok,
            f"predicted={g['predicted']} median final={g['median_final']} (need < -1000)")


def test_phase_right_transient(verdict):
    g, rows = _phase(0.5, 1.0, 10**5)
    frac = np.mean([r["final"] > 1000 for r in rows])
    ok = g["predicted"] == "RightTransient" and frac >= 0.95
    verdict("5b lambda=0.5 beta=1", ok,
            f"predicted={g['predicted']} fraction final > 1000 = {frac:.3f} (need 0.95)")


def test_phase_boundary_transient(verdict):
    g, _ = _phase(1.0, 1.0, 10**5)
    ok = (g["predicted"] == "RightTransient" and g["median_final"] > 0
          and g["median_final"] > g["median_final_short"])
    verdict("5c lambda=1 beta=1", ok,
            f"predicted={g['predicted']} median final at 1e4={g['median_final_short']} "
            f"at 1e5={g['median_final']} (need > 0 and increasing)")


def test_phase_boundary_recurrent(verdict):
    g, rows = _phase(1.0, 3.0, 10**6)
    grew = np.mean([r["returns"] > r["returns_short"] for r in rows])
    ok = g["predicted"] == "Recurrent" and grew >= 0.8
    verdict("5d lambda=1 beta=3", ok,
            f"predicted={g['predicted']} replicas with more returns at 1e6 than 1e5 = "
            f"{grew:.3f} (need 0.80); median returns {g['median_returns_short']} -> "
            f"{g['median_returns']}")


def test_bpre_trends(verdict):
    t = time.perf_counter()
    rec = EnvironmentSpec(Fixed(1 / 3), ExampleLaw(1.0, 3.0))
    hit = 0
    for r in range(1000):
        path = simulate_bpre(rec, 10**4, np.random.default_rng([SEED, r]), stop_at_zero=True)
        hit += path.first_zero is not None
    tra = EnvironmentSpec(Fixed(1 / 3), ExampleLaw(1.0, 1.0))
    escaped = 0
    for r in range(1000):
        path = simulate_bpre(tra, 10**4, np.random.default_rng([SEED + 1, r]),
                             stop_at_zero=True)
        v = path.values
        if path.first_zero is None and all(v[n] >= n * n for n in range(10, 101)):
            escaped += 1
    dt = time.perf_counter() - t
    ok = hit >= 990 and escaped >= 50 and dt <= 300
    verdict("6 branching recurrence/transience", ok,
            f"recurrent case hit 0: {hit}/1000 (need 990); transient case escaped: "
            f"{escaped}/1000 (need 50) runtime={dt:.1f}s (limit 300s)")


def test_classifier_table(verdict):
    expected = {
        (0.5, 1.0): RegimeLabel.RIGHT_TRANSIENT, (0.5, 3.0): RegimeLabel.RIGHT_TRANSIENT,
        (1.0, 1.0): RegimeLabel.RIGHT_TRANSIENT, (1.0, 3.0): RegimeLabel.RECURRENT,
        (2.0, 1.0): RegimeLabel.LEFT_TRANSIENT, (2.0, 3.0): RegimeLabel.LEFT_TRANSIENT,
    }
    got = {key: classify_regime_thm1(example_tail_descriptor(*key), math.log(2))
           for key in expected}
    ok = got == expected and RegimeLabel.INDETERMINATE not in got.values()
    verdict("7 classifier table", ok,
            ", ".join(f"({l},{b})={v}" for (l, b), v in sorted(got.items())))


DETERMINISM_RUNS = {
    "walk": ["--replicas", "40", "--horizon", "20000", "--lambda", "1", "--beta", "1"],
    "excursion": ["--replicas", "40", "--horizon", "20000", "--mask", "positive",
                  "--lambda", "2", "--beta", "1"],
    "couple": ["--replicas", "100", "--horizon", "20000", "--mask", "positive",
               "--lambda", "2", "--beta", "1"],
    "bpre": ["--replicas", "20", "--horizon", "500", "--lambda", "1", "--beta", "1"],
    "rde": ["--replicas", "1000", "--kmax", "10", "--lambda", "2", "--beta", "1"],
    "hitprob": ["--replicas", "3", "--kmax", "5", "--trials", "2000"],
    "phase": ["--replicas", "10", "--horizon", "10000", "--lambda", "0.5,1,2",
              "--beta", "1,3"],
}


def test_determinism(verdict, tmp_path):
    t = time.perf_counter()
    mismatched = []
    for sub, args in DETERMINISM_RUNS.items():
        for fmt in ("csv", "json"):
            blobs = []
            for i, workers in enumerate(("1", "1", "8", "8")):
                out = tmp_path / f"{sub}-{i}.{fmt}"
                code = main([sub] + args + ["--seed", str(SEED), "--workers", workers,
                                            "--format", fmt, "--out", str(out)])
                assert code == EXIT_OK
                blobs.append(out.read_bytes())
            if len(set(blobs)) != 1:
                mismatched.append(f"{sub}/{fmt}")
    dt = time.perf_counter() - t
    ok = not mismatched and dt <= 60
    verdict("8 determinism", ok,
            f"mismatches={mismatched or 'none'} over 7 subcommands x 2 formats "
            f"runtime={dt:.1f}s (limit 60s)")
