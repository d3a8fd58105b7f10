from __future__ import annotations

import json

import numpy as np
import pytest

from bplane.harness import (SUITES, ExperimentConfig, HarnessError, Report, clear_cache, compare,
                            l1_tail_experiment, oracle_identities, replicate_seed, run_suite)


def strip_timing(report: Report) -> str:
    return report.to_json(timing=False)


def test_zero_replicates_gives_empty_report(tmp_path):
    out = tmp_path / "empty.json"
    rep = run_suite(ExperimentConfig(experiment="exact-N", replicates=0, output=str(out)))
    assert rep.statistics == [] and rep.replicates == 0
    assert rep.config["experiment"] == "exact-N"
    assert json.loads(out.read_text())["config"]["replicates"] == 0


def test_same_config_same_bytes(tmp_path):
    cfg = ExperimentConfig(experiment="exact-N", replicates=20_000, seed=5)
    a = run_suite(cfg)
    clear_cache()
    b = run_suite(cfg)
    assert strip_timing(a) == strip_timing(b)
    assert a.to_dict()["timing"]["timestamp"]


def test_exact_n_within_three_sigma():
    rep = run_suite(ExperimentConfig(experiment="exact-N", replicates=100_000, seed=1))
    st = next(s for s in rep.statistics if s.name == "P(N=0)")
    assert abs(st.estimate - 0.125) <= 3 * st.se
    assert rep.passed


def test_worker_count_does_not_change_results():
    cfg = ExperimentConfig(experiment="metric", replicates=4, seed=2)
    a = run_suite(cfg)
    clear_cache()
    from dataclasses import replace
    b = run_suite(replace(cfg, workers=2))
    clear_cache()
    assert strip_timing(a).replace('"workers": 1', "") == strip_timing(b).replace('"workers": 2', "")


def test_replicate_seeds_are_distinct_and_stable():
    a = np.random.default_rng(replicate_seed(3, 0)).random()
    b = np.random.default_rng(replicate_seed(3, 1)).random()
    c = np.random.default_rng(replicate_seed(3, 0)).random()
    assert a != b and a == c


def test_structured_errors(tmp_path):
    with pytest.raises(HarnessError) as err:
        run_suite(ExperimentConfig(experiment="no-such-suite"))
    assert err.value.kind == "experiment"
    with pytest.raises(HarnessError) as err:
        ExperimentConfig(experiment="exact-N", replicates=-1)
    assert err.value.kind == "config"
    with pytest.raises(HarnessError) as err:
        ExperimentConfig.from_mapping({"experiment": "exact-N", "colour": "red"})
    assert err.value.kind == "config"
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(HarnessError) as err:
        run_suite(ExperimentConfig(experiment="exact-N", replicates=10, output=str(blocker / "r.json")))
    assert err.value.kind == "output"


def test_config_file_round_trip(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("# short run\nexperiment = exact-N\nreplicates = 1000\nlambdas = 0.5, 1, 2\n"
                 "seed = 4  # trailing comment\n")
    cfg = ExperimentConfig.from_file(p)
    assert cfg.replicates == 1000 and cfg.lambdas == (0.5, 1.0, 2.0) and cfg.seed == 4
    assert ExperimentConfig.from_file(p, seed="9").seed == 9
    p.write_text("experiment exact-N\n")
    with pytest.raises(HarnessError):
        ExperimentConfig.from_file(p)


def test_compare_thresholds():
    exact = compare("x", 1.05, 0.01, 1.0, "a", "exact")
    tree = compare("x", 1.05, 0.01, 1.0, "a", "tree")
    assert not exact.passed and tree.passed
    assert tree.tolerance == pytest.approx(0.1)


def test_flag_fraction_fails_suite():
    rep = Report("x", {}, 100, flags={"flagged": 2})
    assert not rep.passed
    rep.flags["flagged"] = 1
    assert rep.passed


def test_report_files(tmp_path):
    out = tmp_path / "r" / "exact.json"
    rep = run_suite(ExperimentConfig(experiment="exact-N", replicates=5000, output=str(out)))
    assert out.exists()
    assert (tmp_path / "r" / "exact_laplace.csv").exists()
    assert (tmp_path / "r" / "exact_laplace.svg").exists()
    data = json.loads(out.read_text())
    assert all(s["anchor"] for s in data["statistics"])
    assert data["passed"] == rep.passed


def test_l1_grid_validation():
    with pytest.raises(HarnessError):
        l1_tail_experiment(ExperimentConfig(experiment="short-cycles", levels=(0.1, 1.5)))


def test_short_cycle_probabilities_monotone():
    rep = l1_tail_experiment(ExperimentConfig(experiment="short-cycles", replicates=100_000, seed=3))
    p = [r["p"] for r in rep.tables["short_cycles"]]
    assert all(a <= b for a, b in zip(p, p[1:]))


def test_oracle_identities_hold():
    for name, got, want in oracle_identities():
        assert abs(got - want) <= 1e-6, name


def test_registry_covers_the_criteria():
    assert {"exact-N", "exact-N-limit", "perimeter", "nested", "hull", "cycles", "spatial-markov",
            "lamperti", "short-cycles", "upper-tail", "metric", "oracles"} <= set(SUITES)
