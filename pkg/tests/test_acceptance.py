"""End-to-end acceptance criteria, each run through the experiment harness at its stated size.

Suites that share a batch of trees reuse it through the harness cache, so the
whole module costs one small-window batch and one large-window batch of 2000
trees each.  Every test prints one PASS/FAIL line.
"""

from __future__ import annotations

import math
import time

import numpy as np
import pytest

from bplane.harness import ExperimentConfig, l1_tail_experiment, run_suite

pytestmark = pytest.mark.acceptance

_REPORTS: dict = {}


def report(name: str):
    if name not in _REPORTS:
        t = time.perf_counter()
        cfg = ExperimentConfig(experiment=name)
        rep = l1_tail_experiment(cfg) if name == "short-cycles" else run_suite(cfg)
        _REPORTS[name] = (rep, time.perf_counter() - t)
    return _REPORTS[name]


def stat(rep, prefix: str):
    return next(s for s in rep.statistics if s.name.startswith(prefix))


VERDICTS: list[str] = []


def verdict(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    VERDICTS.append(line)
    print(line)
    assert ok, detail


def within_sigma(st, k: float = 4.0) -> bool:
    return abs(st.estimate - st.oracle) <= k * st.se


def within_rel(st, rel: float) -> bool:
    return abs(st.estimate - st.oracle) <= rel * abs(st.oracle)


def test_criterion_01_exact_crossing_law():
    rep, secs = report("exact-N")
    p0, mean = stat(rep, "P(N=0)"), stat(rep, "E N")
    ok = within_sigma(p0) and within_sigma(mean) and secs < 10.0 and rep.replicates == 100_000
    verdict(1, ok, f"P(N=0)={p0.estimate:.5f}±{p0.se:.5f} vs 0.125, E N={mean.estimate:.4f}±"
                   f"{mean.se:.4f} vs 4.5, {secs:.1f}s")


def test_criterion_02a_exact_laplace():
    rep, _ = report("exact-N")
    lap = stat(rep, "E exp(-N)")
    ok = within_sigma(lap) and abs(lap.oracle - 0.2029) < 5e-5
    verdict(2, ok, f"E exp(-N)={lap.estimate:.5f}±{lap.se:.5f} vs {lap.oracle:.5f}")


@pytest.mark.xfail(strict=True, reason="at s=1.05 the exact law of (s-1)^2 N has mean 1.65, not "
                                       "the limit's 1.5; 10^5 draws resolve the 0.044 KS distance")
def test_criterion_02b_limit_ks_near_one():
    rep, _ = report("exact-N-limit")
    ks = stat(rep, "KS (s-1)^2 N")
    verdict(2, ks.estimate >= 0.01, f"KS p-value {ks.estimate:.3g} (statistic {ks.tolerance:.4f}) "
                                    f"against Gamma(3/2, mean 3/2) at s=1.05")


def test_criterion_03_perimeter_law():
    rep, secs = report("perimeter")
    lap, mean = stat(rep, "E exp(-3/2 Z_1)"), stat(rep, "E Z_1")
    dt = rep.config["dt"]
    ok = (within_rel(lap, 0.10) and within_rel(mean, 0.10) and dt <= 1e-4
          and rep.replicates == 2000 and rep.flag_fraction <= 0.01)
    verdict(3, ok, f"E exp(-3/2 Z_1)={lap.estimate:.4f} vs 0.35355, E Z_1={mean.estimate:.4f} vs 1, "
                   f"dt={dt:g}, flagged {rep.flag_fraction:.2%}, {secs:.0f}s")


def test_criterion_04_nested_exit():
    rep, _ = report("nested")
    p0, lap = stat(rep, "P(Z_1^{2,3}=0)"), stat(rep, "E exp(-3/2 Z_1^{2,3})")
    ok = (within_rel(p0, 0.10) and abs(p0.oracle - 27 / 64) < 1e-12 and within_rel(lap, 0.10)
          and abs(lap.oracle - 0.8463) < 5e-5)
    verdict(4, ok, f"P(Z=0)={p0.estimate:.4f} vs 27/64, E exp(-3/2 Z)={lap.estimate:.4f} vs "
                   f"{lap.oracle:.4f}")


def test_criterion_05_hull_volume():
    rep, _ = report("hull")
    tail, _ = report("hull-tail")
    lap, mean, slope = (stat(rep, "E exp(-|B_1|)"), stat(rep, "E |B_1|"),
                        stat(tail, "tail slope of |B_1|"))
    ok = (tail.replicates >= 10_000 and within_rel(lap, 0.10) and abs(lap.oracle - 0.7818) < 5e-5 and within_rel(mean, 0.15)
          and abs(slope.estimate + 1.5) <= 0.3 and "3/2" in mean.note)
    verdict(5, ok, f"E exp(-|B|)={lap.estimate:.4f} vs 0.7818, E|B|={mean.estimate:.4f} vs 1/3, "
                   f"tail slope {slope.estimate:.3f} vs -1.5")


def test_criterion_06_cycle_length_bound():
    rep, _ = report("cycles")
    viol = stat(rep, "cycle length exceeds")
    ok = viol.estimate == 0 and rep.replicates >= 1000
    verdict(6, ok, f"{int(viol.estimate)} violations on {rep.replicates} annuli (1, 2)")


def test_criterion_07_short_cycle_slope():
    rep, _ = report("short-cycles")
    sl = stat(rep, "log-log slope")
    eps = [r["eps"] for r in rep.tables["short_cycles"]]
    ok = abs(sl.estimate - 2.0) <= 0.3 and min(eps) == 0.05 and max(eps) == 0.5
    verdict(7, ok, f"slope {sl.estimate:.3f} ± {sl.se:.3f} over eps in [{min(eps)}, {max(eps)}]")


def test_criterion_08_upper_tail():
    rep, _ = report("upper-tail")
    st = stat(rep, "log P(L > u)/u")
    ok = math.isfinite(st.estimate) and st.estimate <= -0.10
    verdict(8, ok, f"upper 4-sigma rate {st.estimate:.4f} (point {st.ci[0]:.4f}) <= -0.10; {st.note}")


def test_criterion_09_spatial_markov():
    rep, _ = report("spatial-markov")
    pc = stat(rep, "partial correlation")
    ks = stat(rep, "KS boundary-layer volume")
    ok = pc.estimate >= 0.01 and ks.estimate >= 0.01 and rep.replicates == 2000
    verdict(9, ok, f"partial correlation p={pc.estimate:.3g}, disk scaling KS p={ks.estimate:.3g}")


def test_criterion_10_lamperti_exponent():
    rep, _ = report("lamperti")
    half, one = stat(rep, "(1/t) log E exp(0.5"), stat(rep, "(1/t) log E exp(1.0")
    ok = (within_rel(half, 0.15) and within_rel(one, 0.15) and abs(half.oracle - 0.9213) < 5e-5
          and abs(one.oracle - 2.1708) < 5e-5)
    verdict(10, ok, f"psi(1/2) est {half.estimate:.4f} vs {half.oracle:.4f}, psi(1) est "
                    f"{one.estimate:.4f} vs {one.oracle:.4f}")


def test_criterion_11_metric_invariants():
    rep, _ = report("metric")
    pairs = 20 * 50
    gated = [s for s in rep.statistics if s.gate]
    ok = all(s.estimate == 0 for s in gated) and rep.replicates * 50 >= pairs
    verdict(11, ok, "; ".join(f"{s.name}: {s.estimate:g}" for s in gated))


def test_criterion_12_oracle_self_consistency():
    rep, _ = report("oracles")
    ids = [s for s in rep.statistics if s.layer == "bound" and s.name != "golden-section vs brute grid"]
    sup = stat(rep, "sup of the tail rate")
    worst = max(s.estimate for s in ids)
    ok = worst <= 1e-6 and abs(sup.estimate - 0.1488) <= 0.001 and len(ids) >= 10
    verdict(12, ok, f"{len(ids)} identities, worst gap {worst:.2e}; sup rate {sup.estimate:.5f}")


def test_reports_are_reproducible():
    rep, _ = report("exact-N")
    again = run_suite(ExperimentConfig(experiment="exact-N"))
    assert np.array_equal(rep.to_json(timing=False), again.to_json(timing=False))
