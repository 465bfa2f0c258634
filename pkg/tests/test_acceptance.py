"""Acceptance suite: the package's headline guarantees, one verdict line each.

Every test prints `[criterion NN] PASS/FAIL — detail` before asserting, so a
plain `pytest -s tests/test_acceptance.py` reads as a checklist.  Tolerances
and seeds are pinned; a red line here means the library regressed, not that
the dice came up wrong.
"""

import math
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from incidencelab.dyadic import (
    ALTERNATE,
    STANDARD,
    DyadicCube,
    DyadicTube,
    Line,
    Point,
    cover_tubes,
    dualize,
)
from incidencelab.experiment import ExperimentConfig, run_experiment, verify_run, write_run
from incidencelab.generators import (
    cantor_target,
    cover_counterexample,
    exceptional_projection_config,
    nice_random,
    regular_random,
)
from incidencelab.incidence import (
    check_discretized_st,
    check_elementary_st,
    check_tube_count,
    count_incidences_brute,
    count_incidences_fast,
)
from incidencelab.multiscale import (
    PiecewiseLinear,
    decompose,
    decompose_oracle,
    dichotomy_check,
    is_eps_linear,
    is_eps_superlinear,
    refine_cover,
    refine_two_scale,
    scales_from_decomposition,
)
from incidencelab.projections import exceptional_survey
from incidencelab.spread import covering_number

ROOT = Path(__file__).resolve().parent.parent


def _report(n: int, ok: bool, detail: str) -> None:
    print(f"\n[criterion {n:02d}] {'PASS' if ok else 'FAIL'} — {detail}")
    assert ok, f"criterion {n}: {detail}"


# ---------------------------------------------------------------------------
# 1. box-count dimension of the Cantor target construction
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("s,t", [(0.5, 0.5), (0.5, 1.0), (0.75, 0.25)])
def test_criterion_01_cantor_target_dimension(s, t):
    t0 = time.time()
    target = cantor_target(s, t, 12, seed=0)
    js = list(range(13))
    slope = np.polyfit(js, [math.log2(covering_number(target.cubes, j)) for j in js], 1)[0]
    elapsed = time.time() - t0
    ok = abs(slope - (s + t)) <= 0.15 and elapsed <= 60.0
    _report(
        1, ok, f"(s,t)=({s},{t}): slope {slope:.3f} vs {s + t} (tol 0.15), {elapsed:.1f}s"
    )


# ---------------------------------------------------------------------------
# 2. elementary point-line bounds and exact duality swap
# ---------------------------------------------------------------------------


def test_criterion_02_elementary_st():
    t0 = time.time()
    violations = swap_errors = 0
    for seed in range(500):
        rng = np.random.default_rng(seed)
        n_p, n_l = int(rng.integers(1, 501)), int(rng.integers(1, 501))
        pts = [
            Point(Fraction(int(rng.integers(-16, 17))), Fraction(int(rng.integers(-16, 17))))
            for _ in range(n_p)
        ]
        lines = [
            Line(Fraction(int(rng.integers(-4, 5))), Fraction(int(rng.integers(-16, 17))))
            for _ in range(n_l)
        ]
        r1, r2, r3 = check_elementary_st(pts, lines, budget=8.0)
        if not (r1.passed and r2.passed and r3.passed):
            violations += 1
        d1, d2, _ = check_elementary_st(
            [dualize(ln) for ln in lines], [dualize(p) for p in pts], budget=8.0
        )
        if not (
            d1.lhs == r1.lhs
            and d1.terms["sqrt_lines_points"] == r2.terms["sqrt_points_lines"]
            and d1.terms["lines"] == r2.terms["points"]
            and d2.terms["sqrt_points_lines"] == r1.terms["sqrt_lines_points"]
            and d2.terms["points"] == r1.terms["lines"]
        ):
            swap_errors += 1
    elapsed = time.time() - t0
    ok = violations == 0 and swap_errors == 0 and elapsed <= 30.0
    _report(
        2,
        ok,
        f"500 instances: {violations} bound violations, {swap_errors} swap errors, {elapsed:.1f}s",
    )


# ---------------------------------------------------------------------------
# 3–4. discretized incidence bound and the tube-count floor on one sweep
# ---------------------------------------------------------------------------


def _sweep():
    for i in range(50):
        k = 6 + (i % 5)
        s = (0.3, 0.5, 0.7)[(i // 5) % 3]
        yield i, k, s, nice_random(k, s, s + 0.3, seed=i)


def test_criterion_03_discretized_st_sweep():
    failures = [
        (i, k, s)
        for i, k, s, cfg in _sweep()
        if not check_discretized_st(cfg, log_exponent=3.0).passed
    ]
    _report(3, not failures, f"50 nice_random instances, incidence bound failures: {failures}")


def test_criterion_04_tube_count_floor_sweep():
    floor_failures, exponent_failures = [], []
    for i, k, s, cfg in _sweep():
        if not check_tube_count(cfg).passed:  # default budget is log^3(1/delta)
            floor_failures.append(i)
        if cfg.nice.m >= (2.0**k) ** s / 8:
            measured = math.log2(len(cfg.all_tubes)) / k
            if measured < 2 * s - 0.15:
                exponent_failures.append((i, measured))
    ok = not floor_failures and not exponent_failures
    _report(
        4, ok, f"floor failures: {floor_failures}, exponent failures: {exponent_failures}"
    )


# ---------------------------------------------------------------------------
# 5. accelerated incidence counting is bit-exact against brute force
# ---------------------------------------------------------------------------


def test_criterion_05_counter_oracle_equivalence():
    mismatches = 0
    for seed in range(1000):
        rng = np.random.default_rng(10_000 + seed)
        k = int(rng.integers(3, 9))
        side = 1 << k
        pts = [
            DyadicCube(k, int(rng.integers(0, side)), int(rng.integers(0, side)))
            for _ in range(int(rng.integers(1, 101)))
        ]
        tubes = [
            DyadicTube(
                DyadicCube(k, int(rng.integers(-side, side)), int(rng.integers(-2 * side, 2 * side))),
                STANDARD if rng.random() < 0.5 else ALTERNATE,
            )
            for _ in range(int(rng.integers(1, 61)))
        ]
        if count_incidences_fast(pts, tubes) != count_incidences_brute(pts, tubes):
            mismatches += 1
    _report(5, mismatches == 0, f"1000 instances, {mismatches} fast/brute mismatches")


# ---------------------------------------------------------------------------
# 6. coarse-cover refinement contract plus the starvation golden
# ---------------------------------------------------------------------------


def test_criterion_06_refine_cover_contract():
    kk, c1 = 5, 8.0
    log5 = float(kk) ** 5  # log2(1/Delta) = kk
    failures = []
    for seed in range(20):
        cfg = nice_random(10, 0.5, 0.8, seed=seed)
        rc = refine_cover(cfg.points, cfg.tubes_of, 10, kk, 0.5, c1, cfg.nice.m)
        if not (
            rc.c2 <= log5 * c1
            and rc.min_incidences >= rc.h_floor / 8
            and len(rc.points) >= len(cfg.points) / log5
        ):
            failures.append(seed)

    # golden: the outlier configuration starves a naive coarse cover ...
    golden = cover_counterexample()
    naive = cover_tubes(golden.all_tubes, 4)
    inc = {ct: 0 for ct in naive}
    for p in golden.points:
        for tube in golden.tubes_of[p]:
            inc[tube.parent_at(4)] += 1
    h_naive = sum(inc.values()) / len(naive)
    naive_fails = min(inc.values()) < h_naive / 8
    # ... while the refined cover meets its incidence floor
    rc = refine_cover(golden.points, golden.tubes_of, 10, 4, 0.5, 8.0, golden.nice.m)
    refined_passes = rc.min_incidences >= rc.h_floor / 8

    ok = not failures and naive_fails and refined_passes
    _report(
        6,
        ok,
        f"contract failures: {failures}; golden naive starves: {naive_fails}, "
        f"refined floor {rc.min_incidences} >= {rc.h_floor / 8:g}: {refined_passes}",
    )


# ---------------------------------------------------------------------------
# 7. two-scale refinement clauses with recorded budgets
# ---------------------------------------------------------------------------


def test_criterion_07_two_scale_contract():
    failures, missing_budgets = [], []
    for seed in range(20):
        cfg = nice_random(12, 0.5, 0.8, seed=seed)
        ts = refine_two_scale(cfg, 6)
        if not ts.passed:
            failures.append(seed)
        if not all("budget" in clause for clause in ts.clauses.values()) or (
            "budget" not in ts.product
        ):
            missing_budgets.append(seed)
    degenerate_cfg = nice_random(12, 0.5, 0.8, seed=0)
    degenerate_ok = all(
        refine_two_scale(degenerate_cfg, kk).passed for kk in (0, 12)
    )
    ok = not failures and not missing_budgets and degenerate_ok
    _report(
        7,
        ok,
        f"clause failures: {failures}, missing budgets: {missing_budgets}, "
        f"degenerate coarse scales pass: {degenerate_ok}",
    )


# ---------------------------------------------------------------------------
# 8. greedy scale decomposition vs the DP oracle
# ---------------------------------------------------------------------------


def test_criterion_08_decompose_near_optimal():
    worst_gap, predicate_failures, ladder_failures = 0, 0, 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        f = PiecewiseLinear.from_increments(rng.uniform(0.0, 2.0, 64))
        t = f(64) / 64
        s = min(0.5, t - 0.05)
        dec = decompose(f, s=s, t=t, eps=0.1)
        worst_gap = max(worst_gap, decompose_oracle(f, s, 0.1) - dec.covered)
        for iv in dec.intervals:
            check = is_eps_linear if iv.kind == "linear" else is_eps_superlinear
            if not check(f, iv.a, iv.b, 0.1):
                predicate_failures += 1
        if not scales_from_decomposition(dec, 1).passed:
            ladder_failures += 1
    ok = worst_gap <= 1 and predicate_failures == 0 and ladder_failures == 0
    _report(
        8,
        ok,
        f"100 profiles (m=64): worst greedy-vs-oracle gap {worst_gap}, "
        f"{predicate_failures} predicate failures, {ladder_failures} ladder failures",
    )


# ---------------------------------------------------------------------------
# 9. two-branch dichotomy on regular configurations
# ---------------------------------------------------------------------------


def test_criterion_09_dichotomy_branches():
    failures = []
    for seed in range(20):
        cfg = regular_random(12, 0.5, 1.0, seed=seed)
        rep = dichotomy_check(cfg, eps=0.0)
        recorded = rep.fine_exponent is not None and rep.coarse_exponent is not None
        if not (rep.some_branch and recorded):
            failures.append(seed)
    _report(9, not failures, f"20 regular instances at 2^-12, branch failures: {failures}")


# ---------------------------------------------------------------------------
# 10. projection surveys: grids are clean, planted exceptions round-trip
# ---------------------------------------------------------------------------


def test_criterion_10_projection_surveys():
    kaufman_violations = []

    grid_dirty = []
    for s in (0.5, 0.75, 0.9):
        grid = [DyadicCube(6, ix, iy) for ix in range(64) for iy in range(64)]
        sv = exceptional_survey(grid, s, 6)
        if sv.exceptional:
            grid_dirty.append(s)
        if sv.measured_exponent > s + 0.1:
            kaufman_violations.append(("grid", s))

    ex = exceptional_projection_config(0.75, 1.0, 0.4, 12, seed=0)
    sv = exceptional_survey(ex.cubes, 0.75, 12)
    alpha_gap = abs(sv.measured_exponent - 0.4)
    if sv.measured_exponent > 0.75 + 0.1:
        kaufman_violations.append(("planted", 0.75))

    for s, t in ((0.5, 1.0), (0.75, 0.25)):
        tgt = cantor_target(s, t, 10, seed=0)
        if exceptional_survey(tgt.cubes, s, 10).measured_exponent > s + 0.1:
            kaufman_violations.append(("target", s))

    ok = not grid_dirty and alpha_gap <= 0.1 and not kaufman_violations
    _report(
        10,
        ok,
        f"dirty grids: {grid_dirty}; planted alpha gap {alpha_gap:.3f} (tol 0.1); "
        f"exceptional-exponent violations: {kaufman_violations}",
    )


# ---------------------------------------------------------------------------
# 11. bundled configs re-run byte-for-byte
# ---------------------------------------------------------------------------


@pytest.mark.parametrize(
    "path", sorted((ROOT / "configs").glob("*.json")), ids=lambda p: p.stem
)
def test_criterion_11_golden_determinism(path, tmp_path):
    config = ExperimentConfig.model_validate_json(path.read_text())
    _, first = run_experiment(config)
    _, second = run_experiment(config)
    identical = first == second
    write_run(tmp_path / config.name, first)
    report = verify_run(tmp_path / config.name)
    ok = identical and report["match"]
    _report(
        11,
        ok,
        f"{path.stem}: rerun identical: {identical}, disk round-trip: {report['match']}",
    )
