import itertools
import json
import math

import numpy as np
import pytest

from incidencelab.dyadic import DyadicCube, cover_tubes
from incidencelab.generators import (
    cover_counterexample,
    nice_random,
    regular_random,
    two_regime,
)
from incidencelab.incidence import Configuration, Niceness, cor_lower_bound
from incidencelab.multiscale import (
    BAD,
    GOOD,
    LINEAR,
    NORMAL,
    SUPERLINEAR,
    BoundParams,
    Decomposition,
    DecompInterval,
    LedgerRow,
    PiecewiseLinear,
    RefinementError,
    ScaleDecomposition,
    ScaleLevel,
    _admissible_kind,
    check_multiscale_bound,
    decompose,
    decompose_oracle,
    dichotomy_check,
    extract_product_structure,
    is_eps_linear,
    is_eps_superlinear,
    ledger_csv,
    multiscale_bound,
    refine_cover,
    refine_two_scale,
    scales_from_decomposition,
)
from incidencelab.spread import BranchingFunction, branching_function


# ---------------------------------------------------------------------------
# piecewise-linear predicates
# ---------------------------------------------------------------------------


class TestPredicates:
    def test_exactly_linear(self):
        f = PiecewiseLinear.from_increments([1.0] * 6)
        assert is_eps_linear(f, 0, 6, 0.0)
        assert is_eps_superlinear(f, 0, 6, 0.0)

    def test_concave_is_superlinear_not_linear(self):
        # concave profiles stay above their chords
        f = PiecewiseLinear(values=(0.0, 2.0, 2.5, 2.5))
        assert is_eps_superlinear(f, 0, 3, 0.0)
        assert not is_eps_linear(f, 0, 3, 0.1)

    def test_convex_fails_superlinear(self):
        # convex profiles dip below the chord by more than eps*(b - a)
        f = PiecewiseLinear(values=(0.0, 0.0, 0.0, 1.0, 2.0))
        assert not is_eps_superlinear(f, 0, 4, 0.1)

    def test_eps_scales_with_length(self):
        # deviation 0.5 at the midpoint: tolerance eps*(b-a) crosses it at 0.125
        f = PiecewiseLinear(values=(0.0, 1.5, 2.0, 3.5, 4.0))
        assert not is_eps_linear(f, 0, 4, 0.1)
        assert is_eps_linear(f, 0, 4, 0.13)

    def test_branching_function_works_as_plf(self):
        f = BranchingFunction(base_k=1, counts=(2, 2, 2, 2))
        assert is_eps_linear(f, 0, 4, 0.0)
        assert _admissible_kind(f, 0, 4, 0.5, 0.01) == LINEAR

    def test_linear_preferred_over_superlinear(self):
        # slope exactly s and exactly linear: matches both, classified linear
        f = PiecewiseLinear.from_increments([0.5] * 4)
        assert _admissible_kind(f, 0, 4, 0.5, 0.1) == LINEAR

    def test_superlinear_needs_slope_near_s(self):
        f = PiecewiseLinear(values=(0.0, 1.0, 1.5, 1.8, 2.0))
        # chord slope 0.5, far above the chord early on: admissible as the
        # superlinear alternative at s = 0.5, inadmissible at s = 0.8
        assert _admissible_kind(f, 0, 4, 0.5, 0.05) == SUPERLINEAR
        assert _admissible_kind(f, 0, 4, 0.8, 0.05) is None

    def test_domain_errors(self):
        f = PiecewiseLinear.from_increments([1.0, 1.0])
        with pytest.raises(ValueError):
            f(2.5)
        with pytest.raises(ValueError):
            f.slope(1, 1)


# ---------------------------------------------------------------------------
# greedy decomposition vs the DP reference
# ---------------------------------------------------------------------------


class TestDecompose:
    def test_hypothesis_violations_reported_together(self):
        f = PiecewiseLinear(values=(1.0, 0.0, 3.5))
        with pytest.raises(ValueError) as ei:
            decompose(f, s=0.8, t=0.5, eps=-1.0)
        msg = str(ei.value)
        assert "eps" in msg and "s=" in msg and "f(0)" in msg and "Lipschitz" in msg

    def test_mass_hypothesis(self):
        f = PiecewiseLinear.from_increments([0.1] * 10)
        with pytest.raises(ValueError, match="f\\(m\\)"):
            decompose(f, s=0.3, t=0.9, eps=0.05)

    def test_exact_linear_single_interval(self):
        f = PiecewiseLinear.from_increments([1.0] * 8)
        dec = decompose(f, s=0.5, t=1.0, eps=0.1)
        assert [(iv.a, iv.b, iv.kind) for iv in dec.intervals] == [(0, 8, LINEAR)]
        assert dec.covered == 8 and dec.gaps == () and dec.tau == 1.0

    def test_two_slope_profile_two_intervals(self):
        # slopes 2 then 0.4, both above s: two maximal linear pieces
        f = PiecewiseLinear.from_increments([2.0] * 5 + [0.0, 1.0, 0.0, 1.0, 0.0])
        dec = decompose(f, s=0.3, t=1.2, eps=0.1)
        assert [(iv.a, iv.b) for iv in dec.intervals] == [(0, 5), (5, 10)]
        assert dec.intervals[0].slope == pytest.approx(2.0)
        assert dec.intervals[1].slope == pytest.approx(0.4)
        assert decompose_oracle(f, 0.3, 0.1) == 10

    def test_greedy_can_lose_to_oracle_on_adversarial_profile(self):
        # greedy grabs the steep half; the oracle balances the chord at s
        f = PiecewiseLinear.from_increments([2.0] * 6 + [0.2] * 6)
        dec = decompose(f, s=0.5, t=1.1, eps=0.05)
        assert dec.covered == 6
        assert decompose_oracle(f, 0.5, 0.05) == 12

    def test_oracle_matches_exhaustive_search(self):
        rng = np.random.default_rng(7)
        for _ in range(40):
            m = int(rng.integers(2, 7))
            f = PiecewiseLinear.from_increments(rng.uniform(0, 2, size=m).tolist())
            s = float(rng.uniform(0.2, 0.9))
            eps = float(rng.uniform(0.02, 0.3))
            adm = {
                (a, b): b - a
                for a in range(m + 1)
                for b in range(a + 1, m + 1)
                if _admissible_kind(f, a, b, s, eps) is not None
            }
            best = 0
            stack = [(0, 0)]
            while stack:
                start, tot = stack.pop()
                best = max(best, tot)
                stack.extend(
                    (b, tot + ln) for (a, b), ln in adm.items() if a >= start
                )
            assert decompose_oracle(f, s, eps) == best

    def test_greedy_within_one_of_oracle_random(self):
        for seed in range(25):
            rng = np.random.default_rng(seed)
            f = PiecewiseLinear.from_increments(rng.uniform(0, 2, size=64).tolist())
            t = f(64) / 64
            s = min(0.5, t - 0.05)
            dec = decompose(f, s=s, t=t, eps=0.1)
            assert decompose_oracle(f, s, 0.1) - dec.covered <= 1
            for iv in dec.intervals:
                kind = _admissible_kind(f, iv.a, iv.b, s, 0.1)
                assert kind == iv.kind

    def test_measured_constants(self):
        f = PiecewiseLinear.from_increments([2.0] * 6 + [0.2] * 6)
        dec = decompose(f, s=0.5, t=1.1, eps=0.05)
        assert dec.gap_length == 6
        assert dec.k_gap == pytest.approx(6 / (0.05 * 12))
        assert dec.tau == pytest.approx(0.5)


# ---------------------------------------------------------------------------
# scale ladders
# ---------------------------------------------------------------------------


def _two_rung_ladder():
    f = PiecewiseLinear.from_increments([2.0] * 5 + [0.0, 1.0, 0.0, 1.0, 0.0])
    dec = decompose(f, s=0.3, t=1.2, eps=0.1)
    return scales_from_decomposition(dec, 1)


class TestScaleDecomposition:
    def test_two_rung_ladder(self):
        sd = _two_rung_ladder()
        assert [(lv.hi, lv.lo, lv.cls) for lv in sd.levels] == [
            (0, 5, "S"),
            (5, 10, "S"),
        ]
        assert sd.levels[0].t_j == pytest.approx(2.0)
        assert sd.levels[1].t_j == pytest.approx(0.4)
        assert sd.passed
        assert sd.delta_k == 10

    def test_all_clauses_pass(self):
        sd = _two_rung_ladder()
        rep = sd.verify()
        assert set(rep) == {
            "partition",
            "structured_length",
            "bad_mass",
            "exponent_mass",
            "t_range",
            "no_adjacent_bad",
        }
        assert all(v["passed"] for v in rep.values())

    def test_gap_becomes_bad_level_and_eps_inflates(self):
        ivs = [
            DecompInterval(a=0, b=4, kind=LINEAR, slope=1.5),
            DecompInterval(a=6, b=10, kind=LINEAR, slope=1.5),
        ]
        sd = scales_from_decomposition(ivs, 1, m=10, s=0.5, t=1.2, eps=0.01)
        assert [lv.cls for lv in sd.levels] == ["S", "B", "S"]
        # recorded eps grows to cover the bad mass 2/10
        assert sd.eps == pytest.approx(0.2)
        assert sd.passed

    def test_superlinear_interval_gets_t_equal_s(self):
        ivs = [DecompInterval(a=0, b=6, kind=SUPERLINEAR, slope=0.52)]
        sd = scales_from_decomposition(ivs, 1, m=6, s=0.5, t=0.52, eps=0.05)
        assert sd.levels[0].t_j == pytest.approx(0.5)

    def test_slope_clamped_into_t_range(self):
        ivs = [DecompInterval(a=0, b=4, kind=LINEAR, slope=2.4)]
        sd = scales_from_decomposition(ivs, 1, m=4, s=0.5, t=1.9, eps=0.2)
        assert sd.levels[0].t_j == pytest.approx(2.0)

    def test_overlapping_intervals_raise(self):
        ivs = [
            DecompInterval(a=0, b=4, kind=LINEAR, slope=1.0),
            DecompInterval(a=3, b=6, kind=LINEAR, slope=1.0),
        ]
        with pytest.raises(ValueError, match="overlap"):
            scales_from_decomposition(ivs, 1, m=6, s=0.5, t=1.0, eps=0.1)

    def test_classify_thresholds(self):
        sd = _two_rung_ladder()
        cl = sd.classify(good_threshold=1.0)
        assert [lv.cls for lv in cl.levels] == [GOOD, NORMAL]
        assert [lv.cls for lv in sd.classify(good_threshold=0.3).levels] == [
            GOOD,
            GOOD,
        ]

    def test_json_round_trip(self):
        sd = _two_rung_ladder().classify(good_threshold=1.0)
        d = json.loads(sd.to_json())
        assert d["scales"] == [0, 5, 10]
        assert d["classes"] == ["G", "N"]
        assert ScaleDecomposition.from_json(sd.to_json()) == sd

    def test_from_json_rejects_misaligned_scales(self):
        sd = _two_rung_ladder()
        d = json.loads(sd.to_json())
        d["base_delta_k"] = 3
        with pytest.raises(ValueError, match="multiples"):
            ScaleDecomposition.from_json(json.dumps(d))

    def test_ratio_log2(self):
        sd = _two_rung_ladder()
        assert [sd.ratio_log2(lv) for lv in sd.levels] == [5, 5]


class TestLedgerCsv:
    def test_format(self):
        rows = [LedgerRow("a", 10, 5, 2.0), LedgerRow("b", 5, 5, 1.0)]
        text = ledger_csv(rows)
        assert text.splitlines()[0] == "stage,mass_before,mass_after,budget_used"
        assert text.splitlines()[1] == "a,10,5,2"
        assert text.endswith("\n")


# ---------------------------------------------------------------------------
# coarse-cover refinement
# ---------------------------------------------------------------------------


class TestRefineCover:
    def test_contract_on_generated_configs(self):
        for seed in (0, 1, 2):
            cfg = nice_random(10, 0.5, 0.8, seed=seed)
            rc = refine_cover(
                cfg.points, cfg.tubes_of, 10, 5, 0.5, cfg.nice.c, cfg.nice.m
            )
            logs5 = math.log2(2.0**5) ** 5
            # every kept coarse tube carries at least a quarter of its floor
            assert rc.min_incidences >= rc.h_floor / 4
            # mass retention within the five recorded pigeonholes
            assert len(rc.points) >= len(cfg.points) / logs5
            # spread constant of the coarse family within polylog of c1
            assert rc.c2 <= logs5 * cfg.nice.c
            assert [r.stage for r in rc.ledger] == [
                "coarse_cover",
                "count_class",
                "point_class",
                "tube_prune",
                "tube_class",
            ]

    def test_incidence_inflation_bounded(self):
        cfg = nice_random(10, 0.5, 0.8, seed=4)
        rc = refine_cover(cfg.points, cfg.tubes_of, 10, 5, 0.5, cfg.nice.c, cfg.nice.m)
        c1 = sum(len(cfg.tubes_of[p]) for p in cfg.points)
        c2 = sum(
            sum(1 for t in rc.tubes_of[p]) for p in rc.points
        )
        assert c2 <= c1  # refinement only discards pairs

    def test_kept_fans_live_in_kept_coarse_tubes(self):
        cfg = nice_random(10, 0.5, 0.8, seed=0)
        rc = refine_cover(cfg.points, cfg.tubes_of, 10, 5, 0.5, cfg.nice.c, cfg.nice.m)
        coarse = set(rc.coarse_tubes)
        for p in rc.points:
            for t in rc.tubes_of[p]:
                par = t.parent_at(5)
                # fine tubes were pruned to selected classes; the coarse
                # family keeps only the best represented-count class of those
                assert par.k == 5
        for par in rc.coarse_tubes:
            assert par in coarse

    def test_counterexample_naive_cover_starves(self):
        cfg = cover_counterexample()
        naive = cover_tubes(cfg.all_tubes, 4)
        inc = {ct: 0 for ct in naive}
        for p in cfg.points:
            for t in cfg.tubes_of[p]:
                inc[t.parent_at(4)] += 1
        h_naive = sum(inc.values()) / len(naive)
        assert min(inc.values()) < h_naive / 8

    def test_counterexample_refined_cover_passes(self):
        cfg = cover_counterexample()
        rc = refine_cover(cfg.points, cfg.tubes_of, 10, 4, 0.5, 8.0, cfg.nice.m)
        assert rc.min_incidences >= rc.h_floor / 8

    def test_empty_points_rejected(self):
        with pytest.raises(RefinementError, match="empty"):
            refine_cover([], {}, 10, 5, 0.5, 8.0, 32)

    def test_fan_size_window_enforced(self):
        p = DyadicCube(10, 0, 0)
        cfg = nice_random(10, 0.5, 0.8, seed=0)
        fans = {p: cfg.tubes_of[cfg.points[0]][:3]}
        with pytest.raises(RefinementError, match="M/2"):
            refine_cover([p], fans, 10, 5, 0.5, 8.0, 32)

    def test_spread_validation(self):
        # a fan of parallel tubes concentrates in one slope cell
        cfg = nice_random(10, 0.5, 0.8, seed=0)
        p = cfg.points[0]
        base = cfg.tubes_of[p][0]
        from incidencelab.dyadic import DyadicTube

        fans = {
            p: tuple(
                DyadicTube(
                    DyadicCube(10, base.param.ix, base.param.iy + i), base.orientation
                )
                for i in range(32)
            )
        }
        with pytest.raises(RefinementError, match="spread"):
            refine_cover([p], fans, 10, 5, 0.5, 1.0, 32)


# ---------------------------------------------------------------------------
# two-scale restatement
# ---------------------------------------------------------------------------


class TestRefineTwoScale:
    def test_clauses_and_product(self):
        cfg = nice_random(10, 0.5, 0.8, seed=0)
        ts = refine_two_scale(cfg, 5)
        assert ts.passed
        assert set(ts.clauses) == {
            "window_retention",
            "point_retention",
            "fan_retention",
            "coarse_nice",
            "window_nice",
        }
        assert ts.product["budget_used"] <= ts.product["budget"]
        # the coarse side is itself a nice configuration at the coarse scale
        assert ts.coarse_cfg.delta.k == 5
        assert ts.coarse_cfg.check_nice()["pass"]
        # windows live at the quotient scale with uniform fan cardinality
        for q, w in ts.windows.items():
            assert w.delta.k == 5
            assert all(len(f) == w.nice.m for f in w.tubes_of.values())

    def test_ledger_has_window_and_global_stages(self):
        cfg = nice_random(10, 0.5, 0.8, seed=1)
        ts = refine_two_scale(cfg, 5)
        stages = [r.stage for r in ts.ledger]
        assert any(s.startswith("window:") for s in stages)
        for s in ("window_class", "coarse_trim", "packet_separation", "rescale_merge"):
            assert s in stages
        text = ts.ledger_csv()
        assert text.startswith("stage,mass_before,mass_after,budget_used\n")

    def test_degenerate_coarse_scales(self):
        cfg = nice_random(10, 0.5, 0.8, seed=0)
        top = refine_two_scale(cfg, 0)
        assert top.passed
        assert len(top.coarse_cfg.points) == 1  # everything in the unit window
        bottom = refine_two_scale(cfg, 10)
        assert bottom.passed
        # at coarse = delta each point is its own window
        assert len(bottom.windows) == len(bottom.coarse_cfg.points)

    def test_requires_niceness(self):
        cfg = nice_random(10, 0.5, 0.8, seed=0)
        bare = Configuration(delta=cfg.delta, points=cfg.points, tubes_of=cfg.tubes_of)
        with pytest.raises(RefinementError, match="niceness"):
            refine_two_scale(bare, 5)


# ---------------------------------------------------------------------------
# the multiscale lower bound
# ---------------------------------------------------------------------------


def _classified(levels, base_k=1, s=0.3, t=1.2, eps=0.1):
    m = levels[-1].lo
    tau = min(lv.length for lv in levels if lv.cls != BAD) / m
    return ScaleDecomposition(
        base_k=base_k, m=m, s=s, t=t, eps=eps, tau=tau, levels=tuple(levels)
    )


class TestMultiscaleBound:
    def test_requires_classification(self):
        sd = _two_rung_ladder()
        with pytest.raises(ValueError, match="classify"):
            multiscale_bound(sd, 8, BoundParams(eps_n=0.1))

    def test_monotone_in_classes(self):
        base = [
            ScaleLevel(0, 5, NORMAL, 2.0),
            ScaleLevel(5, 10, NORMAL, 0.4),
        ]
        params = BoundParams(eps_n=0.1, eta=0.2, lam=0.05)
        mid = multiscale_bound(_classified(base), 8, params)
        as_good = [ScaleLevel(0, 5, GOOD, 2.0), base[1]]
        as_bad = [ScaleLevel(0, 5, BAD, None), base[1]]
        assert multiscale_bound(_classified(as_good), 8, params) > mid
        assert multiscale_bound(_classified(as_bad), 8, params) < mid

    def test_closed_form(self):
        lv = [ScaleLevel(0, 4, GOOD, 2.0), ScaleLevel(4, 10, NORMAL, 0.5)]
        p = BoundParams(eps_n=0.1, eta=0.25, lam=0.05, c_log=4.0, c_prime=1.0)
        sd = _classified(lv)
        expect = 2.0 ** (
            -4.0 * math.log2(10) + 3 - 0.05 * 10 + (0.3 - 0.1) * 10 + 0.25 * 4
        )
        assert multiscale_bound(sd, 8, p) == pytest.approx(expect)

    def test_single_level_base_case_vs_elementary_floor(self):
        # one normal level: the floor reduces to log^-C * M * delta^(-s+eps)
        # and must undercut the unconditional two-parameter floor
        lv = [ScaleLevel(0, 10, NORMAL, 0.8)]
        p = BoundParams(eps_n=0.1, lam=0.0)
        sd = _classified(lv, s=0.5, t=0.8)
        floor = multiscale_bound(sd, 32, p)
        unconditional = cor_lower_bound(0.5, 0.8, 10, 32, 1.0, 1.0)
        assert floor <= unconditional

    def test_worked_example_end_to_end(self):
        cfg = two_regime(10, 0.3, 2.0, 0.4, seed=5)
        f = branching_function(cfg.points, 1, 10)
        dec = decompose(f, s=0.3, t=f(10) / 10, eps=0.1)
        sd = scales_from_decomposition(dec, 1).classify(good_threshold=1.0)
        assert [lv.cls for lv in sd.levels] == [GOOD, NORMAL]
        rep = check_multiscale_bound(
            cfg, sd, BoundParams(eps_n=0.1, eta=0.1, lam=None)
        )
        assert rep.passed
        assert rep.extras["classes"] == "GN"
        assert 0.0 <= rep.extras["lam"] <= 0.5

    def test_scale_mismatch_rejected(self):
        cfg = two_regime(10, 0.3, 2.0, 0.4, seed=5)
        lv = [ScaleLevel(0, 8, NORMAL, 0.8)]
        sd = _classified(lv, s=0.3, t=0.8)
        with pytest.raises(ValueError, match="bottoms out"):
            check_multiscale_bound(cfg, sd, BoundParams(eps_n=0.1))


# ---------------------------------------------------------------------------
# dichotomy
# ---------------------------------------------------------------------------


class TestDichotomy:
    def test_regular_config_hits_a_branch(self):
        cfg = regular_random(12, 0.5, 1.0, seed=0)
        rep = dichotomy_check(cfg, eps=0.0)
        assert rep.some_branch
        assert rep.n_coarse <= rep.n_fine
        assert rep.fine_exponent == pytest.approx(
            math.log2(rep.n_fine) / 12
        )

    def test_requires_regularity_metadata(self):
        cfg = nice_random(12, 0.5, 0.8, seed=0)  # t is set but kappa is not
        with pytest.raises(ValueError, match="regularity"):
            dichotomy_check(cfg)

    def test_requires_even_exponent(self):
        with pytest.raises(ValueError, match="even"):
            dichotomy_check(_odd_scale_config())


def _odd_scale_config():
    from incidencelab.dyadic import DyadicTube, Scale

    p = DyadicCube(3, 1, 1)
    t = DyadicTube(DyadicCube(3, 0, 1), "standard")
    return Configuration(
        delta=Scale(3),
        points=(p,),
        tubes_of={p: (t,)},
        nice=Niceness(s=0.5, c=8.0, m=1, t=1.0, kappa=4.0),
    )


# ---------------------------------------------------------------------------
# product-structure extraction
# ---------------------------------------------------------------------------


class TestExtraction:
    def test_success_on_regular_config(self):
        cfg = regular_random(12, 0.5, 1.0, seed=0)
        ex = extract_product_structure(cfg)
        assert ex.ok and ex.stage_failed is None
        assert ex.chosen_tube is not None
        assert ex.config is not None and ex.config.delta.k == 6
        assert len(ex.thetas) == ex.properties["rows"] >= 2
        assert len(ex.dual_points) >= 1
        # spread certificates within the declared budget
        assert ex.properties["axis_spread_c"] <= 16.0
        assert ex.properties["fiber_spread_c"] <= 16.0
        stages = [r.stage for r in ex.ledger]
        assert stages == [
            "heavy_windows",
            "direction_prune",
            "tube_selection",
            "frame_snap",
        ]

    def test_frame_cells_hold_their_tubes(self):
        from incidencelab.dyadic import tube_meets_cube

        cfg = regular_random(12, 0.5, 1.0, seed=1)
        ex = extract_product_structure(cfg)
        assert ex.ok
        for cell, fan in ex.config.tubes_of.items():
            for t in fan:
                assert tube_meets_cube(t, cell)

    def test_no_heavy_windows_fails_structurally(self):
        cfg = regular_random(12, 0.5, 1.0, seed=0)
        # raise the heaviness threshold beyond the total point count
        ex = extract_product_structure(cfg, eps=-1.0)
        assert not ex.ok and ex.stage_failed == "heavy_windows"
        assert ex.config is None and ex.ledger[-1].stage == "heavy_windows"

    def test_requires_dimension_metadata(self):
        cfg = regular_random(12, 0.5, 1.0, seed=0)
        bare = Configuration(delta=cfg.delta, points=cfg.points, tubes_of=cfg.tubes_of)
        with pytest.raises(ValueError, match="nice.t"):
            extract_product_structure(bare)

    def test_requires_even_exponent(self):
        with pytest.raises(ValueError, match="even"):
            extract_product_structure(_odd_scale_config_with_t())


def _odd_scale_config_with_t():
    from incidencelab.dyadic import DyadicTube, Scale

    p = DyadicCube(3, 1, 1)
    t = DyadicTube(DyadicCube(3, 0, 1), "standard")
    return Configuration(
        delta=Scale(3),
        points=(p,),
        tubes_of={p: (t,)},
        nice=Niceness(s=0.5, c=8.0, m=1, t=1.0),
    )
