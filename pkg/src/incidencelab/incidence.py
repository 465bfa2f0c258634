"""Incidence counting and bound checking.

Two counting routes are kept deliberately separate: a brute-force
O(|P|*|T|) loop over the exact predicate, and a grid-accelerated counter
that buckets tubes by slope index and range-queries intercepts.  The two
must agree bit-for-bit; tests enforce this on every instance they touch.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Literal, Mapping, Sequence

import numpy as np

from .dyadic import (
    DyadicCube,
    DyadicTube,
    Line,
    Point,
    Scale,
    ScaleLike,
    as_k,
    incident,
    tube_meets_cube,
)
from .spread import check_spread, check_tube_spread

# ---------------------------------------------------------------------------
# configurations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Niceness:
    """Declared (delta, s, C, M)-nice parameters; t describes the point set.

    kappa, when set, additionally declares the point set (delta, t)-regular
    with that constant (coarse covering |P| at delta**(1/2) within kappa of
    delta**(-t/2)).
    """

    s: float
    c: float
    m: int
    t: float | None = None
    kappa: float | None = None


@dataclass(frozen=True)
class Configuration:
    """A point family with a tube family attached to each point.

    ``tubes_of[p]`` lists the tubes declared incident to p; construction
    verifies every one geometrically meets its cube.
    """

    delta: Scale
    points: tuple[DyadicCube, ...]
    tubes_of: Mapping[DyadicCube, tuple[DyadicTube, ...]]
    nice: Niceness | None = None

    def __post_init__(self) -> None:
        k = self.delta.k
        for p in self.points:
            if p.k != k:
                raise ValueError(f"point {p} not at scale {self.delta}")
        known = set(self.points)
        groups: dict[tuple[str, int], list[tuple[DyadicTube, DyadicCube]]] = {}
        for p, fan in self.tubes_of.items():
            if p not in known:
                raise ValueError(f"tube family attached to unknown point {p}")
            for t in fan:
                groups.setdefault((t.orientation, t.param.k), []).append((t, p))
        for (orientation, kt), pairs in groups.items():
            self._check_pairs(orientation, kt, pairs)

    def _check_pairs(
        self,
        orientation: str,
        kt: int,
        pairs: list[tuple[DyadicTube, DyadicCube]],
    ) -> None:
        # Batch form of tube_meets_cube over one (orientation, tube-scale)
        # group.  Corner products need kt+kp+2 bits and the comparison adds
        # max(kt, kp) more; past int64 fall back to the scalar predicate.
        kp = self.delta.k
        if kt + kp + 2 + max(kt, kp) > 62 or len(pairs) < 64:
            for t, p in pairs:
                if not tube_meets_cube(t, p):
                    raise ValueError(f"declared tube {t} misses its point {p}")
            return
        n = len(pairs)
        ia = np.fromiter((t.param.ix for t, _ in pairs), np.int64, n)
        ib = np.fromiter((t.param.iy for t, _ in pairs), np.int64, n)
        if orientation == "standard":
            px = np.fromiter((p.ix for _, p in pairs), np.int64, n)
            py = np.fromiter((p.iy for _, p in pairs), np.int64, n)
        else:
            px = np.fromiter((p.iy for _, p in pairs), np.int64, n)
            py = np.fromiter((p.ix for _, p in pairs), np.int64, n)
        c0 = ia * px
        c1 = ia * (px + 1)
        c2 = c0 + px
        c3 = c1 + px + 1
        lo = np.minimum(np.minimum(c0, c1), np.minimum(c2, c3))
        hi = np.maximum(np.maximum(c0, c1), np.maximum(c2, c3))
        ok = ((ib << kp) + lo < ((py + 1) << kt)) & (
            ((ib + 1) << kp) + hi > (py << kt)
        )
        if not ok.all():
            t, p = pairs[int(np.argmin(ok))]
            raise ValueError(f"declared tube {t} misses its point {p}")

    @property
    def all_tubes(self) -> tuple[DyadicTube, ...]:
        seen = set()
        for p in self.points:
            seen.update(self.tubes_of.get(p, ()))
        return tuple(sorted(seen))

    def fan(self, p: DyadicCube) -> tuple[DyadicTube, ...]:
        return self.tubes_of.get(p, ())

    def check_nice(self) -> dict:
        """Verify the declared niceness metadata; returns per-point diagnostics."""
        if self.nice is None:
            raise ValueError("configuration carries no niceness metadata")
        worst_c = 0.0
        bad_m = 0
        for p in self.points:
            fan = self.fan(p)
            if len(fan) != self.nice.m:
                bad_m += 1
            rep = check_tube_spread(fan, self.delta, self.nice.s, self.nice.c)
            worst_c = max(worst_c, rep.c_star)
        return {
            "worst_fan_c_star": worst_c,
            "fans_off_cardinality": bad_m,
            "pass": bad_m == 0 and worst_c <= self.nice.c,
        }

    def to_json(self) -> dict:
        pts = sorted(self.points)
        index = {p: i for i, p in enumerate(pts)}
        out: dict = {
            "delta_k": self.delta.k,
            "cubes": [[p.ix, p.iy] for p in pts],
            "tubes_of": {
                str(index[p]): [_tube_json(t) for t in sorted(self.tubes_of.get(p, ()))]
                for p in pts
            },
        }
        if self.nice is not None:
            out["nice"] = {
                "s": self.nice.s,
                "c": self.nice.c,
                "m": self.nice.m,
                "t": self.nice.t,
                "kappa": self.nice.kappa,
            }
        return out

    @staticmethod
    def from_json(doc: dict) -> "Configuration":
        k = int(doc["delta_k"])
        pts = tuple(DyadicCube(k, int(ix), int(iy)) for ix, iy in doc["cubes"])
        tubes_of = {
            pts[int(i)]: tuple(_tube_from_json(row) for row in rows)
            for i, rows in doc["tubes_of"].items()
        }
        nice = None
        if "nice" in doc:
            nd = doc["nice"]
            nice = Niceness(
                s=nd["s"], c=nd["c"], m=nd["m"], t=nd.get("t"), kappa=nd.get("kappa")
            )
        return Configuration(delta=Scale(k), points=pts, tubes_of=tubes_of, nice=nice)


def _tube_json(t: DyadicTube) -> list:
    row = [t.param.k, t.param.ix, t.param.iy]
    if t.orientation != "standard":
        row.append(t.orientation)
    return row


def _tube_from_json(row: Sequence) -> DyadicTube:
    k, ia, ib = int(row[0]), int(row[1]), int(row[2])
    ori = row[3] if len(row) > 3 else "standard"
    return DyadicTube(DyadicCube(k, ia, ib), ori)


# ---------------------------------------------------------------------------
# counting
# ---------------------------------------------------------------------------


def count_incidences_brute(
    points: Sequence[DyadicCube], tubes: Sequence[DyadicTube]
) -> int:
    """Reference double loop over the exact predicate."""
    return sum(1 for p in points for t in tubes if tube_meets_cube(t, p))


def count_incidences_fast(
    points: Sequence[DyadicCube], tubes: Sequence[DyadicTube]
) -> int:
    """Accelerated meeting-pair count.

    Tubes are bucketed by (orientation, scale, slope index); for a fixed
    bucket the intercepts meeting a cube form one integer interval, so each
    (cube, bucket) pair costs two binary searches.
    """
    buckets: dict[tuple[str, int, int], list[int]] = {}
    for t in tubes:
        buckets.setdefault((t.orientation, t.param.k, t.param.ix), []).append(t.param.iy)
    arrays = {key: np.sort(np.asarray(ibs, dtype=np.int64)) for key, ibs in buckets.items()}

    by_scale: dict[int, list[DyadicCube]] = {}
    for p in points:
        by_scale.setdefault(p.k, []).append(p)

    total = 0
    for kp, cubes in by_scale.items():
        x = np.fromiter((c.ix for c in cubes), dtype=np.int64, count=len(cubes))
        y = np.fromiter((c.iy for c in cubes), dtype=np.int64, count=len(cubes))
        for (ori, kt, ia), ibs in arrays.items():
            if kt + kp > 60:  # int64 headroom; fall back to exact ints
                total += sum(
                    1
                    for c in cubes
                    for ib in ibs
                    if tube_meets_cube(DyadicTube(DyadicCube(kt, ia, int(ib)), ori), c)
                )
                continue
            px, py = (y, x) if ori == "alternate" else (x, y)
            p0 = ia * px
            p1 = ia * (px + 1)
            p2 = (ia + 1) * px
            p3 = (ia + 1) * (px + 1)
            lo = np.minimum(np.minimum(p0, p1), np.minimum(p2, p3))
            hi = np.maximum(np.maximum(p0, p1), np.maximum(p2, p3))
            # ib ranges over [ (py<<kt − hi) // 2^kp , ((py+1)<<kt − lo − 1) // 2^kp ]
            ib_lo = (py * (1 << kt) - hi) >> kp
            ib_hi = ((py + 1) * (1 << kt) - lo - 1) >> kp
            counts = np.searchsorted(ibs, ib_hi, side="right") - np.searchsorted(
                ibs, ib_lo, side="left"
            )
            total += int(np.maximum(counts, 0).sum())
    return total


CountMode = Literal["declared", "geometric"]


def count_incidences(cfg: Configuration, mode: CountMode = "declared") -> int:
    """Incidence count of a configuration.

    declared: pairs (p, T) with T in the fan attached to p.
    geometric: pairs (p, T) with T meeting p, over the union tube family.
    """
    if mode == "declared":
        return sum(len(cfg.fan(p)) for p in cfg.points)
    if mode == "geometric":
        return count_incidences_fast(cfg.points, cfg.all_tubes)
    raise ValueError(f"unknown mode {mode!r}")


def count_point_line_incidences(
    points: Sequence[Point], lines: Sequence[Line]
) -> int:
    """Exact point-line incidence count over rational coordinates.

    Lines are grouped by slope; point p lies on a slope-a line iff the
    group contains intercept p.y - a*p.x.
    """
    by_slope: dict[Fraction, Counter] = {}
    for ln in lines:
        by_slope.setdefault(Fraction(ln.slope), Counter())[Fraction(ln.intercept)] += 1
    total = 0
    for p in points:
        x, y = Fraction(p.x), Fraction(p.y)
        for a, ctr in by_slope.items():
            total += ctr[y - a * x]
    return total


def count_point_line_incidences_brute(
    points: Sequence[Point], lines: Sequence[Line]
) -> int:
    """Reference double loop over the exact incidence predicate."""
    return sum(1 for p in points for ln in lines if incident(p, ln))


# ---------------------------------------------------------------------------
# bound reports
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoundReport:
    """Outcome of checking lhs against budget * sum(terms).

    direction "upper" means lhs must not exceed the budgeted right side;
    "lower" means lhs * budget must reach it.  passed is None when the
    check ran in measurement-only mode (no declared metadata).
    """

    name: str
    lhs: float
    terms: dict[str, float]
    budget: float
    direction: Literal["upper", "lower"] = "upper"
    measured_only: bool = False
    extras: dict = field(default_factory=dict)

    @property
    def rhs(self) -> float:
        return sum(self.terms.values())

    @property
    def slack(self) -> float:
        return self.lhs / self.rhs if self.rhs else math.inf

    @property
    def passed(self) -> bool | None:
        if self.measured_only:
            return None
        if self.direction == "upper":
            return self.lhs <= self.budget * self.rhs
        return self.lhs * self.budget >= self.rhs

    @property
    def dominant_term(self) -> str:
        return max(self.terms, key=lambda k: self.terms[k])

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "lhs": self.lhs,
            "terms": dict(self.terms),
            "budget": self.budget,
            "slack": self.slack,
            "pass": self.passed,
            **({"extras": self.extras} if self.extras else {}),
        }


def check_elementary_st(
    points: Sequence[Point],
    lines: Sequence[Line],
    budget: float = 8.0,
) -> tuple[BoundReport, BoundReport, BoundReport]:
    """The two elementary incidence bounds plus the sharp form.

    |I| <= budget*(|L|^(1/2)|P| + |L|), its dual with P and L exchanged,
    and |I| <= budget*(|L|^(2/3)|P|^(2/3) + |L| + |P|).
    """
    if not points or not lines:
        raise ValueError("need nonempty point and line sets")
    npts, nl = len(points), len(lines)
    lhs = float(count_point_line_incidences(points, lines))
    r1 = BoundReport(
        name="st_lines_sqrt",
        lhs=lhs,
        terms={"sqrt_lines_points": math.sqrt(nl) * npts, "lines": float(nl)},
        budget=budget,
    )
    r2 = BoundReport(
        name="st_points_sqrt",
        lhs=lhs,
        terms={"sqrt_points_lines": math.sqrt(npts) * nl, "points": float(npts)},
        budget=budget,
    )
    r3 = BoundReport(
        name="st_sharp",
        lhs=lhs,
        terms={
            "two_thirds": (nl ** (2.0 / 3.0)) * (npts ** (2.0 / 3.0)),
            "lines": float(nl),
            "points": float(npts),
        },
        budget=budget,
    )
    return r1, r2, r3


def check_discretized_st(
    cfg: Configuration,
    log_exponent: float = 3.0,
) -> BoundReport:
    """Discretized incidence bound for nice configurations:
    |I(P,T)| <= log(1/delta)^c * (M * delta^s * |T|^(1/2) * |P| + |T|).
    """
    if cfg.nice is None:
        raise ValueError("check_discretized_st needs niceness metadata")
    s, m = cfg.nice.s, cfg.nice.m
    delta = cfg.delta.as_float
    n_tubes = len(cfg.all_tubes)
    lhs = float(count_incidences(cfg, "declared"))
    budget = math.log2(1.0 / delta) ** log_exponent
    return BoundReport(
        name="discretized_st",
        lhs=lhs,
        terms={
            "main": m * (delta**s) * math.sqrt(n_tubes) * len(cfg.points),
            "tubes": float(n_tubes),
        },
        budget=budget,
    )


def cor_lower_bound(
    s: float, t: float, delta: ScaleLike, m: int, c_p: float, c_t: float
) -> float:
    """Tube-count floor (C_P*C_T)^(-1) * M * delta^(-s) * (M*delta^s)^((t-s)/(1-s))."""
    if not (0.0 <= s <= t <= 1.0):
        raise ValueError(f"need 0 <= s <= t <= 1, got s={s}, t={t}")
    if s >= 1.0:
        raise ValueError("s = 1 is a singularity of the exponent (t-s)/(1-s)")
    if m < 1 or c_p <= 0 or c_t <= 0:
        raise ValueError("need m >= 1 and positive constants")
    d = 2.0 ** (-as_k(delta))
    return (1.0 / (c_p * c_t)) * m * d ** (-s) * (m * d**s) ** ((t - s) / (1.0 - s))


def check_tube_count(cfg: Configuration, budget: float | None = None) -> BoundReport:
    """Compare |union of fans| against the tube-count floor.

    Constants are measured, not trusted: C_P from the point set's spread at
    its declared dimension t, C_T as the worst fan spread constant at s.
    Without metadata the report is measurement-only.
    """
    n_tubes = len(cfg.all_tubes)
    k = cfg.delta.k
    measured_exp = math.log2(max(n_tubes, 1)) / k
    if cfg.nice is None or cfg.nice.t is None:
        return BoundReport(
            name="tube_count_floor",
            lhs=float(n_tubes),
            terms={"floor": 0.0},
            budget=1.0,
            direction="lower",
            measured_only=True,
            extras={"measured_exponent": measured_exp},
        )
    s, t, m = cfg.nice.s, cfg.nice.t, cfg.nice.m
    c_p = check_spread(cfg.points, k, t).c_star
    c_t = max(check_tube_spread(cfg.fan(p), k, s).c_star for p in cfg.points)
    floor = cor_lower_bound(s, t, k, m, c_p, c_t)
    if budget is None:
        budget = math.log2(2.0**k) ** 3  # polylog allowance on a ⪆ bound
    return BoundReport(
        name="tube_count_floor",
        lhs=float(n_tubes),
        terms={"floor": floor},
        budget=budget,
        direction="lower",
        extras={
            "measured_exponent": measured_exp,
            "target_exponent": 2.0 * s,
            "c_p": c_p,
            "c_t": c_t,
        },
    )


@dataclass(frozen=True)
class PairTubeReport:
    count: int
    distance: float
    slope_window: float
    bound: float | None

    @property
    def passed(self) -> bool | None:
        if self.bound is None:
            return None
        return self.count <= max(self.bound, 1.0)


def pair_tube_count(
    p: DyadicCube,
    p2: DyadicCube,
    tubes: Sequence[DyadicTube],
    s: float | None = None,
) -> PairTubeReport:
    """Tubes through both p and p2, plus the slope-window heuristic bound
    |T| * (delta / d(p, p2))^s.  Distance is between cube centers."""
    if p == p2:
        raise ValueError("pair_tube_count needs two distinct cubes")
    count = sum(1 for t in tubes if tube_meets_cube(t, p) and tube_meets_cube(t, p2))
    cx, cy = p.center
    cx2, cy2 = p2.center
    d = math.hypot(float(cx - cx2), float(cy - cy2))
    delta = p.scale.as_float
    window = delta / d
    bound = len(tubes) * window**s if s is not None else None
    return PairTubeReport(count=count, distance=d, slope_window=window, bound=bound)


# ---------------------------------------------------------------------------
# exponent formulas
# ---------------------------------------------------------------------------


def exponent_formulas(s: float, t: float) -> dict[str, float]:
    """The five closed-form exponents attached to an (s, t) pair.

    conjecture       min{s+t, (3s+t)/2, s+1}
    elementary       max{t/2 + s, 2s}
    best_known       max{2s + (1-s)^2/(2-s), 1+s}
    exceptional_conj max{2s - t, 0}
    kaufman          s
    """
    if not (0.0 < s < 1.0):
        raise ValueError(f"need s in (0,1), got {s}")
    if not (s < t <= 2.0):
        raise ValueError(f"need t in (s,2], got t={t}")
    sumproduct = 2.0 * s + (1.0 - s) ** 2 / (2.0 - s)
    return {
        "conjecture": min(s + t, (3.0 * s + t) / 2.0, s + 1.0),
        "elementary": max(t / 2.0 + s, 2.0 * s),
        "best_known": max(sumproduct, 1.0 + s),
        "sum_product": sumproduct,  # the branch the regular-case argument yields
        "exceptional_conj": max(2.0 * s - t, 0.0),
        "kaufman": s,
    }
