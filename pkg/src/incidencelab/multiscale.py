"""Scale ladders, pigeonhole refinements, and the coarse/fine dichotomy.

A uniform point family has a branching function recording how mass splits
as the scale shrinks.  This module decomposes that function into almost-
linear pieces, turns the pieces into a ladder of dyadic scales classified
structured/bad (and, after a second pass, normal/good/bad), and implements
the two refinements that make two-scale induction work: covering a fine
tube family by coarse tubes so that every survivor carries many
incidences, and restating a nice configuration as a coarse configuration
plus one rescaled configuration per coarse window.

Nothing hides behind asymptotic notation.  Every pigeonhole appends a
ledger row (stage, mass before, mass after, budget used), decomposition
constants tau and K are measured rather than promised, and every result
object re-verifies its own clauses numerically.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Mapping, Sequence

from .dyadic import (
    DyadicCube,
    DyadicTube,
    Homothety,
    Scale,
    ScaleLike,
    as_k,
    cover_tubes,
    rescale_cubes,
    rescale_tube,
    tube_meets_cube,
)
from .generators import _worst_fan_spread
from .incidence import BoundReport, Configuration, Niceness
from .projections import Direction, direction_set, projection_covering, prune_bad_directions
from .spread import BranchingFunction, SpreadReport, check_spread, check_tube_spread

_TOL = 1e-9

LINEAR = "linear"
SUPERLINEAR = "superlinear"

STRUCTURED = "S"
BAD = "B"
NORMAL = "N"
GOOD = "G"


# ---------------------------------------------------------------------------
# piecewise-linear functions and the two interval alternatives
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PiecewiseLinear:
    """Function on [0, m] given by its values at the integers."""

    values: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.values) < 2:
            raise ValueError("need values at 0..m with m >= 1")

    @classmethod
    def from_increments(cls, increments: Sequence[float]) -> "PiecewiseLinear":
        vals = [0.0]
        for d in increments:
            vals.append(vals[-1] + d)
        return cls(values=tuple(vals))

    @property
    def m(self) -> int:
        return len(self.values) - 1

    def __call__(self, x: float) -> float:
        if not 0 <= x <= self.m:
            raise ValueError(f"argument {x} outside [0, {self.m}]")
        j = min(int(math.floor(x)), self.m - 1)
        return self.values[j] + (self.values[j + 1] - self.values[j]) * (x - j)

    def slope(self, a: float, b: float) -> float:
        if not a < b:
            raise ValueError("need a < b")
        return (self(b) - self(a)) / (b - a)


PLFunction = PiecewiseLinear | BranchingFunction


def _interior_breakpoints(a: float, b: float) -> list[float]:
    lo = math.floor(a) + 1
    hi = math.ceil(b) - 1
    return [float(j) for j in range(lo, hi + 1)]


def is_eps_linear(f: PLFunction, a: float, b: float, eps: float) -> bool:
    """|f - L_{f,a,b}| <= eps*(b - a) at every breakpoint of [a, b].

    L_{f,a,b}(x) = f(a) + s_f(a,b)*(x - a); between breakpoints both sides
    are affine, so checking breakpoints (plus the endpoints, where the gap
    is zero by construction) decides the predicate exactly.
    """
    if not a < b:
        raise ValueError("need a < b")
    fa, sl = f(a), f.slope(a, b)
    tol = eps * (b - a) + _TOL
    return all(abs(f(x) - (fa + sl * (x - a))) <= tol for x in _interior_breakpoints(a, b))


def is_eps_superlinear(f: PLFunction, a: float, b: float, eps: float) -> bool:
    """f >= L_{f,a,b} - eps*(b - a) at every breakpoint of [a, b]."""
    if not a < b:
        raise ValueError("need a < b")
    fa, sl = f(a), f.slope(a, b)
    tol = eps * (b - a) + _TOL
    return all(f(x) >= fa + sl * (x - a) - tol for x in _interior_breakpoints(a, b))


def _admissible_kind(f: PLFunction, a: int, b: int, s: float, eps: float) -> str | None:
    """Which alternative [a, b] satisfies, preferring the linear one.

    (a) eps-linear with chord slope >= s; (b) eps-superlinear with chord
    slope equal to s up to eps (exact equality is unattainable for measured
    branching functions).  Slope-s eps-linear intervals match both; they
    are classified as linear, the stronger conclusion.
    """
    sl = f.slope(a, b)
    if sl >= s - _TOL and is_eps_linear(f, a, b, eps):
        return LINEAR
    if abs(sl - s) <= eps + _TOL and is_eps_superlinear(f, a, b, eps):
        return SUPERLINEAR
    return None


# ---------------------------------------------------------------------------
# greedy decomposition and its exhaustive reference
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DecompInterval:
    a: int
    b: int
    kind: str  # LINEAR or SUPERLINEAR
    slope: float

    @property
    def length(self) -> int:
        return self.b - self.a


@dataclass(frozen=True)
class Decomposition:
    """Disjoint admissible intervals of [0, m] with measured constants."""

    m: int
    s: float
    t: float
    eps: float
    intervals: tuple[DecompInterval, ...]

    @property
    def covered(self) -> int:
        return sum(iv.length for iv in self.intervals)

    @property
    def gaps(self) -> tuple[tuple[int, int], ...]:
        out = []
        cur = 0
        for iv in self.intervals:
            if iv.a > cur:
                out.append((cur, iv.a))
            cur = iv.b
        if cur < self.m:
            out.append((cur, self.m))
        return tuple(out)

    @property
    def gap_length(self) -> int:
        return self.m - self.covered

    @property
    def tau(self) -> float:
        """Measured min interval length over m (the scale-ratio floor)."""
        if not self.intervals:
            return 0.0
        return min(iv.length for iv in self.intervals) / self.m

    @property
    def k_gap(self) -> float:
        """Measured K with gap_length <= K * eps * m."""
        return self.gap_length / (self.eps * self.m)


def decompose(f: PLFunction, s: float, t: float, eps: float) -> Decomposition:
    """Split [0, m] into maximal admissible intervals, scanning left to right.

    From each position the longest admissible interval is taken; when none
    exists the position joins the complement and the scan moves one unit.
    Admissibility is not monotone in the right endpoint, so greedy is not
    exactly optimal; the DP reference decompose_oracle measures the gap.

    Hypotheses (all violations reported together): f(0) = 0, f is
    2-Lipschitz, f(m) >= (t - eps) * m, s < t, eps > 0.
    """
    m = f.m
    problems = []
    if not eps > 0:
        problems.append(f"need eps > 0, got {eps}")
    if not s < t:
        problems.append(f"need s < t, got s={s}, t={t}")
    if abs(f(0)) > _TOL:
        problems.append(f"f(0) = {f(0)} != 0")
    worst_step = max(abs(f(j + 1) - f(j)) for j in range(m))
    if worst_step > 2 + _TOL:
        problems.append(f"not 2-Lipschitz: unit step {worst_step:.6f}")
    if f(m) < (t - eps) * m - _TOL:
        problems.append(f"f(m) = {f(m):.6f} < (t - eps)*m = {(t - eps) * m:.6f}")
    if problems:
        raise ValueError("; ".join(problems))

    intervals: list[DecompInterval] = []
    a = 0
    while a < m:
        chosen = None
        for b in range(m, a, -1):
            kind = _admissible_kind(f, a, b, s, eps)
            if kind is not None:
                chosen = DecompInterval(a=a, b=b, kind=kind, slope=f.slope(a, b))
                break
        if chosen is None:
            a += 1
        else:
            intervals.append(chosen)
            a = chosen.b
    return Decomposition(m=m, s=s, t=t, eps=eps, intervals=tuple(intervals))


def decompose_oracle(f: PLFunction, s: float, eps: float) -> int:
    """Maximum total length coverable by disjoint admissible intervals.

    Exhaustive dynamic program over unit-granularity endpoints:
    g[i] = max(g[i-1], max over admissible [a, i] of g[a] + (i - a)).
    Used as the reference the greedy scan is measured against.
    """
    m = f.m
    adm = [
        [a < b and _admissible_kind(f, a, b, s, eps) is not None for b in range(m + 1)]
        for a in range(m + 1)
    ]
    g = [0] * (m + 1)
    for i in range(1, m + 1):
        best = g[i - 1]
        for a in range(i - 1, -1, -1):
            if adm[a][i]:
                best = max(best, g[a] + (i - a))
        g[i] = best
    return g[m]


# ---------------------------------------------------------------------------
# scale ladders
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScaleLevel:
    """One rung: scales base**hi down to base**lo, hi < lo."""

    hi: int
    lo: int
    cls: str  # "S"/"B", or "N"/"G"/"B" after classification
    t_j: float | None = None

    @property
    def length(self) -> int:
        return self.lo - self.hi


@dataclass(frozen=True)
class ScaleDecomposition:
    """Ladder 1 = Delta_0 > ... > Delta_n = delta with Delta_j = base**lo_j.

    base = 2**-base_k, delta = base**m.  Invariants (verified, not assumed):
    the levels partition [0, m]; every structured level has length >= tau*m;
    total bad length <= eps*m; sum over structured levels of t_j * length
    >= (t - eps) * m; no two bad levels are adjacent; t_j in [s, 2].
    """

    base_k: int
    m: int
    s: float
    t: float
    eps: float
    tau: float
    levels: tuple[ScaleLevel, ...]

    @property
    def delta_k(self) -> int:
        return self.base_k * self.m

    @property
    def n(self) -> int:
        return len(self.levels)

    def ratio_log2(self, level: ScaleLevel) -> int:
        """log2 of Delta_{j-1} / Delta_j."""
        return self.base_k * level.length

    def bad(self) -> tuple[ScaleLevel, ...]:
        return tuple(lv for lv in self.levels if lv.cls == BAD)

    def structured(self) -> tuple[ScaleLevel, ...]:
        return tuple(lv for lv in self.levels if lv.cls != BAD)

    def verify(self) -> dict[str, dict]:
        """Clause-by-clause numeric re-check of the ladder invariants."""
        m = self.m
        rep: dict[str, dict] = {}
        ok = bool(self.levels) and self.levels[0].hi == 0 and self.levels[-1].lo == m
        ok = ok and all(lv.lo > lv.hi for lv in self.levels)
        ok = ok and all(
            b.hi == a.lo for a, b in zip(self.levels, self.levels[1:])
        )
        rep["partition"] = {"passed": ok}
        struct = self.structured()
        min_len = min((lv.length for lv in struct), default=0)
        rep["structured_length"] = {
            "passed": not struct or min_len + _TOL >= self.tau * m,
            "measured_tau": min_len / m if struct else 0.0,
        }
        bad_len = sum(lv.length for lv in self.bad())
        rep["bad_mass"] = {
            "passed": bad_len <= self.eps * m + _TOL,
            "measured": bad_len / m,
        }
        mass = sum((lv.t_j or 0.0) * lv.length for lv in struct)
        rep["exponent_mass"] = {
            "passed": mass + _TOL >= (self.t - self.eps) * m,
            "measured": mass / m,
        }
        rep["t_range"] = {
            "passed": all(
                lv.t_j is not None and self.s - _TOL <= lv.t_j <= 2 + _TOL
                for lv in struct
            )
        }
        rep["no_adjacent_bad"] = {
            "passed": all(
                not (a.cls == BAD and b.cls == BAD)
                for a, b in zip(self.levels, self.levels[1:])
            )
        }
        return rep

    @property
    def passed(self) -> bool:
        return all(v["passed"] for v in self.verify().values())

    def classify(self, good_threshold: float | None = None) -> "ScaleDecomposition":
        """Refine structured levels into normal/good by their exponent t_j.

        A structured level is good when t_j >= good_threshold (default: the
        ladder's t), otherwise normal; bad levels stay bad.  The threshold
        is a parameter because the gain regime depends on how far above s
        a level must branch before the good-scale estimate applies.
        """
        thr = self.t if good_threshold is None else good_threshold
        new = tuple(
            lv
            if lv.cls == BAD
            else replace(lv, cls=GOOD if (lv.t_j or 0.0) >= thr - _TOL else NORMAL)
            for lv in self.levels
        )
        return replace(self, levels=new)

    def to_json(self) -> str:
        return json.dumps(
            {
                "base_delta_k": self.base_k,
                "scales": [self.levels[0].hi * self.base_k]
                + [lv.lo * self.base_k for lv in self.levels],
                "t": [lv.t_j for lv in self.levels],
                "classes": [lv.cls for lv in self.levels],
                "s": self.s,
                "t_total": self.t,
                "eps": self.eps,
                "tau": self.tau,
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "ScaleDecomposition":
        d = json.loads(text)
        base_k = int(d["base_delta_k"])
        scales = [int(v) for v in d["scales"]]
        if any(v % base_k for v in scales):
            raise ValueError("scale exponents must be multiples of base_delta_k")
        exps = [v // base_k for v in scales]
        levels = tuple(
            ScaleLevel(hi=a, lo=b, cls=c, t_j=tj)
            for a, b, c, tj in zip(exps, exps[1:], d["classes"], d["t"])
        )
        return cls(
            base_k=base_k,
            m=exps[-1],
            s=float(d["s"]),
            t=float(d["t_total"]),
            eps=float(d["eps"]),
            tau=float(d["tau"]),
            levels=levels,
        )


def scales_from_decomposition(
    intervals: Decomposition | Sequence[DecompInterval],
    base: ScaleLike,
    m: int | None = None,
    s: float | None = None,
    t: float | None = None,
    eps: float | None = None,
) -> ScaleDecomposition:
    """Turn admissible intervals into a verified scale ladder.

    Interval [c, d] becomes the structured level (base**c, base**d) with
    t_j the chord slope for linear intervals (clamped into [s, 2]) and
    t_j = s for superlinear ones; maximal complement runs become single bad
    levels, so no two bad levels are adjacent by construction.  The
    recorded eps is inflated to the smallest budget under which the bad-
    mass and exponent-mass clauses hold, then every clause is re-verified;
    a violation raises and names the clause.
    """
    if isinstance(intervals, Decomposition):
        d = intervals
        m = d.m if m is None else m
        s = d.s if s is None else s
        t = d.t if t is None else t
        eps = d.eps if eps is None else eps
        ivs = d.intervals
    else:
        ivs = tuple(sorted(intervals, key=lambda iv: iv.a))
        if m is None or s is None or t is None or eps is None:
            raise ValueError("m, s, t, eps are required with a bare interval list")
    base_k = as_k(base)

    levels: list[ScaleLevel] = []
    cur = 0
    for iv in ivs:
        if iv.a < cur:
            raise ValueError(f"overlapping intervals at {iv.a}")
        if iv.a > cur:
            levels.append(ScaleLevel(hi=cur, lo=iv.a, cls=BAD))
        t_j = s if iv.kind == SUPERLINEAR else min(max(iv.slope, s), 2.0)
        levels.append(ScaleLevel(hi=iv.a, lo=iv.b, cls=STRUCTURED, t_j=t_j))
        cur = iv.b
    if cur < m:
        levels.append(ScaleLevel(hi=cur, lo=m, cls=BAD))
    if not levels:
        raise ValueError("empty ladder: m must be positive")

    struct = [lv for lv in levels if lv.cls == STRUCTURED]
    tau = min((lv.length for lv in struct), default=0) / m
    bad_len = sum(lv.length for lv in levels if lv.cls == BAD)
    mass = sum((lv.t_j or 0.0) * lv.length for lv in struct)
    eps_rec = max(eps, bad_len / m, t - mass / m)

    sd = ScaleDecomposition(
        base_k=base_k, m=m, s=s, t=t, eps=eps_rec, tau=tau, levels=tuple(levels)
    )
    for name, clause in sd.verify().items():
        if not clause["passed"]:
            raise ValueError(f"scale decomposition violates clause {name}: {clause}")
    return sd


# ---------------------------------------------------------------------------
# loss ledgers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LedgerRow:
    """One pigeonhole: how much mass survived and what loss was allowed.

    budget is the pigeonhole denominator (number of classes the stage chose
    from); a lossless bookkeeping stage records budget 1.
    """

    stage: str
    mass_before: float
    mass_after: float
    budget: float


def ledger_csv(rows: Sequence[LedgerRow]) -> str:
    out = ["stage,mass_before,mass_after,budget_used"]
    for r in rows:
        out.append(f"{r.stage},{r.mass_before:g},{r.mass_after:g},{r.budget:g}")
    return "\n".join(out) + "\n"


class RefinementError(RuntimeError):
    """A refinement met inputs outside its hypotheses."""


# ---------------------------------------------------------------------------
# coarse-cover refinement
# ---------------------------------------------------------------------------


def _count_class(n: int) -> int:
    # j with 2**(j-1) < n <= 2**j
    return (n - 1).bit_length()


@dataclass(frozen=True)
class CoverRefinement:
    """Refined points, pruned fans, and a coarse cover with a uniform floor.

    Every coarse tube in coarse_tubes contains between 2**(j_count-1) and
    2**j_count = m1 fine tubes of each point it represents, and represents
    between 2**(j_rep-1) and 2**j_rep refined points, so its incidence
    count is at least h_floor / 4 by construction; min_incidences is the
    measured minimum.  c2 is the measured spread constant of coarse_tubes.
    """

    points: tuple[DyadicCube, ...]
    tubes_of: dict[DyadicCube, tuple[DyadicTube, ...]]
    coarse_tubes: tuple[DyadicTube, ...]
    coarse_k: int
    j_count: int
    j_rep: int
    m1: int
    h_floor: float
    min_incidences: int
    c2: float
    spread: SpreadReport
    ledger: tuple[LedgerRow, ...]

    def ledger_csv(self) -> str:
        return ledger_csv(self.ledger)


def refine_cover(
    points: Sequence[DyadicCube],
    tubes_of: Mapping[DyadicCube, Sequence[DyadicTube]],
    delta: ScaleLike,
    coarse: ScaleLike,
    s: float,
    c1: float,
    m_max: int,
    *,
    floor_factor: float = 0.125,
    validate: bool = True,
) -> CoverRefinement:
    """Cover fine fans by coarse tubes so every survivor works hard.

    Hypotheses: each fan is a (delta, s, c1)-set with m_max/2 <= |fan| <=
    m_max.  Stages, each a ledger row: (i) minimal coarse cover per point;
    (ii) per point, bucket coarse tubes dyadically by how many fine tubes
    of that point they contain, restricted to classes 2**j >=
    floor_factor * m_max * coarse**2 (smaller classes cannot carry a
    quarter of the fan; their discard is part of the same row); (iii)
    pigeonhole points onto a common class j_count; (iv) prune fine tubes
    outside the selected coarse tubes; (v) pigeonhole coarse tubes
    dyadically by represented-point count, fixing the incidence floor
    h_floor = 2**j_rep * m1.
    """
    k = as_k(delta)
    kk = as_k(coarse)
    if not 0 <= kk <= k:
        raise ValueError(f"coarse scale 2**-{kk} must lie in [delta, 1]")
    pts = list(points)
    if not pts:
        raise RefinementError("empty point family")
    fans = {p: tuple(tubes_of[p]) for p in pts}
    bad_size = [p for p in pts if not m_max / 2 <= len(fans[p]) <= m_max]
    if bad_size:
        raise RefinementError(
            f"{len(bad_size)} fans outside [M/2, M] = [{m_max / 2:g}, {m_max}]"
        )
    if validate:
        worst = _worst_fan_spread(fans, k, s)
        if worst > c1 + _TOL:
            raise RefinementError(
                f"fan spread {worst:.3f} exceeds declared C1 = {c1:g}"
            )

    ledger: list[LedgerRow] = []
    pair_mass = sum(len(f) for f in fans.values())

    # (i) minimal coarse cover per point
    cov_counts: dict[DyadicCube, dict[DyadicTube, int]] = {}
    for p in pts:
        counts: dict[DyadicTube, int] = {}
        for t in fans[p]:
            par = t.parent_at(kk)
            counts[par] = counts.get(par, 0) + 1
        cov_counts[p] = counts
    ledger.append(LedgerRow("coarse_cover", pair_mass, pair_mass, 1.0))

    # (ii) per-point dyadic bucketing over the admissible class range
    j_hi = _count_class(m_max)
    j_lo = max(0, math.ceil(math.log2(m_max * floor_factor)) - 2 * kk)
    n_classes = max(1, j_hi - j_lo + 1)
    sel_class: dict[DyadicCube, int] = {}
    sel_mass: dict[DyadicCube, int] = {}
    for p in pts:
        mass_by_j: dict[int, int] = {}
        for n in cov_counts[p].values():
            j = _count_class(n)
            if j_lo <= j <= j_hi:
                mass_by_j[j] = mass_by_j.get(j, 0) + n
        if not mass_by_j:
            continue  # all classes inadmissible; the point is dropped here
        j_best = max(mass_by_j, key=lambda j: (mass_by_j[j], -j))
        sel_class[p] = j_best
        sel_mass[p] = mass_by_j[j_best]
    if not sel_class:
        raise RefinementError("no point has admissible coarse-count classes")
    ledger.append(
        LedgerRow("count_class", pair_mass, sum(sel_mass.values()), n_classes)
    )

    # (iii) pigeonhole points onto a common class
    groups: dict[int, list[DyadicCube]] = {}
    for p, j in sel_class.items():
        groups.setdefault(j, []).append(p)
    j_count = max(
        groups,
        key=lambda j: (len(groups[j]), sum(sel_mass[p] for p in groups[j]), -j),
    )
    kept_pts = tuple(sorted(groups[j_count]))
    ledger.append(LedgerRow("point_class", len(pts), len(kept_pts), n_classes))

    # (iv) prune fine tubes outside the selected coarse tubes
    kept_fans: dict[DyadicCube, tuple[DyadicTube, ...]] = {}
    rep_of: dict[DyadicTube, list[DyadicCube]] = {}
    for p in kept_pts:
        chosen = {
            par for par, n in cov_counts[p].items() if _count_class(n) == j_count
        }
        kept_fans[p] = tuple(t for t in fans[p] if t.parent_at(kk) in chosen)
        for par in chosen:
            rep_of.setdefault(par, []).append(p)
    ledger.append(
        LedgerRow(
            "tube_prune",
            sum(len(fans[p]) for p in kept_pts),
            sum(len(f) for f in kept_fans.values()),
            1.0,
        )
    )

    # (v) pigeonhole coarse tubes by represented-point count
    rep_groups: dict[int, list[DyadicTube]] = {}
    for par, reps in rep_of.items():
        rep_groups.setdefault(_count_class(len(reps)), []).append(par)
    j_rep = max(
        rep_groups,
        key=lambda j: (sum(len(rep_of[t]) for t in rep_groups[j]), -j),
    )
    kept_coarse = tuple(sorted(rep_groups[j_rep]))
    ledger.append(
        LedgerRow("tube_class", len(rep_of), len(kept_coarse), len(rep_groups))
    )

    m1 = 1 << j_count
    h_floor = float((1 << j_rep) * m1)
    min_inc = min(
        sum(cov_counts[p][par] for p in rep_of[par]) for par in kept_coarse
    )
    spread = check_tube_spread(kept_coarse, kk, s)
    return CoverRefinement(
        points=kept_pts,
        tubes_of=kept_fans,
        coarse_tubes=kept_coarse,
        coarse_k=kk,
        j_count=j_count,
        j_rep=j_rep,
        m1=m1,
        h_floor=h_floor,
        min_incidences=min_inc,
        c2=spread.c_star,
        spread=spread,
        ledger=tuple(ledger),
    )


# ---------------------------------------------------------------------------
# two-scale restatement of a nice configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TwoScaleRefinement:
    """Coarse configuration plus one rescaled configuration per window.

    clauses holds the numeric verdicts: (1) window and per-window point
    retention, (2) per-point fan retention, (3) the coarse configuration is
    nice with constant close to the original, (4) every window
    configuration is nice at the quotient scale; product compares
    |T0| / M against (|T_coarse| / M_coarse) * max_Q |T_Q| / M_Q.
    """

    coarse_cfg: Configuration
    windows: dict[DyadicCube, Configuration]
    fine_points: tuple[DyadicCube, ...]
    fine_tubes_of: dict[DyadicCube, tuple[DyadicTube, ...]]
    clauses: dict[str, dict]
    product: dict[str, float]
    ledger: tuple[LedgerRow, ...]

    @property
    def passed(self) -> bool:
        return all(v["passed"] for v in self.clauses.values()) and bool(
            self.product["passed"]
        )

    def ledger_csv(self) -> str:
        return ledger_csv(self.ledger)


def _trim_fan(fan: Sequence[DyadicTube], size: int) -> tuple[DyadicTube, ...]:
    return tuple(sorted(fan)[:size])


def refine_two_scale(cfg: Configuration, coarse: ScaleLike) -> TwoScaleRefinement:
    """Restate a nice configuration at a coarse scale and inside each window.

    Within every coarse window Q holding points, refine_cover organizes the
    fans; windows are then pigeonholed to a common coarse-fan size and
    count class, coarse fans are trimmed to the exact common cardinality,
    and each window's fine tubes are reduced to one representative per
    (delta/coarse)-packet, thinned to every other packet per slope column
    so representatives stay separated after rescaling, then rescaled by
    the window homothety.
    Degenerate coarse scales 1 and delta take the same path and land on
    trivial window or coarse sides respectively.
    """
    if cfg.nice is None:
        raise RefinementError("configuration carries no niceness metadata")
    k = cfg.delta.k
    kk = as_k(coarse)
    if not 0 <= kk <= k:
        raise ValueError(f"coarse scale 2**-{kk} must lie in [delta, 1]")
    s, c1, m_max = cfg.nice.s, cfg.nice.c, cfg.nice.m
    log_delta = max(float(k), 2.0)
    ledger: list[LedgerRow] = []

    by_q: dict[DyadicCube, list[DyadicCube]] = {}
    for p in cfg.points:
        by_q.setdefault(p.parent_at(kk), []).append(p)

    refined: dict[DyadicCube, CoverRefinement] = {}
    for q, pl in by_q.items():
        refined[q] = refine_cover(
            pl, {p: cfg.tubes_of[p] for p in pl}, k, kk, s, c1, m_max, validate=False
        )
        ledger.extend(
            replace(r, stage=f"window:{r.stage}") for r in refined[q].ledger
        )

    # pigeonhole windows onto a common coarse-fan size class and count class
    w_groups: dict[tuple[int, int], list[DyadicCube]] = {}
    for q, rc in refined.items():
        key = (_count_class(len(rc.coarse_tubes)), rc.j_count)
        w_groups.setdefault(key, []).append(q)
    best_key = max(w_groups, key=lambda key: (len(w_groups[key]), key))
    survivors = sorted(w_groups[best_key])
    ledger.append(
        LedgerRow("window_class", len(by_q), len(survivors), len(w_groups))
    )

    # exact common coarse cardinality
    m_coarse = min(len(refined[q].coarse_tubes) for q in survivors)
    coarse_fans = {q: _trim_fan(refined[q].coarse_tubes, m_coarse) for q in survivors}
    ledger.append(
        LedgerRow(
            "coarse_trim",
            sum(len(refined[q].coarse_tubes) for q in survivors),
            m_coarse * len(survivors),
            2.0,
        )
    )
    c_coarse = max(
        check_tube_spread(coarse_fans[q], kk, s).c_star for q in survivors
    )
    coarse_cfg = Configuration(
        delta=Scale(kk),
        points=tuple(survivors),
        tubes_of=coarse_fans,
        nice=Niceness(s=s, c=max(c_coarse, 1.0), m=m_coarse),
    )

    # per-window packet selection and rescaling
    k_pack = k - kk
    windows: dict[DyadicCube, Configuration] = {}
    fine_points: list[DyadicCube] = []
    fine_tubes_of: dict[DyadicCube, tuple[DyadicTube, ...]] = {}
    packets_before = packets_after = merged_before = merged_after = 0
    c_window = 0.0
    point_keep_ratio = 1.0
    for q in survivors:
        rc = refined[q]
        fine_points.extend(rc.points)
        fine_tubes_of.update(rc.tubes_of)
        rescaled_fans: dict[DyadicCube, tuple[DyadicTube, ...]] = {}
        for p in rc.points:
            packs: dict[DyadicTube, list[DyadicTube]] = {}
            for t in rc.tubes_of[p]:
                packs.setdefault(t.parent_at(k_pack), []).append(t)
            packets_before += sum(len(v) for v in packs.values())
            # one representative per packet, every other packet per slope
            # column: slope cells survive rescaling exactly, but adjacent
            # intercept packets can land one cell apart, within nudge range
            cols: dict[int, list[DyadicTube]] = {}
            for pack in packs:
                cols.setdefault(pack.param.ix, []).append(pack)
            reps = [
                min(packs[pack])
                for col in cols.values()
                for pack in sorted(col, key=lambda pk: pk.param.iy)[::2]
            ]
            packets_after += len(reps)
            rescaled = {rescale_tube(t, q, through=p) for t in reps}
            merged_before += len(reps)
            merged_after += len(rescaled)
            rescaled_fans[rescale_cubes([p], q)[0]] = tuple(sorted(rescaled))
        # common window fan size
        sizes: dict[int, list[DyadicCube]] = {}
        for p2, fan in rescaled_fans.items():
            if fan:
                sizes.setdefault(_count_class(len(fan)), []).append(p2)
        if not sizes:
            raise RefinementError(f"window {q} lost every tube packet")
        j_best = max(sizes, key=lambda j: (len(sizes[j]), j))
        kept2 = sorted(sizes[j_best])
        m_q = min(len(rescaled_fans[p2]) for p2 in kept2)
        fans2 = {p2: _trim_fan(rescaled_fans[p2], m_q) for p2 in kept2}
        point_keep_ratio = min(
            point_keep_ratio, len(kept2) / len(by_q[q])
        )
        c_q = max(
            (check_tube_spread(f, k_pack, s).c_star for f in fans2.values()),
            default=1.0,
        )
        c_window = max(c_window, c_q)
        windows[q] = Configuration(
            delta=Scale(k_pack),
            points=tuple(kept2),
            tubes_of=fans2,
            nice=Niceness(s=s, c=max(c_q, 1.0), m=m_q),
        )
    ledger.append(
        LedgerRow("packet_separation", packets_before, packets_after, 2.0)
    )
    ledger.append(LedgerRow("rescale_merge", merged_before, merged_after, 1.0))

    # clause verdicts at polylog budgets
    logs5 = log_delta**5
    window_ratio = len(survivors) / len(by_q)
    pt_ratios = [
        len(refined[q].points) / len(by_q[q]) for q in survivors
    ]
    fan_ratios = [
        len(fine_tubes_of[p]) / m_max for p in fine_tubes_of
    ]
    clauses = {
        "window_retention": {
            "passed": window_ratio >= 1.0 / logs5,
            "measured": window_ratio,
            "budget": logs5,
        },
        "point_retention": {
            "passed": min(pt_ratios) >= 1.0 / logs5
            and point_keep_ratio >= 1.0 / logs5,
            "measured": min(min(pt_ratios), point_keep_ratio),
            "budget": logs5,
        },
        "fan_retention": {
            "passed": min(fan_ratios) >= 1.0 / logs5,
            "measured": min(fan_ratios),
            "budget": logs5,
        },
        "coarse_nice": {
            "passed": c_coarse <= logs5 * c1 and coarse_cfg.check_nice()["pass"],
            "measured": c_coarse,
            "budget": logs5 * c1,
        },
        "window_nice": {
            "passed": c_window <= logs5 * c1
            and all(w.check_nice()["pass"] for w in windows.values()),
            "measured": c_window,
            "budget": logs5 * c1,
        },
    }

    all_fine = sorted({t for fan in fine_tubes_of.values() for t in fan})
    coarse_family = cover_tubes(all_fine, kk) if all_fine else ()
    lhs = len(cfg.all_tubes) / m_max
    max_window = max(
        (len(w.all_tubes) / w.nice.m for w in windows.values()), default=1.0
    )
    rhs = (len(coarse_family) / m_coarse) * max_window
    budget_used = rhs / lhs if lhs else math.inf
    product = {
        "lhs": lhs,
        "rhs": rhs,
        "budget_used": budget_used,
        "budget": log_delta**4,
        "passed": budget_used <= log_delta**4,
    }

    return TwoScaleRefinement(
        coarse_cfg=coarse_cfg,
        windows=windows,
        fine_points=tuple(sorted(fine_points)),
        fine_tubes_of=fine_tubes_of,
        clauses=clauses,
        product=product,
        ledger=tuple(ledger),
    )


# ---------------------------------------------------------------------------
# the multiscale lower bound
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoundParams:
    """Constants entering the classified-ladder tube lower bound.

    eps_n: loss exponent at normal scales; eta: gain exponent per good
    scale ratio; lam: fans are (delta, s, delta**-lam)-spread (None means
    measure it from the configuration); c_log: exponent of the log(1/delta)
    forgiveness factor; c_prime: multiplies lam in the delta**(c_prime*lam)
    loss; eps_g: the good-scale epsilon the eta gain was derived at
    (recorded for the report, not used in the formula).
    """

    eps_n: float
    eta: float = 0.0
    lam: float | None = 0.0
    c_log: float = 4.0
    c_prime: float = 1.0
    eps_g: float = 0.0


def multiscale_bound(sd: ScaleDecomposition, m_fan: int, params: BoundParams) -> float:
    """Tube-count floor for a classified ladder.

    log(1/delta)**-c_log * M * delta**(c_prime*lam) * delta**(-s+eps_n)
    * prod over good levels of (Delta_{j-1}/Delta_j)**eta
    * prod over bad levels of (Delta_j/Delta_{j-1}).

    Enlarging the good class never decreases the value (eta >= 0) and
    enlarging the bad class never increases it.
    """
    if params.lam is None:
        raise ValueError("params.lam must be a number here; measure it first")
    bad_classes = {lv.cls for lv in sd.levels} - {NORMAL, GOOD, BAD}
    if bad_classes:
        raise ValueError(
            f"ladder has unclassified levels {sorted(bad_classes)}; call classify()"
        )
    kd = sd.delta_k
    log2_val = (
        -params.c_log * math.log2(max(kd, 2.0))
        + math.log2(m_fan)
        - params.c_prime * params.lam * kd
        + (sd.s - params.eps_n) * kd
    )
    for lv in sd.levels:
        if lv.cls == GOOD:
            log2_val += params.eta * sd.ratio_log2(lv)
        elif lv.cls == BAD:
            log2_val -= sd.ratio_log2(lv)
    return 2.0**log2_val


def check_multiscale_bound(
    cfg: Configuration, sd: ScaleDecomposition, params: BoundParams
) -> BoundReport:
    """Compare the configuration's tube count against the ladder floor.

    params.lam = None measures the worst fan spread constant and converts
    it to the exponent lam = log2(C) / log2(1/delta).
    """
    if cfg.nice is None:
        raise ValueError("configuration carries no niceness metadata")
    if sd.delta_k != cfg.delta.k:
        raise ValueError(
            f"ladder bottoms out at 2**-{sd.delta_k}, configuration at 2**-{cfg.delta.k}"
        )
    lam = params.lam
    if lam is None:
        worst = _worst_fan_spread(cfg.tubes_of, cfg.delta.k, sd.s)
        lam = max(0.0, math.log2(max(worst, 1.0))) / cfg.delta.k
        params = replace(params, lam=lam)
    floor = multiscale_bound(sd, cfg.nice.m, params)
    lhs = float(len(cfg.all_tubes))
    return BoundReport(
        name="multiscale_tube_floor",
        lhs=lhs,
        terms={"floor": floor},
        budget=1.0,
        direction="lower",
        extras={
            "lam": lam,
            "classes": "".join(lv.cls for lv in sd.levels),
            "measured_exponent": math.log2(lhs) / cfg.delta.k if lhs else 0.0,
        },
    )


# ---------------------------------------------------------------------------
# the coarse/fine tube-count dichotomy
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DichotomyReport:
    """Tube counts at delta and sqrt(delta) against their two thresholds.

    Exponents are measured in delta units (log2 count / log2(1/delta)), so
    fine_branch compares fine_exponent against 2s + eps and coarse_branch
    compares coarse_exponent against s + eps.
    """

    delta_k: int
    s: float
    eps: float
    n_fine: int
    n_coarse: int

    @property
    def fine_exponent(self) -> float:
        return math.log2(self.n_fine) / self.delta_k

    @property
    def coarse_exponent(self) -> float:
        return math.log2(self.n_coarse) / self.delta_k

    @property
    def fine_branch(self) -> bool:
        return self.n_fine >= 2.0 ** (self.delta_k * (2 * self.s + self.eps)) - 0.5

    @property
    def coarse_branch(self) -> bool:
        return self.n_coarse >= 2.0 ** (self.delta_k * (self.s + self.eps)) - 0.5

    @property
    def some_branch(self) -> bool:
        return self.fine_branch or self.coarse_branch


def dichotomy_check(cfg: Configuration, eps: float = 0.0) -> DichotomyReport:
    """Which of the two tube-count regimes a regular configuration is in.

    Requires regularity certification metadata (nice with t and kappa) and
    an even scale exponent so that sqrt(delta) is dyadic.  The coarse count
    can never exceed the fine count; this is asserted on every run.
    """
    nice = cfg.nice
    if nice is None or nice.t is None or nice.kappa is None:
        raise ValueError("configuration lacks regularity certification metadata")
    k = cfg.delta.k
    if k % 2:
        raise ValueError("scale exponent must be even for a dyadic sqrt(delta)")
    tubes = cfg.all_tubes
    n_fine = len(tubes)
    n_coarse = len(cover_tubes(tubes, k // 2))
    if n_coarse > n_fine:
        raise RuntimeError("coarse cover exceeded fine family; cover is broken")
    return DichotomyReport(
        delta_k=k, s=nice.s, eps=eps, n_fine=n_fine, n_coarse=n_coarse
    )


# ---------------------------------------------------------------------------
# product-structure extraction inside one coarse tube
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProductExtraction:
    """Outcome of the heavy-window / coarse-tube extraction pipeline.

    On success, config is a configuration at scale sqrt(delta) whose points
    sit along the chosen tube's frame: ix is the position along the tube,
    iy the transversal cell after blowing the tube's width up to 1.  Fans
    are the original fine tubes inside the chosen tube, rescaled by the
    tube-frame homothety (exact integer arithmetic on parameter cubes).
    dual_points are the fan parameter cubes; thetas the directions, one per
    occupied position along the tube, under which a fiber's parameters
    project onto few cells.
    """

    ok: bool
    stage_failed: str | None
    heavy_windows: tuple[DyadicCube, ...]
    chosen_tube: DyadicTube | None
    config: Configuration | None
    dual_points: tuple[DyadicCube, ...]
    thetas: tuple[Direction, ...]
    properties: dict
    ledger: tuple[LedgerRow, ...]


def _swap_cube(c: DyadicCube) -> DyadicCube:
    return DyadicCube(c.k, c.iy, c.ix)


def _swap_tube(t: DyadicTube) -> DyadicTube:
    return DyadicTube(t.param, "standard" if t.orientation == "alternate" else "alternate")


def extract_product_structure(
    cfg: Configuration,
    eps: float = 0.01,
    budget: float = 16.0,
    typical_fraction: float = 0.5,
) -> ProductExtraction:
    """Find product structure along one coarse tube of a regular configuration.

    Pipeline, each stage a ledger row: (1) keep windows at scale
    sqrt(delta) holding at least delta**(-t/2 + 5 eps) points; (2) per
    window, prune directions whose projected window is not
    (sqrt(delta), s, budget)-spread; (3) choose a coarse tube meeting at
    least typical_fraction of the average number of surviving heavy
    windows, whose window positions along it are (sqrt(delta), t-s,
    budget)-spread; (4) map points and fine tubes into the tube frame
    (position along the tube stays, the transversal offset is blown up by
    the tube width) and emit the resulting configuration; (5) read off the
    dual pair: fan parameter cubes as points, one direction per occupied
    position, with projected coverings measured.

    Failure at any stage returns ok=False with the stage name instead of
    raising; partial results collected so far stay in the report.
    """
    nice = cfg.nice
    if nice is None or nice.t is None:
        raise ValueError("configuration lacks dimension metadata (nice.t)")
    k = cfg.delta.k
    if k % 2:
        raise ValueError("scale exponent must be even for a dyadic sqrt(delta)")
    kk = k // 2
    s, t = nice.s, nice.t
    ledger: list[LedgerRow] = []

    def fail(stage: str, heavy=(), tube=None) -> ProductExtraction:
        return ProductExtraction(
            ok=False,
            stage_failed=stage,
            heavy_windows=tuple(heavy),
            chosen_tube=tube,
            config=None,
            dual_points=(),
            thetas=(),
            properties={},
            ledger=tuple(ledger),
        )

    # (1) heavy windows
    by_q: dict[DyadicCube, list[DyadicCube]] = {}
    for p in cfg.points:
        by_q.setdefault(p.parent_at(kk), []).append(p)
    heavy_thr = 2.0 ** (k * (t / 2 - 5 * eps))
    heavy = {q: pl for q, pl in by_q.items() if len(pl) >= heavy_thr}
    ledger.append(
        LedgerRow(
            "heavy_windows",
            len(cfg.points),
            sum(len(pl) for pl in heavy.values()),
            1.0,
        )
    )
    if not heavy:
        return fail("heavy_windows")

    # (2) direction pruning per heavy window
    kept_dirs: dict[DyadicCube, set[tuple[str, int]]] = {}
    dirs_before = dirs_after = 0
    sigma_cert = 0.0
    for q, pl in sorted(heavy.items()):
        fan_union = sorted({t2 for p in pl for t2 in cfg.tubes_of[p]})
        ds = direction_set(q, fan_union, s, budget)
        sigma_cert = max(sigma_cert, ds.report.c_star)
        dirs: list[tuple[tuple[str, int], Direction]] = []
        for ia in ds.standard:
            sigma = Fraction(-(2 * ia + 1), 1 << (kk + 1))
            dirs.append((("standard", ia), Direction("v", sigma)))
        for ia in ds.alternate:
            sigma = Fraction(-(2 * ia + 1), 1 << (kk + 1))
            dirs.append((("alternate", ia), Direction("h", sigma)))
        pr = prune_bad_directions(rescale_cubes(pl, q), [d for _, d in dirs], s, budget)
        kept_set = set(pr.kept)
        kept_dirs[q] = {key for key, d in dirs if d in kept_set}
        dirs_before += len(dirs)
        dirs_after += len(kept_dirs[q])
    ledger.append(LedgerRow("direction_prune", dirs_before, dirs_after, budget))
    heavy = {q: pl for q, pl in heavy.items() if kept_dirs[q]}
    if not heavy:
        return fail("direction_prune")

    # (3) coarse-tube selection by surviving-window count and along-spread
    tube_windows: dict[DyadicTube, set[DyadicCube]] = {}
    for q, pl in heavy.items():
        for p in pl:
            for t2 in cfg.tubes_of[p]:
                par = t2.parent_at(kk)
                if (par.orientation, par.param.ix) in kept_dirs[q]:
                    tube_windows.setdefault(par, set()).add(q)
    if not tube_windows:
        return fail("direction_prune", heavy=sorted(heavy))
    avg = sum(len(v) for v in tube_windows.values()) / len(tube_windows)
    need = max(2.0, typical_fraction * avg)
    chosen = None
    for par in sorted(tube_windows, key=lambda tt: (-len(tube_windows[tt]), tt)):
        if len(tube_windows[par]) < need:
            break
        qs = tube_windows[par]
        along = sorted(
            {(q.ix if par.orientation == "standard" else q.iy) for q in qs}
        )
        rep = check_spread([DyadicCube(kk, i, 0) for i in along], kk, t - s, c=budget)
        if rep.passed and len(along) >= 2:
            chosen = par
            break
    ledger.append(
        LedgerRow(
            "tube_selection",
            len(tube_windows),
            1 if chosen is not None else 0,
            max(1.0, avg / need),
        )
    )
    if chosen is None:
        return fail("no_surviving_tube", heavy=sorted(heavy))

    # (4) tube-frame configuration: exact affine map onto the unit square
    swap = chosen.orientation == "alternate"
    t_bar = _swap_tube(chosen) if swap else chosen
    a0, b0 = t_bar.param.x0, t_bar.param.y0
    hom = Homothety(t_bar.param)
    cells: dict[DyadicCube, set[DyadicTube]] = {}
    for q in sorted(tube_windows[chosen]):
        for p in heavy[q]:
            sel = [t2 for t2 in cfg.tubes_of[p] if t2.parent_at(kk) == chosen]
            if not sel:
                continue
            pc = _swap_cube(p) if swap else p
            xc = Fraction(2 * pc.ix + 1, 1 << (k + 1))
            yc = Fraction(2 * pc.iy + 1, 1 << (k + 1))
            w_cell = math.floor((yc - a0 * xc - b0) * (1 << k))
            cell = DyadicCube(kk, pc.ix >> kk, w_cell)
            mapped = {
                DyadicTube(hom.apply_cube(t2.param), "standard") for t2 in sel
            }
            cells.setdefault(cell, set()).update(mapped)
    pairs_before = sum(len(v) for v in cells.values())
    fans: dict[DyadicCube, tuple[DyadicTube, ...]] = {}
    for cell, ts in cells.items():
        ok_ts = tuple(sorted(t2 for t2 in ts if tube_meets_cube(t2, cell)))
        if ok_ts:
            fans[cell] = ok_ts
    pairs_after = sum(len(v) for v in fans.values())
    ledger.append(LedgerRow("frame_snap", pairs_before, pairs_after, 1.0))
    if not fans:
        return fail("frame_snap", heavy=sorted(heavy), tube=chosen)
    out_cfg = Configuration(
        delta=Scale(kk), points=tuple(sorted(fans)), tubes_of=fans, nice=None
    )

    # (5) measured product properties and the dual pair
    along_set = sorted({c.ix for c in fans})
    axis_rep = check_spread(
        [DyadicCube(kk, i, 0) for i in along_set], kk, t - s, c=budget
    )
    fiber_worst = 0.0
    for i in along_set:
        fiber = [DyadicCube(kk, c.iy, 0) for c in fans if c.ix == i]
        fiber_worst = max(fiber_worst, check_spread(fiber, kk, s).c_star)
    fan_sizes = sorted(len(f) for f in fans.values())
    fan_target = 2.0 ** (kk * s)
    all_out = out_cfg.all_tubes
    dual_points = tuple(sorted({t2.param for t2 in all_out}))
    thetas = []
    proj_max = 0
    rho = kk
    for i in along_set:
        theta = Direction("v", Fraction(2 * i + 1, 1 << (kk + 1)))
        thetas.append(theta)
        fiber_params = sorted(
            {t2.param for c in fans if c.ix == i for t2 in fans[c]}
        )
        proj_max = max(proj_max, projection_covering(fiber_params, theta, rho))
    theta_cells = [DyadicCube(kk, i, 0) for i in along_set]
    properties = {
        "sigma_cert_c": sigma_cert,
        "axis_spread_c": axis_rep.c_star,
        "fiber_spread_c": fiber_worst,
        "fan_min_ratio": fan_sizes[0] / fan_target,
        "fan_max_ratio": fan_sizes[-1] / fan_target,
        "union_ratio": len(all_out) / 2.0 ** (k * s),
        "dual_count_ratio": len(dual_points) / 2.0 ** (k * s),
        "theta_spread_c_ts": check_spread(theta_cells, kk, t - s).c_star,
        "theta_spread_c_s": check_spread(theta_cells, kk, s).c_star,
        "dual_projection_max_ratio": proj_max / fan_target,
        "rows": len(along_set),
    }
    return ProductExtraction(
        ok=True,
        stage_failed=None,
        heavy_windows=tuple(sorted(heavy)),
        chosen_tube=chosen,
        config=out_cfg,
        dual_points=dual_points,
        thetas=tuple(thetas),
        properties=properties,
        ledger=tuple(ledger),
    )
