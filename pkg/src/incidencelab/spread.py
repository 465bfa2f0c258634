"""Spread-condition validation: covering numbers, non-concentration
certificates, regularity, uniformization, and branching functions.

A family P of delta-cubes is an (delta, s, C)-set when every dyadic r-cube
Q with delta <= r <= 1 satisfies |P n Q| <= C * r**s * |P|.  ``check_spread``
computes the least constant C* over all dyadic r and all dyadic r-cubes
(restricting to dyadic test cubes changes C* by a bounded factor, which the
stated constants absorb).
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .dyadic import DyadicCube, DyadicTube, Scale, ScaleLike, as_k

# offset folding (ix, iy) into one int64 key; safe for |index| < 2**30
_FOLD = 1 << 31


def _index_arrays(cubes: Iterable[DyadicCube]) -> tuple[int, np.ndarray, np.ndarray]:
    cl = list(cubes)
    if not cl:
        raise ValueError("empty cube family")
    k = cl[0].k
    if any(c.k != k for c in cl):
        raise ValueError("cube family mixes scales")
    ix = np.fromiter((c.ix for c in cl), dtype=np.int64, count=len(cl))
    iy = np.fromiter((c.iy for c in cl), dtype=np.int64, count=len(cl))
    return k, ix, iy


def _parent_keys(ix: np.ndarray, iy: np.ndarray, shift: int) -> np.ndarray:
    return (ix >> shift) * _FOLD + (iy >> shift)


def covering_number(cubes: Sequence[DyadicCube], rho: ScaleLike) -> int:
    """Number of dyadic rho-cubes needed to cover the family."""
    j = as_k(rho)
    k, ix, iy = _index_arrays(cubes)
    if j > k:
        raise ValueError(f"covering scale 2^-{j} finer than cube scale 2^-{k}")
    return int(np.unique(_parent_keys(ix, iy, k - j)).size)


@dataclass(frozen=True)
class SpreadReport:
    """Result of a spread check.

    c_star is the least constant making the family an (delta, s, C)-set
    over dyadic test cubes; the witness names a maximizing (r, Q) pair.
    """

    delta_k: int
    s: float
    n_cubes: int
    c_star: float
    witness_scale: Scale
    witness_cube: DyadicCube
    witness_count: int
    declared_c: float | None = None

    @property
    def passed(self) -> bool:
        if self.declared_c is None:
            return True
        return self.c_star <= self.declared_c

    def is_set(self, c: float) -> bool:
        return self.c_star <= c

    def to_json(self) -> dict:
        return {
            "c_star": self.c_star,
            "witness_scale": self.witness_scale.k,
            "witness_cube": [self.witness_cube.k, self.witness_cube.ix, self.witness_cube.iy],
            "pass": self.passed,
        }


def check_spread(
    cubes: Sequence[DyadicCube],
    delta: ScaleLike,
    s: float,
    c: float | None = None,
) -> SpreadReport:
    """Compute the spread constant C* of a delta-cube family at exponent s.

    Enumerates every dyadic level r = 2**-j, j = 0..k, groups the family by
    r-parent, and maximizes count / (r**s * |P|).
    """
    k = as_k(delta)
    kc, ix, iy = _index_arrays(cubes)
    if kc != k:
        raise ValueError(f"family is at scale 2^-{kc}, expected 2^-{k}")
    n = len(cubes)
    best = -1.0
    best_j = 0
    best_key = 0
    best_count = 0
    for j in range(k + 1):
        shift = k - j
        keys = _parent_keys(ix, iy, shift)
        uniq, counts = np.unique(keys, return_counts=True)
        top = int(np.argmax(counts))
        ratio = float(counts[top]) / ((2.0 ** (-j * s)) * n)
        if ratio > best:
            best = ratio
            best_j = j
            best_key = int(uniq[top])
            best_count = int(counts[top])
    wx, wy = divmod(best_key, _FOLD)
    if wy > _FOLD // 2:  # divmod folding of negative iy
        wy -= _FOLD
        wx += 1
    return SpreadReport(
        delta_k=k,
        s=s,
        n_cubes=n,
        c_star=best,
        witness_scale=Scale(best_j),
        witness_cube=DyadicCube(best_j, int(wx), int(wy)),
        witness_count=best_count,
        declared_c=c,
    )


def check_tube_spread(
    tubes: Sequence[DyadicTube],
    delta: ScaleLike,
    s: float,
    c: float | None = None,
) -> SpreadReport:
    """Spread check of a tube family via its parameter cubes."""
    return check_spread([t.param for t in tubes], delta, s, c)


@dataclass(frozen=True)
class RegularReport:
    spread: SpreadReport
    k_star: float
    declared_k: float | None
    coarse_count: int

    @property
    def passed(self) -> bool:
        ok = self.spread.passed
        if self.declared_k is not None:
            ok = ok and self.k_star <= self.declared_k
        return ok


def check_regular(
    cubes: Sequence[DyadicCube],
    delta: ScaleLike,
    s: float,
    c: float | None = None,
    kappa: float | None = None,
) -> RegularReport:
    """(delta, s, C, K)-regularity: spread plus a half-scale cardinality cap.

    Requires an even exponent; the cap is |P|_{delta**(1/2)} <= K * delta**(-s/2).
    """
    k = as_k(delta)
    if k % 2 != 0:
        raise ValueError(f"regularity needs an even scale exponent, got {k}")
    spread = check_spread(cubes, k, s, c)
    coarse = covering_number(cubes, k // 2)
    k_star = coarse / (2.0 ** (k * s / 2.0))
    return RegularReport(spread=spread, k_star=k_star, declared_k=kappa, coarse_count=coarse)


@dataclass(frozen=True)
class BetweenScalesReport:
    per_cube: dict[DyadicCube, SpreadReport]
    per_cube_regular: dict[DyadicCube, RegularReport] | None

    @property
    def passed(self) -> bool:
        ok = all(r.passed for r in self.per_cube.values())
        if self.per_cube_regular is not None:
            ok = ok and all(r.passed for r in self.per_cube_regular.values())
        return ok

    @property
    def worst_c(self) -> float:
        return max(r.c_star for r in self.per_cube.values())


def check_between_scales(
    cubes: Sequence[DyadicCube],
    delta: ScaleLike,
    coarse: ScaleLike,
    s: float,
    c: float | None = None,
    kappa: float | None = None,
) -> BetweenScalesReport:
    """Spread of every rescaled piece S_Q(P n Q), Q over the coarse grid.

    With ``kappa`` given the pieces are also checked for regularity, which
    requires the scale gap k - K to be even.
    """
    k, kk = as_k(delta), as_k(coarse)
    if kk > k:
        raise ValueError("coarse scale finer than the family scale")
    groups: dict[DyadicCube, list[DyadicCube]] = {}
    for cube in cubes:
        groups.setdefault(cube.parent_at(kk), []).append(cube)
    shift = k - kk
    reports: dict[DyadicCube, SpreadReport] = {}
    regular: dict[DyadicCube, RegularReport] | None = {} if kappa is not None else None
    for q in sorted(groups):
        piece = [
            DyadicCube(shift, cc.ix - (q.ix << shift), cc.iy - (q.iy << shift))
            for cc in groups[q]
        ]
        reports[q] = check_spread(piece, shift, s, c)
        if regular is not None:
            regular[q] = check_regular(piece, shift, s, c, kappa)
    return BetweenScalesReport(per_cube=reports, per_cube_regular=regular)


# ---------------------------------------------------------------------------
# uniformization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class UniformizeLevel:
    level: int
    parent_k: int
    child_k: int
    band_exponent: int
    mass_before: int
    mass_after: int


@dataclass(frozen=True)
class UniformizeReport:
    levels: tuple[UniformizeLevel, ...]
    counts: tuple[int, ...]  # exact mode: N_j children kept per parent

    @property
    def mass_ratio(self) -> float:
        if not self.levels:
            return 1.0
        return self.levels[-1].mass_after / self.levels[0].mass_before


def uniformize(
    cubes: Sequence[DyadicCube],
    scales: Sequence[ScaleLike],
    mode: str = "exact",
) -> tuple[tuple[DyadicCube, ...], UniformizeReport]:
    """Dyadic pigeonholing onto a uniform subset.

    ``scales`` lists exponents k_1 < ... < k_n with k_n the family's scale
    (scale 0 is the implicit root).  Working from the finest level upward,
    parents at the previous scale are bucketed by the dyadic band of their
    child count at the current scale, and the band holding the most mass
    (surviving finest-scale cubes) wins; ties prefer the larger band.  In
    ``exact`` mode each surviving parent is then trimmed to exactly
    2**(band-1) children, dropping the lexicographically largest.
    """
    if mode not in ("exact", "banded"):
        raise ValueError(f"unknown mode {mode!r}")
    ks = [as_k(sc) for sc in scales]
    if ks != sorted(ks) or len(set(ks)) != len(ks):
        raise ValueError("scales must be strictly increasing in fineness")
    k = ks[-1]
    survivors = sorted(set(cubes))
    if not survivors:
        raise ValueError("empty cube family")
    if any(cc.k != k for cc in survivors):
        raise ValueError("family scale does not match the finest listed scale")
    levels = [0] + ks
    rows: list[UniformizeLevel] = []
    counts: list[int] = [0] * len(ks)
    for j in range(len(ks), 0, -1):
        parent_k, child_k = levels[j - 1], levels[j]
        by_parent: dict[tuple[int, int], set[tuple[int, int]]] = {}
        mass_of_child: Counter = Counter()
        for cc in survivors:
            ps = cc.k - parent_k
            cs = cc.k - child_k
            p_key = (cc.ix >> ps, cc.iy >> ps)
            c_key = (cc.ix >> cs, cc.iy >> cs)
            by_parent.setdefault(p_key, set()).add(c_key)
            mass_of_child[c_key] += 1
        band_mass: Counter = Counter()
        band_of_parent: dict[tuple[int, int], int] = {}
        for p_key, children in by_parent.items():
            e = len(children).bit_length()
            band_of_parent[p_key] = e
            band_mass[e] += sum(mass_of_child[ck] for ck in children)
        best_e = max(band_mass, key=lambda e: (band_mass[e], e))
        mass_before = len(survivors)
        ps = k - parent_k
        kept_parents = {p for p, e in band_of_parent.items() if e == best_e}
        survivors = [cc for cc in survivors if (cc.ix >> ps, cc.iy >> ps) in kept_parents]
        if mode == "exact":
            n_keep = 1 << (best_e - 1)
            counts[j - 1] = n_keep
            cs = k - child_k
            kept_children: set[tuple[int, int]] = set()
            per_parent: dict[tuple[int, int], list[tuple[int, int]]] = {}
            for cc in survivors:
                p_key = (cc.ix >> ps, cc.iy >> ps)
                per_parent.setdefault(p_key, []).append((cc.ix >> cs, cc.iy >> cs))
            for p_key, kids in per_parent.items():
                for ck in sorted(set(kids))[:n_keep]:
                    kept_children.add(ck)
            survivors = [cc for cc in survivors if (cc.ix >> cs, cc.iy >> cs) in kept_children]
        rows.append(
            UniformizeLevel(
                level=j,
                parent_k=parent_k,
                child_k=child_k,
                band_exponent=best_e,
                mass_before=mass_before,
                mass_after=len(survivors),
            )
        )
    return tuple(survivors), UniformizeReport(levels=tuple(rows), counts=tuple(counts))


def uniform_counts(
    cubes: Sequence[DyadicCube],
    scales: Sequence[ScaleLike],
) -> list[int] | None:
    """If the family is exactly uniform along ``scales``, the child counts
    N_j per level; otherwise None."""
    ks = [0] + [as_k(sc) for sc in scales]
    k = ks[-1]
    out: list[int] = []
    for j in range(1, len(ks)):
        parent_k, child_k = ks[j - 1], ks[j]
        ps, cs = k - parent_k, k - child_k
        children_of: dict[tuple[int, int], set[tuple[int, int]]] = {}
        for cc in cubes:
            children_of.setdefault((cc.ix >> ps, cc.iy >> ps), set()).add(
                (cc.ix >> cs, cc.iy >> cs)
            )
        sizes = {len(v) for v in children_of.values()}
        if len(sizes) != 1:
            return None
        out.append(sizes.pop())
    return out


@dataclass(frozen=True)
class DimensionFit:
    """Least-squares slope of log2 covering number against the scale level."""

    slope: float
    intercept: float
    points: tuple[tuple[int, int], ...]  # (level j, covering number at 2^-j)


def dimension_regression(
    cubes: Sequence[DyadicCube],
    j_min: int,
    j_max: int,
) -> DimensionFit:
    """Box-counting regression over dyadic levels j_min..j_max."""
    if not 0 <= j_min < j_max:
        raise ValueError("need 0 <= j_min < j_max")
    pts = [(j, covering_number(cubes, j)) for j in range(j_min, j_max + 1)]
    xs = np.array([j for j, _ in pts], dtype=float)
    ys = np.log2([n for _, n in pts])
    slope, intercept = np.polyfit(xs, ys, 1)
    return DimensionFit(slope=float(slope), intercept=float(intercept), points=tuple(pts))


# ---------------------------------------------------------------------------
# branching functions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BranchingFunction:
    """Piecewise-linear profile of covering growth along a scale ladder.

    For a ({Delta**j})-uniform family with N_j children per level,
    f(j) = sum_{i<=j} log(N_i) / log(1/Delta), interpolated linearly between
    integer levels.  f(0) = 0, f is nondecreasing and 2-Lipschitz.
    """

    base_k: int  # Delta = 2**-base_k
    counts: tuple[int, ...]

    def __post_init__(self) -> None:
        if self.base_k <= 0:
            raise ValueError("branching base scale must be finer than 1")
        if any(n < 1 for n in self.counts):
            raise ValueError("branching counts must be positive")

    @property
    def m(self) -> int:
        return len(self.counts)

    @property
    def values(self) -> tuple[float, ...]:
        out = [0.0]
        acc = 0.0
        for n in self.counts:
            acc += np.log2(n) / self.base_k
            out.append(acc)
        return tuple(out)

    def __call__(self, x: float) -> float:
        v = self.values
        if not 0 <= x <= self.m:
            raise ValueError(f"argument {x} outside [0, {self.m}]")
        j = min(int(np.floor(x)), self.m - 1)
        return v[j] + (v[j + 1] - v[j]) * (x - j)

    def slope(self, a: float, b: float) -> float:
        """Chord slope s_f(a, b) = (f(b) - f(a)) / (b - a)."""
        if not a < b:
            raise ValueError("need a < b")
        return (self(b) - self(a)) / (b - a)

    def to_csv_rows(self) -> list[tuple[int, int, float]]:
        v = self.values
        return [(j, (self.counts[j - 1] if j else 1), v[j]) for j in range(self.m + 1)]


def branching_function(
    cubes: Sequence[DyadicCube],
    base: ScaleLike,
    m: int,
) -> BranchingFunction:
    """Branching function of a family that is uniform along Delta**1..Delta**m.

    Raises with the offending level when the family is not exactly uniform.
    """
    kk = as_k(base)
    scales = [kk * i for i in range(1, m + 1)]
    cubes = sorted(set(cubes))
    if not cubes:
        raise ValueError("empty cube family")
    if cubes[0].k != scales[-1]:
        raise ValueError(
            f"family at scale 2^-{cubes[0].k}, expected 2^-{scales[-1]}"
        )
    ks = [0] + scales
    k = scales[-1]
    counts: list[int] = []
    for j in range(1, len(ks)):
        ps, cs = k - ks[j - 1], k - ks[j]
        children_of: dict[tuple[int, int], set[tuple[int, int]]] = {}
        for cc in cubes:
            children_of.setdefault((cc.ix >> ps, cc.iy >> ps), set()).add(
                (cc.ix >> cs, cc.iy >> cs)
            )
        sizes = {len(v) for v in children_of.values()}
        if len(sizes) != 1:
            raise ValueError(f"family is not uniform at level {j}: child counts {sorted(sizes)}")
        counts.append(sizes.pop())
    return BranchingFunction(base_k=kk, counts=tuple(counts))
