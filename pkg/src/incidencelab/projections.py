"""Orthogonal-projection surrogates on dyadic data.

A direction is represented by an exact dyadic/rational slope sigma together
with one of two functional families:

* family ``"h"``: pi(x, y) = x + sigma * y   (|sigma| <= 1),
* family ``"v"``: pi(x, y) = sigma * x + y   (|sigma| < 1).

Between them the families cover all lines through the origin; the value
pi(x, y) is an affine reparametrization of the true orthogonal projection
onto the direction's normal, with distortion bounded by sqrt(2).  Every
bound stated here absorbs that constant.

Covering numbers of projected cube families use exact interval arithmetic
on cube corners, so results are reproducible across platforms.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Iterator, Sequence

import numpy as np

from .dyadic import DyadicCube, DyadicTube, Scale, ScaleLike, as_k, tube_meets_cube
from .spread import SpreadReport, check_spread

_FAMILIES = ("h", "v")


@dataclass(frozen=True, order=True)
class Direction:
    """Exact direction surrogate: a functional family plus rational slope."""

    family: str
    sigma: Fraction

    def __post_init__(self) -> None:
        if self.family not in _FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        s = Fraction(self.sigma)
        object.__setattr__(self, "sigma", s)
        if self.family == "h" and not -1 <= s <= 1:
            raise ValueError("family 'h' needs |sigma| <= 1")
        if self.family == "v" and not -1 < s < 1:
            raise ValueError("family 'v' needs |sigma| < 1")

    def value(self, x: Fraction, y: Fraction) -> Fraction:
        if self.family == "h":
            return x + self.sigma * y
        return self.sigma * x + y

    def line_slope_index(self, k: int) -> int:
        """Dyadic index (scale k) of the slope of level lines of ``value``.

        Level lines of x + sigma*y are x = -sigma*y + b (alternate
        orientation); level lines of sigma*x + y are y = -sigma*x + b
        (standard orientation).
        """
        return math.floor(-self.sigma * (1 << k))

    def __str__(self) -> str:  # pragma: no cover - debug convenience
        return f"{self.family}:{self.sigma}"


@dataclass(frozen=True)
class DirectionGrid:
    """All directions with dyadic slope im/2**g, deduplicated across families.

    Family "h" takes im in [-2**g, 2**g], family "v" the interior range,
    for 2**(g+2) directions total -- a 2**-g separated net of the full
    circle of directions.
    """

    g: int

    def __post_init__(self) -> None:
        if self.g < 0:
            raise ValueError("grid resolution exponent must be >= 0")

    @property
    def resolution(self) -> Fraction:
        return Fraction(1, 1 << self.g)

    def __len__(self) -> int:
        return (2 * (1 << self.g) + 1) + (2 * (1 << self.g) - 1)

    def __iter__(self) -> Iterator[Direction]:
        n = 1 << self.g
        for im in range(-n, n + 1):
            yield Direction("h", Fraction(im, n))
        for im in range(-n + 1, n):
            yield Direction("v", Fraction(im, n))


def _image_interval(cube: DyadicCube, direction: Direction) -> tuple[Fraction, Fraction]:
    xs = (cube.x0, cube.x1)
    ys = (cube.y0, cube.y1)
    vals = [direction.value(x, y) for x in xs for y in ys]
    return min(vals), max(vals)


def projection_covering(
    cubes: Iterable[DyadicCube],
    direction: Direction,
    rho: ScaleLike,
) -> int:
    """Number of rho-intervals met by the projected (closed) cubes.

    The image of each cube is the closed interval spanned by its corner
    values; an interval [lo, hi] meets the rho-cells floor(lo/rho) ..
    ceil(hi/rho)-1 (at least one cell even when lo == hi).
    """
    r = Scale(as_k(rho)).delta
    spans: list[tuple[int, int]] = []
    for c in cubes:
        lo, hi = _image_interval(c, direction)
        a = math.floor(lo / r)
        b = max(math.ceil(hi / r) - 1, a)
        spans.append((a, b))
    if not spans:
        raise ValueError("empty cube family")
    spans.sort()
    total = 0
    cur_a, cur_b = spans[0]
    for a, b in spans[1:]:
        if a > cur_b + 1:
            total += cur_b - cur_a + 1
            cur_a, cur_b = a, b
        else:
            cur_b = max(cur_b, b)
    total += cur_b - cur_a + 1
    return total


# ---------------------------------------------------------------------------
# vectorized per-direction counts on a dyadic direction grid
# ---------------------------------------------------------------------------


def _survey_counts(
    cubes: Sequence[DyadicCube],
    grid: DirectionGrid,
) -> list[tuple[Direction, int]]:
    """Exact covering count at rho = delta for every grid direction.

    Integer arithmetic throughout: with U = 2**(k+g), the corner images of a
    cube under sigma = im/2**g scale to integers, and the delta-cell index of
    a scaled value v is v >> g.  Each cube meets at most 3 consecutive cells
    (image width <= 2 * delta), so counts reduce to a unique() over <= 3|P|
    indices per direction.
    """
    cl = list(cubes)
    k = cl[0].k
    if any(c.k != k for c in cl):
        raise ValueError("cube family mixes scales")
    g = grid.g
    if k + g > 60:
        raise ValueError("direction grid too fine for exact int64 arithmetic")
    ix = np.fromiter((c.ix for c in cl), dtype=np.int64, count=len(cl))
    iy = np.fromiter((c.iy for c in cl), dtype=np.int64, count=len(cl))
    out: list[tuple[Direction, int]] = []
    for d in grid:
        im = int(d.sigma * (1 << g))
        if d.family == "h":
            u, v = ix, iy
        else:
            u, v = iy, ix
        # image of [u, u+1) x [v, v+1), scaled by 2**(k+g): u*2**g + im*v + corners
        lo = (u << g) + np.minimum(im * v, im * (v + 1))
        hi = ((u + 1) << g) + np.maximum(im * v, im * (v + 1))
        first = lo >> g
        last = (hi - 1) >> g
        span = last - first
        cells = [first, (first + 1)[span >= 1], (first + 2)[span >= 2]]
        out.append((d, int(np.unique(np.concatenate(cells)).size)))
    return out


@dataclass(frozen=True)
class ProjectionSurvey:
    """Per-direction covering counts and the induced exceptional set."""

    delta_k: int
    s: float
    threshold: float
    grid_g: int
    counts: tuple[tuple[Direction, int], ...]
    exceptional: tuple[Direction, ...]

    @property
    def measured_exponent(self) -> float:
        """log2 |E| / g: the box dimension of E at the grid's resolution."""
        return math.log2(max(len(self.exceptional), 1)) / self.grid_g

    def bounds(self, t: float | None = None) -> dict[str, float]:
        """Upper bounds for the exceptional exponent under standard regimes."""
        out = {"kaufman": self.s}
        if t is not None:
            out["oberlin"] = t / 2
            out["conjecture"] = max(2 * self.s - t, 0.0)
        return out

    def to_json(self) -> dict:
        return {
            "delta_k": self.delta_k,
            "s": self.s,
            "grid_g": self.grid_g,
            "n_directions": len(self.counts),
            "n_exceptional": len(self.exceptional),
            "measured_exponent": self.measured_exponent,
        }


def exceptional_survey(
    cubes: Sequence[DyadicCube],
    s: float,
    delta: ScaleLike | None = None,
    grid: DirectionGrid | None = None,
) -> ProjectionSurvey:
    """Measure every grid direction and collect those with small image.

    A direction e is exceptional when its delta-covering count falls below
    delta**-s.  The survey grid defaults to resolution delta (one direction
    per delta of slope).
    """
    cl = list(cubes)
    if not cl:
        raise ValueError("empty cube family")
    k = cl[0].k if delta is None else as_k(delta)
    if not 0 < s <= 1:
        raise ValueError("need 0 < s <= 1")
    if grid is None:
        grid = DirectionGrid(k)
    counts = _survey_counts(cl, grid)
    threshold = 2.0 ** (s * k)
    exceptional = tuple(d for d, n in counts if n < threshold)
    return ProjectionSurvey(
        delta_k=k,
        s=s,
        threshold=threshold,
        grid_g=grid.g,
        counts=tuple(counts),
        exceptional=exceptional,
    )


# ---------------------------------------------------------------------------
# tube direction sets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DirectionSet:
    """Slope indices at the coarsened scale for tubes meeting a cube."""

    k2: int
    standard: tuple[int, ...]
    alternate: tuple[int, ...]
    report: SpreadReport

    def __len__(self) -> int:
        return len(self.standard) + len(self.alternate)


def direction_set(
    q: DyadicCube,
    tubes: Iterable[DyadicTube],
    s: float,
    budget: float = 8.0,
) -> DirectionSet:
    """Directions (coarse slope cells) of the given tubes, with a spread cert.

    Tube slopes are coarsened to scale 2**-(k//2) -- the natural direction
    resolution for delta-tubes viewed from a delta**(1/2)-cube q.  The cert
    checks the coarsened slope set is (delta**(1/2), s, budget)-spread.
    """
    tl = [t for t in tubes if tube_meets_cube(t, q)]
    if not tl:
        raise ValueError("no tube meets q")
    k = tl[0].k
    if any(t.k != k for t in tl):
        raise ValueError("tube family mixes scales")
    k2 = k // 2
    std = sorted({t.param.ix >> (k - k2) for t in tl if t.orientation == "standard"})
    alt = sorted({t.param.ix >> (k - k2) for t in tl if t.orientation == "alternate"})
    as_cubes = [DyadicCube(k2, ia, 0) for ia in std] + [
        DyadicCube(k2, ia + (2 << k2), 0) for ia in alt  # disjoint offset per family
    ]
    rep = check_spread(as_cubes, k2, s, c=budget)
    return DirectionSet(k2=k2, standard=tuple(std), alternate=tuple(alt), report=rep)


@dataclass(frozen=True)
class PruneReport:
    kept: tuple[Direction, ...]
    dropped: tuple[Direction, ...]
    c_star_by_direction: tuple[tuple[Direction, float], ...]

    @property
    def survival(self) -> float:
        n = len(self.kept) + len(self.dropped)
        return len(self.kept) / n if n else 0.0


def prune_bad_directions(
    cubes: Sequence[DyadicCube],
    directions: Iterable[Direction],
    s: float,
    budget: float = 8.0,
) -> PruneReport:
    """Keep directions whose projected cube family is (delta, s, budget)-spread.

    The projection of P in direction e is snapped to the delta-grid (as 1d
    dyadic cells) and handed to check_spread.  For P itself a (delta, s)-set,
    a Frostman/energy argument makes all but a bounded fraction of a spread
    direction set survive; the report records the survival fraction honestly
    rather than asserting it.
    """
    cl = list(cubes)
    if not cl:
        raise ValueError("empty cube family")
    k = cl[0].k
    kept: list[Direction] = []
    dropped: list[Direction] = []
    stars: list[tuple[Direction, float]] = []
    r = Fraction(1, 1 << k)
    for d in directions:
        cells = sorted({math.floor(d.value(c.center[0], c.center[1]) / r) for c in cl})
        rep = check_spread([DyadicCube(k, i, 0) for i in cells], k, s, c=budget)
        stars.append((d, rep.c_star))
        (kept if rep.passed else dropped).append(d)
    return PruneReport(kept=tuple(kept), dropped=tuple(dropped), c_star_by_direction=tuple(stars))
