"""Exact dyadic-grid primitives: scales, cubes, tubes, duality, rescaling.

Every predicate in this module is computed in integer (or Fraction)
arithmetic; no floating point enters any geometric decision.  Cubes are
half-open boxes ``[ix*d, (ix+1)*d) x [iy*d, (iy+1)*d)`` with ``d = 2**-k``,
so the cubes of one scale partition the plane.

A tube is the union of lines swept out by a parameter cube.  In the
standard orientation the parameter point ``(a, b)`` names the line
``y = a*x + b``; the alternate orientation uses ``x = a*y + b`` and covers
steep lines.  The membership predicate ``tube_meets_cube`` treats the
parameter box as closed at the attained corner extremes of ``a*x`` and the
target cube as half-open; the convention is fixed once here and everything
downstream (counting, covers, refinement) inherits it.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Literal, Sequence, Union

Orientation = Literal["standard", "alternate"]

STANDARD: Orientation = "standard"
ALTERNATE: Orientation = "alternate"


@dataclass(frozen=True, order=True)
class Scale:
    """A dyadic scale delta = 2**-k, k >= 0."""

    k: int

    def __post_init__(self) -> None:
        if self.k < 0:
            raise ValueError(f"scale exponent must be >= 0, got {self.k}")

    @property
    def delta(self) -> Fraction:
        return Fraction(1, 1 << self.k)

    @property
    def as_float(self) -> float:
        return 2.0 ** (-self.k)

    def sqrt(self) -> "Scale":
        """The scale delta**(1/2); requires an even exponent."""
        if self.k % 2 != 0:
            raise ValueError(f"scale 2**-{self.k} has no dyadic square root")
        return Scale(self.k // 2)

    def __str__(self) -> str:
        return f"2^-{self.k}"


ScaleLike = Union[Scale, int]


def as_k(scale: ScaleLike) -> int:
    """Coerce a Scale or a bare exponent to the integer exponent k."""
    if isinstance(scale, Scale):
        return scale.k
    if isinstance(scale, int) and not isinstance(scale, bool):
        if scale < 0:
            raise ValueError(f"scale exponent must be >= 0, got {scale}")
        return scale
    raise TypeError(f"expected Scale or int exponent, got {scale!r}")


@dataclass(frozen=True, order=True)
class DyadicCube:
    """Half-open dyadic cube [ix*d, (ix+1)*d) x [iy*d, (iy+1)*d), d = 2**-k.

    Indices may be negative; parameter cubes of tubes live in
    [-1, 1) x [-2, 2).
    """

    k: int
    ix: int
    iy: int

    def __post_init__(self) -> None:
        if self.k < 0:
            raise ValueError(f"cube scale exponent must be >= 0, got {self.k}")

    @property
    def scale(self) -> Scale:
        return Scale(self.k)

    @property
    def side(self) -> Fraction:
        return Fraction(1, 1 << self.k)

    @property
    def x0(self) -> Fraction:
        return Fraction(self.ix, 1 << self.k)

    @property
    def x1(self) -> Fraction:
        return Fraction(self.ix + 1, 1 << self.k)

    @property
    def y0(self) -> Fraction:
        return Fraction(self.iy, 1 << self.k)

    @property
    def y1(self) -> Fraction:
        return Fraction(self.iy + 1, 1 << self.k)

    @property
    def center(self) -> tuple[Fraction, Fraction]:
        s = Fraction(1, 1 << (self.k + 1))
        return (self.x0 + s, self.y0 + s)

    def contains_point(self, x: Fraction, y: Fraction) -> bool:
        return self.x0 <= x < self.x1 and self.y0 <= y < self.y1

    def parent_at(self, scale: ScaleLike) -> "DyadicCube":
        """The unique coarser cube at the given scale containing this one."""
        kk = as_k(scale)
        if kk > self.k:
            raise ValueError(
                f"parent scale 2^-{kk} is finer than cube scale 2^-{self.k}"
            )
        shift = self.k - kk
        return DyadicCube(kk, self.ix >> shift, self.iy >> shift)

    def children(self) -> tuple["DyadicCube", ...]:
        k1 = self.k + 1
        bx, by = self.ix << 1, self.iy << 1
        return tuple(
            DyadicCube(k1, bx + dx, by + dy) for dx in (0, 1) for dy in (0, 1)
        )

    def contains_cube(self, other: "DyadicCube") -> bool:
        return other.k >= self.k and other.parent_at(self.k) == self


def cube_containing(x: Fraction, y: Fraction, scale: ScaleLike) -> DyadicCube:
    """The unique cube of the grid at ``scale`` containing the point."""
    k = as_k(scale)
    fx = Fraction(x) * (1 << k)
    fy = Fraction(y) * (1 << k)
    return DyadicCube(k, fx.numerator // fx.denominator, fy.numerator // fy.denominator)


UNIT_SQUARE = DyadicCube(0, 0, 0)


@dataclass(frozen=True, order=True)
class DyadicTube:
    """Union of the lines named by a dyadic parameter cube.

    standard:  T(q) = { (x, y) : y = a*x + b for some (a, b) in q }
    alternate: T(q) = { (x, y) : x = a*y + b for some (a, b) in q }

    The parameter cube's ix indexes the slope, iy the intercept.
    """

    param: DyadicCube
    orientation: Orientation = STANDARD

    @property
    def k(self) -> int:
        return self.param.k

    @property
    def scale(self) -> Scale:
        return self.param.scale

    @property
    def slope0(self) -> Fraction:
        return self.param.x0

    @property
    def slope1(self) -> Fraction:
        return self.param.x1

    @property
    def intercept0(self) -> Fraction:
        return self.param.y0

    @property
    def intercept1(self) -> Fraction:
        return self.param.y1

    def parent_at(self, scale: ScaleLike) -> "DyadicTube":
        return DyadicTube(self.param.parent_at(scale), self.orientation)


def tube_meets_cube(tube: DyadicTube, cube: DyadicCube) -> bool:
    """Exact membership predicate: does T(q) intersect the cube?

    Over the closed parameter box and the cube's closed x-range, the tube's
    section at each x is the interval

        [b0 + min(a*x), b1 + max(a*x)]   over a in {a0, a1},

    whose envelope extremes over x occur at cube corners.  The tube meets
    the half-open [y0, y1) iff the envelope minimum is < y1 and the
    envelope supremum (b1 excluded) is > y0.  Both comparisons are done in
    integers after clearing the two scale denominators.
    """
    kt = tube.param.k
    ia, ib = tube.param.ix, tube.param.iy
    kp = cube.k
    if tube.orientation == STANDARD:
        px, py = cube.ix, cube.iy
    else:
        px, py = cube.iy, cube.ix
    p0 = ia * px
    p1 = ia * (px + 1)
    p2 = (ia + 1) * px
    p3 = (ia + 1) * (px + 1)
    lo = min(p0, p1, p2, p3)
    hi = max(p0, p1, p2, p3)
    # b0 + lo*2^-kt-kp < y1  and  b1 + hi*2^-kt-kp > y0, scaled by 2^(kt+kp)
    return (
        (ib << kp) + lo < (py + 1) << kt
        and ((ib + 1) << kp) + hi > py << kt
    )


def tube_meets_cube_slow(tube: DyadicTube, cube: DyadicCube) -> bool:
    """Fraction-arithmetic restatement of the predicate, kept as a cross-check."""
    q = tube.param
    if tube.orientation == STANDARD:
        x0, x1, y0, y1 = cube.x0, cube.x1, cube.y0, cube.y1
    else:
        x0, x1, y0, y1 = cube.y0, cube.y1, cube.x0, cube.x1
    corners = [a * x for a in (q.x0, q.x1) for x in (x0, x1)]
    return q.y0 + min(corners) < y1 and q.y1 + max(corners) > y0


def cover_tubes(tubes: Iterable[DyadicTube], scale: ScaleLike) -> tuple[DyadicTube, ...]:
    """Minimal cover of a tube family by tubes at a coarser scale.

    All input tubes must share one scale; the cover is the set of distinct
    parameter-cube parents (taken per orientation).  Sorted for determinism.
    """
    kk = as_k(scale)
    seen: set[DyadicTube] = set()
    k_seen: set[int] = set()
    for t in tubes:
        k_seen.add(t.param.k)
        if len(k_seen) > 1:
            raise ValueError("cover_tubes requires all tubes at one scale")
        seen.add(t.parent_at(kk))
    return tuple(sorted(seen, key=lambda t: (t.orientation, t.param)))


# ---------------------------------------------------------------------------
# point/line duality
# ---------------------------------------------------------------------------

Space = Literal["primal", "param"]


@dataclass(frozen=True)
class Point:
    """An exact point, tagged with the plane it lives in."""

    x: Fraction
    y: Fraction
    space: Space = "primal"


@dataclass(frozen=True)
class Line:
    """An exact non-vertical line.

    In the primal plane a standard-form line is y = slope*x + intercept and
    an alternate-form line is x = slope*y + intercept.  In parameter space
    lines are always written b = slope*a + intercept.
    """

    slope: Fraction
    intercept: Fraction
    space: Space = "primal"
    form: Orientation = STANDARD


GeomObject = Union[Point, Line]


def incident(point: Point, line: Line) -> bool:
    """Exact point-on-line test; both objects must live in the same plane."""
    if point.space != line.space:
        raise ValueError("incidence requires objects in the same plane")
    if line.space == "primal" and line.form == ALTERNATE:
        return point.x == line.slope * point.y + line.intercept
    return point.y == line.slope * point.x + line.intercept


def dualize(obj: GeomObject, mode: Orientation = STANDARD) -> GeomObject:
    """Swap a point or line with its dual in the other plane.

    standard mode:  parameter point (a, b)  <->  primal line y = a*x + b,
                    primal point (x, y)     <->  parameter line b = -x*a + y.
    alternate mode: parameter point (a, b)  <->  primal line x = a*y + b,
                    primal point (x, y)     <->  parameter line b = -y*a + x.

    Applying dualize twice (same mode) is the identity, and incidences are
    preserved bit-for-bit.
    """
    if isinstance(obj, Point):
        if obj.space == "param":
            return Line(obj.x, obj.y, space="primal", form=mode)
        if mode == STANDARD:
            return Line(-obj.x, obj.y, space="param")
        return Line(-obj.y, obj.x, space="param")
    if isinstance(obj, Line):
        if obj.space == "primal":
            if obj.form != mode:
                raise ValueError(f"{obj.form}-form line cannot dualize in {mode} mode")
            return Point(obj.slope, obj.intercept, space="param")
        if mode == STANDARD:
            return Point(-obj.slope, obj.intercept, space="primal")
        return Point(obj.intercept, -obj.slope, space="primal")
    raise TypeError(f"cannot dualize {obj!r}")


# ---------------------------------------------------------------------------
# rescaling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Homothety:
    """The affine map S_Q blowing a dyadic cube Q up to the unit square.

    S_Q(z) = (z - corner(Q)) / side(Q); the scale factor is 2**Q.k.
    """

    source: DyadicCube

    @property
    def factor(self) -> int:
        return 1 << self.source.k

    def apply_point(self, x: Fraction, y: Fraction) -> tuple[Fraction, Fraction]:
        q = self.source
        return ((x - q.x0) * self.factor, (y - q.y0) * self.factor)

    def invert_point(self, x: Fraction, y: Fraction) -> tuple[Fraction, Fraction]:
        q = self.source
        return (x / self.factor + q.x0, y / self.factor + q.y0)

    def apply_cube(self, cube: DyadicCube) -> DyadicCube:
        """Exact image of a sub-cube of Q; a d-cube maps to a (d/side)-cube."""
        q = self.source
        if cube.k < q.k or cube.parent_at(q.k) != q:
            raise ValueError(f"{cube} is not contained in {q}")
        nk = cube.k - q.k
        return DyadicCube(nk, cube.ix - (q.ix << nk), cube.iy - (q.iy << nk))


def rescale_cubes(cubes: Iterable[DyadicCube], source: DyadicCube) -> tuple[DyadicCube, ...]:
    """Map cubes inside ``source`` to the unit square via S_source."""
    h = Homothety(source)
    return tuple(h.apply_cube(c) for c in cubes)


def tube_witness(tube: DyadicTube, cube: DyadicCube) -> tuple[Fraction, Fraction]:
    """A parameter point (a, b) in the closed box of ``tube`` whose line
    meets the closed ``cube``.  Raises if the tube misses the cube.

    Used by rescaling: the witness line is what actually gets transported.
    """
    if not tube_meets_cube(tube, cube):
        raise ValueError("tube does not meet cube")
    q = tube.param
    a0, a1, b0, b1 = q.x0, q.x1, q.y0, q.y1
    if tube.orientation == STANDARD:
        x0, x1, y0, y1 = cube.x0, cube.x1, cube.y0, cube.y1
    else:
        x0, x1, y0, y1 = cube.y0, cube.y1, cube.x0, cube.x1

    def section(x: Fraction) -> tuple[Fraction, Fraction]:
        lo = b0 + min(a0 * x, a1 * x)
        hi = b1 + max(a0 * x, a1 * x)
        return lo, hi

    candidates = [x0, x1]
    # x where the envelope crosses the cube's y-range, per linear piece
    for a in (a0, a1):
        if a != 0:
            for yy, bb in ((y0, b1), (y1, b0)):
                x = (yy - bb) / a
                if x0 <= x <= x1:
                    candidates.append(x)
    if x0 < 0 < x1:
        candidates.append(Fraction(0))
    for x in candidates:
        lo, hi = section(x)
        ylo, yhi = max(lo, y0), min(hi, y1)
        if ylo > yhi:
            continue
        y = (ylo + yhi) / 2
        # solve a*x + b = y with (a, b) in the closed parameter box
        for a in (a0, a1):
            b = y - a * x
            if b0 <= b <= b1:
                return (a, b)
        if x != 0:
            for b in (b0, b1):
                a = (y - b) / x
                if a0 <= a <= a1:
                    return (a, b)
    raise AssertionError("predicate true but no witness found")  # pragma: no cover


def rescale_tube(
    tube: DyadicTube,
    source: DyadicCube,
    through: DyadicCube | None = None,
) -> DyadicTube:
    """Image of a tube under S_source, snapped to the dyadic grid.

    A witness line of the tube (through ``through`` when given, else through
    ``source``) is transported exactly: slope is unchanged, the intercept
    becomes (a*qx + b - qy) / side(Q).  The resulting parameter point is
    snapped to its dyadic cube at scale 2**-(tube.k - Q.k).  When ``through``
    is given the snapped tube is nudged among intercept neighbours until it
    meets the rescaled cube, so declared incidences survive rescaling.
    """
    q = source
    if tube.k < q.k:
        raise ValueError("tube is coarser than the rescaling cube")
    nk = tube.k - q.k
    anchor = through if through is not None else q
    a, b = tube_witness(tube, anchor)
    if tube.orientation == STANDARD:
        qx, qy = q.x0, q.y0
    else:
        qx, qy = q.y0, q.x0
    b_new = (a * qx + b - qy) * (1 << q.k)
    fa = a * (1 << nk)
    fb = b_new * (1 << nk)
    ia = fa.numerator // fa.denominator
    ib = fb.numerator // fb.denominator
    snapped = DyadicTube(DyadicCube(nk, ia, ib), tube.orientation)
    if through is None:
        return snapped
    target = Homothety(q).apply_cube(through)
    for delta_b in (0, -1, 1, -2, 2):
        t = DyadicTube(DyadicCube(nk, ia, ib + delta_b), tube.orientation)
        if tube_meets_cube(t, target):
            return t
    return snapped


def rescale(
    items: Sequence[DyadicCube | DyadicTube],
    source: DyadicCube,
) -> tuple[DyadicCube | DyadicTube, ...]:
    """Rescale a mixed batch of cubes and tubes by S_source.

    Cubes must be contained in ``source``; tubes must meet it.
    """
    out: list[DyadicCube | DyadicTube] = []
    for item in items:
        if isinstance(item, DyadicCube):
            out.append(Homothety(source).apply_cube(item))
        elif isinstance(item, DyadicTube):
            out.append(rescale_tube(item, source))
        else:
            raise TypeError(f"cannot rescale {item!r}")
    return tuple(out)
