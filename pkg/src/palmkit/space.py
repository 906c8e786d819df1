"""Homogeneous spaces, simulation windows and their metrics.

Flat spaces (tori, the lattice torus and both cylinders) are periodic boxes, so
every point computation goes through an *embedding* into a box with
per-axis periods.  The discrete level axis of a ``cylinder`` is embedded as a
unit-spaced coordinate, which makes the cylinder metric the l2 combination of
base distance and level difference.

The hyperbolic disk uses the Poincare model with curvature -1 and a free
boundary at hyperbolic radius ``radius``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

__all__ = [
    "EQUALITY_TOL",
    "Point",
    "Space",
    "make_space",
    "parse_space",
    "distance",
    "translate",
    "sample_uniform",
    "hyperbolic_area",
    "Box",
    "parse_box",
    "window_mask",
    "window_volume",
]

#: Points closer than this are considered equal.
EQUALITY_TOL = 1e-9

FLAT_KINDS = ("torus", "lattice", "cylinder", "cylinder_r")
KINDS = FLAT_KINDS + ("hyperbolic",)


def hyperbolic_area(r: float) -> float:
    """Area of a hyperbolic disk of radius ``r`` (curvature -1)."""
    return 2.0 * math.pi * (math.cosh(r) - 1.0)


def _fmt(x: float) -> str:
    x = float(x)
    return str(int(x)) if x.is_integer() else repr(x)


@dataclass(frozen=True)
class Point:
    coords: tuple
    level: Optional[int] = None
    mark: Optional[float] = None


@dataclass(frozen=True)
class Space:
    """A bounded window of a homogeneous space.

    ``sides`` holds the periods of the continuous axes; ``levels`` is the
    number of levels of a ``cylinder``; ``radius`` and ``margin`` are used by
    the hyperbolic disk only (margin is the erosion applied by statistics).
    """

    kind: str
    sides: tuple = ()
    levels: int = 0
    radius: float = 0.0
    margin: float = 0.0
    covol: Optional[float] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown space kind {self.kind!r}")
        if any(not s > 0 for s in self.sides):
            raise ValueError(f"side lengths must be positive, got {self.sides}")
        if self.kind == "hyperbolic":
            if not self.radius > 0:
                raise ValueError("hyperbolic radius must be positive")
            if not 0 <= self.margin < self.radius:
                raise ValueError("hyperbolic margin must satisfy 0 <= margin < radius")
        elif not self.sides:
            raise ValueError(f"{self.kind} needs side lengths")
        if self.kind == "cylinder" and self.levels < 1:
            raise ValueError("cylinder needs a positive level count")
        if self.margin < 0:
            raise ValueError("margin must be nonnegative")

    # -- descriptors ---------------------------------------------------

    @property
    def descriptor(self) -> str:
        if self.kind == "torus":
            return f"torus{self.dim}:{_fmt(self.sides[0])}" if len(set(self.sides)) == 1 else \
                f"torus{self.dim}:" + ",".join(_fmt(s) for s in self.sides)
        if self.kind == "lattice":
            return f"lat2:{_fmt(self.covol)}:{_fmt(self.sides[0])}"
        if self.kind == "cylinder":
            return f"cyl:{_fmt(self.sides[0])}:{self.levels}"
        if self.kind == "cylinder_r":
            return f"cylR:{_fmt(self.sides[0])}:{_fmt(self.sides[1])}"
        return f"hyp:{_fmt(self.radius)}:{_fmt(self.margin)}"

    def __str__(self):
        return self.descriptor

    # -- geometry ------------------------------------------------------

    @property
    def dim(self) -> int:
        """Number of continuous coordinates stored per point."""
        return 2 if self.kind == "hyperbolic" else len(self.sides)

    @property
    def periodic(self) -> bool:
        return self.kind in FLAT_KINDS

    @property
    def has_levels(self) -> bool:
        return self.kind == "cylinder"

    @property
    def box(self) -> np.ndarray:
        """Periods of the embedded coordinates (flat kinds only)."""
        if not self.periodic:
            raise ValueError("hyperbolic disk has no periodic box")
        if self.kind == "cylinder":
            return np.array([self.sides[0], float(self.levels)])
        return np.array(self.sides, dtype=float)

    @property
    def volume(self) -> float:
        if self.kind == "hyperbolic":
            return hyperbolic_area(self.radius)
        if self.kind == "cylinder":
            return float(self.sides[0]) * self.levels
        return float(np.prod(self.sides))

    @property
    def max_range(self) -> float:
        """Largest radius for which balls are unambiguous in the window."""
        if self.kind == "hyperbolic":
            return self.margin
        return 0.5 * float(np.min(self.box))

    def check_range(self, r: float, what: str = "radius") -> None:
        if self.periodic and not r < self.max_range + 1e-12:
            raise ValueError(f"{what} {r} exceeds half the window side ({self.max_range}) of {self}")

    def embed(self, coords: np.ndarray, levels: Optional[np.ndarray] = None) -> np.ndarray:
        coords = np.asarray(coords, dtype=float).reshape(-1, self.dim)
        if self.kind == "cylinder":
            lv = np.zeros(len(coords)) if levels is None else np.asarray(levels, dtype=float)
            return np.column_stack([coords, lv])
        return coords

    def wrap(self, x: np.ndarray) -> np.ndarray:
        """Reduce embedded coordinates into ``[0, period)`` on every axis."""
        box = self.box
        y = np.mod(x, box)
        # np.mod can round up to the period itself for tiny negative inputs
        return np.where(y >= box, y - box, y)

    def delta(self, xa: np.ndarray, xb: np.ndarray) -> np.ndarray:
        """Minimum-image displacement ``xb - xa`` between embedded points."""
        box = self.box
        d = np.asarray(xb, dtype=float) - np.asarray(xa, dtype=float)
        return d - box * np.round(d / box)

    def tree(self, emb: np.ndarray) -> cKDTree:
        return cKDTree(emb, boxsize=self.box)

    def pairwise(self, xa: np.ndarray, xb: np.ndarray) -> np.ndarray:
        """Distance matrix between two point arrays (embedded or disk coords)."""
        xa = np.atleast_2d(xa)
        xb = np.atleast_2d(xb)
        if self.kind == "hyperbolic":
            return _poincare_dist(xa[:, None, :], xb[None, :, :])
        d = self.delta(xa[:, None, :], xb[None, :, :])
        return np.sqrt(np.sum(d * d, axis=-1))

    def contains(self, coords: np.ndarray, levels: Optional[np.ndarray] = None) -> np.ndarray:
        coords = np.asarray(coords, dtype=float).reshape(-1, self.dim)
        if self.kind == "hyperbolic":
            rho = np.sqrt(np.sum(coords**2, axis=1))
            return rho <= math.tanh(self.radius / 2) + 1e-12
        ok = np.all((coords >= 0) & (coords < np.asarray(self.sides)), axis=1)
        if self.kind == "cylinder":
            lv = np.asarray(levels)
            ok &= (lv >= 0) & (lv < self.levels)
        return ok

    def radial(self, coords: np.ndarray) -> np.ndarray:
        """Hyperbolic distance from the disk centre."""
        rho = np.sqrt(np.sum(np.asarray(coords) ** 2, axis=-1))
        return 2.0 * np.arctanh(np.minimum(rho, 1 - 1e-16))

    def recenter(self, coords: np.ndarray, at: np.ndarray) -> np.ndarray:
        """Coordinates seen from ``at``: an isometry mapping ``at`` to the origin."""
        coords = np.asarray(coords, dtype=float).reshape(-1, self.dim)
        if self.kind != "hyperbolic":
            return self.delta(np.asarray(at, dtype=float), coords)
        z = coords[:, 0] + 1j * coords[:, 1]
        a = complex(at[0], at[1])
        w = (z - a) / (1 - np.conj(a) * z)
        return np.column_stack([w.real, w.imag])


def _poincare_dist(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    nu = np.sum(u * u, axis=-1)
    nv = np.sum(v * v, axis=-1)
    duv = np.sqrt(np.sum((u - v) ** 2, axis=-1))
    return 2.0 * np.arcsinh(duv / np.sqrt((1 - nu) * (1 - nv)))


def make_space(kind: str, **params) -> Space:
    """Build a :class:`Space`.

    ``torus_d`` / ``torus``: ``L`` (scalar or per-axis), ``d``;
    ``cylinder``: ``L``, ``levels``; ``cylinder_r``: ``L``, ``H``;
    ``hyperbolic_disk``: ``R_max``, ``margin``; ``lattice_orbit``: ``covol``
    and optional ``L`` (default 16 lattice spacings).
    """
    kind = kind.lower()
    if kind.startswith("torus"):
        d = params.get("d") or int(kind[-1])
        if d not in (1, 2, 3):
            raise ValueError("torus dimension must be 1, 2 or 3")
        L = params["L"]
        sides = tuple(float(s) for s in L) if np.ndim(L) else (float(L),) * d
        return Space("torus", sides)
    if kind in ("cylinder", "cyl"):
        return Space("cylinder", (float(params["L"]),), levels=int(params["levels"]))
    if kind in ("cylinder_r", "cylr"):
        return Space("cylinder_r", (float(params["L"]), float(params["H"])))
    if kind in ("hyperbolic_disk", "hyperbolic", "hyp"):
        return Space("hyperbolic", radius=float(params["R_max"]), margin=float(params.get("margin", 0.0)))
    if kind in ("lattice_orbit", "lattice", "lat2"):
        covol = float(params["covol"])
        if not covol > 0:
            raise ValueError("covolume must be positive")
        spacing = math.sqrt(covol)
        L = float(params.get("L") or 16 * spacing)
        return Space("lattice", (L, L), covol=covol)
    raise ValueError(f"unknown space kind {kind!r}")


def parse_space(desc: str) -> Space:
    """Parse a CLI descriptor such as ``torus2:10`` or ``cyl:20:40``."""
    head, _, rest = desc.strip().partition(":")
    fields = rest.split(":") if rest else []
    try:
        if head in ("torus1", "torus2", "torus3"):
            d = int(head[-1])
            (L,) = fields
            sides = [float(s) for s in L.split(",")]
            return make_space("torus", d=d, L=sides if len(sides) > 1 else sides[0])
        if head == "cyl":
            L, levels = fields
            return make_space("cylinder", L=float(L), levels=int(levels))
        if head == "cylR":
            L, H = fields
            return make_space("cylinder_r", L=float(L), H=float(H))
        if head == "hyp":
            R = float(fields[0])
            margin = float(fields[1]) if len(fields) > 1 else 0.0
            return make_space("hyperbolic", R_max=R, margin=margin)
        if head == "lat2":
            covol = float(fields[0])
            L = float(fields[1]) if len(fields) > 1 else None
            return make_space("lattice", covol=covol, L=L)
    except ValueError as exc:
        if "unpack" in str(exc) or "could not convert" in str(exc):
            raise ValueError(f"malformed space descriptor {desc!r}") from exc
        raise
    raise ValueError(f"unknown space descriptor {desc!r}")


def _point_arrays(space: Space, p: Point):
    c = np.asarray(p.coords, dtype=float).reshape(1, space.dim)
    lv = None if p.level is None else np.array([p.level])
    return c, lv


def distance(space: Space, a: Point, b: Point) -> float:
    if (a.level is None) != (b.level is None) or (space.has_levels and a.level is None):
        raise ValueError("points do not match the space kind")
    ca, la = _point_arrays(space, a)
    cb, lb = _point_arrays(space, b)
    if len(a.coords) != space.dim or len(b.coords) != space.dim:
        raise ValueError("points do not match the space kind")
    if space.kind == "hyperbolic":
        return float(_poincare_dist(ca[0], cb[0]))
    return float(space.pairwise(space.embed(ca, la), space.embed(cb, lb))[0, 0])


def translate(space: Space, g, x: Point) -> Point:
    """Act on ``x`` by the displacement ``g``.

    On a cylinder ``g`` is ``(dx, dlevel)``.  On the hyperbolic disk only
    rotations about the centre are supported: ``g`` is then an angle, or a
    zero vector.
    """
    if space.kind == "hyperbolic":
        if np.ndim(g) == 0:
            theta = float(g)
        elif np.allclose(g, 0):
            theta = 0.0
        else:
            raise ValueError("the free-boundary disk only supports rotations about the origin")
        c, s = math.cos(theta), math.sin(theta)
        x0, y0 = x.coords
        return Point((c * x0 - s * y0, s * x0 + c * y0), x.level, x.mark)
    g = np.asarray(g, dtype=float).ravel()
    if space.kind == "cylinder":
        if len(g) != 2 or x.level is None:
            raise ValueError("cylinder translations are (dx, dlevel)")
        base = space.wrap(np.array([[x.coords[0] + g[0], 0.0]]))[0, 0]
        return Point((float(base),), int((x.level + int(round(g[1]))) % space.levels), x.mark)
    if len(g) != space.dim:
        raise ValueError("displacement dimension mismatch")
    y = space.wrap(np.asarray(x.coords, dtype=float) + g)
    return Point(tuple(float(v) for v in y), x.level, x.mark)


def sample_uniform(space: Space, rng: np.random.Generator, size: Optional[int] = None):
    """Uniform draw(s) from the window w.r.t. the invariant measure.

    With ``size=None`` returns a :class:`Point`; otherwise ``(coords, levels)``
    arrays (``levels`` is ``None`` except on cylinders).
    """
    n = 1 if size is None else int(size)
    levels = None
    if space.kind == "hyperbolic":
        u = rng.random(n)
        r = np.arccosh(1.0 + u * (math.cosh(space.radius) - 1.0))
        theta = rng.uniform(0.0, 2 * math.pi, n)
        rho = np.tanh(r / 2)
        coords = np.column_stack([rho * np.cos(theta), rho * np.sin(theta)])
    else:
        sides = np.asarray(space.sides)
        coords = rng.random((n, space.dim)) * sides
        if space.has_levels:
            levels = rng.integers(0, space.levels, n)
    if size is None:
        return Point(tuple(float(v) for v in coords[0]), None if levels is None else int(levels[0]))
    return coords, levels


def lattice_spacing(space: Space, covol: Optional[float] = None) -> float:
    covol = covol if covol is not None else space.covol
    if covol is None:
        raise ValueError("no covolume given")
    return float(covol) ** (1.0 / space.dim)


def box_volume(lo: Sequence[float], hi: Sequence[float]) -> float:
    return float(np.prod(np.asarray(hi, dtype=float) - np.asarray(lo, dtype=float)))


@dataclass(frozen=True)
class Box:
    """Axis-aligned window ``[lo, hi)`` in base coordinates.

    On cylinders ``level`` restricts to one level (``None`` means all levels);
    ``marks`` optionally restricts to marks in ``[a, b)``.
    """

    lo: tuple
    hi: tuple
    level: Optional[int] = None
    marks: Optional[tuple] = None

    def __post_init__(self):
        if len(self.lo) != len(self.hi) or any(h <= l for l, h in zip(self.lo, self.hi)):
            raise ValueError(f"empty or malformed box {self.lo}..{self.hi}")

    def volume(self, space: Space) -> float:
        v = box_volume(self.lo, self.hi)
        if space.has_levels and self.level is None:
            v *= space.levels
        if self.marks is not None:
            v *= self.marks[1] - self.marks[0]
        return v

    def mask(self, coords: np.ndarray, levels=None, marks=None) -> np.ndarray:
        coords = np.asarray(coords, dtype=float).reshape(-1, len(self.lo))
        m = np.all((coords >= self.lo) & (coords < self.hi), axis=1)
        if self.level is not None:
            m &= np.asarray(levels) == self.level
        if self.marks is not None:
            if marks is None:
                raise ValueError("mark-restricted window needs a marked configuration")
            m &= (marks >= self.marks[0]) & (marks < self.marks[1])
        return m

    def count(self, config) -> int:
        return int(self.mask(config.coords, config.levels, config.marks).sum())

    @property
    def descriptor(self) -> str:
        s = "box:" + ",".join(_fmt(v) for v in self.lo) + ":" + ",".join(_fmt(v) for v in self.hi)
        if self.level is not None:
            s += f"@{self.level}"
        if self.marks is not None:
            s += f"#{_fmt(self.marks[0])},{_fmt(self.marks[1])}"
        return s


def parse_box(desc: str) -> Box:
    """Parse ``box:x0,y0:x1,y1[@level][#a,b]``."""
    rest = desc.strip()
    marks = None
    if "#" in rest:
        rest, m = rest.split("#", 1)
        marks = tuple(float(v) for v in m.split(","))
    level = None
    if "@" in rest:
        rest, lv = rest.split("@", 1)
        level = int(lv)
    head, lo, hi = rest.split(":")
    if head != "box":
        raise ValueError(f"malformed window {desc!r}")
    return Box(tuple(float(v) for v in lo.split(",")), tuple(float(v) for v in hi.split(",")), level, marks)


def window_mask(config, window: Optional[Box] = None) -> np.ndarray:
    """Points of ``config`` inside a statistics window.

    ``None`` means the whole window on periodic spaces and the eroded disk of
    radius ``radius - margin`` on the hyperbolic disk.
    """
    space = config.space
    if window is not None:
        return window.mask(config.coords, config.levels, config.marks)
    if space.kind == "hyperbolic":
        return space.radial(config.coords) <= space.radius - space.margin
    return np.ones(len(config), dtype=bool)


def window_volume(space: Space, window: Optional[Box] = None) -> float:
    if window is not None:
        return window.volume(space)
    if space.kind == "hyperbolic":
        return hyperbolic_area(space.radius - space.margin)
    return space.volume
