"""Samplers for invariant point processes and equivariant factor maps on them."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .configuration import Configuration, ConfigurationError
from .space import EQUALITY_TOL, Space, Point, lattice_spacing, sample_uniform

__all__ = [
    "ProcessSpec",
    "parse_process",
    "sample_poisson",
    "sample_lattice_shift",
    "sample_vertical_poisson",
    "iid_mark",
    "p_thin",
    "delta_thin",
    "constant_thicken",
    "voronoi_owner",
    "voronoi_assign",
    "glue_poisson_in_cells",
    "quantize_marks",
    "encode_marks",
    "decode_marks",
    "complete_to_net",
    "vertical_coupling",
    "straighten_phi_n",
    "column_offsets",
]


# -- base families ---------------------------------------------------------


def sample_poisson(space: Space, t: float, rng: np.random.Generator, marked: bool = False) -> Configuration:
    """Poisson process of intensity ``t``: Poisson total count, uniform placement."""
    if t < 0:
        raise ValueError("intensity must be nonnegative")
    n = int(rng.poisson(t * space.volume)) if t > 0 else 0
    coords, levels = sample_uniform(space, rng, n)
    marks = rng.random(n) if marked else None
    return Configuration(space, coords, levels, marks)


def sample_lattice_shift(space: Space, covol: Optional[float], rng: np.random.Generator) -> Configuration:
    """Uniformly shifted copy of ``spacing * Z^d`` with ``spacing = covol**(1/d)``."""
    if space.kind not in ("torus", "lattice"):
        raise ValueError("lattice shifts need a torus window")
    spacing = lattice_spacing(space, covol)
    per_axis = []
    for side in space.sides:
        m = side / spacing
        if abs(m - round(m)) > 1e-9 or round(m) < 1:
            raise ValueError(f"side {side} is not a multiple of the lattice spacing {spacing}")
        per_axis.append(int(round(m)))
    shift = rng.random(space.dim) * spacing
    grids = np.meshgrid(*[np.arange(m) for m in per_axis], indexing="ij")
    idx = np.stack([g.ravel() for g in grids], axis=1)
    coords = space.wrap(shift + spacing * idx)
    return Configuration(space, coords)


def sample_vertical_poisson(space: Space, t: float, rng: np.random.Generator) -> Configuration:
    """Vertically coupled Poisson process on a cylinder (or its G x R analogue)."""
    if space.kind == "cylinder":
        base = Space("torus", space.sides)
        return vertical_coupling(sample_poisson(base, t, rng), space)
    if space.kind == "cylinder_r":
        L, H = space.sides
        if abs(H - round(H)) > 1e-12:
            raise ValueError("vertical processes on cylR need an integer height")
        cell = Space("torus", (L, 1.0))
        base = sample_poisson(cell, t, rng)
        shifts = np.arange(int(round(H)))
        coords = np.concatenate([base.coords + [0.0, k] for k in shifts]) if len(base) else np.empty((0, 2))
        return Configuration(space, coords)
    raise ValueError("vertical processes live on cylinder spaces")


# -- markings and thinnings ------------------------------------------------


def iid_mark(config: Configuration, rng: np.random.Generator) -> Configuration:
    if config.marked:
        raise ValueError("configuration is already marked")
    return config.replace(marks=rng.random(len(config)))


def p_thin(config: Configuration, p: float) -> Configuration:
    """Keep exactly the points whose mark is at most ``p``."""
    if not config.marked:
        raise ValueError("independent thinning needs a marked configuration")
    if not 0 <= p <= 1:
        raise ValueError("p must lie in [0, 1]")
    return config.subset(config.marks <= p).unmarked()


def nearest_distances(config: Configuration) -> np.ndarray:
    """Distance from every point to the nearest other point (inf if alone)."""
    n = len(config)
    if n < 2:
        return np.full(n, np.inf)
    if config.space.periodic:
        d, _ = config.tree().query(config.embedded, k=2)
        return d[:, 1]
    d = config.space.pairwise(config.coords, config.coords)
    np.fill_diagonal(d, np.inf)
    return d.min(axis=1)


def delta_thin(config: Configuration, delta: float) -> Configuration:
    """Remove every point that has another point within distance ``delta``."""
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    keep = nearest_distances(config) > delta
    return config.subset(keep)


# -- thickenings -------------------------------------------------------------


def column_offsets(space: Space, n: int) -> np.ndarray:
    """Embedded displacements ``{0} x {0, ..., n-1}`` along the vertical axis."""
    if space.kind in ("cylinder", "cylinder_r"):
        return np.column_stack([np.zeros(n), np.arange(n, dtype=float)])
    raise ValueError("column offsets need a cylinder space")


def constant_thicken(config: Configuration, F, return_parents: bool = False):
    """Union of the translates ``g + F`` over the points ``g``.

    ``F`` is an array of embedded displacements that must contain 0.  The
    output lists the ``f = 0`` block first (the input points, in order), so
    ``parents[i]`` is the index of the progenitor of output point ``i``.
    """
    space = config.space
    F = np.atleast_2d(np.asarray(F, dtype=float))
    width = space.embed(np.zeros((1, space.dim)), None).shape[1]
    if F.shape[1] != width:
        raise ValueError(f"displacements must have {width} components")
    zero = np.all(np.abs(F) <= EQUALITY_TOL, axis=1)
    if not zero.any():
        raise ValueError("F must contain the identity")
    F = np.concatenate([F[zero][:1], F[~zero]])
    emb = config.embedded
    out = np.concatenate([space.wrap(emb + f) for f in F]) if len(emb) else np.empty((0, width))
    parents = np.tile(np.arange(len(config)), len(F))
    try:
        thick = config.unmarked().from_embedded(out)
        thick = Configuration(space, thick.coords, thick.levels)
    except ConfigurationError as exc:
        raise ValueError("configuration is not F-separated") from exc
    return (thick, parents) if return_parents else thick


# -- Voronoi cells with tie breaking ----------------------------------------


def _lex_argmin(disp: np.ndarray) -> int:
    key = np.round(disp, 9)
    order = np.lexsort(key.T[::-1])
    return int(order[0])


def _displacements(config: Configuration, q: np.ndarray, idx: np.ndarray) -> np.ndarray:
    space = config.space
    if space.periodic:
        return space.delta(q, config.embedded[idx])
    return space.recenter(config.coords[idx], q)


def voronoi_owner(config: Configuration, queries: np.ndarray) -> np.ndarray:
    """Owner index of every query location (embedded coordinates).

    The owner minimises the distance; ties within :data:`EQUALITY_TOL` go to
    the lexicographically smallest displacement from the query to the point.
    """
    n = len(config)
    if n == 0:
        raise ValueError("empty configuration has no Voronoi cells")
    queries = np.atleast_2d(np.asarray(queries, dtype=float))
    space = config.space
    out = np.empty(len(queries), dtype=np.int64)
    if space.periodic:
        k = min(n, 8)
        dist, idx = config.tree().query(queries, k=k)
        dist = dist.reshape(len(queries), k)
        idx = idx.reshape(len(queries), k)
    else:
        full = space.pairwise(queries, config.coords)
        idx = np.argsort(full, axis=1, kind="stable")
        dist = np.take_along_axis(full, idx, axis=1)
        k = n
    tied = dist[:, 1:] <= dist[:, :1] + EQUALITY_TOL if k > 1 else np.zeros((len(queries), 0), bool)
    simple = ~tied.any(axis=1)
    out[simple] = idx[simple, 0]
    for j in np.flatnonzero(~simple):
        q = queries[j]
        if k < n and tied[j, -1]:
            d_all = space.pairwise(q[None, :], config.embedded)[0]
            cand = np.flatnonzero(d_all <= d_all.min() + EQUALITY_TOL)
        else:
            cand = idx[j, : 1 + tied[j].sum()]
        out[j] = cand[_lex_argmin(_displacements(config, q, cand))]
    return out


def voronoi_assign(config: Configuration, query: Point) -> int:
    space = config.space
    if space.periodic:
        q = space.embed(np.asarray(query.coords, dtype=float).reshape(1, -1),
                        None if query.level is None else [query.level])
    else:
        q = np.asarray(query.coords, dtype=float).reshape(1, -1)
    return int(voronoi_owner(config, q)[0])


def _mark_rng(mark: float, salt: int) -> np.random.Generator:
    bits = int(np.float64(mark).view(np.uint64))
    return np.random.default_rng(np.random.SeedSequence([bits, int(salt)]))


def glue_poisson_in_cells(config: Configuration, t: float, salt: int = 0) -> Configuration:
    """Factor of the marks onto the Poisson process of intensity ``t``.

    Each point expands its mark into an independent generator stream, draws a
    Poisson sample of the whole window relative to itself, and keeps the part
    that falls into its own tie-broken Voronoi cell.
    """
    if not config.marked:
        raise ValueError("gluing needs a marked configuration")
    if len(config) == 0:
        raise ValueError("gluing needs a nonempty configuration")
    space = config.space
    if not space.periodic:
        raise ValueError("gluing is implemented on periodic windows")
    box = space.box
    emb = config.embedded
    cand, owner = [], []
    for i, m in enumerate(config.marks):
        rng = _mark_rng(m, salt)
        k = int(rng.poisson(t * space.volume))
        u = rng.random((k, len(box))) * box
        if space.has_levels:
            u[:, -1] = np.floor(u[:, -1])
        cand.append(space.wrap(emb[i] + u))
        owner.append(np.full(k, i))
    pts = np.concatenate(cand)
    owner = np.concatenate(owner)
    if len(pts) == 0:
        return Configuration(space, np.empty((0, space.dim)), np.empty(0, int) if space.has_levels else None)
    keep = voronoi_owner(config, pts) == owner
    return config.unmarked().from_embedded(pts[keep]).replace()


# -- local mark encoding ---------------------------------------------------

_BITS = 16


def quantize_marks(marks: np.ndarray) -> np.ndarray:
    """Round marks to the 16-bit alphabet ``{q / 65535}``."""
    q = np.minimum((np.asarray(marks) * 65536).astype(np.int64), 65535)
    return q / 65535.0


def _layout(delta: float):
    a0 = delta / 150.0
    s = delta / 6400.0
    return a0, s


def encode_marks(config: Configuration, delta: float) -> Configuration:
    """Spatially encode 16-bit marks as satellite patterns.

    Every point keeps its position; two anchor satellites and one satellite per
    set bit are placed along the first axis inside ``B(g, delta/100)`` while
    ``g`` itself has no other point within ``delta/200``.
    """
    if not config.marked:
        raise ValueError("encoding needs a marked configuration")
    space = config.space
    if not space.periodic:
        raise ValueError("encoding is implemented on periodic windows")
    if len(config) > 1 and nearest_distances(config).min() <= delta:
        raise ValueError(f"configuration is not {delta}-separated")
    a0, s = _layout(delta)
    if s <= 64 * EQUALITY_TOL:
        raise ValueError("delta too small for the encoding resolution")
    q = np.minimum((config.marks * 65536).astype(np.int64), 65535)
    emb = config.embedded
    width = emb.shape[1]
    pts = [emb]
    e1 = np.zeros(width)
    e1[0] = 1.0
    offsets = [a0 - s, a0]
    for g, qi in zip(emb, q):
        offs = offsets + [a0 + (k + 1) * s for k in range(_BITS) if (qi >> k) & 1]
        pts.append(space.wrap(g + np.outer(offs, e1)))
    out = np.concatenate(pts)
    return config.unmarked().from_embedded(out).replace()


def decode_marks(config: Configuration, delta: float) -> Configuration:
    """Inverse of :func:`encode_marks`; raises if the input is not an encoding."""
    if config.marked:
        raise ValueError("decoding expects an unmarked configuration")
    space = config.space
    a0, s = _layout(delta)
    n = len(config)
    if n == 0:
        return config.replace(marks=np.empty(0))
    nn = nearest_distances(config)
    centres = np.flatnonzero(nn > delta / 200.0)
    if len(centres) == 0:
        raise ValueError("not an encoded configuration: no isolated centres")
    tree = config.tree()
    emb = config.embedded
    claimed = np.zeros(n, dtype=bool)
    claimed[centres] = True
    marks = np.empty(len(centres))
    for c_i, c in enumerate(centres):
        nb = [j for j in tree.query_ball_point(emb[c], delta / 100.0) if j != c]
        disp = space.delta(emb[c], emb[nb]) if nb else np.empty((0, emb.shape[1]))
        if len(nb) and np.abs(disp[:, 1:]).max(initial=0.0) > s / 4:
            raise ValueError("not an encoded configuration: satellite off axis")
        slots = np.rint((disp[:, 0] - a0) / s).astype(int) if nb else np.empty(0, int)
        if len(nb) and np.abs(disp[:, 0] - (a0 + slots * s)).max() > s / 4:
            raise ValueError("not an encoded configuration: satellite off grid")
        slot_set = set(slots.tolist())
        if not {-1, 0} <= slot_set or len(slot_set) != len(slots) or min(slot_set) < -1 or max(slot_set) > _BITS:
            raise ValueError("not an encoded configuration: bad satellite pattern")
        qv = sum(1 << (k - 1) for k in slot_set if k >= 1)
        marks[c_i] = qv / 65535.0
        claimed[nb] = True
    if not claimed.all():
        raise ValueError("not an encoded configuration: unclaimed points")
    return config.subset(centres).replace(marks=marks)


# -- nets ------------------------------------------------------------------


def complete_to_net(config: Configuration, R: float) -> Configuration:
    """Add points of a fixed grid so the result is R-coarsely dense.

    Grid points (spacing at most ``R/2``) are scanned in a fixed order and
    accepted when farther than ``R/2`` from everything accepted so far.
    """
    space = config.space
    if space.kind not in ("torus", "lattice", "cylinder_r"):
        raise ValueError("net completion is implemented on continuous tori")
    if not R > 0:
        raise ValueError("R must be positive")
    space.check_range(R, "R")
    sides = np.asarray(space.sides, dtype=float)
    m = np.ceil(sides / (R / 2.0)).astype(int)
    axes = [np.arange(k) * (L / k) for k, L in zip(m, sides)]
    grid = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
    if len(config):
        d0, _ = config.tree().query(grid, k=1)
    else:
        d0 = np.full(len(grid), np.inf)
    added: list[np.ndarray] = []
    half = R / 2.0
    for x, d in zip(grid, d0):
        if d <= half:
            continue
        if added:
            dd = space.pairwise(x[None, :], np.asarray(added))[0]
            if dd.min() <= half:
                continue
        added.append(x)
    if not added:
        return config.unmarked()
    coords = np.concatenate([config.coords, np.asarray(added)])
    return Configuration(space, coords)


# -- vertical constructions --------------------------------------------------


def vertical_coupling(config: Configuration, space: Space) -> Configuration:
    """Stack the base configuration on every level of ``space`` (level-major order)."""
    if space.kind != "cylinder":
        raise ValueError("vertical coupling targets a cylinder space")
    base = config.space
    if base.kind != "torus" or base.dim != 1 or base.sides[0] != space.sides[0]:
        raise ValueError(f"base space {base} does not match cylinder {space}")
    n = len(config)
    coords = np.tile(config.coords, (space.levels, 1))
    levels = np.repeat(np.arange(space.levels), n)
    marks = None if config.marks is None else np.tile(config.marks, space.levels)
    return Configuration(space, coords, levels, marks, check=False)


def straighten_phi_n(config: Configuration, n: int, return_parents: bool = False):
    """Independent 1/n-thinning followed by the n-level column thickening."""
    if not config.marked:
        raise ValueError("straightening needs IID marks")
    n = int(n)
    if n < 1:
        raise ValueError("n must be at least 1")
    space = config.space
    height = space.levels if space.kind == "cylinder" else (space.sides[1] if space.kind == "cylinder_r" else 0)
    if not height:
        raise ValueError("straightening needs a cylinder space")
    if n > height:
        raise ValueError(f"n={n} exceeds the vertical window ({height})")
    progenitors = p_thin(config, 1.0 / n)
    return constant_thicken(progenitors, column_offsets(space, n), return_parents=return_parents)


# -- process specifications ------------------------------------------------

_FAMILIES = ("poisson", "lattice", "iidpoisson", "vpoisson")
_NEEDS_MARKS = ("pthin", "phi", "glue", "encode")


@dataclass(frozen=True)
class ProcessSpec:
    """A base family followed by a pipeline of factor maps.

    Pipeline steps are ``(name, argument)`` pairs with names ``mark``,
    ``pthin``, ``dthin``, ``thicken`` (argument: tuple of displacements),
    ``phi``, ``glue`` and ``net``.  Steps that need marks get fresh IID marks
    when their input is unmarked.
    """

    family: str
    param: float
    pipeline: tuple = ()

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise ValueError(f"unknown process family {self.family!r}")
        if self.family != "lattice" and self.param < 0:
            raise ValueError("intensity must be nonnegative")
        if self.family == "lattice" and not self.param > 0:
            raise ValueError("covolume must be positive")

    def base_intensity(self) -> float:
        return 1.0 / self.param if self.family == "lattice" else float(self.param)

    @property
    def intensity(self) -> Optional[float]:
        """Known intensity of the output, or ``None`` when it must be estimated."""
        lam = self.base_intensity()
        for name, arg in self.pipeline:
            if name == "pthin":
                lam *= arg
            elif name == "thicken":
                lam *= len(arg)
            elif name == "glue":
                lam = arg
            elif name in ("dthin", "net"):
                return None
        return lam

    def sample(self, space: Space, rng: np.random.Generator, provenance: bool = False):
        """Draw one configuration.

        With ``provenance=True`` returns ``(config, parents)`` where
        ``parents[i]`` is the index of the point that spawned point ``i`` in
        the final thickening step (``None`` if the pipeline does not end with
        one).
        """
        if self.family == "poisson":
            cfg = sample_poisson(space, self.param, rng)
        elif self.family == "iidpoisson":
            cfg = sample_poisson(space, self.param, rng, marked=True)
        elif self.family == "lattice":
            cfg = sample_lattice_shift(space, self.param, rng)
        else:
            cfg = sample_vertical_poisson(space, self.param, rng)
        parents = None
        for name, arg in self.pipeline:
            parents = None
            if name in _NEEDS_MARKS and not cfg.marked:
                cfg = iid_mark(cfg, rng)
            if name == "mark":
                cfg = iid_mark(cfg.unmarked(), rng)
            elif name == "pthin":
                cfg = p_thin(cfg, arg)
            elif name == "dthin":
                cfg = delta_thin(cfg.unmarked(), arg)
            elif name == "thicken":
                cfg, parents = constant_thicken(cfg.unmarked(), np.asarray(arg), return_parents=True)
            elif name == "phi":
                cfg, parents = straighten_phi_n(cfg, arg, return_parents=True)
            elif name == "glue":
                cfg = glue_poisson_in_cells(cfg, arg, salt=int(rng.integers(2**32)))
            elif name == "net":
                cfg = complete_to_net(cfg, arg)
            else:
                raise ValueError(f"unknown pipeline step {name!r}")
        return (cfg, parents) if provenance else cfg

    @property
    def descriptor(self) -> str:
        parts = [f"{self.family}:{self.param:g}"]
        for name, arg in self.pipeline:
            if name == "mark":
                parts.append("mark")
            elif name == "thicken":
                parts.append("thicken:" + "+".join(",".join(f"{v:g}" for v in f) for f in arg))
            else:
                parts.append(f"{name}:{arg:g}")
        return "|".join(parts)


def parse_process(desc: str) -> ProcessSpec:
    """Parse ``family:param|step:arg|...`` (e.g. ``iidpoisson:1|phi:20``)."""
    steps = [s.strip() for s in desc.split("|") if s.strip()]
    if not steps:
        raise ValueError("empty process descriptor")
    fam, _, par = steps[0].partition(":")
    try:
        param = float(par)
    except ValueError as exc:
        raise ValueError(f"malformed process descriptor {desc!r}") from exc
    pipeline = []
    for step in steps[1:]:
        name, _, arg = step.partition(":")
        try:
            if name == "mark":
                pipeline.append(("mark", None))
            elif name in ("pthin", "dthin", "glue", "net"):
                pipeline.append((name, float(arg)))
            elif name == "phi":
                pipeline.append(("phi", int(arg)))
            elif name == "thicken":
                F = [tuple(float(v) for v in f.split(",")) for f in arg.split("+")]
                if not any(all(v == 0 for v in f) for f in F):
                    F.insert(0, tuple(0.0 for _ in F[0]))
                pipeline.append(("thicken", tuple(F)))
            else:
                raise ValueError(f"unknown pipeline step {name!r}")
        except ValueError as exc:
            raise ValueError(f"malformed process descriptor {desc!r}: {exc}") from exc
    return ProcessSpec(fam, param, tuple(pipeline))
