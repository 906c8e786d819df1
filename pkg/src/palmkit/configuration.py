"""Finite simple point configurations in a window, and their PPC1 text format."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .space import EQUALITY_TOL, Space, parse_space

__all__ = ["Configuration", "ConfigurationError", "save_config", "load_config", "format_config", "parse_config"]


class ConfigurationError(ValueError):
    pass


def _frozen(a):
    if a is None:
        return None
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Configuration:
    """Points of one realization.

    ``coords`` has shape ``(n, space.dim)``; ``levels`` is an integer array on
    cylinders and ``None`` elsewhere; ``marks`` is ``None`` for unmarked
    configurations.  Arrays are read-only.
    """

    space: Space
    coords: np.ndarray
    levels: Optional[np.ndarray] = None
    marks: Optional[np.ndarray] = None
    seed: Optional[tuple] = None
    check: bool = field(default=True, repr=False)

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=float).reshape(-1, self.space.dim)
        object.__setattr__(self, "coords", _frozen(coords))
        n = len(coords)
        if self.space.has_levels:
            lv = np.zeros(n, dtype=np.int64) if self.levels is None else np.asarray(self.levels, dtype=np.int64)
            if lv.shape != (n,):
                raise ConfigurationError("level count does not match point count")
            object.__setattr__(self, "levels", _frozen(lv))
        elif self.levels is not None:
            raise ConfigurationError(f"{self.space} has no levels")
        if self.marks is not None:
            marks = np.asarray(self.marks, dtype=float)
            if marks.shape != (n,):
                raise ConfigurationError("mark count does not match point count")
            if n and (marks.min() < 0 or marks.max() > 1):
                raise ConfigurationError("marks must lie in [0, 1]")
            object.__setattr__(self, "marks", _frozen(marks))
        if self.check:
            self.validate()

    def validate(self) -> None:
        if not len(self):
            return
        if not np.all(self.space.contains(self.coords, self.levels)):
            raise ConfigurationError("points outside the window")
        if len(self) > 1:
            if self.space.periodic:
                pairs = self.space.tree(self.embedded).query_pairs(EQUALITY_TOL)
                if pairs:
                    raise ConfigurationError(f"configuration is not simple ({len(pairs)} coincident pairs)")
            elif len(self) < 4000:
                d = self.space.pairwise(self.coords, self.coords)
                np.fill_diagonal(d, np.inf)
                if d.min() <= EQUALITY_TOL:
                    raise ConfigurationError("configuration is not simple")

    def __len__(self):
        return len(self.coords)

    @property
    def marked(self) -> bool:
        return self.marks is not None

    @property
    def embedded(self) -> np.ndarray:
        return self.space.embed(self.coords, self.levels)

    def tree(self):
        return self.space.tree(self.embedded)

    def replace(self, **kw) -> "Configuration":
        args = dict(space=self.space, coords=self.coords, levels=self.levels, marks=self.marks, seed=self.seed)
        args.update(kw)
        return Configuration(**args)

    def subset(self, mask) -> "Configuration":
        mask = np.asarray(mask)
        return Configuration(
            self.space,
            self.coords[mask],
            None if self.levels is None else self.levels[mask],
            None if self.marks is None else self.marks[mask],
            seed=self.seed,
            check=False,
        )

    def unmarked(self) -> "Configuration":
        return Configuration(self.space, self.coords, self.levels, None, seed=self.seed, check=False)

    def translated(self, g) -> "Configuration":
        """Translate every point by ``g`` (flat spaces; ``g`` is an embedded displacement)."""
        emb = self.space.wrap(self.embedded + np.asarray(g, dtype=float))
        return self.from_embedded(emb, self.marks)

    def from_embedded(self, emb, marks=None) -> "Configuration":
        d = self.space.dim
        levels = None
        if self.space.has_levels:
            levels = np.rint(emb[:, d]).astype(np.int64) % self.space.levels
        return Configuration(self.space, emb[:, :d], levels, marks, seed=self.seed, check=False)

    def equals(self, other: "Configuration") -> bool:
        """Exact equality of spaces, point arrays and marks (order sensitive)."""
        def same(a, b):
            if a is None or b is None:
                return a is None and b is None
            return a.shape == b.shape and np.array_equal(a, b)

        return (
            self.space == other.space
            and same(self.coords, other.coords)
            and same(self.levels, other.levels)
            and same(self.marks, other.marks)
        )

    def sorted(self) -> "Configuration":
        """Canonical order (lexicographic in embedded coordinates)."""
        emb = self.embedded
        order = np.lexsort(emb.T[::-1])
        return self.subset(order)


# -- PPC1 text format -----------------------------------------------------


def _num(x: float) -> str:
    return format(float(x), ".17g")


def format_config(config: Configuration) -> str:
    lines = [f"PPC1 {config.space.descriptor} marked={int(config.marked)} n={len(config)}"]
    for i in range(len(config)):
        row = [_num(c) for c in config.coords[i]]
        if config.levels is not None:
            row.append(str(int(config.levels[i])))
        if config.marks is not None:
            row.append(_num(config.marks[i]))
        lines.append(" ".join(row))
    return "\n".join(lines) + "\n"


def parse_config(text: str, *, source: str = "<string>") -> Configuration:
    lines = [(no, ln.strip()) for no, ln in enumerate(text.splitlines(), start=1)]
    lines = [(no, ln) for no, ln in lines if ln and not ln.startswith("#")]
    if not lines:
        raise ConfigurationError(f"{source}: empty file")
    config, used = _parse_block(lines, source)
    if used != len(lines):
        raise ConfigurationError(f"{source}:{lines[used][0]}: unexpected trailing content")
    return config


def _parse_block(lines, source):
    """Parse a PPC1 block at the start of ``lines``; returns (config, lines used)."""
    no, header = lines[0]
    parts = header.split()
    if len(parts) != 4 or parts[0] != "PPC1":
        raise ConfigurationError(f"{source}:{no}: malformed PPC1 header")
    try:
        space = parse_space(parts[1])
        kv = dict(p.split("=", 1) for p in parts[2:])
        marked = kv["marked"] == "1"
        if kv["marked"] not in ("0", "1"):
            raise ValueError
        n = int(kv["n"])
    except (ValueError, KeyError) as exc:
        raise ConfigurationError(f"{source}:{no}: malformed PPC1 header") from exc
    ncols = space.dim + int(space.has_levels) + int(marked)
    coords = np.empty((n, space.dim))
    levels = np.empty(n, dtype=np.int64) if space.has_levels else None
    marks = np.empty(n) if marked else None
    if len(lines) < n + 1:
        last = lines[-1][0]
        raise ConfigurationError(f"{source}:{last}: truncated file, expected {n} points, found {len(lines) - 1}")
    for i in range(n):
        no, ln = lines[i + 1]
        fields = ln.split()
        if len(fields) != ncols:
            raise ConfigurationError(
                f"{source}:{no}: expected {ncols} columns (marked={int(marked)}), found {len(fields)}"
            )
        try:
            coords[i] = [float(v) for v in fields[: space.dim]]
            k = space.dim
            if levels is not None:
                levels[i] = int(fields[k])
                k += 1
            if marks is not None:
                marks[i] = float(fields[k])
        except ValueError as exc:
            raise ConfigurationError(f"{source}:{no}: unparsable number") from exc
    try:
        config = Configuration(space, coords, levels, marks)
    except ConfigurationError as exc:
        raise ConfigurationError(f"{source}: {exc}") from exc
    return config, n + 1


def save_config(config: Configuration, path: Union[str, Path]) -> None:
    Path(path).write_text(format_config(config))


def load_config(path: Union[str, Path]) -> Configuration:
    return parse_config(Path(path).read_text(), source=str(path))
