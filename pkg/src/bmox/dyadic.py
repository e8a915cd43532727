"""Dyadic grids, grid-aligned cubes, piecewise-constant functions and the
basic measure-theoretic operations on them (averages, maximal operators,
rearrangements).

Every cell of a :class:`DyadicGrid` has the same measure, so integrals are
sums of cell values times ``grid.cell_measure``.  Arrays holding one value per
finest cell have shape ``grid.shape``; flattening is always row-major.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.ndimage import maximum_filter1d

from .errors import DomainError

MAX_DEPTH = 40


@dataclass(frozen=True)
class DyadicGrid:
    """Root cube ``origin + [0, side]^dim`` split into ``2**depth`` cells per axis.

    The grid is never materialized; only :class:`GridFunction` stores values,
    so large depths are cheap as long as nothing is sampled on them.
    """

    dim: int
    depth: int
    side: float = 1.0
    origin: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise DomainError(f"dimension must be 1 or 2, got {self.dim}")
        if not (1 <= self.depth <= MAX_DEPTH):
            raise DomainError(f"depth must lie in [1, {MAX_DEPTH}], got {self.depth}")
        if not (self.side > 0 and math.isfinite(self.side)):
            raise DomainError(f"side must be positive and finite, got {self.side}")
        origin = (0.0,) * self.dim if self.origin is None else tuple(float(o) for o in self.origin)
        if len(origin) != self.dim:
            raise DomainError(f"origin has {len(origin)} coordinates, expected {self.dim}")
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "side", float(self.side))

    @property
    def n(self) -> int:
        """Cells per axis."""
        return 1 << self.depth

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def num_cells(self) -> int:
        return self.n**self.dim

    @property
    def cell_edge(self) -> float:
        return self.side / self.n

    @property
    def cell_measure(self) -> float:
        return self.cell_edge**self.dim

    @property
    def root(self) -> GridCube:
        return GridCube(self, (0,) * self.dim, self.n)

    def centers(self) -> np.ndarray:
        """Cell-center coordinates along one axis."""
        return self.origin[0] + (np.arange(self.n) + 0.5) * self.cell_edge

    def coordinates(self) -> tuple[np.ndarray, ...]:
        """Cell-center coordinate arrays, one per axis, each of shape ``self.shape``."""
        axes = [o + (np.arange(self.n) + 0.5) * self.cell_edge for o in self.origin]
        return tuple(np.meshgrid(*axes, indexing="ij"))

    def header(self) -> str:
        origin = ",".join(repr(o) for o in self.origin)
        return f"# grid dim={self.dim} depth={self.depth} origin={origin} side={self.side!r}"


@dataclass(frozen=True)
class GridCube:
    """Grid-aligned cube: lower-corner cell index per axis and edge length in cells."""

    grid: DyadicGrid
    corner: tuple[int, ...]
    size: int

    def __post_init__(self):
        corner = tuple(int(c) for c in self.corner)
        object.__setattr__(self, "corner", corner)
        if len(corner) != self.grid.dim:
            raise DomainError(f"corner {corner} does not match dimension {self.grid.dim}")
        if self.size < 1:
            raise DomainError(f"cube size must be >= 1 cell, got {self.size}")
        if any(c < 0 or c + self.size > self.grid.n for c in corner):
            raise DomainError(f"cube corner={corner} size={self.size} lies outside the root")

    @property
    def num_cells(self) -> int:
        return self.size**self.grid.dim

    @property
    def measure(self) -> float:
        return (self.size * self.grid.cell_edge) ** self.grid.dim

    @property
    def is_dyadic(self) -> bool:
        k = self.size
        return k & (k - 1) == 0 and all(c % k == 0 for c in self.corner)

    @property
    def level(self) -> int:
        """Number of halvings from the root (dyadic cubes only)."""
        if not self.is_dyadic:
            raise DomainError("level is only defined for dyadic cubes")
        return self.grid.depth - (self.size.bit_length() - 1)

    @property
    def slices(self) -> tuple[slice, ...]:
        return tuple(slice(c, c + self.size) for c in self.corner)

    def block(self, arr: np.ndarray) -> np.ndarray:
        """View of a grid-shaped array restricted to this cube."""
        return arr[self.slices]

    def mask(self) -> np.ndarray:
        m = np.zeros(self.grid.shape, dtype=bool)
        m[self.slices] = True
        return m

    def contains(self, other: GridCube) -> bool:
        return all(c <= o and o + other.size <= c + self.size for c, o in zip(self.corner, other.corner))

    def children(self) -> list[GridCube]:
        if self.size == 1:
            return []
        h = self.size // 2
        if self.grid.dim == 1:
            offsets = [(0,), (h,)]
        else:
            offsets = [(0, 0), (0, h), (h, 0), (h, h)]
        return [GridCube(self.grid, tuple(c + o for c, o in zip(self.corner, off)), h) for off in offsets]

    def bounds(self) -> tuple[tuple[float, float], ...]:
        e = self.grid.cell_edge
        return tuple((o + c * e, o + (c + self.size) * e) for o, c in zip(self.grid.origin, self.corner))

    def to_dict(self) -> dict:
        return {"corner": list(self.corner), "size": self.size}


class GridFunction:
    """Piecewise-constant real function, one finite value per finest cell."""

    __slots__ = ("grid", "values")

    def __init__(self, grid: DyadicGrid, values):
        arr = np.array(values, dtype=float)
        if arr.size != grid.num_cells:
            raise DomainError(f"got {arr.size} values for a grid with {grid.num_cells} cells")
        arr = arr.reshape(grid.shape)
        if not np.all(np.isfinite(arr)):
            raise DomainError("grid function values must be finite")
        arr.setflags(write=False)
        self.grid = grid
        self.values = arr

    @classmethod
    def from_callable(cls, grid: DyadicGrid, fn: Callable[..., np.ndarray]) -> GridFunction:
        """Sample ``fn`` at cell centers; ``fn`` receives one coordinate array per axis."""
        return cls(grid, np.broadcast_to(fn(*grid.coordinates()), grid.shape))

    @classmethod
    def constant(cls, grid: DyadicGrid, c: float) -> GridFunction:
        return cls(grid, np.full(grid.shape, float(c)))

    @classmethod
    def indicator(cls, grid: DyadicGrid, where) -> GridFunction:
        """Indicator of a cube or of a boolean cell mask."""
        mask = where.mask() if isinstance(where, GridCube) else np.asarray(where, dtype=bool)
        return cls(grid, mask.astype(float))

    def __repr__(self):
        return f"GridFunction(dim={self.grid.dim}, depth={self.grid.depth}, side={self.grid.side})"

    def _coerce(self, other):
        if isinstance(other, GridFunction):
            if other.grid != self.grid:
                raise DomainError("grid functions live on different grids")
            return other.values
        return other

    def __add__(self, other):
        return GridFunction(self.grid, self.values + self._coerce(other))

    __radd__ = __add__

    def __sub__(self, other):
        return GridFunction(self.grid, self.values - self._coerce(other))

    def __rsub__(self, other):
        return GridFunction(self.grid, self._coerce(other) - self.values)

    def __mul__(self, other):
        return GridFunction(self.grid, self.values * self._coerce(other))

    __rmul__ = __mul__

    def __neg__(self):
        return GridFunction(self.grid, -self.values)

    def __abs__(self):
        return GridFunction(self.grid, np.abs(self.values))

    def map(self, fn: Callable[[np.ndarray], np.ndarray]) -> GridFunction:
        return GridFunction(self.grid, fn(self.values))


# --------------------------------------------------------------------------
# cube enumeration


@dataclass(frozen=True)
class CubePolicy:
    """Which cubes a supremum ranges over.

    ``all``: every grid-aligned cube; ``dyadic``: the dyadic cubes of the root;
    ``max_side``: grid cubes with edge length at most ``param``;
    ``max_count``: a deterministic stride subsample of ``all`` with at most
    ``param`` members (all cubes when there are fewer).
    """

    kind: str = "dyadic"
    param: float | None = None

    def __post_init__(self):
        if self.kind not in ("all", "dyadic", "max_side", "max_count"):
            raise DomainError(f"unknown cube policy {self.kind!r}")
        if self.kind in ("max_side", "max_count") and (self.param is None or self.param <= 0):
            raise DomainError(f"policy {self.kind} needs a positive parameter")

    @classmethod
    def parse(cls, text: str) -> CubePolicy:
        name, _, arg = text.partition(":")
        name = {"all_grid_cubes": "all", "dyadic_only": "dyadic"}.get(name, name)
        return cls(name, float(arg) if arg else None)

    def __str__(self):
        return self.kind if self.param is None else f"{self.kind}:{self.param:g}"


ALL = CubePolicy("all")
DYADIC = CubePolicy("dyadic")


@dataclass(frozen=True)
class CubeBatch:
    """Cubes of one common size, stored as an ``(B, dim)`` corner array."""

    grid: DyadicGrid
    size: int
    corners: np.ndarray = field(repr=False)

    def __len__(self):
        return len(self.corners)

    @property
    def num_cells(self) -> int:
        return self.size**self.grid.dim

    @property
    def measure(self) -> float:
        return (self.size * self.grid.cell_edge) ** self.grid.dim

    def take(self, arr: np.ndarray) -> np.ndarray:
        """Cell values of each cube, shape ``(B, size**dim)``, row-major within a cube."""
        k = self.size
        if self.grid.dim == 1:
            win = sliding_window_view(arr, k)
            return win[self.corners[:, 0]]
        win = sliding_window_view(arr, (k, k))
        return win[self.corners[:, 0], self.corners[:, 1]].reshape(len(self.corners), k * k)

    def cube(self, i: int) -> GridCube:
        return GridCube(self.grid, tuple(int(c) for c in self.corners[i]), self.size)

    def cubes(self) -> list[GridCube]:
        return [self.cube(i) for i in range(len(self))]


def _corners(n_pos: int, dim: int, step: int = 1) -> np.ndarray:
    pos = np.arange(0, n_pos, step, dtype=np.int64)
    if dim == 1:
        return pos[:, None]
    a, b = np.meshgrid(pos, pos, indexing="ij")
    return np.stack([a.ravel(), b.ravel()], axis=1)


def _size_counts(grid: DyadicGrid) -> tuple[np.ndarray, np.ndarray]:
    sizes = np.arange(grid.n, 0, -1, dtype=np.int64)
    return sizes, (grid.n - sizes + 1) ** grid.dim


def count_cubes(grid: DyadicGrid, policy: CubePolicy = ALL) -> int:
    if policy.kind == "dyadic":
        return sum(1 << (grid.dim * j) for j in range(grid.depth + 1))
    sizes, counts = _size_counts(grid)
    if policy.kind == "max_side":
        return int(counts[sizes * grid.cell_edge <= policy.param * (1 + 1e-12)].sum())
    total = int(counts.sum())
    if policy.kind == "max_count":
        return min(total, int(policy.param))
    return total


def iter_batches(grid: DyadicGrid, policy: CubePolicy = DYADIC, chunk: int = 1 << 21) -> Iterator[CubeBatch]:
    """Yield cube batches in the canonical order: size descending, then corner.

    Each batch holds at most ``chunk`` cells in total (at least one cube).
    """
    n, dim = grid.n, grid.dim

    def emit(k, corners):
        per = max(1, chunk // (k**dim))
        for s in range(0, len(corners), per):
            yield CubeBatch(grid, int(k), corners[s : s + per])

    if policy.kind == "dyadic":
        k = n
        while k >= 1:
            yield from emit(k, _corners(n, dim, step=k))
            k //= 2
        return
    if policy.kind in ("all", "max_side"):
        for k in range(n, 0, -1):
            if policy.kind == "max_side" and k * grid.cell_edge > policy.param * (1 + 1e-12):
                continue
            yield from emit(k, _corners(n - k + 1, dim))
        return
    # max_count: stride subsample of the canonical 'all' order
    sizes, counts = _size_counts(grid)
    total = int(counts.sum())
    m = int(policy.param)
    if total <= m:
        yield from iter_batches(grid, ALL, chunk)
        return
    picks = np.unique(np.round(np.linspace(0, total - 1, m)).astype(np.int64))
    starts = np.concatenate([[0], np.cumsum(counts)])
    which = np.searchsorted(starts, picks, side="right") - 1
    for idx in np.unique(which):
        k = int(sizes[idx])
        offs = picks[which == idx] - starts[idx]
        span = n - k + 1
        corners = offs[:, None] if dim == 1 else np.stack([offs // span, offs % span], axis=1)
        yield from emit(k, corners.astype(np.int64))


def enumerate_cubes(grid: DyadicGrid, policy: CubePolicy = ALL) -> list[GridCube]:
    """All cubes selected by ``policy`` in canonical order (size descending, then corner)."""
    out: list[GridCube] = []
    for batch in iter_batches(grid, policy):
        out.extend(batch.cubes())
    return out


def dyadic_levels(grid: DyadicGrid) -> Iterator[tuple[int, np.ndarray]]:
    """Yield ``(size, corners)`` for every dyadic level, root first."""
    k = grid.n
    while k >= 1:
        yield k, _corners(grid.n, grid.dim, step=k)
        k //= 2


# --------------------------------------------------------------------------
# averages and distribution


def _check(f: GridFunction, Q: GridCube):
    if Q.grid != f.grid:
        raise DomainError("cube does not belong to the function's grid")


def average(f: GridFunction, Q: GridCube) -> float:
    """Mean value of ``f`` over ``Q``."""
    _check(f, Q)
    return float(np.sum(Q.block(f.values).ravel()) / Q.num_cells)


def distribution_measure(f: GridFunction, Q: GridCube, alpha: float) -> float:
    """Measure of ``{x in Q : |f(x)| > alpha}``."""
    _check(f, Q)
    if alpha < 0:
        raise DomainError("alpha must be non-negative")
    count = int(np.count_nonzero(np.abs(Q.block(f.values)) > alpha))
    return count * f.grid.cell_measure


@dataclass(frozen=True)
class StepRearrangement:
    """Non-increasing rearrangement of a step function.

    ``values[j]`` is taken on ``(cum_measure[j-1], cum_measure[j]]``; the
    integer ``cum_cells`` makes distribution comparisons exact.
    """

    values: np.ndarray
    cum_cells: np.ndarray
    cell_measure: float

    @property
    def cum_measure(self) -> np.ndarray:
        return self.cum_cells * self.cell_measure

    @property
    def total_measure(self) -> float:
        return float(self.cum_cells[-1] * self.cell_measure) if len(self.cum_cells) else 0.0

    def __call__(self, t):
        """Evaluate ``f*(t)`` with the left-continuous convention; ``f*(t) = 0`` past the support."""
        t = np.asarray(t, dtype=float)
        if np.any(t <= 0):
            raise DomainError("the rearrangement is evaluated at t > 0 only")
        j = np.searchsorted(self.cum_measure, t, side="left")
        out = np.where(j < len(self.values), self.values[np.minimum(j, len(self.values) - 1)], 0.0)
        return out if out.ndim else float(out)

    def at_rank(self, r: int) -> float:
        """Value on the ``r``-th cell (1-based) in decreasing order, i.e. ``f*`` on ``((r-1)h, rh]``."""
        j = int(np.searchsorted(self.cum_cells, r, side="left"))
        return float(self.values[j]) if j < len(self.values) else 0.0

    def distribution(self, alpha: float) -> float:
        """Measure of ``{f* > alpha}``."""
        k = int(np.searchsorted(-self.values, -alpha, side="left"))
        return (int(self.cum_cells[k - 1]) if k else 0) * self.cell_measure


def rearrangement(f: GridFunction, Q: GridCube) -> StepRearrangement:
    """Non-increasing rearrangement of ``|f|`` restricted to ``Q``."""
    _check(f, Q)
    vals = np.abs(Q.block(f.values).ravel())
    uniq, counts = np.unique(vals, return_counts=True)
    uniq, counts = uniq[::-1].copy(), counts[::-1]
    return StepRearrangement(uniq, np.cumsum(counts), f.grid.cell_measure)


# --------------------------------------------------------------------------
# maximal operators


def _cover_max(a: np.ndarray, k: int, n: int, axis: int) -> np.ndarray:
    """``out[x] = max(a[s] for s in [x-k+1, x] within range)`` along ``axis``.

    ``a`` holds one value per window start (``n - k + 1`` of them); the output
    has ``n`` entries along ``axis``: the best window covering each cell.
    """
    if k == 1:
        return a
    pad = [(0, 0)] * a.ndim
    pad[axis] = (k - 1, k - 1)
    padded = np.pad(a, pad, constant_values=-np.inf)
    filt = maximum_filter1d(padded, size=k, axis=axis, mode="constant", cval=-np.inf)
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(k // 2, k // 2 + n)
    return filt[tuple(idx)]


def _window_sums_1d(a: np.ndarray) -> Iterator[tuple[int, np.ndarray]]:
    """Yield ``(k, sums)`` with sums of every length-``k`` window along the last axis.

    Each sum accumulates left to right, so no prefix-sum cancellation occurs.
    """
    n = a.shape[-1]
    sums = a.copy()
    yield 1, sums
    for k in range(2, n + 1):
        sums = sums[..., :-1] + a[..., k - 1 :]
        yield k, sums


def _maximal_all_1d(a: np.ndarray) -> np.ndarray:
    """Maximal function over every window of the last axis; ``a`` may be batched ``(B, n)``."""
    n = a.shape[-1]
    out = a.copy()
    for k, sums in _window_sums_1d(a):
        if k > 1:
            np.maximum(out, _cover_max(sums / k, k, n, axis=a.ndim - 1), out=out)
    return out


def _maximal_all_2d(a: np.ndarray) -> np.ndarray:
    n = a.shape[0]
    out = a.copy()
    for k, rows in _window_sums_1d(a):
        if k == 1:
            continue
        sq = sliding_window_view(rows, k, axis=0).sum(axis=-1) / (k * k)
        m = _cover_max(_cover_max(sq, k, n, axis=0), k, n, axis=1)
        np.maximum(out, m, out=out)
    return out


def _dyadic_local_maximal_batch(g: np.ndarray, k: int, dim: int) -> np.ndarray:
    """Dyadic maximal function of ``|g|`` inside each cube of a batch.

    ``g`` has shape ``(B, k**dim)`` (row-major cells of a dyadic cube of edge
    ``k``); the result has the same shape.
    """
    B = g.shape[0]
    a = np.abs(g).reshape((B,) + (k,) * dim)
    out = a.copy()
    b = 2
    while b <= k:
        m = k // b
        if dim == 1:
            means = a.reshape(B, m, b).mean(axis=2)
            up = np.repeat(means, b, axis=1)
        else:
            means = a.reshape(B, m, b, m, b).mean(axis=(2, 4))
            up = np.repeat(np.repeat(means, b, axis=1), b, axis=2)
        np.maximum(out, up, out=out)
        b *= 2
    return out.reshape(B, -1)


def maximal_operator(f: GridFunction, scope: str = "all_grid_cubes", cube: GridCube | None = None) -> GridFunction:
    """Maximal function of ``f``.

    ``scope="all_grid_cubes"``: per-cell supremum of ``<|f|>_P`` over every grid
    cube ``P`` containing the cell.  ``scope="dyadic_local"``: supremum over the
    dyadic subcubes of the dyadic cube ``cube``; the result vanishes outside it.
    """
    if scope in ("all", "all_grid_cubes"):
        a = np.abs(f.values)
        out = _maximal_all_1d(a) if f.grid.dim == 1 else _maximal_all_2d(a)
        return GridFunction(f.grid, out)
    if scope != "dyadic_local":
        raise DomainError(f"unknown maximal scope {scope!r}")
    if cube is None or not cube.is_dyadic:
        raise DomainError("the dyadic local maximal operator needs a dyadic cube")
    _check(f, cube)
    block = cube.block(f.values).reshape(1, -1)
    local = _dyadic_local_maximal_batch(block, cube.size, f.grid.dim)
    out = np.zeros(f.grid.shape)
    out[cube.slices] = local.reshape((cube.size,) * f.grid.dim)
    return GridFunction(f.grid, out)


# --------------------------------------------------------------------------
# CSV file format


def write_grid_function(f: GridFunction, path: str | Path) -> None:
    lines = [f.grid.header()] + [repr(float(v)) for v in f.values.ravel()]
    Path(path).write_text("\n".join(lines) + "\n")


def parse_header(line: str) -> DyadicGrid:
    if not line.startswith("#"):
        raise DomainError("grid function file must start with a '# grid' header")
    fields = dict(tok.split("=", 1) for tok in line.lstrip("#").split()[1:] if "=" in tok)
    try:
        dim = int(fields["dim"])
        depth = int(fields["depth"])
        side = float(fields.get("side", 1.0))
        origin = tuple(float(x) for x in fields["origin"].split(",")) if "origin" in fields else None
    except (KeyError, ValueError) as exc:
        raise DomainError(f"malformed grid header: {line.strip()!r}") from exc
    return DyadicGrid(dim, depth, side, origin)


def read_grid_function(path: str | Path) -> GridFunction:
    text = Path(path).read_text().splitlines()
    if not text:
        raise DomainError(f"{path}: empty file")
    grid = parse_header(text[0])
    try:
        vals = [float(s) for s in text[1:] if s.strip() and not s.startswith("#")]
    except ValueError as exc:
        raise DomainError(f"{path}: non-numeric value") from exc
    return GridFunction(grid, vals)


def cells_of(mask: np.ndarray) -> np.ndarray:
    """Row-major indices of the true cells of a mask."""
    return np.flatnonzero(np.asarray(mask).ravel())


def as_policy(policy: CubePolicy | str | None, default: CubePolicy = DYADIC) -> CubePolicy:
    if policy is None:
        return default
    return CubePolicy.parse(policy) if isinstance(policy, str) else policy


__all__: Sequence[str] = [
    "DyadicGrid",
    "GridCube",
    "GridFunction",
    "CubePolicy",
    "CubeBatch",
    "StepRearrangement",
    "ALL",
    "DYADIC",
    "average",
    "count_cubes",
    "distribution_measure",
    "dyadic_levels",
    "enumerate_cubes",
    "iter_batches",
    "maximal_operator",
    "rearrangement",
    "read_grid_function",
    "write_grid_function",
]
