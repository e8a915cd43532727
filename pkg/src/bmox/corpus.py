"""Versioned test corpora and the builtin function generators.

Builtin tags (physical coordinates of the grid):

* ``staircase:K``      sum_{k=0}^{K} chi of the corner cube of edge ``side * 2^-k``
* ``logsingularity:x0``  ``log|x - x0|`` (``x0`` repeated on every axis in 2D)
* ``martingale:seed``   dyadic martingale with seeded +-1 increments on every level
* ``indicator:a,b``     chi of ``[a, b)`` (``[a, b)^2`` in 2D)
* ``linear``            the first coordinate
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .criteria import converse_test_function
from .dyadic import DyadicGrid, GridCube, GridFunction
from .errors import DomainError

CORPUS_VERSION = "bmo-corpus-v1"


class Member(NamedTuple):
    label: str
    func: GridFunction


def _norm_coords(grid: DyadicGrid) -> tuple[np.ndarray, ...]:
    return tuple((c - o) / grid.side for c, o in zip(grid.coordinates(), grid.origin))


def staircase(grid: DyadicGrid, K: int) -> GridFunction:
    u = _norm_coords(grid)
    vals = np.zeros(grid.shape)
    for k in range(K + 1):
        vals += np.all([c < 2.0**-k for c in u], axis=0)
    return GridFunction(grid, vals)


def log_singularity(grid: DyadicGrid, x0: float) -> GridFunction:
    r2 = sum((c - x0) ** 2 for c in grid.coordinates())
    if np.any(r2 == 0):
        raise DomainError("singularity sits on a cell center")
    return GridFunction(grid, 0.5 * np.log(r2))


def martingale(grid: DyadicGrid, seed: int, levels: int | None = None) -> GridFunction:
    """``sum`` over dyadic cubes ``I`` of ``eps_I h_I`` with ``h_I`` the Haar pattern of ``I``.

    ``h_I`` is +1/-1 on the two halves of ``I`` (checkerboard quadrants in 2D).
    """
    rng = np.random.default_rng(seed)
    levels = grid.depth if levels is None else min(levels, grid.depth)
    vals = np.zeros(grid.shape)
    for j in range(levels):
        m = 1 << j
        eps = rng.choice([-1.0, 1.0], size=(m,) * grid.dim)
        b = grid.n // m
        if grid.dim == 1:
            pattern = np.concatenate([np.ones(b // 2), -np.ones(b // 2)])
            vals += np.kron(eps, pattern)
        else:
            half = np.ones((b // 2, b // 2))
            pattern = np.block([[half, -half], [-half, half]])
            vals += np.kron(eps, pattern)
    return GridFunction(grid, vals)


def interval_indicator(grid: DyadicGrid, a: float, b: float) -> GridFunction:
    mask = np.all([(c >= a) & (c < b) for c in grid.coordinates()], axis=0)
    return GridFunction.indicator(grid, mask)


def builtin_function(tag: str, grid: DyadicGrid) -> GridFunction:
    """Evaluate a builtin generator tag (without the ``builtin:`` prefix) on ``grid``."""
    name, _, arg = tag.partition(":")
    try:
        if name == "staircase":
            return staircase(grid, int(arg))
        if name == "logsingularity":
            return log_singularity(grid, float(arg))
        if name == "martingale":
            return martingale(grid, int(arg))
        if name == "indicator":
            a, b = (float(s) for s in arg.split(","))
            return interval_indicator(grid, a, b)
        if name == "linear":
            return GridFunction(grid, grid.coordinates()[0])
    except ValueError as exc:
        raise DomainError(f"malformed builtin function {tag!r}") from exc
    raise DomainError(f"unknown builtin function {tag!r}")


def bmo_corpus(grid: DyadicGrid) -> list[Member]:
    """The fixed BMO test corpus (version ``bmo-corpus-v1``) on a 1D grid over ``[0, 1)``."""
    if grid.dim != 1:
        raise DomainError("the versioned corpus is one-dimensional")
    tags = [
        "logsingularity:0",
        "logsingularity:0.3",
        "logsingularity:0.7071",
        "logsingularity:1",
        "staircase:3",
        "staircase:7",
        f"staircase:{grid.depth}",
        "martingale:0",
        "martingale:1",
        "martingale:2",
        "indicator:0,0.5",
        "indicator:0.25,0.3",
        "indicator:0.6,1",
        "linear",
    ]
    out = [Member(t, builtin_function(t, grid)) for t in tags]
    root = grid.root
    x = grid.coordinates()[0]
    for a, b in ((0.0, 0.25), (0.5, 0.5 + 1 / 64)):
        E = (x >= a) & (x < b)
        out.append(Member(f"converse:{a:g},{b:g}", converse_test_function(E, root)))
    return out


def extended_corpus(count: int = 200, depths=range(6, 13), seed: int = 2024) -> list[Member]:
    """Seeded mixed corpus on 1D grids cycling through ``depths``.

    Kinds rotate through random walks, log singularities at random points,
    martingales, staircases, random indicator sets and random interval indicators.
    """
    rng = np.random.default_rng(seed)
    depths = list(depths)
    out = []
    for i in range(count):
        grid = DyadicGrid(1, depths[i % len(depths)])
        kind = i % 6
        if kind == 0:
            f = GridFunction(grid, rng.standard_normal(grid.n).cumsum())
            label = f"walk:{i}"
        elif kind == 1:
            x0 = float(rng.uniform(-0.2, 1.2))
            label = f"logsingularity:{x0!r}"
            f = GridFunction(grid, 0.5 * np.log((grid.coordinates()[0] - x0) ** 2 + 1e-300))
        elif kind == 2:
            s = int(rng.integers(1 << 30))
            label, f = f"martingale:{s}", martingale(grid, s)
        elif kind == 3:
            K = int(rng.integers(1, grid.depth + 1))
            label, f = f"staircase:{K}", staircase(grid, K)
        elif kind == 4:
            p = float(rng.uniform(0.05, 0.5))
            label = f"random_set:{i}"
            f = GridFunction.indicator(grid, rng.random(grid.n) < p)
        else:
            a, b = np.sort(rng.uniform(0, 1, 2))
            label, f = f"indicator:{a!r},{b!r}", interval_indicator(grid, a, b)
        out.append(Member(label, f))
    return out


def random_indicator_sets(grid: DyadicGrid, count: int, seed: int) -> np.ndarray:
    """``count`` seeded non-empty random cell masks with densities spread over (0, 1)."""
    rng = np.random.default_rng(seed)
    masks = np.zeros((count,) + grid.shape, dtype=bool)
    for i in range(count):
        kind = i % 3
        if kind == 0:
            m = rng.random(grid.shape) < rng.uniform(0.001, 0.9)
        elif kind == 1:
            # union of a few random grid cubes
            m = np.zeros(grid.shape, dtype=bool)
            for _ in range(int(rng.integers(1, 8))):
                size = int(rng.integers(1, grid.n // 2 + 1))
                corner = tuple(int(rng.integers(0, grid.n - size + 1)) for _ in range(grid.dim))
                m[GridCube(grid, corner, size).slices] = True
        else:
            # sparse scattered points
            m = rng.random(grid.shape) < 10.0 / grid.num_cells
        if not m.any():
            m.flat[int(rng.integers(grid.num_cells))] = True
        masks[i] = m
    return masks
