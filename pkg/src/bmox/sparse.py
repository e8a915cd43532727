"""Sparse dyadic families: construction, exact verification and overlap norms.

A family ``F`` of dyadic subcubes of a root ``Q`` is eta-sparse when each member
``P`` owns an exclusive part ``E_P`` (``P`` minus the members strictly inside
it) of measure at least ``eta |P|``.  All counting here is done in grid cells
with integer arithmetic, so verification is exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .dyadic import DyadicGrid, GridCube, GridFunction
from .errors import DomainError
from .spaces import Space, local_norm

# relative margin on the stopping threshold; keeps the selection bound strict under rounding
CZ_MARGIN = 1e-12


@dataclass(frozen=True)
class SparseFamily:
    """Dyadic cubes inside a dyadic root, with derived exclusive sets and layers.

    ``members`` are stored as ``(level, corner)`` with ``level`` counted from
    the root (0 = root) and ``corner`` the absolute lower cell index.
    """

    root: GridCube
    members: tuple[tuple[int, tuple[int, ...]], ...]
    eta: float
    _cache: dict = field(default_factory=dict, repr=False, compare=False, hash=False)

    def __post_init__(self):
        if not self.root.is_dyadic:
            raise DomainError("sparse families live under a dyadic root")
        seen = set()
        for lvl, corner in self.members:
            size = self.root.size >> lvl
            if lvl < 0 or size < 1:
                raise DomainError(f"member level {lvl} is below single cells")
            cube = GridCube(self.root.grid, corner, size)
            if not (cube.is_dyadic and self.root.contains(cube)):
                raise DomainError(f"member {cube.to_dict()} is not a dyadic subcube of the root")
            seen.add((lvl, cube.corner))
        object.__setattr__(self, "members", tuple(sorted(seen)))

    @classmethod
    def from_cubes(cls, root: GridCube, cubes, eta: float) -> SparseFamily:
        members = []
        for P in cubes:
            if P.size > root.size or root.size % P.size:
                raise DomainError("member is not a dyadic subcube of the root")
            members.append(((root.size // P.size).bit_length() - 1, P.corner))
        return cls(root, tuple(members), eta)

    def __len__(self):
        return len(self.members)

    @property
    def grid(self) -> DyadicGrid:
        return self.root.grid

    def cubes(self) -> list[GridCube]:
        return [GridCube(self.grid, c, self.root.size >> lvl) for lvl, c in self.members]

    def _local_slices(self, lvl, corner):
        size = self.root.size >> lvl
        return tuple(slice(c - r, c - r + size) for c, r in zip(corner, self.root.corner))

    def _paint(self):
        if "overlap" in self._cache:
            return
        shape = (self.root.size,) * self.grid.dim
        overlap = np.zeros(shape, dtype=np.int64)
        deepest = np.full(shape, -1, dtype=np.int64)
        # members are sorted by level, so deeper cubes overwrite their ancestors
        for i, (lvl, corner) in enumerate(self.members):
            sl = self._local_slices(lvl, corner)
            overlap[sl] += 1
            deepest[sl] = i
        own = np.bincount(deepest[deepest >= 0], minlength=len(self.members))
        self._cache["overlap"] = overlap
        self._cache["exclusive"] = own

    def overlap(self) -> np.ndarray:
        """Integer array ``sum_{P in F} chi_P`` on the root block."""
        self._paint()
        return self._cache["overlap"]

    def exclusive_counts(self) -> np.ndarray:
        """Cell count of ``E_P`` for each member (same order as ``members``)."""
        self._paint()
        return self._cache["exclusive"]

    def member_cells(self) -> np.ndarray:
        return np.array([(self.root.size >> lvl) ** self.grid.dim for lvl, _ in self.members], dtype=np.int64)

    def layer_counts(self) -> list[int]:
        """Cell counts of the layer unions ``Omega_0 >= Omega_1 >= ...``.

        A cell lies in ``Omega_k`` iff at least ``k + 1`` members contain it.
        """
        ov = self.overlap()
        top = int(ov.max()) if ov.size else 0
        hist = np.bincount(ov.ravel(), minlength=top + 1)
        tail = np.cumsum(hist[::-1])[::-1]
        return [int(c) for c in tail[1:]]

    def overlap_function(self) -> GridFunction:
        """The overlap count as a grid function (zero outside the root)."""
        vals = np.zeros(self.grid.shape)
        vals[self.root.slices] = self.overlap()
        return GridFunction(self.grid, vals)

    def to_dict(self) -> dict:
        return {
            "root": self.root.to_dict(),
            "eta": self.eta,
            "cubes": [{"level": lvl, "corner": list(c)} for lvl, c in self.members],
        }

    @classmethod
    def from_dict(cls, d: dict, grid: DyadicGrid) -> SparseFamily:
        root = GridCube(grid, tuple(d["root"]["corner"]), int(d["root"]["size"]))
        members = tuple((int(m["level"]), tuple(m["corner"])) for m in d["cubes"])
        return cls(root, members, float(d["eta"]))


def verify_sparse(family: SparseFamily) -> tuple[float, bool]:
    """``(eta_actual, layer_ok)`` computed exactly in cell counts.

    ``eta_actual = min_P |E_P| / |P|``; ``layer_ok`` iff
    ``|Omega_k| <= (1 - eta_actual)^k |Q|`` for every ``k``.
    """
    if len(family) == 0:
        raise DomainError("empty family")
    eta = exact_eta(family)
    return float(eta), layer_bound_ok(family, eta)


def exact_eta(family: SparseFamily) -> Fraction:
    own, tot = family.exclusive_counts(), family.member_cells()
    return min(Fraction(int(a), int(b)) for a, b in zip(own, tot))


def layer_bound_ok(family: SparseFamily, eta) -> bool:
    """``|Omega_k| <= (1 - eta)^k |Q|`` for all ``k``, in exact rational arithmetic."""
    q = 1 - Fraction(eta)
    N = family.root.num_cells
    return all(c <= q**k * N for k, c in enumerate(family.layer_counts()))


# --------------------------------------------------------------------------
# stopping-time construction


def _block_means(g: np.ndarray, b: int) -> np.ndarray:
    """Means of ``g`` over the aligned blocks of edge ``b``."""
    m = g.shape[0] // b
    if g.ndim == 1:
        return g.reshape(m, b).mean(axis=1)
    return g.reshape(m, b, m, b).mean(axis=(1, 3))


def _upsample(mask: np.ndarray) -> np.ndarray:
    out = np.repeat(mask, 2, axis=0)
    return np.repeat(out, 2, axis=1) if mask.ndim == 2 else out


def _stopping_cubes(g: np.ndarray, thr: float) -> list[tuple[int, tuple[int, ...]]]:
    """Maximal dyadic proper subblocks of ``g`` whose mean exceeds ``thr``.

    Returns ``(level below the block, local corner)`` pairs.
    """
    k = g.shape[0]
    dim = g.ndim
    out = []
    covered = np.zeros((1,) * dim, dtype=bool)
    lvl, b = 0, k
    while b > 1:
        lvl, b = lvl + 1, b // 2
        covered = _upsample(covered)
        hit = (_block_means(g, b) > thr) & ~covered
        for idx in np.argwhere(hit):
            out.append((lvl, tuple(int(i) * b for i in idx)))
        covered |= hit
    return out


def cz_sparse_family(f: GridFunction, Q: GridCube, eta: float) -> tuple[SparseFamily, float]:
    """Calderon-Zygmund stopping family for the oscillation of ``f`` on ``Q``.

    In a current cube ``R`` with ``g = |f - <f>_R|`` the maximal dyadic
    ``P`` with ``<g>_P > <g>_R / (1 - eta)`` are selected and processed in turn.
    Returns the family (root included) and the smallest ``C`` with
    ``|f - <f>_Q| <= C sum_P <|f - <f>_P|>_P chi_P`` cell-wise on ``Q``.
    """
    if not 0 < eta < 1:
        raise DomainError("eta must lie in (0, 1)")
    if Q.grid != f.grid:
        raise DomainError("cube does not belong to the function's grid")
    if not Q.is_dyadic:
        raise DomainError("the root must be a dyadic cube")
    vals = np.asarray(Q.block(f.values), dtype=float)
    dim = f.grid.dim
    members = [(0, Q.corner)]
    S = np.zeros(vals.shape)
    stack = [(0, (0,) * dim)]
    while stack:
        lvl, loc = stack.pop()
        size = Q.size >> lvl
        sl = tuple(slice(c, c + size) for c in loc)
        block = vals[sl]
        g = np.abs(block - block.mean())
        a = g.mean()
        S[sl] += a
        if size == 1 or a == 0:
            continue
        for dl, dc in _stopping_cubes(g, a / (1 - eta) * (1 + CZ_MARGIN)):
            child = (lvl + dl, tuple(c + d for c, d in zip(loc, dc)))
            members.append((child[0], tuple(r + c for r, c in zip(Q.corner, child[1]))))
            stack.append(child)
    family = SparseFamily(Q, tuple(members), eta)
    return family, domination_constant(vals, S)


def domination_constant(vals: np.ndarray, S: np.ndarray) -> float:
    """``max |f - <f>_Q| / S`` over cells, with ``0/0 = 0`` and ``x/0 = inf`` for ``x > 0``."""
    lhs = np.abs(vals - vals.mean())
    tol = 1e-12 * max(1.0, float(np.abs(vals).max()))
    lhs = np.where(lhs <= tol, 0.0, lhs)
    if np.any((S <= 0) & (lhs > 0)):
        return math.inf
    pos = S > 0
    return float(np.max(lhs[pos] / S[pos])) if pos.any() else 0.0


def sparse_domination_constant(f: GridFunction, family: SparseFamily) -> float:
    """Measured domination constant of ``|f - <f>_Q|`` by ``family``'s oscillation sum."""
    vals = np.asarray(family.root.block(f.values), dtype=float)
    S = np.zeros(vals.shape)
    for lvl, corner in family.members:
        sl = family._local_slices(lvl, corner)
        b = vals[sl]
        S[sl] += np.abs(b - b.mean()).mean()
    return domination_constant(vals, S)


# --------------------------------------------------------------------------
# random families


def random_sparse(
    grid: DyadicGrid,
    Q: GridCube,
    eta: float,
    seed: int,
    p_select: float = 0.5,
    p_descend: float = 0.5,
) -> SparseFamily:
    """Seeded random ``eta``-sparse family containing ``Q``.

    Below each accepted cube ``P`` the descendants are walked top-down; a child
    is accepted with probability ``p_select`` when it still fits the budget of
    ``floor((1 - eta) |P|)`` cells that ``P`` may hand to its members, and an
    unaccepted child is entered with probability ``p_descend``.  The budget
    guarantees ``|E_P| >= eta |P|`` for every member.
    """
    if not 0 < eta < 1:
        raise DomainError("eta must lie in (0, 1)")
    if Q.grid != grid or not Q.is_dyadic:
        raise DomainError("root must be a dyadic cube of the grid")
    rng = np.random.default_rng(seed)
    members = [Q]
    todo = [Q]
    while todo:
        P = todo.pop(0)
        budget = math.floor((1 - eta) * P.num_cells)
        walk = list(P.children()) if P.size > 1 else []
        while walk:
            c = walk.pop(0)
            if c.num_cells <= budget and rng.random() < p_select:
                budget -= c.num_cells
                members.append(c)
                todo.append(c)
            elif c.size > 1 and rng.random() < p_descend:
                walk.extend(c.children())
    return SparseFamily.from_cubes(Q, members, eta)


# --------------------------------------------------------------------------
# overlap norms


def nested_overlap(masks, Q: GridCube, gamma=None) -> GridFunction:
    """``sum_k chi_{Omega_k}`` for grid-shaped masks ``Omega_0 >= Omega_1 >= ...`` inside ``Q``.

    Raises :class:`DomainError` naming the first ``k`` that breaks nesting,
    containment in ``Q`` or the decay ``|Omega_k| <= gamma^k |Q|``.
    """
    grid = Q.grid
    inside = Q.mask()
    total = np.zeros(grid.shape)
    prev = inside
    g = None if gamma is None else Fraction(gamma)
    for k, m in enumerate(masks):
        m = np.asarray(m, dtype=bool).reshape(grid.shape)
        if np.any(m & ~prev):
            where = "the root" if k == 0 else f"Omega_{k - 1}"
            raise DomainError(f"nesting violated at k={k}: Omega_{k} is not inside {where}")
        if g is not None and int(m.sum()) > g**k * Q.num_cells:
            raise DomainError(f"decay violated at k={k}: |Omega_k| exceeds gamma^k |Q|")
        total += m
        prev = m
    return GridFunction(grid, total)


def sparse_sum_norm(family_or_nested, space: Space, Q: GridCube | None = None, gamma=None) -> float:
    """``|| sum chi ||_{X_Q}`` for a sparse family or a nested chain of masks."""
    if isinstance(family_or_nested, SparseFamily):
        fam = family_or_nested
        return local_norm(space, fam.overlap_function(), fam.root)
    if Q is None:
        raise DomainError("nested-set input needs the root cube")
    return local_norm(space, nested_overlap(family_or_nested, Q, gamma), Q)
