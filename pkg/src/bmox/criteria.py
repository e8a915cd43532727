"""Search estimators for the embedding constants, A-infinity diagnostics and
the log-maximal (Coifman-Rochberg) check.

All constants here are lower bounds found by search over explicit witnesses;
every witness is recorded so that :func:`evaluate_witness` can replay it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .bmo import bmo_norm, bmo_x_norm
from .dyadic import (
    DYADIC,
    CubePolicy,
    DyadicGrid,
    GridCube,
    GridFunction,
    _maximal_all_1d,
    as_policy,
    dyadic_levels,
    iter_batches,
    maximal_operator,
)
from .errors import DomainError
from .spaces import Orlicz, OrliczFunction, Space, Weight, local_norm
from .sparse import (
    SparseFamily,
    _stopping_cubes,
    cz_sparse_family,
    random_sparse,
    sparse_sum_norm,
)

EXPL = Orlicz(OrliczFunction("expL"))


@dataclass(frozen=True)
class Budget:
    """Search parameters: random seeds ``0..seeds-1`` and ``0..chain_seeds-1``."""

    seeds: int = 16
    chain_seeds: int = 16
    eta: float = 0.5
    gamma: float = 0.5
    policy: CubePolicy = DYADIC
    root_levels: int = 4

    def to_dict(self) -> dict:
        return {
            "seeds": self.seeds,
            "chain_seeds": self.chain_seeds,
            "eta": self.eta,
            "gamma": self.gamma,
            "policy": str(self.policy),
            "root_levels": self.root_levels,
        }


@dataclass
class ConstantsReport:
    C1: float
    C2: float
    C3: float
    C4: float
    witnesses: dict
    corpus: str
    space: str
    budget: dict

    def constants(self) -> dict:
        return {"C1": self.C1, "C2": self.C2, "C3": self.C3, "C4": self.C4}

    def spread(self) -> float:
        """Ratio of the largest to the smallest estimate."""
        v = list(self.constants().values())
        return max(v) / min(v)

    def to_dict(self) -> dict:
        return {
            **self.constants(),
            "kind": "certified_lower_bounds",
            "witnesses": self.witnesses,
            "corpus": self.corpus,
            "space": self.space,
            "budget": self.budget,
        }


# --------------------------------------------------------------------------
# witness generators


def corner_chain(root: GridCube, align: str) -> SparseFamily:
    """Nested dyadic cubes shrinking to the lowest (``left``) or highest (``right``) corner."""
    cubes = [root]
    P = root
    while P.size > 1:
        kids = P.children()
        P = kids[0] if align == "left" else kids[-1]
        cubes.append(P)
    return SparseFamily.from_cubes(root, cubes, 0.5)


def prefix_chain(root: GridCube, gamma: float, align: str = "left", order: np.ndarray | None = None) -> list[np.ndarray]:
    """Nested masks ``Omega_k`` holding the first ``floor(gamma^k N)`` cells of ``order``.

    ``order`` is a permutation of the root's cells (row-major by default,
    reversed for ``align="right"``).
    """
    grid = root.grid
    N = root.num_cells
    if order is None:
        order = np.arange(N) if align == "left" else np.arange(N)[::-1]
    local = np.indices((root.size,) * grid.dim).reshape(grid.dim, -1).T + np.array(root.corner)
    masks = []
    k = 0
    while True:
        m = math.floor(gamma**k * N)
        if m < 1:
            break
        mask = np.zeros(grid.shape, dtype=bool)
        pick = local[order[:m]]
        mask[tuple(pick.T)] = True
        masks.append(mask)
        k += 1
    return masks


def random_chain(root: GridCube, gamma: float, seed: int) -> list[np.ndarray]:
    order = np.random.default_rng(seed).permutation(root.num_cells)
    return prefix_chain(root, gamma, order=order)


def _indicator_sample(root: GridCube) -> list[tuple[dict, GridFunction]]:
    grid = root.grid
    out = []
    N = root.num_cells
    sizes = sorted({max(1, N >> j) for j in range(0, int(math.log2(N)) + 1)} | {max(1, (3 * N) // 4), max(1, N // 3)})
    for n in sizes:
        for align in ("left", "right"):
            mask = _prefix_mask(root, n, align)
            out.append(({"kind": "indicator", "cells": n, "align": align}, GridFunction.indicator(grid, mask)))
    return out


def _prefix_mask(root: GridCube, n: int, align: str) -> np.ndarray:
    N = root.num_cells
    order = np.arange(N) if align == "left" else np.arange(N)[::-1]
    grid = root.grid
    local = np.indices((root.size,) * grid.dim).reshape(grid.dim, -1).T + np.array(root.corner)
    mask = np.zeros(grid.shape, dtype=bool)
    mask[tuple(local[order[:n]].T)] = True
    return mask


def _staircase_sample(root: GridCube, gamma: float) -> list[tuple[dict, GridFunction]]:
    out = []
    for align in ("left", "right"):
        masks = prefix_chain(root, gamma, align)
        for K in range(1, len(masks) + 1):
            vals = np.sum(masks[:K], axis=0).astype(float)
            out.append(({"kind": "staircase", "K": K, "align": align}, GridFunction(root.grid, vals)))
    return out


# --------------------------------------------------------------------------
# the four constants


def _c1_items(space, corpus, budget):
    for i, f in enumerate(corpus):
        b = bmo_norm(f, budget.policy).norm
        if b > 0:
            yield {"kind": "corpus_ratio", "index": i}, bmo_x_norm(f, space, budget.policy).norm / b


def _c2_families(grid, corpus, budget):
    root = grid.root
    for i, f in enumerate(corpus):
        yield {"kind": "cz", "index": i}, cz_sparse_family(f, root, budget.eta)[0]
    for align in ("left", "right"):
        yield {"kind": "corner_chain", "align": align}, corner_chain(root, align)
    for s in range(budget.seeds):
        yield {"kind": "random", "seed": s}, random_sparse(grid, root, budget.eta, s)


def _c3_chains(grid, budget):
    root = grid.root
    for align in ("left", "right"):
        yield {"kind": "prefix_chain", "align": align}, prefix_chain(root, budget.gamma, align)
    for s in range(budget.chain_seeds):
        yield {"kind": "random_chain", "seed": s}, random_chain(root, budget.gamma, s)


def _c4_sample(grid, corpus, budget):
    root = grid.root
    yield from _indicator_sample(root)
    yield from _staircase_sample(root, budget.gamma)
    for i, f in enumerate(corpus):
        yield {"kind": "corpus", "index": i}, f


def _c4_ratio(space, f, root):
    den = local_norm(EXPL, f, root)
    return None if den == 0 else local_norm(space, f, root) / den


def _argmax(items):
    best, wit = -math.inf, None
    for w, v in items:
        if v is not None and v > best:
            best, wit = v, w
    return best, wit


def embedding_constants(
    space: Space,
    grid: DyadicGrid,
    corpus: Sequence[GridFunction],
    budget: Budget | None = None,
    corpus_label: str = "custom",
) -> ConstantsReport:
    """Lower-bound estimates of the four equivalent embedding constants.

    C1: ``||f||_{BMO_X} / ||f||_BMO`` over the corpus.  C2: overlap norms of
    sparse families (stopping families of the corpus, corner chains, seeded
    random families).  C3: overlap norms of nested chains with
    ``|Omega_k| <= gamma^k |Q|``.  C4: ``||f||_{X_Q} / ||f||_{exp L(Q)}`` over
    indicators, staircases and the corpus.  The root cube is the grid root.
    """
    budget = budget or Budget()
    if len(corpus) == 0:
        raise DomainError("empty corpus")
    root = grid.root
    C1, w1 = _argmax(_c1_items(space, corpus, budget))
    C2, w2 = _argmax((w, sparse_sum_norm(fam, space)) for w, fam in _c2_families(grid, corpus, budget))
    C3, w3 = _argmax((w, sparse_sum_norm(ch, space, root, budget.gamma)) for w, ch in _c3_chains(grid, budget))
    C4, w4 = _argmax((w, _c4_ratio(space, f, root)) for w, f in _c4_sample(grid, corpus, budget))
    if w1 is None:
        raise DomainError("every corpus function has zero BMO norm")
    return ConstantsReport(
        C1, C2, C3, C4, {"C1": w1, "C2": w2, "C3": w3, "C4": w4}, corpus_label, str(space), budget.to_dict()
    )


def evaluate_witness(
    which: str, witness: dict, space: Space, grid: DyadicGrid, corpus: Sequence[GridFunction], budget: Budget | None = None
) -> float:
    """Recompute the value of one recorded witness."""
    budget = budget or Budget()
    root = grid.root
    kind = witness["kind"]
    if which == "C1":
        f = corpus[witness["index"]]
        return bmo_x_norm(f, space, budget.policy).norm / bmo_norm(f, budget.policy).norm
    if which == "C2":
        if kind == "cz":
            fam = cz_sparse_family(corpus[witness["index"]], root, budget.eta)[0]
        elif kind == "corner_chain":
            fam = corner_chain(root, witness["align"])
        else:
            fam = random_sparse(grid, root, budget.eta, witness["seed"])
        return sparse_sum_norm(fam, space)
    if which == "C3":
        if kind == "prefix_chain":
            ch = prefix_chain(root, budget.gamma, witness["align"])
        else:
            ch = random_chain(root, budget.gamma, witness["seed"])
        return sparse_sum_norm(ch, space, root, budget.gamma)
    if which == "C4":
        if kind == "corpus":
            f = corpus[witness["index"]]
        elif kind == "indicator":
            f = GridFunction.indicator(grid, _prefix_mask(root, witness["cells"], witness["align"]))
        else:
            masks = prefix_chain(root, budget.gamma, witness["align"])
            f = GridFunction(grid, np.sum(masks[: witness["K"]], axis=0).astype(float))
        return _c4_ratio(space, f, root)
    raise DomainError(f"unknown constant {which!r}")


# --------------------------------------------------------------------------
# A-infinity


@dataclass
class AinftyReport:
    fujii_wilson: float
    sparse_sup: float
    witness: dict
    argmax_cube: GridCube | None = None
    budget: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "fujii_wilson": self.fujii_wilson,
            "sparse_sup": self.sparse_sup,
            "witness": self.witness,
            "argmax_cube": None
            if self.argmax_cube is None
            else {"corner": list(self.argmax_cube.corner), "size": self.argmax_cube.size},
            "budget": self.budget,
        }


def fujii_wilson(w: Weight, policy: CubePolicy | str = DYADIC) -> tuple[float, GridCube]:
    """``sup_Q w(Q)^{-1} int_Q M(w chi_Q)`` over the cubes of ``policy``.

    In one dimension the maximal function of ``w chi_Q`` on ``Q`` only needs
    the subintervals of ``Q`` (clipping an interval to ``Q`` never lowers the
    average), which is exact and batches over equal-size cubes.  In two
    dimensions the full grid maximal function of ``w chi_Q`` is used.
    """
    policy = as_policy(policy, DYADIC)
    grid = w.grid
    best, arg = -math.inf, None
    for batch in iter_batches(grid, policy, chunk=1 << 16):
        vals = batch.take(w.values)
        if grid.dim == 1:
            M = _maximal_all_1d(vals)
            ratio = M.sum(axis=1) / vals.sum(axis=1)
        else:
            ratio = np.empty(len(batch))
            for i, Q in enumerate(batch.cubes()):
                wq = np.where(Q.mask(), w.values, 0.0)
                M = maximal_operator(GridFunction(grid, wq), "all_grid_cubes").values
                ratio[i] = Q.block(M).sum() / Q.block(w.values).sum()
        i = int(np.argmax(ratio))
        if ratio[i] > best:
            best, arg = float(ratio[i]), batch.cube(i)
    return best, arg


def _average_stopping_family(w: Weight, Q: GridCube, eta: float) -> SparseFamily:
    """Stopping family of the averages of ``w``: maximal ``P`` with ``<w>_P > <w>_R / (1 - eta)``."""
    vals = np.asarray(Q.block(w.values), dtype=float)
    members = [Q]
    stack = [(0, (0,) * w.grid.dim)]
    while stack:
        lvl, loc = stack.pop()
        size = Q.size >> lvl
        if size == 1:
            continue
        block = vals[tuple(slice(c, c + size) for c in loc)]
        for dl, dc in _stopping_cubes(block, block.mean() / (1 - eta) * (1 + 1e-12)):
            child = (lvl + dl, tuple(c + d for c, d in zip(loc, dc)))
            members.append(GridCube(Q.grid, tuple(r + c for r, c in zip(Q.corner, child[1])), Q.size >> child[0]))
            stack.append(child)
    return SparseFamily.from_cubes(Q, members, eta)


def _greedy_family(w: Weight, Q: GridCube, eta: float, lookahead: int = 5) -> SparseFamily:
    """Weight-chasing family: below each member take the densest descendants that fit the budget."""
    members = [Q]
    todo = [Q]
    while todo:
        P = todo.pop(0)
        if P.size == 1:
            continue
        budget = math.floor((1 - eta) * P.num_cells)
        cands = []
        layer = [P]
        for _ in range(lookahead):
            layer = [c for X in layer if X.size > 1 for c in X.children()]
            cands.extend(layer)
        dens = [float(np.mean(c.block(w.values))) for c in cands]
        taken = np.zeros((P.size,) * w.grid.dim, dtype=bool)
        for j in np.argsort(dens, kind="stable")[::-1]:
            c = cands[j]
            sl = tuple(slice(a - b, a - b + c.size) for a, b in zip(c.corner, P.corner))
            if c.num_cells <= budget and not taken[sl].any():
                taken[sl] = True
                budget -= c.num_cells
                members.append(c)
                todo.append(c)
    return SparseFamily.from_cubes(Q, members, eta)


def family_weight_ratio(w: Weight, family: SparseFamily) -> float:
    """``sum_{P in F} w(P) / w(Q)``."""
    return float(np.sum(family.overlap() * family.root.block(w.values)) / np.sum(family.root.block(w.values)))


def ainfty_report(w: Weight, grid: DyadicGrid | None = None, budget: Budget | None = None) -> AinftyReport:
    """Fujii-Wilson constant and the best ``sum_P w(P)/w(Q)`` over searched 1/2-sparse families.

    Roots are the dyadic cubes of the first ``budget.root_levels`` levels; the
    families tried per root are ``{Q}``, the stopping family of the averages of
    ``w``, a greedy weight-chasing family and ``budget.seeds`` random families.
    """
    budget = budget or Budget()
    grid = grid or w.grid
    if grid != w.grid:
        raise DomainError("weight lives on a different grid")
    fw, arg = fujii_wilson(w, budget.policy)
    best, wit = -math.inf, None
    for level, (size, corners) in enumerate(dyadic_levels(grid)):
        if level > budget.root_levels:
            break
        for Q in (GridCube(grid, tuple(c), size) for c in corners):
            cands = [({"kind": "root_only"}, SparseFamily.from_cubes(Q, [Q], 0.5))]
            cands.append(({"kind": "average_stopping"}, _average_stopping_family(w, Q, 0.5)))
            cands.append(({"kind": "greedy"}, _greedy_family(w, Q, 0.5)))
            cands += [({"kind": "random", "seed": s}, random_sparse(grid, Q, 0.5, s)) for s in range(budget.seeds)]
            for desc, fam in cands:
                v = family_weight_ratio(w, fam)
                if v > best:
                    best, wit = v, {**desc, "family": fam.to_dict()}
    return AinftyReport(fw, best, wit, arg, budget.to_dict())


# --------------------------------------------------------------------------
# log-maximal functions and the converse test function


def coifman_rochberg_norm(f: GridFunction, policy: CubePolicy | str = DYADIC) -> float:
    """``||log M f||_BMO`` with ``M`` the maximal operator over all grid cubes."""
    if np.any(f.values < 0):
        raise DomainError("f must be non-negative")
    if not np.any(f.values > 0):
        raise DomainError("f vanishes identically")
    M = maximal_operator(f, "all_grid_cubes")
    return bmo_norm(M.map(np.log), policy).norm


def coifman_rochberg_batch(masks: np.ndarray, grid: DyadicGrid, policy: CubePolicy | str = DYADIC) -> np.ndarray:
    """:func:`coifman_rochberg_norm` of many one-dimensional indicators at once."""
    if grid.dim != 1:
        return np.array([coifman_rochberg_norm(GridFunction.indicator(grid, m), policy) for m in masks])
    a = np.asarray(masks, dtype=float)
    if np.any(a.sum(axis=1) == 0):
        raise DomainError("empty indicator set")
    M = _maximal_all_1d(a)
    return np.array([bmo_norm(GridFunction(grid, np.log(m)), policy).norm for m in M])


def converse_test_function(E: np.ndarray, Q: GridCube) -> GridFunction:
    """``g = max(log(|Q|/|E| * M chi_E), 0)`` on ``Q`` (zero elsewhere), ``E`` a cell mask inside ``Q``."""
    grid = Q.grid
    E = np.asarray(E, dtype=bool).reshape(grid.shape)
    nE = int(E.sum())
    if nE == 0:
        raise DomainError("E is empty")
    if np.any(E & ~Q.mask()):
        raise DomainError("E must lie inside Q")
    M = maximal_operator(GridFunction.indicator(grid, E), "all_grid_cubes").values
    with np.errstate(divide="ignore"):
        g = np.maximum(np.log(Q.num_cells / nE * M), 0.0)
    return GridFunction(grid, np.where(Q.mask(), g, 0.0))


def converse_certificate(E: np.ndarray, Q: GridCube) -> dict:
    """Measured properties of the converse test function: floor on ``E`` and mean over ``Q``."""
    g = converse_test_function(E, Q)
    E = np.asarray(E, dtype=bool).reshape(Q.grid.shape)
    return {
        "log_ratio": math.log(Q.num_cells / int(E.sum())),
        "min_on_E": float(g.values[E].min()),
        "mean_on_Q": float(Q.block(g.values).mean()),
    }
