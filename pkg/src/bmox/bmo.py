"""BMO-type norms: classical, X-oscillation, star, maximal-sharpened and median.

Every norm is a supremum over the cubes selected by a :class:`CubePolicy`
(default: the dyadic cubes of the root); per-cube work is vectorized over
batches of equally sized cubes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dyadic import (
    DYADIC,
    CubeBatch,
    CubePolicy,
    GridCube,
    GridFunction,
    _dyadic_local_maximal_batch,
    as_policy,
    iter_batches,
)
from .errors import DegenerateInputError, DomainError
from .spaces import Lp, Space, WeightedL1

GOLDEN_ATOL = 1e-9
QUASI_GRID = 257
MAX_KEPT = 1 << 16
EXACT_QUASI_WORK = 1 << 26


@dataclass
class OscillationReport:
    """Supremum of per-cube oscillations, with the cube attaining it."""

    norm: float
    argmax: GridCube | None
    policy: str
    space: str | None = None
    upper_bound: bool = False
    values: np.ndarray | None = field(default=None, repr=False)

    def __float__(self):
        return float(self.norm)

    def to_dict(self) -> dict:
        d = {
            "norm": self.norm,
            "argmax_cube": None if self.argmax is None else {"corner": list(self.argmax.corner), "size": self.argmax.size},
            "policy": self.policy,
            "space": self.space,
        }
        if self.upper_bound:
            d["upper_bound"] = True
        return d


def _centered(vals: np.ndarray) -> np.ndarray:
    """``vals - mean`` per row; the mean is taken relative to the first entry so constants give exact zeros."""
    base = vals[:, :1]
    d = vals - base
    return d - d.mean(axis=1, keepdims=True)


def _sweep(f: GridFunction, policy, per_batch, space: Space | None = None, keep: bool = False, upper=False):
    policy = as_policy(policy, DYADIC)
    best, arg = -math.inf, None
    kept = []
    for batch in iter_batches(f.grid, policy):
        vals = batch.take(f.values)
        v = per_batch(vals, batch)
        i = int(np.argmax(v))
        if v[i] > best:
            best, arg = float(v[i]), batch.cube(i)
        if keep and sum(len(k) for k in kept) < MAX_KEPT:
            kept.append(v)
    values = np.concatenate(kept)[:MAX_KEPT] if keep else None
    return OscillationReport(best, arg, str(policy), None if space is None else str(space), upper, values)


def bmo_norm(f: GridFunction, policy: CubePolicy | str = DYADIC, keep_values: bool = False) -> OscillationReport:
    """``sup_Q |Q|^{-1} int_Q |f - <f>_Q|``."""
    return _sweep(f, policy, lambda v, b: np.abs(_centered(v)).mean(axis=1), keep=keep_values)


def bmo_x_norm(f: GridFunction, space: Space, policy: CubePolicy | str = DYADIC, keep_values: bool = False) -> OscillationReport:
    """``sup_Q ||f - <f>_Q||_{X_Q}``."""
    return _sweep(f, policy, lambda v, b: space.batch_norms(_centered(v), b), space, keep_values)


# --------------------------------------------------------------------------
# inner minimization over the subtracted constant


def _golden(obj, lo: np.ndarray, hi: np.ndarray, atol: float = GOLDEN_ATOL):
    """Vectorized golden-section minimization of row-wise convex ``obj(c)`` on ``[lo, hi]``."""
    r = (math.sqrt(5) - 1) / 2
    a, b = lo.astype(float).copy(), hi.astype(float).copy()
    c1, c2 = b - r * (b - a), a + r * (b - a)
    f1, f2 = obj(c1), obj(c2)
    while np.any(b - a > atol):
        left = f1 <= f2
        b = np.where(left, c2, b)
        a = np.where(left, a, c1)
        nc1 = np.where(left, b - r * (b - a), c2)
        nc2 = np.where(left, c1, a + r * (b - a))
        nf1 = np.where(left, np.nan, f2)
        nf2 = np.where(left, f1, np.nan)
        c1, c2 = nc1, nc2
        need1, need2 = np.isnan(nf1), np.isnan(nf2)
        if need1.any():
            nf1 = np.where(need1, obj(c1), nf1)
        if need2.any():
            nf2 = np.where(need2, obj(c2), nf2)
        f1, f2 = nf1, nf2
    return np.minimum(np.minimum(f1, f2), obj(0.5 * (a + b)))


def _weighted_median_oscillation(vals: np.ndarray, w: np.ndarray) -> np.ndarray:
    order = np.argsort(vals, axis=1, kind="stable")
    v = np.take_along_axis(vals, order, axis=1)
    ws = np.take_along_axis(w, order, axis=1)
    cw = np.cumsum(ws, axis=1)
    tot = cw[:, -1:]
    j = np.argmax(cw >= 0.5 * tot, axis=1)
    c = v[np.arange(len(v)), j]
    return np.sum(np.abs(vals - c[:, None]) * w, axis=1) / tot[:, 0]


def star_oscillations(vals: np.ndarray, batch: CubeBatch, space: Space) -> tuple[np.ndarray, bool]:
    """``inf_c ||v - c||_{X_Q}`` per row and whether the values are only upper bounds."""
    d = _centered(vals)
    if isinstance(space, Lp) and space.p == 1:
        med = np.sort(d, axis=1)[:, (d.shape[1] - 1) // 2]
        return np.abs(d - med[:, None]).mean(axis=1), False
    if isinstance(space, Lp) and space.p == 2:
        return space.batch_norms(d, batch), False
    if isinstance(space, WeightedL1):
        w = batch.take(space.weight.values)
        return _weighted_median_oscillation(d, w), False

    def obj(c):
        return space.batch_norms(d - c[:, None], batch)

    if isinstance(space, Lp) and space.p < 1 and d.size * d.shape[1] <= EXACT_QUASI_WORK:
        # sum |v_i - c|^p is concave between consecutive values, so the infimum sits at a value
        best = obj(d[:, 0])
        for j in range(1, d.shape[1]):
            best = np.minimum(best, obj(d[:, j]))
        return best, False
    lo, hi = d.min(axis=1), d.max(axis=1)
    at_mean = obj(np.zeros(len(d)))
    at_med = obj(np.sort(d, axis=1)[:, (d.shape[1] - 1) // 2])
    if space.banach:
        best = _golden(obj, lo, hi)
        return np.minimum(best, np.minimum(at_mean, at_med)), False
    # quasi-norms: grid scan, then golden refinement around the best grid point
    grid = np.linspace(0.0, 1.0, QUASI_GRID)
    cs = lo[:, None] + grid[None, :] * (hi - lo)[:, None]
    vals_grid = np.stack([obj(cs[:, j]) for j in range(QUASI_GRID)], axis=1)
    j = np.argmin(vals_grid, axis=1)
    step = (hi - lo) / (QUASI_GRID - 1)
    c0 = cs[np.arange(len(d)), j]
    ref = _golden(obj, np.maximum(lo, c0 - step), np.minimum(hi, c0 + step))
    best = np.minimum(vals_grid.min(axis=1), ref)
    return np.minimum(best, np.minimum(at_mean, at_med)), True


def bmo_x_star_norm(f: GridFunction, space: Space, policy: CubePolicy | str = DYADIC, keep_values: bool = False) -> OscillationReport:
    """``sup_Q inf_c ||f - c||_{X_Q}``.

    Exact for ``L^1`` (median), ``L^2`` (mean), weighted ``L^1`` (weighted
    median) and ``L^p`` with ``p < 1`` on batches of moderate size (best data
    value); golden-section search for the other convex cases; grid plus
    refinement for the remaining quasi-norms, flagged as an upper bound.
    """
    flag = {"upper": False}

    def per(vals, batch):
        v, up = star_oscillations(vals, batch, space)
        flag["upper"] |= up
        return v

    rep = _sweep(f, policy, per, space, keep_values)
    rep.upper_bound = flag["upper"]
    return rep


def bmo_mx_norm(f: GridFunction, space: Space, keep_values: bool = False) -> OscillationReport:
    """``sup_Q ||M_Q(f - <f>_Q)||_{X_Q}`` over dyadic cubes, ``M_Q`` the dyadic maximal operator of ``Q``."""

    def per(vals, batch):
        m = _dyadic_local_maximal_batch(_centered(vals), batch.size, f.grid.dim)
        return space.batch_norms(m, batch)

    return _sweep(f, DYADIC, per, space, keep_values)


def median_oscillation_norm(f: GridFunction, policy: CubePolicy | str = DYADIC, keep_values: bool = False) -> OscillationReport:
    """``sup_Q inf_c ((f - c) chi_Q)^*(|Q|/2)``.

    With the left-continuous rearrangement the value at ``|Q|/2`` is the
    ``ceil(N/2)``-th largest of ``|f - c|`` over the ``N`` cells, so the inner
    infimum is half the shortest span of ``floor(N/2) + 1`` consecutive sorted values.
    """

    def per(vals, batch):
        s = np.sort(_centered(vals), axis=1)
        N = s.shape[1]
        K = N // 2 + 1
        return 0.5 * np.min(s[:, K - 1 :] - s[:, : N - K + 1], axis=1)

    return _sweep(f, policy, per, keep=keep_values)


# --------------------------------------------------------------------------
# diagnostics


def oscillation_profile(f: GridFunction, Q: GridCube) -> np.ndarray:
    """Sorted ``|f - <f>_Q|`` over the cells of ``Q``."""
    if Q.grid != f.grid:
        raise DomainError("cube does not belong to the function's grid")
    v = _centered(Q.block(f.values).reshape(1, -1))[0]
    return np.sort(np.abs(v))


def jn_decay_check(
    f: GridFunction,
    Q: GridCube,
    C_target: float,
    bmo: float | None = None,
    policy: CubePolicy | str = DYADIC,
    num_alpha: int = 1000,
) -> tuple[bool, float]:
    """Exponential distribution decay ``|{|f - <f>_Q| > a}| <= 2|Q| exp(-C a / ||f||_BMO)``.

    ``a`` runs over ``num_alpha`` equispaced levels in ``(0, max osc]``.  The
    bound holds for ``C`` iff ``C <= (||f||/a) log(2|Q| / mu(a))`` at every level
    with ``mu(a) > 0``, so the best constant is that minimum (``inf`` when no
    level has positive measure).  ``bmo`` defaults to ``bmo_norm(f, policy)``.
    """
    norm = bmo_norm(f, policy).norm if bmo is None else float(bmo)
    if not norm > 0:
        raise DegenerateInputError("zero BMO norm: the decay rate is undefined")
    h = oscillation_profile(f, Q)
    N = len(h)
    top = float(h[-1])
    if top == 0:
        return True, math.inf
    alphas = top * np.arange(1, num_alpha + 1) / num_alpha
    # cells with h > a, as an integer count
    counts = N - np.searchsorted(h, alphas, side="right")
    pos = counts > 0
    if not pos.any():
        return True, math.inf
    best = float(np.min(norm / alphas[pos] * np.log(2.0 * N / counts[pos])))
    return best >= C_target, best


def abs_mapping_ratio(f: GridFunction, space: Space, policy: CubePolicy | str = DYADIC) -> float:
    """``||  |f|  ||_{BMO_X} / ||f||_{BMO_X}``."""
    den = bmo_x_norm(f, space, policy).norm
    if not den > 0:
        raise DegenerateInputError("f has zero BMO_X norm")
    return bmo_x_norm(abs(f), space, policy).norm / den


__all__ = [
    "CubePolicy",
    "OscillationReport",
    "bmo_norm",
    "bmo_x_norm",
    "bmo_x_star_norm",
    "bmo_mx_norm",
    "median_oscillation_norm",
    "jn_decay_check",
    "abs_mapping_ratio",
    "oscillation_profile",
    "star_oscillations",
]
