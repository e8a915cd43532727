"""Normalized local norms ``||f||_{X_Q}`` for the space families used here.

Four variants are provided: normalized ``L^p`` (any ``p > 0``), normalized
weighted ``L^1``, Orlicz spaces with the normalized Luxemburg norm, and
variable-exponent Lebesgue spaces normalized by the indicator norm.

All evaluators work on *batches*: an ``(B, N)`` array with the cell values of
``B`` equally sized cubes (see :class:`bmox.dyadic.CubeBatch`).  The single-cube
functions (:func:`local_norm`, :func:`luxemburg_solve`) are thin wrappers.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .dyadic import (
    ALL,
    CubeBatch,
    CubePolicy,
    DyadicGrid,
    GridCube,
    GridFunction,
    as_policy,
    iter_batches,
    read_grid_function,
)
from .errors import DomainError, NumericError, SpaceConfigError, UnsupportedSpaceError

LUX_RTOL = 1e-12
LUX_MAX_ITER = 200


# --------------------------------------------------------------------------
# Young functions


@dataclass(frozen=True)
class OrliczFunction:
    """Young-type function ``phi`` with optional closed-form inverse.

    kinds: ``power`` (``t**p``), ``expL`` (``e**t - 1``), ``power_log``
    (``t**p * (1 + log+ t)**alpha``) and ``table`` (piecewise linear through
    the given ``(t, phi(t))`` knots, extended linearly).
    """

    kind: str
    p: float = 1.0
    alpha: float = 0.0
    table: tuple[tuple[float, float], ...] | None = None

    def __post_init__(self):
        if self.kind not in ("power", "expL", "power_log", "table"):
            raise SpaceConfigError(f"unknown Young function {self.kind!r}")
        if self.kind in ("power", "power_log") and not self.p > 0:
            raise SpaceConfigError("power exponent must be positive")
        if self.kind == "power_log" and not self.alpha > 0:
            raise SpaceConfigError("power_log needs alpha > 0")
        if self.kind == "table":
            pts = tuple((float(a), float(b)) for a, b in (self.table or ()))
            if len(pts) < 2 or pts[0] != (0.0, 0.0):
                raise SpaceConfigError("table must start at (0, 0) and have >= 2 knots")
            ts, ys = zip(*pts)
            if np.any(np.diff(ts) <= 0) or np.any(np.diff(ys) <= 0):
                raise SpaceConfigError("table knots must be strictly increasing")
            object.__setattr__(self, "table", pts)
        if not self.monotone_check():
            raise SpaceConfigError(f"{self} is not non-decreasing with phi(0)=0 and phi(t)->inf")

    @classmethod
    def parse(cls, text: str) -> OrliczFunction:
        name, _, args = text.partition(":")
        try:
            if name == "expL":
                return cls("expL")
            if name == "power":
                return cls("power", p=float(args))
            if name == "power_log":
                p, a = (float(x) for x in args.split(","))
                return cls("power_log", p=p, alpha=a)
        except ValueError as exc:
            raise SpaceConfigError(f"malformed Young function {text!r}") from exc
        raise SpaceConfigError(f"unknown Young function {text!r}")

    def __str__(self):
        if self.kind == "expL":
            return "expL"
        if self.kind == "power":
            return f"power:{self.p:g}"
        if self.kind == "power_log":
            return f"power_log:{self.p:g},{self.alpha:g}"
        return "table"

    @property
    def convex(self) -> bool:
        if self.kind in ("power", "power_log"):
            return self.p >= 1
        if self.kind == "expL":
            return True
        ts, ys = np.array(self.table).T
        return bool(np.all(np.diff(np.diff(ys) / np.diff(ts)) >= 0))

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            if self.kind == "power":
                return t**self.p
            if self.kind == "expL":
                return np.expm1(t)
            if self.kind == "power_log":
                return t**self.p * (1.0 + np.log(np.maximum(t, 1.0))) ** self.alpha
            ts, ys = np.array(self.table).T
            slope = (ys[-1] - ys[-2]) / (ts[-1] - ts[-2])
            return np.where(t <= ts[-1], np.interp(t, ts, ys), ys[-1] + slope * (t - ts[-1]))

    def inverse(self, y):
        """``phi^{-1}(y)`` for ``y >= 0``; bisection where no closed form exists."""
        y = np.asarray(y, dtype=float)
        if self.kind == "power":
            return y ** (1.0 / self.p)
        if self.kind == "expL":
            return np.log1p(y)
        if self.kind == "table":
            ts, ys = np.array(self.table).T
            slope = (ys[-1] - ys[-2]) / (ts[-1] - ts[-2])
            return np.where(y <= ys[-1], np.interp(y, ys, ts), ts[-1] + (y - ys[-1]) / slope)
        # power_log: t**p <= phi(t), and phi = t**p on [0, 1]
        y_arr = np.atleast_1d(y)
        out = y_arr ** (1.0 / self.p)
        big = y_arr > 1.0
        if np.any(big):
            lo = np.zeros(big.sum())
            hi = np.log(out[big])
            target = np.log(y_arr[big])
            for _ in range(LUX_MAX_ITER):
                mid = 0.5 * (lo + hi)
                val = self.p * mid + self.alpha * np.log1p(mid)
                below = val < target
                lo = np.where(below, mid, lo)
                hi = np.where(below, hi, mid)
                if np.all(hi - lo <= 1e-15 * np.maximum(1.0, hi)):
                    break
            out = out.copy()
            out[big] = np.exp(0.5 * (lo + hi))
        return out if np.ndim(y) else float(out[0])

    def monotone_check(self, num: int = 400) -> bool:
        """Sampled check on a log grid: non-decreasing, ``phi(0) = 0``, unbounded."""
        ts = np.concatenate([[0.0], np.logspace(-8, 8, num)])
        ys = self(ts)
        finite = ys[np.isfinite(ys)]
        # growth by two orders of magnitude past t = 1 stands in for phi -> inf
        grows = not np.all(np.isfinite(ys)) or ys[-1] > 100.0 * float(self(1.0))
        return bool(ys[0] == 0 and np.all(np.diff(finite) >= 0) and grows)


def luxemburg_rows(phi: OrliczFunction, a: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Normalized Luxemburg norms of the rows of ``a``.

    Solves ``inf{alpha > 0 : sum_i w_i phi(|a_i| / alpha) <= 1}`` by bisection
    in ``log(alpha)`` for every row; ``w`` holds measure fractions (rows sum
    to one) and broadcasts against ``a``.  Overflow of ``phi`` counts as a
    modular above one.
    """
    a = np.abs(np.asarray(a, dtype=float))
    w = np.broadcast_to(np.asarray(w, dtype=float), a.shape)
    out = np.zeros(a.shape[0])
    m = a.max(axis=1)
    nz = m > 0
    if not np.any(nz):
        return out
    # solve for alpha / max|a| so that extreme scales cannot under- or overflow
    a, w, m = a[nz] / m[nz, None], w[nz], m[nz]
    rows = np.arange(len(m))
    wmax = w[rows, a.argmax(axis=1)]

    def modular(alpha):
        with np.errstate(over="ignore", invalid="ignore"):
            v = np.sum(w * phi(a / alpha[:, None]), axis=1)
        return np.where(np.isnan(v), np.inf, v)

    hi = np.full(len(m), 1.0 / float(phi.inverse(1.0)))
    lo = 1.0 / np.asarray(phi.inverse(1.0 / wmax), dtype=float)
    for _ in range(LUX_MAX_ITER):
        bad_lo = modular(lo) <= 1.0
        bad_hi = modular(hi) > 1.0
        if not (bad_lo.any() or bad_hi.any()):
            break
        lo = np.where(bad_lo, lo * 0.5, lo)
        hi = np.where(bad_hi, hi * 2.0, hi)
    else:
        raise NumericError("Luxemburg bracket failed to straddle the unit modular level")

    for _ in range(LUX_MAX_ITER):
        active = hi > lo * (1.0 + LUX_RTOL)
        if not active.any():
            break
        mid = np.sqrt(lo * hi)
        above = modular(mid) > 1.0
        lo = np.where(active & above, mid, lo)
        hi = np.where(active & ~above, mid, hi)
    out[nz] = m * hi
    return out


def modular_root(logw: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Solve ``sum_j exp(logw_j - p_j * u) = 1`` for ``u`` row-wise.

    This is the variable-exponent modular equation in ``u = log(lambda)``:
    with ``logw_j = log(mu_j) + p_j log|a_j|`` it gives the Luxemburg norm
    ``exp(u)`` of a step function taking value ``a_j`` on measure ``mu_j``.
    Rows whose weights are all ``-inf`` return ``-inf``.
    """
    logw = np.asarray(logw, dtype=float)
    p = np.broadcast_to(np.asarray(p, dtype=float), logw.shape)
    live = np.isfinite(logw)
    out = np.full(logw.shape[0], -np.inf)
    ok = live.any(axis=1)
    if not ok.any():
        return out
    logw, p, live = logw[ok], p[ok], live[ok]

    z0 = np.where(live, logw, -np.inf)
    pmin = np.where(live, p, np.inf).min(axis=1)
    pmax = np.where(live, p, -np.inf).max(axis=1)
    L0 = logsumexp(z0, axis=1)
    # the slope of F(u) = logsumexp(logw - p u) lies in [-pmax, -pmin]
    lo = np.where(L0 >= 0, L0 / pmax, L0 / pmin)
    hi = np.where(L0 >= 0, L0 / pmin, L0 / pmax)
    pad = 1e-9 * (1.0 + np.abs(lo) + np.abs(hi))
    lo, hi = lo - pad, hi + pad
    # F is convex and decreasing, so Newton from the left end climbs monotonically to the root
    u = lo
    for _ in range(LUX_MAX_ITER):
        z = z0 - np.where(live, p, 0.0) * u[:, None]
        F = logsumexp(z, axis=1)
        soft = np.exp(z - F[:, None])
        slope = -np.sum(np.where(live, p, 0.0) * soft, axis=1)
        step = -F / slope
        new = np.clip(u + step, lo, hi)
        done = np.all(np.abs(new - u) <= 1e-15 * (1.0 + np.abs(u)))
        u = new
        if done:
            break
    out[ok] = u
    return out


# --------------------------------------------------------------------------
# per-cell fields


@dataclass(frozen=True)
class Weight:
    """Strictly positive weight sampled on a grid."""

    func: GridFunction
    label: str = "custom"

    def __post_init__(self):
        if not np.all(self.func.values > 0):
            raise SpaceConfigError("weights must be strictly positive")

    @property
    def grid(self) -> DyadicGrid:
        return self.func.grid

    @property
    def values(self) -> np.ndarray:
        return self.func.values

    def mass(self, Q: GridCube) -> float:
        return float(np.sum(Q.block(self.values))) * self.grid.cell_measure

    @classmethod
    def parse(cls, text: str, grid: DyadicGrid) -> Weight:
        """``builtin:const``, ``builtin:exp``, ``builtin:power:<a>`` or a CSV path."""
        if text == "builtin:const":
            return cls(GridFunction.constant(grid, 1.0), text)
        if text == "builtin:exp":
            # e^x rescaled by e^{-max x}; weighted averages are scale invariant
            x = grid.coordinates()[0]
            return cls(GridFunction(grid, np.exp(x - x.max())), text)
        if text.startswith("builtin:power:"):
            a = float(text.rsplit(":", 1)[1])
            r = np.sqrt(sum((c - o) ** 2 for c, o in zip(grid.coordinates(), grid.origin)))
            return cls(GridFunction(grid, r**a), text)
        if text.startswith("builtin:"):
            raise SpaceConfigError(f"unknown builtin weight {text!r}")
        f = read_grid_function(text)
        if f.grid != grid:
            raise SpaceConfigError(f"weight file {text} lives on a different grid")
        return cls(f, text)


def smoothstep5(s):
    """Quintic smoothstep on [0, 1], clamped."""
    s = np.clip(s, 0.0, 1.0)
    return s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)


def bump_exponent(x: np.ndarray, eps: float, rho: float) -> np.ndarray:
    """``1 + sum_{k>=1} b(x - k)``: ``b = 1`` on ``[-eps/2, eps/2]``, 0 off ``[-rho eps/2, rho eps/2]``.

    The shoulders are quintic smoothsteps, so ``p`` is Lipschitz with values in [1, 2].
    """
    if not (0 < eps and rho > 1 and rho * eps < 1):
        raise DomainError("bump exponent needs eps > 0, rho > 1, rho*eps < 1")
    k = np.rint(x)
    d = np.abs(x - k)
    inner, outer = eps / 2, rho * eps / 2
    b = smoothstep5((outer - d) / (outer - inner))
    return 1.0 + np.where(k >= 1, b, 0.0)


@dataclass(frozen=True)
class ExponentField:
    """Per-cell exponent ``p(x)`` with ``1 <= p_- <= p_+ < inf``."""

    func: GridFunction
    label: str = "custom"
    p_minus: float = field(init=False)
    p_plus: float = field(init=False)

    def __post_init__(self):
        v = self.func.values
        object.__setattr__(self, "p_minus", float(v.min()))
        object.__setattr__(self, "p_plus", float(v.max()))
        if self.p_minus < 1:
            raise SpaceConfigError(f"exponent must be >= 1, got p_- = {self.p_minus}")

    @property
    def grid(self) -> DyadicGrid:
        return self.func.grid

    @property
    def values(self) -> np.ndarray:
        return self.func.values

    @classmethod
    def parse(cls, text: str, grid: DyadicGrid) -> ExponentField:
        """``builtin:const:<p>``, ``builtin:bump:<eps>,<rho>`` or a CSV path."""
        if text.startswith("builtin:bump:"):
            eps, rho = (float(s) for s in text.split(":", 2)[2].split(","))
            x = grid.coordinates()[0]
            return cls(GridFunction(grid, bump_exponent(x, eps, rho)), text)
        if text.startswith("builtin:const:"):
            return cls(GridFunction.constant(grid, float(text.rsplit(":", 1)[1])), text)
        if text.startswith("builtin:"):
            raise SpaceConfigError(f"unknown builtin exponent {text!r}")
        f = read_grid_function(text)
        if f.grid != grid:
            raise SpaceConfigError(f"exponent file {text} lives on a different grid")
        return cls(f, text)


# --------------------------------------------------------------------------
# space variants


class Space:
    """A family ``X = {X_Q}`` of normalized local (quasi-)norms."""

    rearrangement_invariant = False

    @property
    def banach(self) -> bool:
        return True

    def batch_norms(self, vals: np.ndarray, batch: CubeBatch) -> np.ndarray:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError

    def __str__(self):
        return json.dumps(self.to_dict(), sort_keys=True)


@dataclass(frozen=True, eq=False)
class Lp(Space):
    """``(|Q|^{-1} int_Q |f|^p)^{1/p}``; a quasi-norm for ``p < 1``."""

    p: float
    rearrangement_invariant = True

    def __post_init__(self):
        if not (self.p > 0 and math.isfinite(self.p)):
            raise SpaceConfigError("Lp needs 0 < p < inf")

    @property
    def banach(self) -> bool:
        return self.p >= 1

    def batch_norms(self, vals, batch=None):
        a = np.abs(vals)
        if self.p == 1:
            return a.mean(axis=1)
        m = a.max(axis=1)
        safe = np.where(m > 0, m, 1.0)
        return m * np.mean((a / safe[:, None]) ** self.p, axis=1) ** (1.0 / self.p)

    def indicator_norm(self, r):
        return np.asarray(r, dtype=float) ** (1.0 / self.p)

    def to_dict(self):
        return {"space": "lp", "p": self.p}


@dataclass(frozen=True, eq=False)
class WeightedL1(Space):
    """``w(Q)^{-1} int_Q |f| w``."""

    weight: Weight

    def batch_norms(self, vals, batch):
        if batch.grid != self.weight.grid:
            raise DomainError("weight and function live on different grids")
        w = batch.take(self.weight.values)
        return np.sum(np.abs(vals) * w, axis=1) / np.sum(w, axis=1)

    def to_dict(self):
        return {"space": "weighted_l1", "weight": self.weight.label}


@dataclass(frozen=True, eq=False)
class Orlicz(Space):
    """Normalized Luxemburg norm; ``by_indicator_norm`` rescales so that ``||chi_Q|| = 1``."""

    phi: OrliczFunction
    normalization: str = "luxemburg_intrinsic"
    rearrangement_invariant = True

    def __post_init__(self):
        if self.normalization not in ("luxemburg_intrinsic", "by_indicator_norm"):
            raise SpaceConfigError(f"unknown normalization {self.normalization!r}")

    @property
    def banach(self) -> bool:
        return self.phi.convex

    @property
    def scale(self) -> float:
        return float(self.phi.inverse(1.0)) if self.normalization == "by_indicator_norm" else 1.0

    def batch_norms(self, vals, batch=None):
        n = vals.shape[1]
        return self.scale * luxemburg_rows(self.phi, vals, np.full(n, 1.0 / n))

    def indicator_norm(self, r):
        r = np.atleast_1d(np.asarray(r, dtype=float))
        a = np.tile([1.0, 0.0], (len(r), 1))
        w = np.stack([r, 1.0 - r], axis=1)
        return self.scale * luxemburg_rows(self.phi, a, w)

    def to_dict(self):
        d = {"space": "orlicz", "phi": str(self.phi)}
        if self.normalization != "luxemburg_intrinsic":
            d["normalization"] = self.normalization
        return d


@dataclass(frozen=True, eq=False)
class VariableExponent(Space):
    """``||f chi_Q||_{L^{p(.)}} / ||chi_Q||_{L^{p(.)}}`` with per-cell exponents."""

    exponent: ExponentField

    def batch_norms(self, vals, batch):
        if batch.grid != self.exponent.grid:
            raise DomainError("exponent field and function live on different grids")
        p = batch.take(self.exponent.values)
        logh = math.log(batch.grid.cell_measure)
        a = np.abs(vals)
        with np.errstate(divide="ignore"):
            num = modular_root(logh + p * np.log(a), p)
        den = modular_root(np.full(p.shape, logh), p)
        return np.exp(num - den)

    def to_dict(self):
        return {"space": "varexp", "exponent": self.exponent.label}


def space_from_dict(obj: dict, grid: DyadicGrid | None = None) -> Space:
    """Build a space from its JSON description (grid needed for weights/exponents)."""
    try:
        kind = obj["space"]
        if kind == "lp":
            return Lp(float(obj["p"]))
        if kind == "orlicz":
            return Orlicz(OrliczFunction.parse(obj["phi"]), obj.get("normalization", "luxemburg_intrinsic"))
        if kind in ("weighted_l1", "varexp") and grid is None:
            raise SpaceConfigError(f"space {kind!r} needs a grid")
        if kind == "weighted_l1":
            return WeightedL1(Weight.parse(obj["weight"], grid))
        if kind == "varexp":
            return VariableExponent(ExponentField.parse(obj["exponent"], grid))
    except KeyError as exc:
        raise SpaceConfigError(f"space description lacks field {exc}") from exc
    raise SpaceConfigError(f"unknown space kind {obj.get('space')!r}")


def parse_space(text: str, grid: DyadicGrid | None = None) -> Space:
    """Inline JSON or a path to a JSON file."""
    src = text
    if not text.lstrip().startswith("{"):
        path = Path(text)
        if not path.exists():
            raise SpaceConfigError(f"space description {text!r} is neither JSON nor an existing file")
        src = path.read_text()
    try:
        obj = json.loads(src)
    except json.JSONDecodeError as exc:
        raise SpaceConfigError(f"malformed space JSON: {exc}") from exc
    return space_from_dict(obj, grid)


# --------------------------------------------------------------------------
# single-cube operations


def _single(Q: GridCube) -> CubeBatch:
    return CubeBatch(Q.grid, Q.size, np.array([Q.corner], dtype=np.int64))


def local_norm(space: Space, f: GridFunction, Q: GridCube) -> float:
    """``||f||_{X_Q}``."""
    if Q.grid != f.grid:
        raise DomainError("cube does not belong to the function's grid")
    vals = Q.block(f.values).reshape(1, -1)
    return float(space.batch_norms(vals, _single(Q))[0])


def luxemburg_solve(phi: OrliczFunction, f: GridFunction, Q: GridCube) -> float:
    """``inf{alpha > 0 : |Q|^{-1} int_Q phi(|f|/alpha) <= 1}``; zero for ``f = 0`` on ``Q``."""
    if Q.grid != f.grid:
        raise DomainError("cube does not belong to the function's grid")
    vals = Q.block(f.values).reshape(1, -1)
    return float(luxemburg_rows(phi, vals, np.full(vals.shape[1], 1.0 / vals.shape[1]))[0])


def orlicz_modular(phi: OrliczFunction, f: GridFunction, Q: GridCube, alpha: float) -> float:
    """``|Q|^{-1} int_Q phi(|f|/alpha)`` (``inf`` on overflow)."""
    vals = np.abs(Q.block(f.values).ravel())
    with np.errstate(over="ignore"):
        v = float(np.mean(phi(vals / alpha)))
    return v


def normalization_check(space: Space, grid: DyadicGrid, policy: CubePolicy | str = ALL) -> tuple[float, float]:
    """Range of ``||chi_Q||_{X_Q}`` over the cubes of ``policy``."""
    policy = as_policy(policy, ALL)
    lo, hi = math.inf, -math.inf
    seen_sizes = set()
    for batch in iter_batches(grid, policy):
        if space.rearrangement_invariant:
            if batch.size in seen_sizes:
                continue
            seen_sizes.add(batch.size)
            batch = CubeBatch(grid, batch.size, batch.corners[:1])
        vals = np.ones((len(batch), batch.num_cells))
        norms = space.batch_norms(vals, batch)
        lo, hi = min(lo, float(norms.min())), max(hi, float(norms.max()))
    if not (lo > 0 and math.isfinite(hi)):
        raise SpaceConfigError(f"degenerate indicator norms: range ({lo}, {hi})")
    return lo, hi


# --------------------------------------------------------------------------
# indicator extremal problems: A_delta margin and psi


def _best_ratio(t: Fraction, nmax: int, below: bool) -> Fraction:
    """Closest fraction ``a/n`` with ``1 <= n <= nmax`` below (or above) ``t``.

    Stern-Brocot descent, i.e. the semiconvergents that Fraction.limit_denominator
    also inspects.
    """
    if t.denominator <= nmax:
        return t
    p0, q0, p1, q1 = 0, 1, 1, 0
    n, d = t.numerator, t.denominator
    while True:
        a = n // d
        q2 = q0 + a * q1
        if q2 > nmax:
            break
        p0, q0, p1, q1 = p1, q1, p0 + a * p1, q2
        n, d = d, n - a * d
    k = (nmax - q0) // q1
    lower_or_upper1 = Fraction(p0 + k * p1, q0 + k * q1)
    conv = Fraction(p1, q1)
    cands = [lower_or_upper1, conv]
    if below:
        return max(c for c in cands if c <= t)
    return min(c for c in cands if c >= t)


def _resolve(policy):
    """A :class:`CubePolicy` (or its string form) or an explicit list of :class:`CubeBatch`."""
    if isinstance(policy, (list, tuple)):
        return list(policy)
    return as_policy(policy, ALL)


def _batches(grid: DyadicGrid, policy, chunk: int = 1 << 18):
    if isinstance(policy, list):
        return iter(policy)
    return iter_batches(grid, policy, chunk=chunk)


def _cube_cell_counts(grid: DyadicGrid, policy) -> tuple[list[int] | None, int]:
    """Cell counts of the cubes in ``policy``; ``(None, nmax)`` means every ``1..nmax`` (1D)."""
    if isinstance(policy, list):
        return sorted({b.num_cells for b in policy}), 0
    if grid.dim == 1 and policy.kind in ("all", "max_side"):
        if policy.kind == "all":
            return None, grid.n
        kmax = int(math.floor(policy.param / grid.cell_edge * (1 + 1e-12)))
        return None, min(grid.n, kmax)
    if policy.kind == "dyadic":
        return [1 << (grid.dim * j) for j in range(grid.depth + 1)], 0
    sizes = sorted({b.size for b in iter_batches(grid, policy)})
    return [k**grid.dim for k in sizes], 0


def _ri_ratios(grid: DyadicGrid, policy, t: float, below: bool) -> Fraction:
    counts, nmax = _cube_cell_counts(grid, policy)
    tf = Fraction(t)
    if counts is None:
        if nmax < 1:
            raise DomainError("policy selects no cubes")
        return _best_ratio(tf, nmax, below)
    if below:
        return max(Fraction(math.floor(tf * n), n) for n in counts)
    return min(Fraction(min(math.ceil(tf * n), n), n) for n in counts)


def _ri_indicator_norm(space: Space, r) -> np.ndarray:
    r = np.atleast_1d(np.asarray(r, dtype=float))
    out = np.zeros(len(r))
    pos = r > 0
    if pos.any():
        out[pos] = space.indicator_norm(r[pos])
    return out


def _level_counts(batch: CubeBatch, onehot_prefix: np.ndarray) -> np.ndarray:
    """Integer count of cells per exponent level inside every cube of the batch."""
    k = batch.size
    c = batch.corners
    if batch.grid.dim == 1:
        S = onehot_prefix
        return S[c[:, 0] + k] - S[c[:, 0]]
    S = onehot_prefix
    i, j = c[:, 0], c[:, 1]
    return S[i + k, j + k] - S[i, j + k] - S[i + k, j] + S[i, j]


def _prefix_counts(counts: np.ndarray, s: np.ndarray, ascending: bool) -> np.ndarray:
    """Per-level counts of the ``s`` cells taken in (ascending / descending) level order."""
    c = counts if ascending else counts[:, ::-1]
    before = np.cumsum(c, axis=1) - c
    take = np.clip(s[:, None] - before, 0, c)
    return take if ascending else take[:, ::-1]


def _extremal_indicator_norms(space: Space, batch: CubeBatch, sizes: np.ndarray, maximize: bool, cache: dict):
    """``max`` (or ``min``) of ``||chi_E||_{X_Q}`` over ``E`` of ``sizes[i]`` cells, per cube.

    ``sizes`` has shape ``(T,)``; returns ``(T, B)``.  Exact for weighted L^1
    (sorted weights) and for variable exponents (the extremal set is a prefix
    of the cells sorted by exponent, in one of the two directions).
    """
    N = batch.num_cells
    if isinstance(space, WeightedL1):
        w = np.sort(batch.take(space.weight.values), axis=1)
        if maximize:
            w = w[:, ::-1]
        cs = np.concatenate([np.zeros((len(w), 1)), np.cumsum(w, axis=1)], axis=1)
        return cs[:, sizes].T / cs[:, -1][None, :]
    if isinstance(space, VariableExponent):
        field_ = space.exponent
        if "levels" not in cache:
            levels = np.unique(field_.values)
            onehot = (field_.values[..., None] == levels).astype(np.int64)
            if field_.grid.dim == 1:
                S = np.concatenate([np.zeros((1, len(levels)), np.int64), np.cumsum(onehot, axis=0)])
            else:
                S = np.zeros((field_.grid.n + 1, field_.grid.n + 1, len(levels)), np.int64)
                S[1:, 1:] = onehot.cumsum(0).cumsum(1)
            cache["levels"], cache["prefix"] = levels, S
        levels, S = cache["levels"], cache["prefix"]
        counts = _level_counts(batch, S)
        logh = math.log(batch.grid.cell_measure)
        with np.errstate(divide="ignore"):
            den = modular_root(np.log(counts) + logh, levels)
            out = np.empty((len(sizes), len(batch)))
            for ti, s in enumerate(sizes):
                svec = np.full(len(batch), s)
                best = None
                for asc in (True, False):
                    take = _prefix_counts(counts, svec, asc)
                    val = np.exp(modular_root(np.log(take) + logh, levels) - den)
                    best = val if best is None else (np.maximum(best, val) if maximize else np.minimum(best, val))
                out[ti] = best
        return out
    raise UnsupportedSpaceError(f"no extremal-subset search for {type(space).__name__}")


def a_delta_margin(space: Space, grid: DyadicGrid, delta: float, policy: CubePolicy | str = ALL) -> float:
    """``inf_Q min_{E subset Q, |E| >= delta |Q|} ||chi_E||_{X_Q}`` over the cubes of ``policy``.

    Subsets are unions of cells, so ``|E| >= delta|Q|`` means at least
    ``ceil(delta * N)`` of the cube's ``N`` cells.
    """
    return float(a_delta_curve(space, grid, [delta], policy)[0])


def a_delta_curve(space: Space, grid: DyadicGrid, deltas, policy: CubePolicy | str | list = ALL) -> np.ndarray:
    """:func:`a_delta_margin` at several ``delta``; ``policy`` may be an explicit list of cube batches."""
    policy = _resolve(policy)
    deltas = np.asarray(deltas, dtype=float)
    if np.any((deltas <= 0) | (deltas >= 1)):
        raise DomainError("delta must lie in (0, 1)")
    if space.rearrangement_invariant:
        ratios = [float(_ri_ratios(grid, policy, d, below=False)) for d in deltas]
        return _ri_indicator_norm(space, ratios)
    out = np.full(len(deltas), np.inf)
    cache: dict = {}
    for batch in _batches(grid, policy):
        N = batch.num_cells
        sizes = np.minimum(np.ceil(deltas * N - 1e-12).astype(int), N)
        vals = _extremal_indicator_norms(space, batch, sizes, maximize=False, cache=cache)
        out = np.minimum(out, vals.min(axis=1))
    return out


def psi(space: Space, grid: DyadicGrid, t: float, policy: CubePolicy | str = ALL) -> float:
    """``sup_Q sup_{E subset Q, |E| <= t|Q|} ||chi_E||_{X_Q}`` over the cubes of ``policy``.

    For spaces that are not rearrangement invariant and policies other than
    ``all`` this is a lower bound of the supremum over every cube.
    """
    return float(psi_curve(space, grid, [t], policy)[0])


def psi_curve(space: Space, grid: DyadicGrid, ts, policy: CubePolicy | str | list = ALL) -> np.ndarray:
    """:func:`psi` at several ``t`` in one sweep; ``policy`` may be an explicit list of cube batches."""
    policy = _resolve(policy)
    ts = np.asarray(ts, dtype=float)
    if np.any((ts <= 0) | (ts >= 1)):
        raise DomainError("t must lie in (0, 1)")
    if space.rearrangement_invariant:
        ratios = [float(_ri_ratios(grid, policy, t, below=True)) for t in ts]
        return _ri_indicator_norm(space, ratios)
    out = np.zeros(len(ts))
    cache: dict = {}
    for batch in _batches(grid, policy):
        N = batch.num_cells
        sizes = np.floor(ts * N + 1e-12).astype(int)
        vals = _extremal_indicator_norms(space, batch, sizes, maximize=True, cache=cache)
        out = np.maximum(out, vals.max(axis=1))
    return out


def psi_dyadic_integral(space: Space, grid: DyadicGrid, K: int, policy: CubePolicy | str = ALL) -> float:
    """``3 * sum_{k=1}^{K} psi(2^-k)``, the computable stand-in for ``int_0^1 psi(t) dt/t``."""
    if K < 1:
        raise DomainError("K must be >= 1")
    ts = 0.5 ** np.arange(1, K + 1)
    return float(3.0 * np.sum(psi_curve(space, grid, ts, policy)))


def varexp_indicator_norm(exponent: ExponentField, mask: np.ndarray) -> float:
    """Unnormalized ``||chi_E||_{L^{p(.)}}`` for a cell mask ``E``."""
    mask = np.asarray(mask, dtype=bool).reshape(exponent.grid.shape)
    if not mask.any():
        return 0.0
    p = exponent.values[mask][None, :]
    logw = np.full(p.shape, math.log(exponent.grid.cell_measure))
    return float(np.exp(modular_root(logw, p)[0]))


def fundamental_function(space: Space, t: float, grid: DyadicGrid | None = None) -> float:
    """``||chi_E||_X`` for ``|E| = t`` (rearrangement-invariant spaces only).

    ``L^p`` uses the unnormalized norm on the whole space, ``t**(1/p)``; Orlicz
    spaces use the normalized Luxemburg norm on the root cube of ``grid``.
    """
    if not space.rearrangement_invariant:
        raise UnsupportedSpaceError(f"{type(space).__name__} is not rearrangement invariant")
    if t <= 0:
        raise DomainError("t must be positive")
    if isinstance(space, Lp):
        return float(t ** (1.0 / space.p))
    if grid is None:
        raise DomainError("Orlicz fundamental function needs the root cube's grid")
    total = grid.root.measure
    if t > total * (1 + 1e-12):
        raise DomainError("t exceeds the root measure")
    return float(_ri_indicator_norm(space, [min(t / total, 1.0)])[0])
