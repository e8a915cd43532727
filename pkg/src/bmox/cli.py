"""Command-line entry point: ``bmox <command> [flags]``.

Exit codes: 0 success, 1 failed verdict (``verify``), 2 usage or
configuration error, 3 any other library error (a JSON error record is
printed).
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .bmo import bmo_mx_norm, bmo_norm, bmo_x_norm, bmo_x_star_norm, median_oscillation_norm
from .corpus import CORPUS_VERSION, bmo_corpus, builtin_function
from .criteria import Budget, ainfty_report, embedding_constants
from .dyadic import CubePolicy, DyadicGrid, GridCube, GridFunction, read_grid_function
from .errors import BmoxError, DomainError, SpaceConfigError
from .scenarios import run_exp_weight, run_mw, run_orlicz_scaling, run_varexp
from .spaces import (
    ExponentField,
    VariableExponent,
    Weight,
    local_norm,
    normalization_check,
    parse_space,
    psi_curve,
    psi_dyadic_integral,
)
from .sparse import cz_sparse_family, random_sparse, sparse_sum_norm, verify_sparse

COMMANDS = ("norm", "bmo", "sparse", "ainfty", "psi", "criteria", "verify")
SCENARIOS = ("exp-weight", "varexp", "orlicz", "mw")
MIN_DEPTH, MAX_CLI_DEPTH = 1, 16


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


@dataclass
class CliConfig:
    command: str
    space: str | None = None
    function: str | None = None
    weight: str | None = None
    exponent: str | None = None
    depth: int | None = None
    dim: int = 1
    policy: str = "dyadic"
    eta: float = 0.5
    seed: int = 0
    format: str = "json"
    out: str | None = None
    jobs: int = 1
    extra: dict = field(default_factory=dict)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--space", help="space description: inline JSON or a path to a JSON file")
    p.add_argument("--function", help="CSV grid function path or builtin:<tag>")
    p.add_argument("--weight", help="weight: builtin:const|builtin:exp|builtin:power:<a> or a CSV path")
    p.add_argument("--exponent", help="exponent field: builtin:bump:<eps>,<rho> or a CSV path")
    p.add_argument("--depth", type=int, help="grid depth, 1..16")
    p.add_argument("--dim", type=int, default=1, choices=(1, 2))
    p.add_argument("--policy", default="dyadic", help="all | dyadic | max_side:<s> | max_count:<n>")
    p.add_argument("--eta", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", default="json", choices=("json", "csv"))
    p.add_argument("--out", help="write the report to this file instead of stdout")
    p.add_argument("--jobs", type=int, default=1, help="worker processes (output does not depend on it)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bmox", description="BMO-type norms on dyadic grids.")
    parser.add_argument("--version", action="version", version=f"bmox {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("norm", help="local norm of a function on a cube")
    _common(p)
    p.add_argument("--cube", help="corner,size in cells (default: the root)")

    p = sub.add_parser("bmo", help="BMO-type norm of a function")
    _common(p)
    p.add_argument("--kind", default="classic", choices=("classic", "x", "star", "mx", "median"))

    p = sub.add_parser("sparse", help="stopping-time or seeded random sparse family")
    _common(p)

    p = sub.add_parser("ainfty", help="Fujii-Wilson constant and sparse sums of a weight")
    _common(p)
    p.add_argument("--seeds", type=int, default=8, help="random families per root")
    p.add_argument("--root-levels", type=int, default=4)

    p = sub.add_parser("psi", help="worst indicator norm at relative measure t")
    _common(p)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--t", help="comma-separated values in (0, 1)")
    g.add_argument("--K", type=int, help="dyadic integral 3 * sum_{k=1}^K psi(2^-k)")

    p = sub.add_parser("criteria", help="search estimates of the four embedding constants")
    _common(p)
    p.add_argument("--seeds", type=int, default=16)

    p = sub.add_parser("verify", help="run a scenario and check its verdicts")
    _common(p)
    p.add_argument("scenario", choices=SCENARIOS)
    p.add_argument("--Lmax", type=float, default=64.0)
    p.add_argument("--eps", type=float, default=0.2)
    p.add_argument("--delta", type=float, default=0.5)
    p.add_argument("--rho", type=float, default=1.5)
    p.add_argument("--m", default="4,16,64", help="comma-separated m values")
    p.add_argument("--depth-per-unit", type=int, default=2)
    p.add_argument("--pairs", default="1:1,1:4,3:1", help="p:alpha pairs, comma-separated")
    p.add_argument("--K", type=int, default=20)
    return parser


_COMMON_KEYS = {"command", "space", "function", "weight", "exponent", "depth", "dim", "policy", "eta", "seed", "format", "out", "jobs"}


def parse_config(argv) -> CliConfig:
    """Parse and validate ``argv``; raises :class:`UsageError` on any problem."""
    args = vars(build_parser().parse_args(list(argv)))
    cfg = CliConfig(**{k: v for k, v in args.items() if k in _COMMON_KEYS})
    cfg.extra = {k: v for k, v in args.items() if k not in _COMMON_KEYS}
    if cfg.depth is not None and not MIN_DEPTH <= cfg.depth <= MAX_CLI_DEPTH:
        raise UsageError(f"--depth must lie in [{MIN_DEPTH}, {MAX_CLI_DEPTH}], got {cfg.depth}")
    if not 0 < cfg.eta < 1:
        raise UsageError("--eta must lie in (0, 1)")
    if cfg.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    try:
        CubePolicy.parse(cfg.policy)
    except (DomainError, ValueError) as exc:
        raise UsageError(f"--policy: {exc}") from exc
    if cfg.space is not None and cfg.space.lstrip().startswith("{"):
        try:
            json.loads(cfg.space)
        except json.JSONDecodeError as exc:
            raise UsageError(f"--space: malformed JSON ({exc.msg})") from exc
    need_function = {"norm", "bmo"}
    need_space = {"norm", "criteria"}
    if cfg.command in need_function and not cfg.function:
        raise UsageError(f"{cfg.command}: --function is required")
    if cfg.command in need_space and not cfg.space:
        raise UsageError(f"{cfg.command}: --space is required")
    if cfg.command == "bmo" and cfg.extra["kind"] in ("x", "star", "mx") and not cfg.space:
        raise UsageError(f"bmo --kind {cfg.extra['kind']}: --space is required")
    if cfg.command == "psi" and not (cfg.space or cfg.exponent):
        raise UsageError("psi: --space or --exponent is required")
    if cfg.command == "ainfty" and not cfg.weight:
        raise UsageError("ainfty: --weight is required")
    return cfg


# --------------------------------------------------------------------------
# helpers


def _grid(cfg: CliConfig, default_depth: int = 10) -> DyadicGrid:
    return DyadicGrid(cfg.dim, cfg.depth if cfg.depth is not None else default_depth)


def _function(cfg: CliConfig) -> GridFunction:
    src = cfg.function
    if src.startswith("builtin:"):
        return builtin_function(src[len("builtin:") :], _grid(cfg))
    if not Path(src).exists():
        raise SpaceConfigError(f"function file {src!r} does not exist")
    return read_grid_function(src)


def _space(cfg: CliConfig, grid: DyadicGrid):
    space = parse_space(cfg.space, grid)
    return space


def _weight(cfg: CliConfig, grid: DyadicGrid | None = None) -> Weight:
    return Weight.parse(cfg.weight, grid or _grid(cfg))


def _grid_dict(grid: DyadicGrid) -> dict:
    return {"dim": grid.dim, "depth": grid.depth, "side": grid.side, "origin": list(grid.origin)}


def _clean(obj):
    """JSON-safe copy: non-finite floats become strings, numpy scalars become Python numbers."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else ("inf" if v > 0 else "-inf" if v < 0 else "nan")
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _flatten(obj, prefix="") -> list[tuple[str, object]]:
    if isinstance(obj, dict):
        out = []
        for k in sorted(obj):
            out += _flatten(obj[k], f"{prefix}.{k}" if prefix else str(k))
        return out
    if isinstance(obj, list):
        out = []
        for i, v in enumerate(obj):
            out += _flatten(v, f"{prefix}[{i}]")
        return out
    return [(prefix, obj)]


def render(report: dict, fmt: str, csv_text: str | None = None) -> str:
    report = _clean(report)
    if fmt == "json":
        return json.dumps(report, sort_keys=True, indent=2) + "\n"
    if csv_text is not None:
        return csv_text
    lines = ["key,value"] + [f"{k},{json.dumps(v) if isinstance(v, str) else v}" for k, v in _flatten(report)]
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# commands


def _cmd_norm(cfg):
    f = _function(cfg)
    grid = f.grid
    space = _space(cfg, grid)
    Q = grid.root
    if cfg.extra.get("cube"):
        try:
            *corner, size = (int(s) for s in cfg.extra["cube"].split(","))
        except ValueError as exc:
            raise UsageError("--cube expects corner,...,size") from exc
        Q = GridCube(grid, tuple(corner), size)
    lo, hi = normalization_check(space, grid, "dyadic")
    return {
        "command": "norm",
        "function": cfg.function,
        "grid": _grid_dict(grid),
        "space": space.to_dict(),
        "cube": Q.to_dict(),
        "norm": local_norm(space, f, Q),
        "indicator_norm_range": [lo, hi],
    }, 0


def _cmd_bmo(cfg):
    f = _function(cfg)
    kind = cfg.extra["kind"]
    policy = cfg.policy
    space = None
    if kind == "classic":
        rep = bmo_norm(f, policy)
    elif kind == "median":
        rep = median_oscillation_norm(f, policy)
    else:
        space = _space(cfg, f.grid)
        if kind == "x":
            rep = bmo_x_norm(f, space, policy)
        elif kind == "star":
            rep = bmo_x_star_norm(f, space, policy)
        else:
            rep = bmo_mx_norm(f, space)
    out = {"command": "bmo", "kind": kind, "function": cfg.function, "grid": _grid_dict(f.grid), **rep.to_dict()}
    out["space"] = None if space is None else space.to_dict()
    out.setdefault("upper_bound", False)
    return out, 0


def _cmd_sparse(cfg):
    if cfg.function:
        f = _function(cfg)
        grid = f.grid
        fam, C = cz_sparse_family(f, grid.root, cfg.eta)
        mode = "cz"
    else:
        grid = _grid(cfg)
        fam, C = random_sparse(grid, grid.root, cfg.eta, cfg.seed), None
        mode = "random"
    eta_actual, layer_ok = verify_sparse(fam)
    out = {
        "command": "sparse",
        "mode": mode,
        "function": cfg.function,
        "seed": cfg.seed,
        "grid": _grid_dict(grid),
        "family": fam.to_dict(),
        "size": len(fam),
        "eta_actual": eta_actual,
        "layer_ok": layer_ok,
        "layer_counts": fam.layer_counts(),
        "domination_constant": C,
    }
    if cfg.space:
        out["sparse_sum_norm"] = sparse_sum_norm(fam, _space(cfg, grid))
    return out, 0


def _cmd_ainfty(cfg):
    if cfg.weight.startswith("builtin:"):
        w = _weight(cfg)
    else:
        w = Weight(read_grid_function(cfg.weight), cfg.weight)
    budget = Budget(seeds=cfg.extra["seeds"], root_levels=cfg.extra["root_levels"], policy=CubePolicy.parse(cfg.policy))
    rep = ainfty_report(w, w.grid, budget)
    return {"command": "ainfty", "weight": cfg.weight, "grid": _grid_dict(w.grid), **rep.to_dict()}, 0


def _cmd_psi(cfg):
    K = cfg.extra.get("K")
    grid = _grid(cfg, default_depth=max(10, K or 0) if cfg.depth is None else cfg.depth)
    if cfg.exponent and cfg.space is None:
        space = VariableExponent(ExponentField.parse(cfg.exponent, grid))
    else:
        space = _space(cfg, grid)
    out = {"command": "psi", "grid": _grid_dict(grid), "space": space.to_dict(), "policy": cfg.policy}
    if K is not None:
        if K < 1:
            raise UsageError("--K must be >= 1")
        out["K"] = K
        out["dyadic_integral"] = psi_dyadic_integral(space, grid, K, cfg.policy)
    else:
        try:
            ts = [float(s) for s in cfg.extra["t"].split(",")]
        except ValueError as exc:
            raise UsageError("--t expects comma-separated numbers") from exc
        vals = psi_curve(space, grid, ts, cfg.policy)
        out["values"] = [{"t": t, "psi": float(v)} for t, v in zip(ts, vals)]
    return out, 0


def _cmd_criteria(cfg):
    grid = _grid(cfg)
    if grid.dim != 1:
        raise UsageError("criteria uses the one-dimensional versioned corpus; pass --dim 1")
    space = _space(cfg, grid)
    corpus = bmo_corpus(grid)
    budget = Budget(seeds=cfg.extra["seeds"], chain_seeds=cfg.extra["seeds"], eta=cfg.eta, policy=CubePolicy.parse(cfg.policy))
    rep = embedding_constants(space, grid, [m.func for m in corpus], budget, CORPUS_VERSION)
    out = {
        "command": "criteria",
        "grid": _grid_dict(grid),
        "corpus_members": [m.label for m in corpus],
        **rep.to_dict(),
    }
    out["space"] = space.to_dict()
    return out, 0


def _cmd_verify(cfg):
    ex = cfg.extra
    name = ex["scenario"]
    if name == "exp-weight":
        Lmax = ex["Lmax"]
        Ls = [2.0**j for j in range(0, 64) if 2.0**j < Lmax] + [Lmax]
        rep = run_exp_weight(Ls, cfg.depth or 12, jobs=cfg.jobs)
    elif name == "varexp":
        try:
            ms = [int(s) for s in ex["m"].split(",")]
        except ValueError as exc:
            raise UsageError("--m expects comma-separated integers") from exc
        rep = run_varexp(ex["eps"], ex["delta"], ex["rho"], ms, ex["depth_per_unit"], jobs=cfg.jobs)
    elif name == "orlicz":
        try:
            pairs = [tuple(float(x) for x in s.split(":")) for s in ex["pairs"].split(",")]
        except ValueError as exc:
            raise UsageError("--pairs expects p:alpha items") from exc
        if any(len(p) != 2 for p in pairs):
            raise UsageError("--pairs expects p:alpha items")
        rep = run_orlicz_scaling(pairs, ex["K"], jobs=cfg.jobs)
    else:
        tag = (cfg.weight or "const").removeprefix("builtin:")
        rep = run_mw(tag, cfg.depth or 10, cfg.policy, jobs=cfg.jobs)
    body = {"command": "verify", **rep.to_dict()}
    return (body, rep.to_csv()), 0 if rep.passed else 1


_DISPATCH = {
    "norm": _cmd_norm,
    "bmo": _cmd_bmo,
    "sparse": _cmd_sparse,
    "ainfty": _cmd_ainfty,
    "psi": _cmd_psi,
    "criteria": _cmd_criteria,
    "verify": _cmd_verify,
}


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def execute(cfg: CliConfig) -> int:
    """Run a validated configuration; returns the exit code."""
    try:
        result, code = _DISPATCH[cfg.command](cfg)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    except SpaceConfigError as exc:
        _emit(render(_error_record(cfg, exc), "json"), None)
        return 2
    except BmoxError as exc:
        _emit(render(_error_record(cfg, exc), "json"), None)
        return 3
    csv_text = None
    if isinstance(result, tuple):
        result, csv_text = result
    _emit(render(result, cfg.format, csv_text if cfg.format == "csv" else None), cfg.out)
    return code


def _error_record(cfg: CliConfig, exc: Exception) -> dict:
    return {"error": {"type": type(exc).__name__, "message": str(exc), "command": cfg.command}}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        cfg = parse_config(argv)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    return execute(cfg)


if __name__ == "__main__":
    raise SystemExit(main())
