"""bmox: BMO-type norms over normalized local function spaces on dyadic grids."""

from __future__ import annotations

import json
from importlib import resources

__version__ = "0.1.0"

from .bmo import (  # noqa: E402
    OscillationReport,
    bmo_mx_norm,
    bmo_norm,
    bmo_x_norm,
    bmo_x_star_norm,
    jn_decay_check,
    median_oscillation_norm,
)
from .dyadic import (  # noqa: E402
    ALL,
    DYADIC,
    CubePolicy,
    DyadicGrid,
    GridCube,
    GridFunction,
    maximal_operator,
    rearrangement,
    read_grid_function,
    write_grid_function,
)
from .errors import (  # noqa: E402
    BmoxError,
    DegenerateInputError,
    DomainError,
    NumericError,
    SpaceConfigError,
    UnsupportedSpaceError,
)
from .spaces import (  # noqa: E402
    ExponentField,
    Lp,
    Orlicz,
    OrliczFunction,
    VariableExponent,
    Weight,
    WeightedL1,
    a_delta_margin,
    local_norm,
    parse_space,
    psi,
    psi_dyadic_integral,
)
from .sparse import SparseFamily, cz_sparse_family, random_sparse, sparse_sum_norm, verify_sparse  # noqa: E402

SCHEMA_NAMES = ("norm", "bmo", "sparse", "ainfty", "psi", "criteria", "verify", "error")


def load_schema(name: str) -> dict:
    """JSON schema shipped for the output of CLI command ``name`` (or ``error``)."""
    if name not in SCHEMA_NAMES:
        raise KeyError(f"no schema named {name!r}")
    return json.loads(resources.files(__package__).joinpath("schemas", f"{name}.json").read_text())


__all__ = [n for n in dir() if not n.startswith("_") and n not in ("annotations", "json", "resources")]
