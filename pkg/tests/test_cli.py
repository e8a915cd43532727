import json
import subprocess
import sys

import jsonschema
import numpy as np
import pytest

from bmox import DyadicGrid, GridFunction, load_schema, write_grid_function
from bmox.cli import UsageError, main, parse_config

LP2 = '{"space":"lp","p":2}'
EXPL = '{"space":"orlicz","phi":"expL"}'


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def run_json(capsys, *argv):
    code, out, _ = run(capsys, *argv)
    return code, json.loads(out)


# ---------------------------------------------------------------- parse_config


def test_parse_defaults_filled():
    cfg = parse_config(["bmo", "--function", "f.csv", "--policy", "all"])
    assert cfg.command == "bmo" and cfg.function == "f.csv" and cfg.policy == "all"
    assert cfg.format == "json" and cfg.dim == 1 and cfg.eta == 0.5 and cfg.jobs == 1 and cfg.extra["kind"] == "classic"


def test_parse_inline_space():
    cfg = parse_config(["norm", "--space", LP2, "--function", "builtin:staircase:7", "--depth", "10"])
    assert cfg.space == LP2 and cfg.depth == 10


@pytest.mark.parametrize(
    "argv",
    [
        ["bmo", "--function", "builtin:linear", "--depth", "40"],
        ["bmo", "--function", "builtin:linear", "--depth", "0"],
        ["norm", "--function", "builtin:linear"],
        ["norm", "--space", "{bad", "--function", "builtin:linear"],
        ["bmo"],
        ["bmo", "--function", "builtin:linear", "--kind", "star"],
        ["bmo", "--function", "builtin:linear", "--dim", "3"],
        ["bmo", "--function", "builtin:linear", "--policy", "weird"],
        ["sparse", "--eta", "1.5"],
        ["ainfty"],
        ["psi", "--t", "0.5"],
        ["frobnicate"],
    ],
)
def test_parse_errors(argv):
    with pytest.raises(UsageError):
        parse_config(argv)


def test_usage_error_exit_code(capsys):
    code, out, err = run(capsys, "bmo", "--function", "builtin:linear", "--depth", "40")
    assert code == 2 and "depth" in err and out == ""


# ---------------------------------------------------------------- commands and schemas


def _validate(name, doc):
    jsonschema.validate(doc, load_schema(name))


def test_norm_command(capsys):
    code, doc = run_json(capsys, "norm", "--space", LP2, "--function", "builtin:staircase:7", "--depth", "10")
    assert code == 0
    _validate("norm", doc)
    x = np.arange(1024)
    vals = sum((x < (1024 >> k)).astype(float) for k in range(8))
    assert doc["norm"] == pytest.approx(np.sqrt(np.mean(vals**2)), rel=1e-14)


@pytest.mark.parametrize("kind", ["classic", "x", "star", "mx", "median"])
def test_bmo_command(capsys, kind):
    code, doc = run_json(capsys, "bmo", "--function", "builtin:logsingularity:0.3", "--depth", "7", "--kind", kind, "--space", EXPL)
    assert code == 0 and doc["kind"] == kind
    _validate("bmo", doc)


def test_bmo_from_file(capsys, tmp_path):
    g = DyadicGrid(1, 2)
    p = tmp_path / "f.csv"
    write_grid_function(GridFunction.indicator(g, [1, 1, 0, 0]), p)
    code, doc = run_json(capsys, "bmo", "--function", str(p), "--policy", "all")
    assert code == 0 and doc["norm"] == 0.5


@pytest.mark.parametrize("extra", [[], ["--function", "builtin:staircase:7"], ["--space", LP2, "--dim", "2", "--depth", "4"]])
def test_sparse_command(capsys, extra):
    code, doc = run_json(capsys, "sparse", "--seed", "1", "--depth", "8", *extra)
    assert code == 0 and doc["eta_actual"] >= 0.5 and doc["layer_ok"]
    _validate("sparse", doc)


def test_ainfty_constant_weight(capsys):
    code, doc = run_json(capsys, "ainfty", "--weight", "builtin:const", "--depth", "8", "--seeds", "2")
    assert code == 0 and doc["fujii_wilson"] == 1.0
    _validate("ainfty", doc)


def test_psi_command(capsys):
    code, doc = run_json(capsys, "psi", "--space", LP2, "--t", "0.25,0.5", "--depth", "6")
    assert code == 0 and [v["psi"] for v in doc["values"]] == pytest.approx([0.5, 0.5**0.5])
    _validate("psi", doc)
    code, doc = run_json(capsys, "psi", "--exponent", "builtin:bump:0.2,1.5", "--K", "4", "--depth", "6")
    assert code == 0 and doc["dyadic_integral"] > 0
    _validate("psi", doc)


def test_criteria_command(capsys):
    code, doc = run_json(capsys, "criteria", "--space", LP2, "--depth", "7", "--seeds", "2")
    assert code == 0 and doc["corpus"] == "bmo-corpus-v1" and len(doc["corpus_members"]) == 16
    _validate("criteria", doc)


@pytest.mark.parametrize(
    "argv",
    [
        ["exp-weight", "--Lmax", "16", "--depth", "8"],
        ["varexp", "--m", "4,64", "--depth-per-unit", "0"],
        ["orlicz", "--pairs", "1:1", "--K", "16"],
        ["mw", "--weight", "builtin:const", "--depth", "6"],
    ],
)
def test_verify_commands(capsys, argv):
    code, doc = run_json(capsys, "verify", *argv)
    assert code == 0 and doc["passed"]
    _validate("verify", doc)


def test_verify_failure_exit_code(capsys):
    # from m = 4 to m = 16 the indicator ratio drops by less than half
    code, doc = run_json(capsys, "verify", "varexp", "--m", "4,16", "--depth-per-unit", "0")
    assert code == 1 and not doc["passed"] and not doc["verdicts"]["a_eps_fails"]


def test_csv_output_and_out_file(capsys, tmp_path):
    out = tmp_path / "r.csv"
    code, stdout, _ = run(capsys, "verify", "orlicz", "--pairs", "1:1", "--K", "16", "--format", "csv", "--out", str(out))
    assert code == 0 and stdout == ""
    lines = out.read_text().splitlines()
    assert lines[0].startswith("table,") and len(lines) == 2
    code, stdout, _ = run(capsys, "ainfty", "--weight", "builtin:const", "--depth", "5", "--format", "csv", "--seeds", "1")
    assert stdout.splitlines()[0] == "key,value" and "fujii_wilson,1.0" in stdout


def test_config_error_exit_two(capsys):
    code, doc = run_json(capsys, "bmo", "--function", "/no/such.csv")
    assert code == 2 and doc["error"]["type"] == "SpaceConfigError"
    _validate("error", doc)
    code, doc = run_json(capsys, "norm", "--function", "builtin:linear", "--space", '{"space":"lp","p":-2}')
    assert code == 2


def test_library_error_exit_three(capsys):
    code, doc = run_json(capsys, "bmo", "--function", "builtin:unknown", "--depth", "4")
    assert code == 3 and doc["error"]["type"] == "DomainError"
    _validate("error", doc)


# ---------------------------------------------------------------- determinism


def test_sparse_output_is_byte_identical(capsys):
    argv = ["sparse", "--function", "builtin:staircase:7", "--eta", "0.5", "--seed", "1"]
    a = run(capsys, *argv)[1]
    b = run(capsys, *argv)[1]
    assert a == b and a


def test_console_script_entry_point():
    res = subprocess.run(
        [sys.executable, "-m", "bmox.cli", "ainfty", "--weight", "builtin:const", "--depth", "4", "--seeds", "1"],
        capture_output=True,
        text=True,
        check=False,
    )
    assert res.returncode == 0 and json.loads(res.stdout)["fujii_wilson"] == 1.0
