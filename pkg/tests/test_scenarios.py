import math

import numpy as np
import pytest
from scipy.integrate import quad

from bmox import DyadicGrid, GridFunction
from bmox.bmo import bmo_norm, bmo_x_star_norm
from bmox.scenarios import (
    classical_oscillation_monotone,
    parallel_map,
    recompute_verdicts,
    run_exp_weight,
    run_mw,
    run_orlicz_scaling,
    run_varexp,
    star_oscillation_monotone,
)
from bmox.spaces import Orlicz, OrliczFunction, Weight, WeightedL1, psi


@pytest.fixture(scope="module")
def exp_report():
    return run_exp_weight([1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0], depth=10)


def test_exp_weight_verdicts(exp_report):
    assert exp_report.passed, exp_report.verdicts
    assert recompute_verdicts(exp_report) == exp_report.verdicts


def test_exp_weight_classical_is_quarter_length(exp_report):
    h = exp_report.params["cell_width"]
    for row in exp_report.table:
        assert abs(row["classical"] - row["L"] / 4) <= h * 4


def test_exp_weight_star_stays_bounded(exp_report):
    stars = [r["star"] for r in exp_report.table]
    assert max(stars) <= 2
    assert stars[-1] == pytest.approx(math.log(2), abs=1e-2)


def test_exp_weight_fast_paths_match_generic_sweeps():
    g = DyadicGrid(1, 6, side=8.0)
    x = g.coordinates()[0]
    f = GridFunction(g, x)
    w = Weight(GridFunction(g, np.exp(x - x.max())))
    assert classical_oscillation_monotone(x)[0] == pytest.approx(bmo_norm(f, "all").norm, rel=1e-12)
    got = star_oscillation_monotone(x, w.values)[0]
    assert got == pytest.approx(bmo_x_star_norm(f, WeightedL1(w), "all").norm, rel=1e-12)


@pytest.mark.parametrize("a,b", [(0.0, 1.0), (2.0, 5.5), (10.0, 30.0)])
def test_exp_weight_mass_concentration(a, b):
    mass = quad(math.exp, a, b)[0]
    assert math.exp(b) * (1 - math.exp(-1)) <= mass <= math.exp(b)


def test_varexp_closed_forms():
    rep = run_varexp(0.2, 0.5, 1.5, [4, 16], depth_per_unit=1)
    assert rep.verdicts["closed_form_E"] and rep.verdicts["closed_form_F"]
    for row in rep.table:
        assert row["norm_E"] == pytest.approx(math.sqrt(0.2 * row["m"]), rel=1e-6)
        assert row["norm_F"] == pytest.approx((1 - 1.5 * 0.2) * row["m"], rel=1e-6)
    assert recompute_verdicts(rep) == rep.verdicts


def test_varexp_a_eps_ratio_decays():
    rep = run_varexp(0.2, 0.5, 1.5, [4, 64], depth_per_unit=0)
    r = {row["m"]: row["ratio_E_I"] for row in rep.table}
    assert r[64] < 0.5 * r[4]
    for row in rep.table:
        assert row["ratio_E_I"] == pytest.approx(row["norm_E"] / row["norm_I"], rel=1e-12)


def test_orlicz_scaling_small():
    rep = run_orlicz_scaling([(1.0, 1.0), (2.0, 2.0)], K=16)
    assert rep.passed, rep.verdicts
    for row in rep.table:
        assert 1 / 6 <= row["ratio"] <= 6
        assert row["indicator_norm"] == pytest.approx(row["indicator_norm_expected"], rel=1e-9)


def test_orlicz_psi_at_full_measure():
    g = DyadicGrid(1, 10)
    phi = OrliczFunction.parse("power_log:3,1")
    near_one = psi(Orlicz(phi), g, 1 - 2.0**-10)
    assert near_one == pytest.approx(1 / phi.inverse(1.0), rel=1e-3)


def test_mw_constant_weight_exact():
    rep = run_mw("const", 7)
    assert rep.passed, rep.verdicts
    assert all(row["x_equals_classical"] for row in rep.table)
    assert all(row["bmo_x"] == row["bmo"] for row in rep.table)
    assert all(row["bmo_x_star"] <= row["bmo_x"] for row in rep.table)


def test_mw_power_weight():
    rep = run_mw("power:0.3", 8)
    assert rep.passed, rep.verdicts
    assert max(r["max_ratio"] for r in rep.table) <= 8
    assert recompute_verdicts(rep) == rep.verdicts


def test_mw_rejects_out_of_range_power():
    with pytest.raises(Exception):
        run_mw("power:0.7", 6)


def _square(x):
    return x * x


def test_parallel_map_preserves_order():
    items = list(range(23))
    assert parallel_map(_square, items, jobs=1) == parallel_map(_square, items, jobs=3) == [i * i for i in items]


def test_reports_serialize(exp_report):
    d = exp_report.to_dict()
    assert set(d) == {"scenario", "params", "table", "extra", "verdicts", "tolerances", "passed"}
    csv = exp_report.to_csv().splitlines()
    assert csv[0].startswith("table,")
    assert len(csv) == 1 + len(exp_report.table) + sum(len(v) for v in exp_report.extra.values())
