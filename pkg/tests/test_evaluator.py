import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from esd_pinn.esd_model import rhs_array
from esd_pinn.evaluator import (
    ComparisonReport,
    GridMismatch,
    build_report,
    compare_metrics,
    finite_diff_derivatives,
    residual_mse,
)
from esd_pinn.rk45 import ToleranceSpec, integrate
from esd_pinn.solution import SolutionTable


def table(times, cols):
    return SolutionTable(np.asarray(times, float), np.column_stack(cols))


def test_central_difference_exact_on_quadratic():
    t = np.array([0.0, 0.1, 0.2])
    d = finite_diff_derivatives(table(t, [t**2] * 4))
    np.testing.assert_allclose(d[1], 0.2, rtol=1e-14)
    # the three-point end stencils are exact on quadratics as well
    np.testing.assert_allclose(d[:, 0], 2 * t, atol=1e-14)


def test_constant_table_has_zero_derivative():
    t = np.linspace(0, 1, 10)
    d = finite_diff_derivatives(table(t, [np.full(10, 3.0)] * 4))
    assert np.all(d == 0)


def test_sine_derivative_error():
    t = np.linspace(0, 10, 1000)
    d = finite_diff_derivatives(table(t, [np.sin(t)] * 4))
    assert np.abs(d[:, 0] - np.cos(t)).max() <= 1e-4


def test_first_order_edges():
    t = np.linspace(0, 1, 11)
    d = finite_diff_derivatives(table(t, [t**2] * 4), edge_order=1)
    assert d[0, 0] == pytest.approx(0.1, rel=1e-12)
    with pytest.raises(ValueError):
        finite_diff_derivatives(table(t, [t] * 4), edge_order=3)


def test_non_uniform_grid_rejected():
    t = np.array([0.0, 0.1, 0.3, 0.4])
    with pytest.raises(ValueError, match="uniform"):
        finite_diff_derivatives(table(t, [t] * 4))


def test_too_few_points():
    with pytest.raises(ValueError):
        finite_diff_derivatives(table([0.0, 1.0], [[0.0, 1.0]] * 4))


def test_equilibrium_residual_is_zero(params):
    t = np.linspace(0, 5, 50)
    assert np.all(residual_mse(table(t, [np.zeros(50)] * 4), params) == 0)


def test_noise_increases_residual(params, x0):
    t = np.linspace(0, 20, 2000)
    tab = integrate(params, x0, (0, 20), ToleranceSpec(1e-10, 1e-10), t)
    base = residual_mse(tab, params)
    rng = np.random.default_rng(0)
    for k in range(4):
        noisy = tab.states.copy()
        noisy[:, k] += 1e-4 * rng.standard_normal(t.size)
        worse = residual_mse(SolutionTable(t, noisy), params)
        assert worse[k] > base[k]


def test_residual_is_time_shift_invariant(params, x0):
    t = np.linspace(0, 10, 500)
    tab = integrate(params, x0, (0, 10), ToleranceSpec(), t)
    shifted = SolutionTable(t + 37.0, tab.states)
    # shifting the time origin alters the rounding of the grid spacing at ~1e-15
    np.testing.assert_allclose(residual_mse(shifted, params), residual_mse(tab, params), rtol=1e-9)


def test_residual_with_exact_derivatives(params):
    t = np.linspace(0, 1, 20)
    states = np.tile([0.82, 0.29, 0.48, 0.1], (20, 1))
    d = rhs_array(params, states)
    assert np.all(residual_mse(SolutionTable(t, states), params, derivatives=d) == 0)


def test_metrics_identical_tables():
    t = np.linspace(0, 1, 30)
    a = table(t, [np.sin(t), np.cos(t), t, t**2])
    for m in compare_metrics(a, a).values():
        assert m.r_squared == 1.0
        assert m.mae == m.mse == m.rmse == 0.0


def test_metrics_hand_case():
    ref = table([0, 1, 2], [[1.0, 2.0, 3.0]] * 4)
    cand = table([0, 1, 2], [[2.0, 3.0, 4.0]] * 4)
    m = compare_metrics(ref, cand)["x1"]
    # sum (y - yhat)^2 = 3, sum (y - ybar)^2 = 2
    assert m.r_squared == pytest.approx(-0.5, abs=1e-15)
    assert (m.mae, m.mse, m.rmse) == (1.0, 1.0, 1.0)


def test_metrics_offset_by_one():
    t = np.linspace(0, 3, 40)
    y = np.sin(t)
    m = compare_metrics(table(t, [y] * 4), table(t, [y + 1] * 4))["x3"]
    sst = np.sum((y - y.mean()) ** 2)
    assert m.mae == pytest.approx(1.0) and m.mse == pytest.approx(1.0) and m.rmse == pytest.approx(1.0)
    assert m.r_squared == pytest.approx(1 - 40 / sst, rel=1e-12)


def test_constant_reference_gives_undefined_r2():
    t = np.linspace(0, 1, 5)
    m = compare_metrics(table(t, [np.ones(5)] * 4), table(t, [np.zeros(5)] * 4))["x2"]
    assert m.r_squared is None
    assert m.mae == 1.0 and m.rmse == 1.0


def test_swapping_roles_changes_only_r2():
    t = np.linspace(0, 1, 6)
    a = table(t, [np.array([0.0, 1, 2, 3, 4, 5])] * 4)
    b = table(t, [np.array([0.0, 0.5, 2.5, 3, 3, 6])] * 4)
    ab, ba = compare_metrics(a, b)["x1"], compare_metrics(b, a)["x1"]
    assert ab.r_squared != pytest.approx(ba.r_squared)
    assert (ab.mae, ab.mse, ab.rmse) == (ba.mae, ba.mse, ba.rmse)


def test_grid_mismatch():
    a = table([0, 1, 2], [[0.0, 1, 2]] * 4)
    b = table([0, 1, 2.5], [[0.0, 1, 2]] * 4)
    with pytest.raises(GridMismatch, match="index 2"):
        compare_metrics(a, b)
    with pytest.raises(GridMismatch):
        compare_metrics(a, table([0, 1], [[0.0, 1]] * 4))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-10, 10, allow_nan=False), min_size=3, max_size=40),
       st.floats(-1, 1, allow_nan=False))
def test_rmse_squared_is_mse(values, shift):
    y = np.array(values)
    t = np.arange(y.size, dtype=float)
    rng = np.random.default_rng(len(values))
    ref = table(t, [y, y, y, y])
    cand = table(t, [y + shift, y * 0.5, y + rng.standard_normal(y.size), y])
    for m in compare_metrics(ref, cand).values():
        assert m.rmse**2 == pytest.approx(m.mse, rel=1e-12, abs=1e-300)
        assert m.mae >= 0
        assert m.r_squared is None or m.r_squared <= 1.0


def test_report_round_trip_and_render(params, x0):
    t = np.linspace(0, 5, 101)
    rk = integrate(params, x0, (0, 5), ToleranceSpec(), t)
    report = build_report(rk, rk, params, {"note": "self"})
    assert report.residual["rk45"] == report.residual["pinn"]
    for m in report.metrics.values():
        assert m.r_squared == 1.0 and m.mse == 0.0
    back = ComparisonReport.from_json(report.to_json())
    assert back.to_dict() == report.to_dict()
    data = json.loads(report.to_json())
    assert set(data) == {"meta", "residual_mse", "metrics"}
    assert set(data["metrics"]["x1"]) == {"r2", "mae", "mse", "rmse"}
    assert set(data["residual_mse"]["rk45"]) == {"eq1", "eq2", "eq3", "eq4"}
    assert data["meta"]["grid_size"] == 101 and data["meta"]["note"] == "self"
    text = report.render()
    assert "R-squared" in text and "RMSE" in text and "rk45" in text


def test_report_requires_matching_grids(params):
    a = table(np.linspace(0, 1, 5), [np.zeros(5)] * 4)
    b = table(np.linspace(0, 1.1, 5), [np.zeros(5)] * 4)
    with pytest.raises(GridMismatch):
        build_report(a, b, params)
