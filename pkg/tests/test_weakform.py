import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dictsel import datagen, library
from dictsel.datagen import GridDataset, TrajectoryDataset
from dictsel.library import EvaluatedLibrary
from dictsel.weakform import (WeakFormError, build_test_bank, trapezoid_weights,
                              weak_transform_ode, weak_transform_pde_1d)


def test_symmetric_peak_is_one():
    bank = build_test_bank(np.linspace(0, 1, 101), 1, 2, 2, 1.0)
    assert bank.values[0, 50] == pytest.approx(1.0)
    assert bank.scales[0] == pytest.approx(16.0)


def test_vanishes_at_ends_and_outside():
    t = np.linspace(0, 4, 401)
    bank = build_test_bank(t, 3, 3, 2, 1.0)
    for k, (a, b) in enumerate(bank.supports):
        outside = (t < a) | (t > b)
        assert np.all(bank.values[k, outside] == 0.0)
        ia, ib = np.searchsorted(t, [a, b])
        assert bank.values[k, ia] == 0.0 == bank.values[k, ib]
        assert bank.derivatives[k, ia] == pytest.approx(0.0, abs=1e-14)
        assert np.max(np.abs(bank.values[k])) == pytest.approx(1.0, abs=1e-10)


def test_derivative_integrates_to_zero():
    t = np.linspace(0, 2, 2001)
    bank = build_test_bank(t, 4, 4, 4, 0.8)
    w = trapezoid_weights(t.size, t[1] - t[0])
    assert np.max(np.abs(bank.derivatives @ w)) <= 1e-10


def test_analytic_derivative_matches_difference():
    t = np.linspace(0, 1, 20001)
    bank = build_test_bank(t, 1, 3, 5, 1.0)
    fd = np.gradient(bank.values[0], t)
    assert np.max(np.abs(fd - bank.derivatives[0])) <= 1e-4 * np.max(np.abs(bank.derivatives[0]))
    fd2 = np.gradient(bank.derivatives[0], t)
    assert np.max(np.abs(fd2[5:-5] - bank.derivative_matrix(2)[0, 5:-5])) <= 1e-3 * np.max(np.abs(fd2))


def test_rejects_constant_test_function():
    with pytest.raises(WeakFormError):
        build_test_bank(np.linspace(0, 1, 50), 2, 0, 0, 0.5)


def test_rejects_short_support():
    with pytest.raises(WeakFormError, match="shorter"):
        build_test_bank(np.linspace(0, 1, 101), 2, 8, 8, 0.1)


def test_rejects_support_longer_than_record():
    with pytest.raises(WeakFormError):
        build_test_bank(np.linspace(0, 1, 101), 2, 2, 2, 2.0)


def test_decay_rate_recovered():
    t = np.linspace(0, 5, 1001)
    data = TrajectoryDataset(0.0, t[1] - t[0], np.exp(-t)[:, None])
    lib = EvaluatedLibrary(data.states, ("x",))
    ws = weak_transform_ode(lib, data, build_test_bank(t, 10, 4, 4, 1.5))
    coef = np.linalg.lstsq(ws.G, ws.b[:, 0], rcond=None)[0]
    assert coef[0] == pytest.approx(-1.0, abs=1e-4)


def test_lorenz_row_count():
    data = datagen.integrate_rk4(datagen.lorenz(), [-8, 7, 27], (0, 10), 0.01)
    lib = library.evaluate(library.build_lorenz_polytrig_library(), data)
    ws = weak_transform_ode(lib, data, build_test_bank(data.times, 64, 8, 8, 1.0))
    assert ws.G.shape == (64, 32) and ws.b.shape == (64, 3)


def test_grid_mismatch_rejected():
    t = np.linspace(0, 1, 101)
    bank = build_test_bank(t, 2, 2, 2, 0.5)
    with pytest.raises(WeakFormError):
        weak_transform_ode(EvaluatedLibrary(np.ones((50, 1)), ("1",)), np.ones((50, 1)), bank)


def test_integration_by_parts_second_order():
    # sum phi * xdot + sum phi' * x -> 0 at rate dt^2
    errs = []
    # grids on which the support [0.5, 2.5] lands exactly on nodes
    for m in (301, 601, 1201):
        t = np.linspace(0, 3, m)
        bank = build_test_bank(t, 1, 2, 2, 2.0)
        assert bank.supports[0] == pytest.approx((0.5, 2.5))
        w = trapezoid_weights(m, t[1] - t[0])
        x, xd = np.sin(3 * t), 3 * np.cos(3 * t)
        errs.append(abs((bank.values[0] * w) @ xd + (bank.derivatives[0] * w) @ x))
    assert errs[0] / errs[1] == pytest.approx(4, rel=0.1)
    assert errs[1] / errs[2] == pytest.approx(4, rel=0.1)


def test_weak_and_strong_coefficients_agree():
    sys_ = datagen.pitchfork(0.5)
    data = datagen.finite_difference_derivative(
        datagen.integrate_rk4(sys_, [0.2, 1.0], (0, 10), 0.001))
    d = library.build_polynomial_library(2, 3)
    lib = library.evaluate(d, data)
    keep = lib.indices(["x", "x^3"])
    strong = np.linalg.lstsq(lib.matrix[:, keep], data.derivatives[:, 0], rcond=None)[0]
    ws = weak_transform_ode(lib, data, build_test_bank(data.times, 40, 6, 6, 2.0))
    weak = np.linalg.lstsq(ws.G[:, keep], ws.b[:, 0], rcond=None)[0]
    assert np.allclose(weak, strong, rtol=1e-3)


# --- PDE --------------------------------------------------------------------

def _grid(u):
    x = np.linspace(0, 2 * np.pi, u.shape[0])
    t = np.linspace(0, 0.5, u.shape[1])
    return GridDataset(x, t, {"u": u}, {})


def test_constant_field_gives_zero_target():
    data = _grid(np.full((64, 40), 1.7))
    sb = build_test_bank(data.x_grid, 4, 3, 3, 2.0)
    tb = build_test_bank(data.t_grid, 3, 3, 3, 0.3)
    ws = weak_transform_pde_1d(data, library.build_pde_trial_library(2, 1), sb, tb)
    assert np.max(np.abs(ws.b)) <= 1e-12


def test_single_entry_matches_nested_loop():
    rng = np.random.default_rng(0)
    data = _grid(rng.standard_normal((30, 20)))
    sb = build_test_bank(data.x_grid, 1, 3, 3, 3.0)
    tb = build_test_bank(data.t_grid, 1, 3, 3, 0.3)
    d = library.Dictionary((library.Term("pde_trial", (2,), derivative_order=1, names=("u",)),), 1)
    ws = weak_transform_pde_1d(data, d, sb, tb)
    wx = trapezoid_weights(30, data.dx)
    wt = trapezoid_weights(20, data.dt)
    dphi = sb.derivatives[0]
    acc = 0.0
    for i in range(30):
        for j in range(20):
            acc += wx[i] * wt[j] * (-dphi[i]) * tb.values[0, j] * data.values["u"][i, j] ** 2
    assert ws.G.shape == (1, 1)
    assert ws.G[0, 0] == pytest.approx(acc, rel=1e-10)


def test_derivative_order_limited_by_smoothness():
    data = _grid(np.ones((40, 20)))
    sb = build_test_bank(data.x_grid, 2, 1, 1, 2.0)
    tb = build_test_bank(data.t_grid, 2, 2, 2, 0.3)
    with pytest.raises(WeakFormError, match="smoothness"):
        weak_transform_pde_1d(data, library.build_pde_trial_library(2, 2), sb, tb)


def test_burgers_coefficient():
    x = np.linspace(0, 2 * np.pi, 256)
    t = np.linspace(0, 0.8, 200)
    data = datagen.burgers_1d(x, t, np.sin, np.cos)
    d = library.build_pde_trial_library(3, 2)
    sb = build_test_bank(x, 16, 4, 4, 1.5)
    tb = build_test_bank(t, 8, 4, 4, 0.3)
    ws = weak_transform_pde_1d(data, d, sb, tb)
    j = d.index("dx(u^2)")
    coef = np.linalg.lstsq(ws.G[:, [j]], ws.b[:, 0], rcond=None)[0][0]
    assert coef == pytest.approx(-0.5, rel=0.05)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 6))
def test_bank_invariants(K, p, q):
    t = np.linspace(0, 3, 301)
    bank = build_test_bank(t, K, p, q, 1.2)
    assert bank.values.shape == (K, 301)
    assert np.allclose(bank.values.max(axis=1), 1.0, atol=1e-10)
    assert all(t[0] <= a < b <= t[-1] for a, b in bank.supports)
