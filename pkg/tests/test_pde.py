import json
import math

import numpy as np
import pytest

from genebsde.bounds import GaussianFinalData
from genebsde.model import GeneNetwork, TimeWindow
from genebsde.pde import (
    NumericalError,
    PdeGrid,
    ThetaField,
    boundary_extension_error,
    choose_margin,
    extend_final_condition,
    solve_final_value,
    theta_amplitude_bound,
)


def closed_form(net, fd, window, x):
    s = window.remaining
    g = np.exp(net.rho * s)
    return g * (fd.c * x + fd.b) - net.nu / (2 * net.rho) * (g - 1)


def test_extend_final_condition():
    fd = GaussianFinalData([2.0, 3.0], [1.0, 5.0])
    g = PdeGrid(a=2.0, N=1.0)
    assert np.allclose(extend_final_condition(fd, g, [1.0, -2.0]), [3.0, -1.0])
    assert np.allclose(extend_final_condition(fd, g, [6.0, -6.0]), [7.0, -4.0])
    assert np.allclose(extend_final_condition(fd, g, [0.0, 0.0]), fd.b)


def test_theta_amplitude_bound(net532, fd532, win532):
    assert theta_amplitude_bound(net532, fd532, win532, [0, 0, 0])[0] == pytest.approx(math.exp(0.6) * 151.5)
    assert theta_amplitude_bound(net532, fd532, win532, [0, 0, 0])[0] == pytest.approx(276.1, abs=0.05)
    at_T = theta_amplitude_bound(net532, fd532, TimeWindow(6, 6), [1.0, -2.0, 3.0])
    assert np.allclose(at_T, fd532.c * [1, 2, 3] + fd532.b)


def test_boundary_extension_error(net532, fd532, win532):
    assert boundary_extension_error(net532, fd532, win532, 6.0) == pytest.approx(9.85, abs=0.02)
    assert boundary_extension_error(net532, fd532, win532, 12.0) == pytest.approx(8.6e-4, rel=0.01)
    assert boundary_extension_error(net532, fd532, win532, 60.0) < 1e-100
    assert boundary_extension_error(net532, fd532, TimeWindow(6, 6), 1.0) == 0.0
    with pytest.raises(ValueError):
        boundary_extension_error(net532, fd532, win532, 0.0)


def test_choose_margin(net532, fd532, win532):
    assert choose_margin(net532, fd532, win532, 1e-3) == 12.0
    assert choose_margin(net532, fd532, win532, 1e6) == 0.5
    prev = 0.0
    for tol in (1.0, 1e-1, 1e-2, 1e-3, 5e-4, 1e-6):
        N = choose_margin(net532, fd532, win532, tol)
        assert N >= prev
        prev = N


def test_grid_validation_and_alignment():
    with pytest.raises(ValueError):
        PdeGrid(a=1.0, N=1.0, points_per_axis=64)
    with pytest.raises(ValueError):
        PdeGrid(a=0.0, N=1.0)
    with pytest.raises(ValueError):
        PdeGrid(a=1.0, N=1.0, dt=0.0)
    for a, N, p in [(9.0, 12.0, 65), (4.5, 3.0, 33), (1.0, 7.0, 129)]:
        g = PdeGrid.aligned(a, N, p)
        assert g.N >= N
        mid = p // 2
        k = round(a / g.spacing)
        assert math.isclose(g.axis[mid + k], a, rel_tol=1e-12) and k % 2 == 0
    assert PdeGrid(1.0, 1.0).step_count(3.0) == 200
    assert PdeGrid(1.0, 1.0, dt=0.1).step_count(3.0) == 30


def test_heat_flow_preserves_affine_data():
    net = GeneNetwork(np.zeros((2, 2)), [1.0, 1.0], [1.0, 1.0])
    fd = GaussianFinalData([1.5, 0.5], [10.0, 20.0])
    g = PdeGrid.aligned(3.0, 9.0, 49)
    f = solve_final_value(net, fd, g, TimeWindow(2.0, 1.0), reaction=False)
    ax = g.axis
    inner = np.abs(ax) <= 3.0 + 1e-12
    X, Y = np.meshgrid(ax[inner], ax[inner], indexing="ij")
    assert np.allclose(f.values[np.ix_(inner, inner)][..., 0], 1.5 * X + 10.0, atol=1e-6)
    assert np.allclose(f.values[np.ix_(inner, inner)][..., 1], 0.5 * Y + 20.0, atol=1e-6)


def test_neumann_conserves_constants():
    net = GeneNetwork(np.zeros((2, 2)), [1.0, 1.0], [1.0, 1.0])
    fd = GaussianFinalData([1e-300, 1e-300], [3.0, 7.0])
    f = solve_final_value(net, fd, PdeGrid(2.0, 2.0, 17), TimeWindow(1.0, 0.5), reaction=False)
    # only round-off accumulated over 400 line sweeps remains
    assert np.allclose(f.values[..., 0], 3.0, rtol=0, atol=1e-12)
    assert np.allclose(f.values[..., 1], 7.0, rtol=0, atol=1e-12)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_uncoupled_closed_form(n):
    nu, rho = [0.8, 1.2, 0.5][:n], [0.3, 0.5, 0.2][:n]
    net = GeneNetwork(np.zeros((n, n)), nu, rho)
    fd = GaussianFinalData([2.0, 1.0, 0.5][:n], [40.0, 25.0, 30.0][:n])
    w = TimeWindow(2.0, 1.0)
    g = PdeGrid.aligned(4.0, 6.0, 65 if n < 3 else 33)
    f = solve_final_value(net, fd, g, w)
    ax = g.axis
    inner = np.abs(ax) <= 4.0 + 1e-12
    for i in range(n):
        sel = tuple(np.where(inner)[0] if k == i else g.points_per_axis // 2 for k in range(n))
        exact = closed_form(net, fd, w, np.where(np.arange(n) == i, 1.0, 0.0)[None, :] * ax[inner][:, None])[:, i]
        assert np.allclose(f.values[sel + (i,)], exact, rtol=2e-5)


def test_amplitude_bound_dominates_solution():
    A = [[1.5, -0.4], [-0.2, 2.0]]
    net = GeneNetwork(A, [0.6, 1.1], [0.3, 0.4])
    fd = GaussianFinalData([3.0, 1.0], [60.0, 40.0])
    w = TimeWindow(4.0, 2.0)
    g = PdeGrid.aligned(5.0, 6.0, 65)
    f = solve_final_value(net, fd, g, w)
    X = np.stack(np.meshgrid(g.axis, g.axis, indexing="ij"), axis=-1)
    assert np.all(np.abs(f.values) <= theta_amplitude_bound(net, fd, w, X) + 1e-9)


def test_thread_count_is_bitwise_irrelevant():
    A = [[1.5, -0.4], [-0.2, 2.0]]
    net = GeneNetwork(A, [0.6, 1.1], [0.3, 0.4])
    fd = GaussianFinalData([3.0, 1.0], [60.0, 40.0])
    g = PdeGrid.aligned(5.0, 6.0, 65)
    w = TimeWindow(4.0, 2.0)
    a = solve_final_value(net, fd, g, w, threads=1).values
    b = solve_final_value(net, fd, g, w, threads=4).values
    assert np.array_equal(a, b)


def test_second_order_in_time_and_space():
    net = GeneNetwork(np.zeros((1, 1)), [0.8], [0.3])
    fd = GaussianFinalData([2.0], [40.0])
    w = TimeWindow(2.0, 1.0)
    exact = closed_form(net, fd, w, np.zeros(1))[0]
    errs = []
    for p, steps in [(65, 50), (129, 100), (257, 200)]:
        f = solve_final_value(net, fd, PdeGrid.aligned(6.0, 6.0, p, dt=1.0 / steps), w)
        errs.append(abs(f.at_origin()[0] - exact))
    assert errs[0] / errs[1] >= 3 and errs[1] / errs[2] >= 3


def test_nonfinite_detection():
    net = GeneNetwork(np.zeros((1, 1)), [1.0], [400.0])
    fd = GaussianFinalData([1.0], [1e300])
    with pytest.raises(NumericalError):
        solve_final_value(net, fd, PdeGrid(1.0, 1.0, 9), TimeWindow(2.0, 1.0))


def test_dimension_cap_and_mismatch(fd532):
    net5 = GeneNetwork(np.zeros((5, 5)), [1] * 5, [1] * 5)
    with pytest.raises(ValueError):
        solve_final_value(net5, GaussianFinalData([1] * 5, [1] * 5), PdeGrid(1, 1, 5), TimeWindow(1, 0.5))
    net2 = GeneNetwork(np.zeros((2, 2)), [1, 1], [1, 1])
    with pytest.raises(ValueError):
        solve_final_value(net2, fd532, PdeGrid(1, 1, 5), TimeWindow(1, 0.5))


def test_zero_remaining_returns_final_data():
    net = GeneNetwork(np.zeros((1, 1)), [1.0], [1.0])
    fd = GaussianFinalData([2.0], [3.0])
    g = PdeGrid(1.0, 1.0, 9)
    f = solve_final_value(net, fd, g, TimeWindow(1.0, 1.0))
    assert f.steps == 0 and np.allclose(f.values[:, 0], 2.0 * g.axis + 3.0)


def test_theta_csv(tmp_path):
    net = GeneNetwork(np.zeros((2, 2)), [1, 1], [1, 1])
    f = solve_final_value(net, GaussianFinalData([1, 1], [5, 5]), PdeGrid(1.0, 1.0, 5), TimeWindow(1.0, 0.5))
    p = tmp_path / "theta.csv"
    f.write_csv(p)
    rows = p.read_text().splitlines()
    assert rows[0] == "x1,x2,theta1,theta2" and len(rows) == 26
    meta = json.loads(p.with_suffix(".json").read_text())
    assert meta["n"] == 2 and meta["steps"] == 200
    assert isinstance(f, ThetaField)
