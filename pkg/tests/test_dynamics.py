"""Flow maps, integration accuracy, finite-difference Jacobians."""

import numpy as np
import pytest

from dynlap.dynamics import (
    FDSettings,
    IntegratorSettings,
    BickleyParams,
    bickley_field,
    bickley_stream_function,
    cylinder_field,
    integrate,
    jacobian_fd,
    jacobian_fd_many,
    make_system,
    shift_map_1d,
    standard_map,
    standard_map_inverse,
)
from dynlap.errors import ConfigurationError


# -- integrator -------------------------------------------------------------------


def test_integrate_constant_field():
    out = integrate(lambda t, p: np.array([1.0, 0.0]), (0.0, 0.0), 0.0, 1.0)
    np.testing.assert_allclose(out, [1.0, 0.0], atol=1e-10)


def test_integrate_rigid_rotation_quarter_turn():
    field = lambda t, p: np.array([-p[1], p[0]])
    out = integrate(field, (1.0, 0.0), 0.0, np.pi / 2)
    np.testing.assert_allclose(out, [0.0, 1.0], atol=1e-7)


def test_integrate_backward():
    field = lambda t, p: np.array([-p[1], p[0]])
    out = integrate(field, (0.0, 1.0), np.pi / 2, 0.0)
    np.testing.assert_allclose(out, [1.0, 0.0], atol=1e-7)


def test_integrator_settings_validated():
    with pytest.raises(ConfigurationError):
        IntegratorSettings(rel_tol=0.0)
    with pytest.raises(ConfigurationError):
        FDSettings(step=2.0)


def test_cylinder_round_trip():
    flow = make_system("cylinder")
    rng = np.random.default_rng(0)
    pts = np.column_stack(
        [rng.uniform(0, 2 * np.pi, 20), rng.uniform(0.3, np.pi - 0.3, 20)]
    )
    fwd = flow.forward_raw_many(pts, 0.0, 40.0)
    back = flow.inverse_raw_many(fwd, 0.0, 40.0)
    assert np.abs(back - pts).max() < 1e-5  # 10x the 1e-8 integration tolerances
    # leaves room for error growth along the trajectory


# -- standard map -----------------------------------------------------------------


def test_standard_map_fixed_points():
    np.testing.assert_allclose(standard_map((0.0, 0.0)), [0.0, 0.0], atol=1e-15)
    np.testing.assert_allclose(standard_map((np.pi, 0.0)), [np.pi, 0.0], atol=1e-12)


def test_standard_map_inverse_is_algebraic_inverse():
    rng = np.random.default_rng(3)
    pts = rng.uniform(0, 2 * np.pi, size=(200, 2))
    round_trip = standard_map_inverse(standard_map(pts))
    delta = np.mod(round_trip - pts + np.pi, 2 * np.pi) - np.pi
    assert np.abs(delta).max() < 1e-12


def test_standard_map_flow_iterates():
    flow = make_system("standard_map", iterations=2)
    p = np.array([1.3, 2.1])
    two = flow.forward(p, 0, 2)
    one = standard_map(standard_map(p))
    np.testing.assert_allclose(two, one, atol=1e-12)


def test_standard_map_flow_inverse_round_trip():
    flow = make_system("standard_map")
    rng = np.random.default_rng(8)
    pts = rng.uniform(0, 2 * np.pi, size=(50, 2))
    images = flow.forward_many(pts, 0, 2)
    back = flow.inverse_many(images, 0, 2)
    delta = np.mod(back - pts + np.pi, 2 * np.pi) - np.pi
    assert np.abs(delta).max() < 1e-10


def test_standard_map_chain_jacobian_det_one():
    flow = make_system("standard_map")
    rng = np.random.default_rng(2)
    pts = rng.uniform(0, 2 * np.pi, size=(100, 2))
    jac = flow.jacobian_many(pts, 0, 2)
    det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
    np.testing.assert_allclose(det, 1.0, atol=1e-12)


# -- cylinder field ----------------------------------------------------------------


def test_cylinder_field_printed_values():
    v = cylinder_field(0.0, (0.0, np.pi / 2))
    assert v[1] == pytest.approx(1.0, abs=1e-14)  # A(0) cos(0) sin(pi/2)
    v0 = cylinder_field(0.3, (1.0, 0.0))
    assert v0[1] == pytest.approx(0.0, abs=1e-14)


def test_cylinder_divergence_matches_symbolic():
    # the unforced part is divergence-free; the forcing contributes
    # d/dx [eps G(g) sin(t/2)] which we differentiate by hand
    rng = np.random.default_rng(5)
    delta = 1e-6
    for _ in range(20):
        t = rng.uniform(0, 40)
        x = rng.uniform(0, 2 * np.pi)
        y = rng.uniform(0.1, np.pi - 0.1)
        vxp = cylinder_field(t, (x + delta, y))[0]
        vxm = cylinder_field(t, (x - delta, y))[0]
        vyp = cylinder_field(t, (x, y + delta))[1]
        vym = cylinder_field(t, (x, y - delta))[1]
        div_fd = (vxp - vxm) / (2 * delta) + (vyp - vym) / (2 * delta)
        g = np.sin(x - 0.5 * t) * np.sin(y) + y / 2 - np.pi / 4
        g_x = np.cos(x - 0.5 * t) * np.sin(y)
        dG = -4.0 * g / (g * g + 1.0) ** 3
        div_exact = 0.25 * np.sin(t / 2) * dG * g_x
        assert div_fd == pytest.approx(div_exact, abs=1e-6)


# -- meandering jet ----------------------------------------------------------------


def test_bickley_velocity_matches_stream_function_fd():
    params = BickleyParams()
    rng = np.random.default_rng(7)
    delta = 1e-6
    for _ in range(20):
        t = rng.uniform(0, params.seconds)
        p = np.array([rng.uniform(0, params.x_period), rng.uniform(-2.5, 2.5)])
        v = bickley_field(t, p, params)
        psi_yp = bickley_stream_function(t, (p[0], p[1] + delta), params)
        psi_ym = bickley_stream_function(t, (p[0], p[1] - delta), params)
        psi_xp = bickley_stream_function(t, (p[0] + delta, p[1]), params)
        psi_xm = bickley_stream_function(t, (p[0] - delta, p[1]), params)
        # velocities are O(U0); 1e-6 relative accuracy of the stencil
        tol = 1e-6 * params.U0
        assert -(psi_yp - psi_ym) / (2 * delta) == pytest.approx(v[0], abs=tol)
        assert (psi_xp - psi_xm) / (2 * delta) == pytest.approx(v[1], abs=tol)


def test_bickley_zonal_without_perturbation():
    params = BickleyParams(amplitudes=(0.0, 0.0, 0.0))
    v = bickley_field(0.0, (3.0, 0.0), params)
    assert v[1] == 0.0
    assert v[0] == pytest.approx(params.U0, rel=1e-12)


def test_bickley_x_period_consistency():
    params = BickleyParams()
    p = np.array([1.234, 0.8])
    shifted = p + np.array([params.x_period, 0.0])
    np.testing.assert_allclose(
        bickley_field(5e5, p, params), bickley_field(5e5, shifted, params), rtol=1e-12
    )


# -- circle shift ------------------------------------------------------------------


def test_shift_wraps():
    assert shift_map_1d(0.9, 0.15) == pytest.approx(0.05, abs=1e-15)


def test_shift_zero_is_identity():
    x = np.linspace(0, 0.99, 10)
    np.testing.assert_array_equal(shift_map_1d(x, 0.0), x)


def test_shift_inverse_composition():
    shift = make_system("shift1d", alpha=0.15)
    x = np.linspace(0, 0.99, 17)
    np.testing.assert_allclose(shift.inverse(shift.forward(x)), x, atol=1e-15)


# -- finite-difference Jacobians ------------------------------------------------------


def test_fd_jacobian_identity_dynamics():
    flow = make_system("standard_map", iterations=1)
    jac = jacobian_fd(flow, (1.0, 2.0), 0, 0)
    np.testing.assert_allclose(jac, np.eye(2), atol=1e-12)


def test_fd_jacobian_matches_analytic_standard_map():
    flow = make_system("standard_map", iterations=1)
    a = 0.971635
    p = np.array([1.0, 2.0])
    jac = jacobian_fd(flow, p, 0, 1)
    expect = np.array([[1 + a * np.cos(p[0]), 1.0], [a * np.cos(p[0]), 1.0]])
    assert np.abs(jac - expect).max() < 1e-6


def test_fd_jacobian_second_order_convergence():
    flow = make_system("standard_map", iterations=1)
    a = 0.971635
    rng = np.random.default_rng(4)
    pts = rng.uniform(0, 2 * np.pi, size=(20, 2))
    expect = np.empty((20, 2, 2))
    expect[:, 0, 0] = 1 + a * np.cos(pts[:, 0])
    expect[:, 0, 1] = 1.0
    expect[:, 1, 0] = a * np.cos(pts[:, 0])
    expect[:, 1, 1] = 1.0
    errs = []
    for step in (1e-3, 5e-4):
        jac = jacobian_fd_many(flow, pts, 0, 1, FDSettings(step=step))
        errs.append(np.abs(jac - expect).max())
    ratio = errs[0] / errs[1]
    assert 3.0 < ratio < 5.0  # halving the step quarters the truncation error


def test_fd_volume_preservation_divergence_free_cylinder():
    # the eps=0 field is the exact stream-function flow, so det DT = 1; the
    # forced field is compressible (the forcing has nonzero x-divergence) and
    # is checked against its own divergence instead
    flow = make_system("cylinder", eps=0.0)
    rng = np.random.default_rng(1)
    pts = np.column_stack(
        [rng.uniform(0, 2 * np.pi, 100), rng.uniform(0.05, np.pi - 0.05, 100)]
    )
    jac = jacobian_fd_many(flow, pts, 0.0, 40.0)
    det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
    assert np.abs(det - 1.0).max() < 1e-3


def test_fd_volume_preservation_bickley_short_span():
    # over long spans the jet's mixing zones stretch by 1e3..1e4 and det-1
    # amplifies finite-difference noise by the squared stretch; four days keep
    # the stretch mild enough for the bound to be meaningful
    flow = make_system("bickley")
    rng = np.random.default_rng(6)
    pts = np.column_stack([rng.uniform(0, 20.0, 20), rng.uniform(-2.5, 2.5, 20)])
    jac = jacobian_fd_many(flow, pts, 0.0, 4 * 86400.0, FDSettings(step=1e-6))
    det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
    assert np.abs(det - 1.0).max() < 1e-3


def test_fd_one_sided_near_boundary():
    flow = make_system("cylinder", eps=0.0)
    # y within one FD step of the lower boundary triggers the one-sided stencil
    p = np.array([1.0, flow.domain.y_min + 1e-7])
    jac = jacobian_fd(flow, p, 0.0, 1.0)
    det = jac[0, 0] * jac[1, 1] - jac[0, 1] * jac[1, 0]
    assert abs(det - 1.0) < 1e-2


def test_unknown_system_rejected():
    with pytest.raises(ConfigurationError):
        make_system("no_such_system")
    with pytest.raises(ConfigurationError):
        make_system("standard_map", bogus=1)
