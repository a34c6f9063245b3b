import math

import numpy as np
import pytest

from tubesol.errors import GridMismatch, TubeTooWide
from tubesol.fermi import (
    ambient_points,
    apply_laplacian,
    dump_field_csv,
    grid_derivatives,
    laplacian_split,
    metric_expansion,
)
from tubesol.manifold import build_frame, circle_curve, ellipse_curve, straight_line


def zgrid(eps, nz):
    return np.linspace(-eps, eps, 2 * nz + 1)


@pytest.mark.parametrize("R", [1.0, 2.5])
def test_circle_metric_closed_form(R):
    curve = circle_curve(R, 2, 64)
    z = zgrid(0.4 * R, 16)
    exp = metric_expansion(curve, z)
    g = exp.metric
    assert np.allclose(g[..., 0, 0], (1 + z / R)[None, :] ** 2, atol=1e-12)
    assert np.allclose(g[..., 0, 1], 0.0, atol=1e-14)
    assert np.allclose(g[..., 1, 1], 1.0)
    assert np.allclose(exp.volume_factor, (1 + z / R)[None, :], atol=1e-12)
    assert exp.volume_bound() == pytest.approx(1 / R, rel=1e-10)


def test_zero_section():
    curve = tilted_curve()
    exp = metric_expansion(curve, np.zeros((1, 2)))
    assert np.allclose(exp.volume_factor, 1.0, atol=1e-13)
    assert np.allclose(exp.metric[:, 0, 1:, 1:], np.eye(2))
    assert np.allclose(exp.metric[:, 0, 0, 1:], 0.0)
    op = laplacian_split(exp)
    assert np.max(np.abs(op.second_order)) < 1e-12


def tilted_curve(N=96):
    th = np.arange(N) * 2 * math.pi / N
    return build_frame(np.stack([np.cos(th), np.sin(th), 0.3 * np.sin(2 * th)], axis=1))


def test_tube_too_wide_threshold():
    curve = circle_curve(1.0, 2, 32)
    metric_expansion(curve, [-0.999, 0.0, 0.999, 5.0])
    with pytest.raises(TubeTooWide):
        metric_expansion(curve, [-1.0, 0.0])
    with pytest.raises(TubeTooWide):
        metric_expansion(curve, [-1.2])


def test_grid_mismatch():
    curve = circle_curve(1.0, 3, 32)
    with pytest.raises(GridMismatch):
        metric_expansion(curve, np.zeros((4, 1)))
    with pytest.raises(GridMismatch):
        metric_expansion(curve, np.zeros((4, 2)), t_grid=np.linspace(0, 1, 7))


def test_circle_correction_coefficients():
    R = 1.0
    curve = circle_curve(R, 2, 64)
    z = zgrid(0.3, 12)
    op = laplacian_split(metric_expansion(curve, z))
    rho = 1 + z / R
    assert np.allclose(op.second_order[..., 0, 0], rho[None] ** -2 - 1, atol=1e-12)
    assert np.allclose(op.first_order[..., 1], (1 / R) / rho[None], atol=1e-12)
    assert np.allclose(op.first_order[..., 0], 0.0, atol=1e-12)
    assert op.zz_defect == 0.0


def test_correction_applied_to_fiber_function():
    curve = ellipse_curve(1.5, 1.0, 64)
    z = zgrid(0.2, 16)
    exp = metric_expansion(curve, z)
    op = laplacian_split(exp)
    f = np.broadcast_to(z**2, exp.shape).copy()
    df, d2f = grid_derivatives(exp, f)
    assert np.max(np.abs(df[..., 0])) < 1e-12
    Df = op.apply(df, d2f)
    # only the first-order z coefficient acts: no base Laplacian contribution
    assert np.allclose(Df, op.first_order[..., 1] * 2 * z[None], atol=1e-10)


def test_linear_part_vanishes_at_zero():
    curve = ellipse_curve(1.3, 0.8, 64)
    z = zgrid(1e-3, 4)
    op = laplacian_split(metric_expansion(curve, z))
    D2, D1 = op.linear_parts()
    # c^{tt} ≈ -2 κ z / |Y'|^2 to first order: compare with a finite difference in z
    slope = (op.second_order[:, -1, 0, 0] - op.second_order[:, 0, 0, 0]) / (z[-1] - z[0])
    assert np.allclose(D2[:, 0, 0, 0], slope, rtol=1e-5, atol=1e-8)


def test_zz_defect_is_beta_square_over_gamma():
    exp = metric_expansion(tilted_curve(), np.array([[0.05, -0.02], [0.01, 0.03]]))
    op = laplacian_split(exp)
    g = exp.metric
    beta = g[..., 0, 1:]
    gamma = g[..., 0, 0] - np.einsum("...i,...i->...", beta, beta)
    expected = np.einsum("...i,...j->...ij", beta, beta) / gamma[..., None, None]
    assert np.allclose(op.second_order[..., 1:, 1:], expected, atol=1e-13)


def test_split_consistency_and_harmonic_fields():
    curve = ellipse_curve(1.4, 1.0, 128)
    errs = []
    for nz in (16, 32, 64):
        z = zgrid(0.2, nz)
        exp = metric_expansion(curve, z)
        x = ambient_points(exp)
        f = np.exp(x[..., 0]) * np.cos(x[..., 1])
        full, bar, D = apply_laplacian(exp, f)
        assert np.max(np.abs(full - bar - D)) < 1e-10
        errs.append(np.max(np.abs(full[:, 1:-1])))
    order = np.log2(errs[0] / errs[1]), np.log2(errs[1] / errs[2])
    assert min(order) > 1.9


def test_affine_and_square_fields():
    curve = circle_curve(1.0, 2, 64)
    exp = metric_expansion(curve, zgrid(0.3, 32))
    x = ambient_points(exp)
    full, _, _ = apply_laplacian(exp, 2 * x[..., 0] - 3 * x[..., 1] + 0.5)
    assert np.max(np.abs(full)) < 1e-9
    full, _, _ = apply_laplacian(exp, np.sum(x**2, axis=-1))
    assert np.allclose(full, 2 * 2, atol=1e-9)


def test_half_square_hessian_circle():
    R = 1.0
    curve = circle_curve(R, 2, 32)
    z = zgrid(0.4, 8)
    exp = metric_expansion(curve, z)
    lap = exp.laplacian_of_half_square()
    assert np.allclose(lap, 1 + z[None] / (R + z[None]), atol=1e-13)


def test_flat_line_has_no_correction():
    exp = metric_expansion(straight_line(3.0, 2, 32), zgrid(0.5, 8))
    op = laplacian_split(exp)
    assert np.max(np.abs(op.second_order)) == 0.0
    assert np.max(np.abs(op.first_order)) == 0.0


def test_ansatz_residual_is_correction(tube_profile128):
    eps = 0.1
    curve = circle_curve(1.0, 2, 64)
    nz = tube_profile128.grid_size
    z = zgrid(eps, nz)
    exp = metric_expansion(curve, z)
    U = tube_profile128.values[np.abs(np.arange(-nz, nz + 1))]
    ubar = np.broadcast_to(U / eps, exp.shape).copy()
    full, bar, D = apply_laplacian(exp, ubar)
    lhs = (full + ubar**3)[:, 1:-1]
    rhs = D[:, 1:-1]
    # Δ_ḡ ū + ū^p vanishes up to the ground-state discretization
    assert np.max(np.abs(lhs - rhs)) < 1e-6 * np.max(np.abs(rhs))


def test_ansatz_residual_scaling(tube_profile128):
    curve = circle_curve(1.0, 2, 64)
    nz = tube_profile128.grid_size
    eps_list = np.geomspace(0.05, 0.3, 6)
    res = []
    for eps in eps_list:
        exp = metric_expansion(curve, zgrid(eps, nz))
        U = tube_profile128.values[np.abs(np.arange(-nz, nz + 1))]
        ubar = np.broadcast_to(U / eps, exp.shape).copy()
        full, _, _ = apply_laplacian(exp, ubar)
        res.append(np.max(np.abs(full + ubar**3)[:, 1:-1]))
    slope = np.polyfit(np.log(eps_list), np.log(res), 1)[0]
    assert slope == pytest.approx(-2.0, abs=0.2)


def test_volume_bound_stable():
    curve = ellipse_curve(1.5, 1.0, 128)
    b = [metric_expansion(curve, zgrid(0.2, nz)).volume_bound() for nz in (8, 32)]
    assert np.isfinite(b).all()
    assert b[0] == pytest.approx(b[1], rel=1e-2)


def test_dump_field_csv(tmp_path):
    curve = circle_curve(1.0, 2, 4)
    exp = metric_expansion(curve, [-0.1, 0.0, 0.1])
    path = dump_field_csv(exp, exp.volume_factor, tmp_path / "a.csv", header="# config_hash=x")
    lines = path.read_text().splitlines()
    assert lines[1] == "t,z1,value"
    assert len(lines) == 2 + 12
    with pytest.raises(GridMismatch):
        dump_field_csv(exp, np.zeros((2, 2)), tmp_path / "b.csv")
