import math

import numpy as np
import pytest

from tubesol.errors import (
    GridMismatch,
    LeftBall,
    NoContraction,
    NonpositiveState,
    OnResonance,
    ParameterContractViolated,
    PointwiseBoundViolated,
    ThresholdExceeded,
    UnsupportedGeometry,
)
from tubesol.manifold import Circle, circle_curve, model_spectrum, straight_line
from tubesol.resonance import FiberData, fit_loglog, morse_index_model
from tubesol.tube import (
    LinearizedOperator,
    TubeField,
    TubeGrid,
    TubeProblem,
    assemble_linearized,
    assemble_model_inverse,
    contraction_window,
    eigenfunction_decomposition,
    iterate_approximation,
    lowest_eigenpair,
    morse_index_discrete,
    picard_solve,
    spectral_matrix,
    weighted_norms,
    write_solution_csv,
)
from tubesol.tube import _dirichlet_energy_bar

SWEEP = np.geomspace(0.05, 0.3, 6)


@pytest.fixture(scope="module")
def circle65():
    return circle_curve(1.0, 2, 65)


@pytest.fixture(scope="module")
def line65():
    return straight_line(2 * math.pi, 2, 65)


def discrete_mu(problem):
    return problem.fiber_eigen[0] * problem.grid.eps**2


def test_spectral_matrix():
    nt = 33
    t = np.arange(nt) * 2 * math.pi / nt
    F = spectral_matrix(nt, 2 * math.pi)
    assert np.allclose(F @ np.sin(3 * t), 3 * np.cos(3 * t), atol=1e-12)
    F2 = spectral_matrix(nt, 4 * math.pi)
    assert np.allclose(F2 @ np.sin(3 * t), 1.5 * np.cos(3 * t), atol=1e-12)
    with pytest.raises(GridMismatch):
        spectral_matrix(32, 1.0)


def test_grid_contract(circle65):
    g = TubeGrid(circle65, 0.2, 16)
    assert g.shape == (65, 33)
    assert g.x[0] == -1.0 and g.x[-1] == 1.0 and g.z[-1] == pytest.approx(0.2)
    with pytest.raises(UnsupportedGeometry):
        TubeGrid(circle_curve(1.0, 3, 65), 0.2, 16)
    with pytest.raises(ValueError):
        TubeGrid(circle65, 0.0, 16)
    with pytest.raises(GridMismatch):
        TubeGrid(circle_curve(1.0, 2, 64), 0.2, 16)
    with pytest.raises(GridMismatch):
        TubeField(g, np.zeros((65, 32)))


def test_model_inverse_trivial(circle65, tube_profile64):
    pr = TubeProblem(circle65, tube_profile64, 0.1)
    assert np.all(assemble_model_inverse(pr, pr.grid.zeros()).values == 0.0)
    rhs = np.broadcast_to(np.cos(np.pi * pr.grid.x / 2), pr.grid.shape).copy()
    out = assemble_model_inverse(pr, TubeField(pr.grid, rhs))
    assert np.ptp(out.values, axis=0).max() == 0.0
    assert out.trace == 0.0


def test_model_inverse_phi0_mode(circle65, tube_profile64):
    pr = TubeProblem(circle65, tube_profile64, 0.1)
    w, V = pr.fiber_eigen
    rhs = pr.grid.zeros()
    psi = 1.0 + 0.3 * np.cos(pr.grid.t)
    rhs[:, 1:-1] = psi[:, None] * V[:, 0][None, :]
    out = assemble_model_inverse(pr, rhs).values
    assert np.allclose(out[:, 1:-1], rhs[:, 1:-1] / w[0], rtol=1e-9, atol=1e-12 * np.max(np.abs(out)))
    # the discrete fiber eigenvalue approximates mu0 / eps^2
    assert w[0] * 0.01 == pytest.approx(-5.156389359399808, rel=2e-3)


def test_model_inverse_two_power_gain(circle65, tube_profile64):
    rhs = None
    gains = []
    for eps in SWEEP:
        pr = TubeProblem(circle65, tube_profile64, eps)
        if rhs is None:
            rhs = pr.grid.zeros()
            rhs[:, 1:-1] = 1.0
        out = assemble_model_inverse(pr, rhs).values
        gains.append(np.max(np.abs(out)) / eps**2)
    assert np.ptp(gains) <= 1e-10 * max(gains)


def test_flat_tube_ansatz_exact(line65, tube_profile64):
    pr = TubeProblem(line65, tube_profile64, 0.2)
    scale = np.max(pr.ubar) ** 3
    assert np.max(np.abs(pr.correction(pr.ubar))) == 0.0
    assert np.max(np.abs(pr.residual_ansatz)) <= 1e-12 * scale
    it = iterate_approximation(pr, 4)
    assert all(np.max(np.abs(v.values)) <= 1e-13 * np.max(pr.ubar) for v in it.iterates)
    res = picard_solve(pr, pr.ubar, M=2.5, i=6, N=4)
    assert res.steps <= 2 and res.contraction_factor < 1
    assert np.max(np.abs(res.u.values - pr.ubar)) <= 1e-13 * np.max(pr.ubar)


def test_dirichlet_exactness(circle65, tube_profile64):
    pr = TubeProblem(circle65, tube_profile64, 0.1)
    it = iterate_approximation(pr, 6)
    for v in it.iterates:
        assert v.trace == 0.0
    res = picard_solve(pr, it.u(6), M=2.5, i=6, N=4)
    assert res.u.trace == 0.0 and res.v.trace == 0.0
    assert np.all(res.u.interior > 0)


def test_iteration_bound_and_violation(circle65, tube_profile64):
    pr = TubeProblem(circle65, tube_profile64, 0.1)
    it = iterate_approximation(pr, 6)
    for k in range(1, 7):
        assert np.all(np.abs(it.iterates[k - 1].interior) <= 0.5 * pr.ubar[:, 1:-1])
        assert it.ratios[k] < 0.5
    with pytest.raises(PointwiseBoundViolated):
        iterate_approximation(TubeProblem(circle65, tube_profile64, 0.9), 2)


def test_residual_zero_slope(circle65, tube_profile64):
    r0 = [iterate_approximation(TubeProblem(circle65, tube_profile64, e), 0).residuals[0] for e in SWEEP]
    assert fit_loglog(SWEEP, r0) == pytest.approx(-2.0, abs=0.2)


def test_ratio_one_linear_and_refinement_stable(circle65, tube_profile64, tube_profile128):
    consts = {}
    for prof in (tube_profile64, tube_profile128):
        c = [iterate_approximation(TubeProblem(circle65, prof, e), 1).ratios[1] / e for e in SWEEP]
        consts[prof.grid_size] = np.array(c)
        assert max(c) / min(c) < 1.5
    assert np.allclose(consts[64], consts[128], rtol=0.05)


def test_weighted_norms_homogeneous_and_subadditive(circle65, tube_profile64):
    rng = np.random.default_rng(3)
    g = TubeGrid(circle65, 0.1, 16)
    for _ in range(5):
        f, h = rng.standard_normal(g.shape), rng.standard_normal(g.shape)
        a = float(rng.uniform(-3, 3))
        nf, nh = weighted_norms(TubeField(g, f)), weighted_norms(TubeField(g, h))
        na = weighted_norms(TubeField(g, a * f))
        ns = weighted_norms(TubeField(g, f + h))
        for name in ("sup_norm", "c0alpha_eps", "c2alpha_eps"):
            assert getattr(na, name) == pytest.approx(abs(a) * getattr(nf, name), rel=1e-12)
            assert getattr(ns, name) <= getattr(nf, name) + getattr(nh, name) + 1e-12


def test_linearized_symmetry(circle65, tube_profile64):
    from tubesol.manifold import ellipse_curve

    rng = np.random.default_rng(0)
    for curve in (circle65, ellipse_curve(1.0, 0.8, 33)):
        pr = TubeProblem(curve, tube_profile64, 0.1)
        op = assemble_linearized(pr, iterate_approximation(pr, 2).u(2))
        assert op.symmetry_defect(rng) < 1e-10
    with pytest.raises(NonpositiveState):
        LinearizedOperator(pr, pr.grid.zeros())


def test_flat_spectrum_is_lattice(line65, tube_profile64):
    pr = TubeProblem(line65, tube_profile64, 0.3)
    op = LinearizedOperator(pr, pr.ubar)
    assert op.fourier
    w = pr.fiber_eigen[0]
    lattice = sorted(wi + j * j for wi in w[:2] for j in range(-32, 33))
    assert np.allclose(op.lowest(12), lattice[:12], rtol=1e-10)


def test_flat_index_equals_model(line65, tube_profile64):
    for eps in (0.12, 0.3, 0.7, 3.0):
        pr = TubeProblem(line65, tube_profile64, eps)
        mus = discrete_mu(pr)
        fd = FiberData(mus[:4], np.ones(4, dtype=int), float(mus[4]))
        model = morse_index_model(fd, model_spectrum(Circle(1.0), 200), eps)
        assert morse_index_discrete(LinearizedOperator(pr, pr.ubar)) == model
    assert model == 1


def test_discrete_on_resonance(line65, tube_profile64):
    pr = TubeProblem(line65, tube_profile64, 0.3)
    eps = math.sqrt(-discrete_mu(pr)[0]) / 4
    pr = TubeProblem(line65, tube_profile64, eps)
    with pytest.raises(OnResonance):
        morse_index_discrete(LinearizedOperator(pr, pr.ubar))


def test_circle_index_example(circle65, tube_profile64):
    pr = TubeProblem(circle65, tube_profile64, 0.3)
    c = math.sqrt(-discrete_mu(pr)[0])
    pr = TubeProblem(circle65, tube_profile64, c / 2.5)
    assert morse_index_discrete(LinearizedOperator(pr, pr.ubar)) == 5


def test_backends_agree():
    from tubesol.manifold import circle_curve as cc
    from tubesol.radial import ProblemParams, solve_ground_state

    prof = solve_ground_state(ProblemParams(1, 3.0), tol=1e-12, grid_size=64)
    pr = TubeProblem(cc(1.0, 2, 33), prof, 0.15)
    u = iterate_approximation(pr, 2).u(2)
    op = LinearizedOperator(pr, u)
    rhs = np.random.default_rng(1).standard_normal(u.shape)
    rhs[:, 0] = rhs[:, -1] = 0.0
    fourier = (op.morse_index(), op.lowest(6), op.solve(rhs))
    op.fourier = False
    block = (op.morse_index(), op.lowest(6), op.solve(rhs))
    assert fourier[0] == block[0] == 31
    assert np.allclose(fourier[1], block[1], rtol=1e-9)
    assert np.max(np.abs(fourier[2] - block[2])) <= 1e-10 * np.max(np.abs(block[2]))
    assert np.max(np.abs(op.apply(block[2]) - rhs)) <= 1e-8 * np.max(np.abs(rhs))


def test_circle_low_spectrum_near_lattice(circle65, tube_profile64):
    errs = []
    for eps in (0.06, 0.12):
        pr = TubeProblem(circle65, tube_profile64, eps)
        op = LinearizedOperator(pr, iterate_approximation(pr, 2).u(2))
        mu = discrete_mu(pr)
        lattice = sorted(mu[0] / eps**2 + j * j for j in range(-32, 33))[:5]
        errs.append(np.max(np.abs(op.lowest(5) - lattice)) * eps**2 / eps)
    assert max(errs) < 1.0
    assert errs[0] < errs[1] * 1.5


def test_quadratic_form_consistency(circle65, tube_profile64, tube_profile128):
    consts = {}
    for prof in (tube_profile64, tube_profile128):
        cs = []
        for eps in (0.05, 0.1, 0.2):
            pr = TubeProblem(circle65, prof, eps)
            u = iterate_approximation(pr, 2).u(2)
            op = LinearizedOperator(pr, u)
            x, t = pr.grid.x, pr.grid.t
            v = np.cos(np.pi * x / 2)[None, :] * (1 + 0.5 * np.cos(t) + 0.2 * np.sin(3 * t))[:, None]
            v += 0.3 * np.sin(np.pi * x)[None, :] * np.cos(2 * t)[:, None]
            v[:, 0] = v[:, -1] = 0.0
            q = op.inner_bar(v, op.apply_tilde(v))
            pot = pr.p * pr.ubar ** (pr.p - 1)
            flat = -(pr.lap_fiber(v) + pr.lap_base(v)) - pot * v
            flat[:, 0] = flat[:, -1] = 0.0
            q_model = op.inner_bar(v, flat)
            scale = _dirichlet_energy_bar(pr, v) + op.inner_bar(v, pot * v)
            cs.append(abs(q - q_model) / (eps * scale))
        consts[prof.grid_size] = np.array(cs)
        assert max(cs) < 2.0
    assert np.allclose(consts[64], consts[128], rtol=0.1)


def test_decomposition_flat_pure_mode(line65, tube_profile64):
    pr = TubeProblem(line65, tube_profile64, 0.2)
    op = LinearizedOperator(pr, pr.ubar)
    nu, v = lowest_eigenpair(op)
    dec = eigenfunction_decomposition(op, nu, v)
    assert dec.remainder_fraction < 1e-20
    with pytest.raises(ThresholdExceeded):
        eigenfunction_decomposition(op, pr.fiber_eigen[0][1], v, C0=0.0)


def test_decomposition_circle_two_ways(circle65, tube_profile64, tube_profile128):
    rhos = []
    for prof in (tube_profile64, tube_profile128):
        pr = TubeProblem(circle65, prof, 0.2)
        op = LinearizedOperator(pr, iterate_approximation(pr, 2).u(2))
        nu, v = lowest_eigenpair(op)
        dec = eigenfunction_decomposition(op, nu, v)
        phi = pr.fiber_eigen[1][:, 0]
        # normal equations per t-node against the single basis column phi
        A = phi[:, None]
        psi_ne = np.linalg.lstsq(A, v[:, 1:-1].T, rcond=None)[0][0]
        assert np.allclose(dec.psi, psi_ne * np.dot(phi, phi) * pr.grid.dz, rtol=1e-10)
        rhos.append(dec.rho)
    assert rhos[1] == pytest.approx(rhos[0], rel=0.05)
    assert rhos[0] < 1.0


def test_contraction_window():
    assert contraction_window(3, 4, 0, 3.0) is None
    lo, hi = contraction_window(6, 4, 0, 3.0)
    assert (lo, hi) == (2.0, 3.0)


def test_picard_contract_violated(circle65, tube_profile64):
    pr = TubeProblem(circle65, tube_profile64, 0.1)
    with pytest.raises(ParameterContractViolated):
        picard_solve(pr, pr.ubar, M=2.5, i=3, N=4)
    with pytest.raises(ParameterContractViolated):
        picard_solve(pr, pr.ubar, M=3.5, i=6, N=4)


def test_picard_circle_converges(circle65, tube_profile64):
    shapes = []
    for eps in (0.08, 0.15):
        pr = TubeProblem(circle65, tube_profile64, eps)
        res = picard_solve(pr, iterate_approximation(pr, 6).u(6), M=2.5, i=6, N=4)
        assert res.contraction_factor < 1.0
        assert np.all(res.u.interior > 0)
        assert res.residual <= 1e-9 * np.max(pr.ubar) ** 3
        shapes.append(res.shape_error / eps)
    assert shapes[0] == pytest.approx(shapes[1], rel=0.3)


def _index_at(curve, prof, eps):
    pr = TubeProblem(curve, prof, eps)
    u = iterate_approximation(pr, 6).u(6)
    return LinearizedOperator(pr, u).morse_index(), pr, u


def test_picard_near_resonance_fails(circle65, tube_profile64):
    pr = TubeProblem(circle65, tube_profile64, 0.3)
    c = math.sqrt(-discrete_mu(pr)[0])
    lo, hi = c / 20.5, c / 19.5
    n_lo, n_hi = _index_at(circle65, tube_profile64, lo)[0], _index_at(circle65, tube_profile64, hi)[0]
    assert n_lo > n_hi
    for _ in range(48):
        mid = 0.5 * (lo + hi)
        if _index_at(circle65, tube_profile64, mid)[0] == n_lo:
            lo = mid
        else:
            hi = mid
    _, pr, u = _index_at(circle65, tube_profile64, hi)
    assert hi - lo <= hi**4
    with pytest.raises((LeftBall, NoContraction)):
        picard_solve(pr, u, M=2.5, i=6, N=4)
    # control: the same solver converges between the neighbouring resonances
    _, pr, u = _index_at(circle65, tube_profile64, c / 20.5)
    assert picard_solve(pr, u, M=2.5, i=6, N=4).contraction_factor < 1.0


def test_solution_csv(tmp_path, line65, tube_profile64):
    pr = TubeProblem(line65, tube_profile64, 0.2)
    path = write_solution_csv(TubeField(pr.grid, pr.ubar), tmp_path / "s.csv", header="# config_hash=x")
    lines = path.read_text().splitlines()
    assert lines[0] == "# config_hash=x" and lines[1] == "t,z,u"
    assert len(lines) == 2 + pr.grid.shape[0] * pr.grid.shape[1]
    t, z, u = map(float, lines[2 + 64].split(","))
    assert (t, z, u) == (pr.grid.t[0], pr.grid.z[64], pr.ubar[0, 64])
