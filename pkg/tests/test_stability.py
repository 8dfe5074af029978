import numpy as np
import pytest
from scipy.linalg import logm
from scipy.optimize import linear_sum_assignment

from sstnet.controller import control_law
from sstnet.dynamics import DesdState
from sstnet.integrate import rk4
from sstnet.netmodel import (DesdParams, FeederTopology, IEEE34_LINES, SstParams,
                             dispatch_setpoints)
from sstnet.stability import (EquilibriumError, LinearizedSystem, assemble_linearization,
                              assess_stability, envelope_closed_forms, find_equilibrium,
                              gamma_function, initial_guess, integrate_envelopes, p_signal,
                              vin_envelope)

from conftest import P_SECTION_V, V_F, V_GRID, V_L, operating_point


def _single(p_rec=1000.0, **kw):
    top = FeederTopology(IEEE34_LINES[:1], v_g_d=V_GRID)
    p = SstParams(**kw)
    sps = dispatch_setpoints(top, [p], [p_rec], V_F, V_L)
    return top, SstParams.stack([p]), sps.stacked()


def match_error(a, b):
    """Largest distance under the best one-to-one pairing of two spectra."""
    cost = np.abs(a[:, None] - b[None, :])
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].max())


def test_zero_power_single_sst_equilibrium():
    top, P, S = _single(0.0)
    eq = find_equilibrium(P, S, top)
    assert np.max(np.abs(gamma_function(P, S, top)(eq.z.ravel()))) < 1e-9
    assert abs(eq.z[0, 0]) < 1e-9          # no grid current at zero power


def test_equilibrium_drift_single_sst():
    top, P, S = _single()
    eq = find_equilibrium(P, S, top)
    g = gamma_function(P, S, top)
    _, ys = rk4(lambda t, y: g(y), eq.z.ravel(), 0.0, 1e-5, 10000, every=10000)
    assert np.max(np.abs(ys[-1] - eq.z.ravel())) < 1e-6


def test_nine_sst_newton_converges_from_rough_guess(rng):
    top, params, sps = operating_point(P_SECTION_V)
    P, S = SstParams.stack(params), sps.stacked()
    z0 = initial_guess(P, S, top.omegas)
    guess = z0 * (1 + 0.01 * rng.standard_normal(z0.shape))
    eq = find_equilibrium(P, S, top, guess=guess)
    assert eq.iterations <= 20 and eq.residual < 1e-9
    assert np.allclose(eq.z, find_equilibrium(P, S, top).z, rtol=1e-9, atol=1e-9)


def test_non_convergence_reports_best_residual():
    top, P, S = _single()
    bad = initial_guess(P, S) * 3.0
    with pytest.raises(EquilibriumError) as exc:
        find_equilibrium(P, S, top, guess=bad, max_iter=1)
    assert exc.value.residual > 0


def test_dimensions_single_sst():
    top, P, S = _single()
    eq = find_equilibrium(P, S, top)
    lin = assemble_linearization(eq.z, P, S, top, DesdParams.stack([DesdParams()]))
    assert lin.Gamma.shape == (9, 9) and lin.matrix.shape == (10, 10)


def test_kp_block_alone():
    K = np.diag([-1000.0, -250.0])
    sys = LinearizedSystem(np.zeros((0, 0)), np.zeros((0, 2)), K, np.zeros((0, 9)))
    eig = assess_stability(sys).eigenvalues
    assert sorted(eig.real) == [-1000.0, -250.0]


def test_eigenvalue_union_with_random_gains(rng):
    top, params, sps = operating_point(P_SECTION_V[:3])
    P, S = SstParams.stack(params), sps.stacked()
    eq = find_equilibrium(P, S, top)
    for _ in range(5):
        desd = [DesdParams(kappa_p=k) for k in rng.uniform(0.02, 1.0, 3)]
        lin = assemble_linearization(eq.z, P, S, top, DesdParams.stack(desd))
        union = np.concatenate([np.linalg.eigvals(lin.Gamma),
                                [-d.kappa_p / (d.r_o * d.C_o) for d in desd]])
        assert match_error(np.linalg.eigvals(lin.matrix), union) < 1e-8


def test_jacobian_matches_linear_response():
    # fit Gamma = logm(Phi) / T from central perturbation responses of the nonlinear loop
    top, P, S = _single()
    eq = find_equilibrium(P, S, top)
    lin = assemble_linearization(eq.z, P, S, top, DesdParams.stack([DesdParams()]))
    g = gamma_function(P, S, top)
    z0 = eq.z.ravel()
    T, steps = 1e-5, 50
    Phi = np.empty((9, 9))
    for k in range(9):
        h = 1e-3 * (abs(z0[k]) + 1.0)
        dz = np.zeros(9)
        dz[k] = h
        _, yp = rk4(lambda t, y: g(y), z0 + dz, 0.0, T / steps, steps, every=steps)
        _, ym = rk4(lambda t, y: g(y), z0 - dz, 0.0, T / steps, steps, every=steps)
        Phi[:, k] = (yp[-1] - ym[-1]) / (2 * h)
    fit = np.real(logm(Phi)) / T
    G = lin.Gamma
    dominant = np.abs(G) > 1e-3 * np.max(np.abs(G), axis=1, keepdims=True)
    assert np.max(np.abs(fit - G)[dominant] / np.abs(G)[dominant]) < 1e-4


def test_default_gains_stable_and_perturbation_decays():
    top, P, S = _single()
    eq = find_equilibrium(P, S, top)
    rep = assess_stability(assemble_linearization(eq.z, P, S, top,
                                                  DesdParams.stack([DesdParams()])))
    assert rep.stable and rep.margin > 0
    g = gamma_function(P, S, top)
    z0 = eq.z.ravel()
    _, ys = rk4(lambda t, y: g(y), z0 * 1.001, 0.0, 1e-5, 10000, every=10000)
    assert np.linalg.norm(ys[-1] - z0) < 1e-2 * np.linalg.norm(0.001 * z0)


def test_flipped_k1_is_unstable_and_diverges():
    top, P, S = _single(k1=4.0)
    eq = find_equilibrium(P, S, top)
    rep = assess_stability(assemble_linearization(eq.z, P, S, top,
                                                  DesdParams.stack([DesdParams()])))
    assert not rep.stable
    g = gamma_function(P, S, top)
    z0 = eq.z.ravel()
    d0 = 1e-6 * z0
    _, ys = rk4(lambda t, y: g(y), z0 + d0, 0.0, 1e-5, 10000, every=10000)
    grown = ys[-1] - z0
    assert not np.all(np.isfinite(grown)) or np.linalg.norm(grown) > 1e3 * np.linalg.norm(d0)


def test_envelope_without_power():
    d = DesdParams()
    env = vin_envelope(d, 0.0, 330.0)
    assert env.v_min_roots == (0.0, d.v_b_min)
    assert env.v_max_root == pytest.approx(d.v_b_max, rel=1e-12)
    assert env.feasible and env.admissible


def test_envelope_quadratic_example():
    d = DesdParams(r_in=0.1, C_in=1e-3, v_b_min=300.0)
    env = vin_envelope(d, 1e4, 300.0)
    lo, hi = (300 - np.sqrt(300 ** 2 - 4e3)) / 2, (300 + np.sqrt(300 ** 2 - 4e3)) / 2
    assert env.v_min_roots[0] == pytest.approx(lo, rel=1e-10)
    assert env.v_min_roots[1] == pytest.approx(hi, rel=1e-10)
    # exact roots are 3.3712 and 296.629; the often-quoted 3.345 / 296.65 are rounded loosely
    assert envelope_closed_forms(d, 1e4)["dimensional"][:2] == pytest.approx(env.v_min_roots)


def test_envelope_infeasible_and_inadmissible():
    d = DesdParams(r_in=0.1, v_b_min=300.0)
    assert not vin_envelope(d, 1e6, 300.0).feasible
    env = vin_envelope(d, 1e4, 2.0)
    assert env.feasible and not env.admissible
    with pytest.raises(ValueError):
        vin_envelope(d, -1.0, 300.0)


def test_integrated_envelopes_converge_to_roots():
    d = DesdParams()
    env = vin_envelope(d, 5000.0, 330.0)
    _, lo, hi = integrate_envelopes(d, 5000.0, 330.0, 1e-6, 20000, every=20000)
    assert lo[-1] == pytest.approx(env.v_min_roots[1], rel=1e-3)
    assert hi[-1] == pytest.approx(env.v_max_root, rel=1e-3)


def test_p_signal_examples(rng):
    d = DesdParams(kappa_p=1.0)
    assert p_signal(0.0, 400.0, 3.0, 1.0, 2.0, d) == 0.0
    assert p_signal(401.0, 400.0, 0.0, 0.0, 0.0, d) == 0.0
    d = DesdParams()
    for _ in range(20):
        v_o, v_in, v_l = rng.uniform(380, 420), rng.uniform(250, 380), rng.uniform(380, 420)
        I, dI, phi = rng.normal(scale=10), rng.normal(scale=1e3), rng.normal(scale=100)
        u = control_law(DesdState(v_o, v_in), v_l, I, dI, phi, d)
        assert p_signal(v_o, v_l, I, dI, phi, d) == pytest.approx(v_o * v_in * u, rel=1e-12)
